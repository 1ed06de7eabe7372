import xml.etree.ElementTree as ET

import numpy as np
import pytest

from exechecker.render import SVG_NS, projection_axes, skeleton_svg

NS = {"svg": SVG_NS}


def _pose(topo, seed=0):
    return np.random.default_rng(seed).normal(size=(topo.num_joints, 3))


def test_svg_is_valid_and_lists_each_joint_once(topo):
    scores = np.random.default_rng(1).random(topo.num_joints)
    root = ET.fromstring(skeleton_svg(_pose(topo), topo, scores, [0, 1], [2]))
    circles = root.findall(".//svg:circle", NS)
    ids = [c.get("id") for c in circles]
    assert sorted(ids) == sorted(f"joint-{n}" for n in topo.joint_names)
    assert len(root.findall(".//svg:line", NS)) == len(topo.bones)


def test_highlight_and_outline(topo):
    scores = np.zeros(topo.num_joints)
    root = ET.fromstring(skeleton_svg(_pose(topo), topo, scores, highlighted=[3], ground_truth=[5]))
    by_id = {c.get("data-index"): c for c in root.findall(".//svg:circle", NS)}
    assert by_id["3"].get("fill") == "#d62728"
    assert by_id["4"].get("fill") != "#d62728"
    assert by_id["5"].get("stroke-width") == "3"


def test_uniform_scores_equal_radius(topo):
    root = ET.fromstring(skeleton_svg(_pose(topo), topo, np.zeros(topo.num_joints)))
    radii = {c.get("r") for c in root.findall(".//svg:circle", NS)}
    assert len(radii) == 1


def test_radius_grows_with_score(topo):
    scores = np.linspace(0, 1, topo.num_joints)
    root = ET.fromstring(skeleton_svg(_pose(topo), topo, scores))
    radii = [float(c.get("r")) for c in root.findall(".//svg:circle", NS)]
    assert radii == sorted(radii) and radii[0] > 0


def test_projection_axes_span_largest_variance():
    rng = np.random.default_rng(2)
    pose = rng.normal(size=(50, 3)) * np.array([5.0, 0.1, 2.0])
    axes = projection_axes(pose)
    np.testing.assert_allclose(axes.T @ axes, np.eye(2), atol=1e-12)
    assert abs(axes[0, 0]) > 0.99 and abs(axes[2, 1]) > 0.99


def test_bad_shapes(topo):
    with pytest.raises(ValueError):
        skeleton_svg(np.zeros((3, 3)), topo, np.zeros(3))
