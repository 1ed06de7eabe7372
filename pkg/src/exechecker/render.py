"""SVG stick-figure rendering of per-joint scores.

The displayed pose is projected orthographically onto its two directions of
largest spatial variance, so the picture does not depend on which world
axis happens to point up in the source data.
"""
from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Collection, Sequence

import numpy as np

from .skeldata import SkeletonTopology

SVG_NS = "http://www.w3.org/2000/svg"


def projection_axes(pose: np.ndarray) -> np.ndarray:
    """(3, 2) orthonormal basis of the two highest-variance directions of an (N, 3) pose.

    Signs are fixed so the largest-magnitude loading of each axis is positive.
    """
    centred = pose - pose.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=True)
    axes = vt[:2].T.copy()
    for c in range(2):
        if axes[np.argmax(np.abs(axes[:, c])), c] < 0:
            axes[:, c] *= -1
    return axes


def project(pose: np.ndarray, size: float, margin: float) -> np.ndarray:
    """Pixel coordinates (N, 2) of an (N, 3) pose fitted into a square canvas."""
    xy = (pose - pose.mean(axis=0)) @ projection_axes(pose)
    span = float(np.ptp(xy, axis=0).max())
    scale = (size - 2 * margin) / span if span > 1e-12 else 1.0
    px = (xy - xy.min(axis=0)) * scale + margin
    px[:, 1] = size - px[:, 1]  # SVG y grows downwards
    return px


def skeleton_svg(pose: np.ndarray, topology: SkeletonTopology, normalized: Sequence[float],
                 highlighted: Collection[int] = (), ground_truth: Collection[int] = (),
                 size: float = 400.0, min_radius: float = 3.0, max_radius: float = 14.0,
                 title: str | None = None) -> str:
    """SVG document for one pose with one circle per joint.

    Circle radius grows linearly with the normalized score from ``min_radius``;
    ``highlighted`` joints are filled red and ``ground_truth`` joints get a
    thick outline.
    """
    pose = np.asarray(pose, dtype=np.float64)
    scores = np.asarray(normalized, dtype=np.float64)
    N = topology.num_joints
    if pose.shape != (N, 3) or scores.shape != (N,):
        raise ValueError(f"pose must be ({N}, 3) and scores ({N},), got {pose.shape} and {scores.shape}")
    px = project(pose, size, margin=max_radius + 4)
    highlighted, ground_truth = set(highlighted), set(ground_truth)

    ET.register_namespace("", SVG_NS)
    root = ET.Element(f"{{{SVG_NS}}}svg", {
        "width": f"{size:g}", "height": f"{size:g}", "viewBox": f"0 0 {size:g} {size:g}",
    })
    if title:
        ET.SubElement(root, f"{{{SVG_NS}}}title").text = title
    bones = ET.SubElement(root, f"{{{SVG_NS}}}g", {"id": "bones", "stroke": "#555", "stroke-width": "2"})
    for parent, child in topology.bones:
        ET.SubElement(bones, f"{{{SVG_NS}}}line", {
            "x1": f"{px[parent, 0]:.2f}", "y1": f"{px[parent, 1]:.2f}",
            "x2": f"{px[child, 0]:.2f}", "y2": f"{px[child, 1]:.2f}",
        })
    joints = ET.SubElement(root, f"{{{SVG_NS}}}g", {"id": "joints"})
    for j, name in enumerate(topology.joint_names):
        radius = min_radius + (max_radius - min_radius) * float(np.clip(scores[j], 0.0, 1.0))
        attrs = {
            "id": f"joint-{name}", "data-index": str(j), "data-score": f"{scores[j]:.6f}",
            "cx": f"{px[j, 0]:.2f}", "cy": f"{px[j, 1]:.2f}", "r": f"{radius:.2f}",
            "fill": "#d62728" if j in highlighted else "#9ecae1",
            "stroke": "#000" if j in ground_truth else "#3182bd",
            "stroke-width": "3" if j in ground_truth else "1",
        }
        circle = ET.SubElement(joints, f"{{{SVG_NS}}}circle", attrs)
        ET.SubElement(circle, f"{{{SVG_NS}}}title").text = f"{name}: {scores[j]:.3f}"
    return ET.tostring(root, encoding="unicode", xml_declaration=True)


def write_svg(path: str | Path, svg: str) -> None:
    Path(path).write_text(svg + "\n", encoding="utf-8")
