import json

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra import numpy as hnp

from exechecker.errors import AnnotationError, SchemaError
from exechecker.joa import (
    JointScoreReport,
    ScoreSource,
    annotation_from_dict,
    comparison_csv,
    evaluate_split,
    joa_score,
    load_annotation,
    minmax_normalize,
    permutation_test,
    save_annotation,
    topk,
)
from exechecker.skeldata import JoAAnnotation, Label

from conftest import make_seq

vectors = hnp.arrays(np.float64, st.integers(2, 12), elements=st.floats(-100, 100))


def test_minmax_examples():
    np.testing.assert_array_equal(minmax_normalize([1, 2, 3]), [0, 0.5, 1])
    np.testing.assert_array_equal(minmax_normalize([4, 4, 4]), [0, 0, 0])


@given(vectors)
def test_minmax_idempotent_and_bounded(raw):
    n = minmax_normalize(raw)
    assert np.all((n >= 0) & (n <= 1))
    if np.ptp(raw) > 0:
        np.testing.assert_allclose(minmax_normalize(n), n, atol=1e-12)


def test_joa_examples():
    ann = JoAAnnotation("e", frozenset({0, 2}))
    assert joa_score(ann.indicator(4), ann) == 1.0
    assert joa_score([0.0, 1.0, 0.0, 1.0], ann) == 0.0
    assert joa_score([1.0, 0.3, 0.5, 0.9], ann) == 0.75


def test_joa_empty_annotation():
    with pytest.raises(AnnotationError):
        joa_score([0.5, 0.5], JoAAnnotation("e", frozenset()))


def test_constant_raw_scores_give_zero():
    ann = JoAAnnotation("e", frozenset({1}))
    assert joa_score(minmax_normalize([3.0, 3.0, 3.0]), ann) == 0.0


@given(vectors, st.floats(0.01, 100), st.floats(-100, 100), st.data())
def test_joa_invariant_under_positive_affine(raw, a, b, data):
    joints = data.draw(st.sets(st.integers(0, len(raw) - 1), min_size=1))
    ann = JoAAnnotation("e", frozenset(joints))
    moved = a * raw + b
    assume(np.ptp(raw) > 1e-6 and np.ptp(moved) > 1e-6)
    assert joa_score(minmax_normalize(moved), ann) == pytest.approx(joa_score(minmax_normalize(raw), ann), abs=1e-9)


@given(hnp.arrays(np.float64, 6, elements=st.floats(0, 1)), st.integers(0, 5), st.floats(0, 1))
def test_joa_monotone_inside_constant_outside(s, j, value):
    ann = JoAAnnotation("e", frozenset({0, 3}))
    t = s.copy()
    t[j] = value
    before, after = joa_score(s, ann), joa_score(t, ann)
    assert 0 <= after <= 1
    if j in ann.joints:
        assert after >= before - 1e-12 if value >= s[j] else after <= before + 1e-12
    else:
        assert after == before


def test_topk_examples():
    assert topk([0.9, 0.8, 0.5, 0.4, 0.3, 0.2, 0.1], 5) == [0, 1, 2, 3, 4]
    assert topk([0.5] * 7, 5) == [0, 1, 2, 3, 4]
    assert topk([0.1, 0.9, 0.9, 0.2], 2) == [1, 2]


def test_topk_too_large():
    with pytest.raises(ValueError):
        topk([0.1, 0.2], 3)


def test_report_json_round_trip_byte_identical(topo):
    raw = np.random.default_rng(0).random(17)
    ann = JoAAnnotation("e", frozenset({2, 5}))
    rep = JointScoreReport.from_raw("e", ScoreSource.ATTENTION, raw, 5, ann, topo)
    text = rep.to_json()
    assert JointScoreReport.from_dict(json.loads(text)).to_json() == text
    assert rep.joa_score == joa_score(minmax_normalize(raw), ann)


def test_annotation_files(tmp_path, topo):
    ann = annotation_from_dict({"exercise_id": "squat", "joa": ["l_knee", "r_knee"]}, topo)
    assert ann.joints == {topo.index("l_knee"), topo.index("r_knee")}
    save_annotation(ann, topo, tmp_path / "a.json")
    assert load_annotation(tmp_path / "a.json", topo) == ann
    with pytest.raises(SchemaError):
        annotation_from_dict({"exercise_id": "squat", "joa": ["tail"]}, topo)
    with pytest.raises(AnnotationError):
        annotation_from_dict({"exercise_id": "squat", "joa": []}, topo)


def _incorrect(ex="e"):
    return make_seq(np.zeros((2, 4, 3)), exercise=ex, label=Label.INCORRECT)


def test_evaluate_split_single_sequence():
    ann = JoAAnnotation("e", frozenset({0, 2}))
    res = evaluate_split(lambda s: np.array([1.0, 0.0, 0.5, 0.9]), [_incorrect()], {"e": ann})
    assert res.per_exercise == {"e": 0.75}


def test_evaluate_split_indicator_scorer_and_skips_correct():
    ann = JoAAnnotation("e", frozenset({1}))
    seqs = [_incorrect(), make_seq(np.zeros((2, 4, 3)), exercise="e"), _incorrect()]
    res = evaluate_split(lambda s: ann.indicator(4), seqs, [ann, ann, ann])
    assert res.per_exercise == {"e": 1.0} and len(res.scores) == 2


def test_permutation_test_detects_signal():
    rng = np.random.default_rng(0)
    anns = [JoAAnnotation("e", frozenset({int(rng.integers(10))})) for _ in range(30)]
    good = [minmax_normalize(a.indicator(10) + 0.3 * rng.random(10)) for a in anns]
    res = permutation_test(good, anns, 1000, seed=1)
    assert res["p_value"] < 0.01 and res["observed"] > res["null_mean"]
    noise = [rng.random(10) for _ in anns]
    assert permutation_test(noise, anns, 1000, seed=1)["p_value"] > 0.01


def test_comparison_csv_layout():
    text = comparison_csv({"b": {"ctw_joa": 0.5, "attention_joa": 0.25}, "a": {"ctw_joa": 1.0}},
                          ["ctw_joa", "attention_joa"])
    assert text.splitlines() == ["exercise,ctw_joa,attention_joa", "a,1.000,", "b,0.500,0.250"]
