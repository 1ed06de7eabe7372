import functools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from exechecker.align import (
    cca,
    ctw,
    ctw_joint_scores,
    ctw_scores,
    dtw,
    hop_adjust,
    is_valid_path,
    path_cost,
)
from exechecker.skeldata import h36m_topology


def brute_force_dtw(X, Y):
    """Minimum path cost by exhaustive recursion over all monotone paths."""
    X = np.asarray(X, float).reshape(len(X), -1)
    Y = np.asarray(Y, float).reshape(len(Y), -1)
    C = np.linalg.norm(X[:, None] - Y[None], axis=-1)

    @functools.lru_cache(maxsize=None)
    def best(i, j):
        if (i, j) == (0, 0):
            return C[0, 0]
        options = []
        if i > 0:
            options.append(best(i - 1, j))
        if j > 0:
            options.append(best(i, j - 1))
        if i > 0 and j > 0:
            options.append(best(i - 1, j - 1))
        return C[i, j] + min(options)

    return best(len(X) - 1, len(Y) - 1)


def all_paths(T1, T2):
    def rec(i, j):
        if (i, j) == (T1 - 1, T2 - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < T1 and j + dj < T2:
                for rest in rec(i + di, j + dj):
                    yield [(i, j)] + rest
    return list(rec(0, 0))


# ---- DTW -----------------------------------------------------------------


def test_dtw_identical_is_diagonal_zero():
    X = np.random.default_rng(0).normal(size=(5, 3))
    path, cost = dtw(X, X)
    assert path == [(i, i) for i in range(5)] and cost == 0.0


def test_dtw_scalar_example():
    path, cost = dtw([0.0, 1.0, 2.0], [0.0, 2.0])
    assert cost == 1.0
    assert is_valid_path(path, 3, 2) and path_cost([0.0, 1.0, 2.0], [0.0, 2.0], path) == 1.0


def test_dtw_single_frame_visits_every_column():
    path, _ = dtw(np.zeros((1, 2)), np.random.default_rng(1).normal(size=(4, 2)))
    assert path == [(0, j) for j in range(4)]


def test_dtw_prefers_diagonal_on_ties():
    path, _ = dtw(np.zeros(3), np.zeros(3))
    assert path == [(0, 0), (1, 1), (2, 2)]


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_dtw_matches_exhaustive_enumeration(T1, T2, D, seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(T1, D)), rng.normal(size=(T2, D))
    path, cost = dtw(X, Y)
    assert is_valid_path(path, T1, T2)
    assert cost == pytest.approx(brute_force_dtw(X, Y), rel=1e-12, abs=1e-12)
    assert cost == pytest.approx(path_cost(X, Y, path), rel=1e-12, abs=1e-12)


def test_dtw_oracle_agrees_with_path_enumeration():
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(4, 2)), rng.normal(size=(5, 2))
    assert brute_force_dtw(X, Y) == pytest.approx(min(path_cost(X, Y, p) for p in all_paths(4, 5)))


def test_dtw_dimension_mismatch():
    with pytest.raises(ValueError):
        dtw(np.zeros((3, 2)), np.zeros((3, 3)))


# ---- CCA -----------------------------------------------------------------


def whitened_svd_correlations(X, Y, reg):
    X = X - X.mean(axis=0)
    Y = Y - Y.mean(axis=0)
    T = len(X)

    def inv_sqrt(C):
        w, V = np.linalg.eigh(C)
        return V @ np.diag(w ** -0.5) @ V.T

    cxx = X.T @ X / T + reg * np.eye(X.shape[1])
    cyy = Y.T @ Y / T + reg * np.eye(Y.shape[1])
    return np.linalg.svd(inv_sqrt(cxx) @ (X.T @ Y / T) @ inv_sqrt(cyy), compute_uv=False)


def test_cca_self_correlation_is_one():
    X = np.random.default_rng(3).normal(size=(50, 4))
    assert cca(X, X, k=1).correlations[0] == pytest.approx(1.0, abs=1e-6)


def test_cca_permuted_columns_all_one():
    # Unit covariance, so the ridge shifts each correlation by reg / (1 + reg) only.
    X = np.random.default_rng(4).normal(size=(60, 5))
    X -= X.mean(axis=0)
    X = X @ np.linalg.inv(np.linalg.cholesky(X.T @ X / len(X))).T
    res = cca(X, X[:, [3, 0, 4, 1, 2]], k=5)
    np.testing.assert_allclose(res.correlations, 1.0, atol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_cca_matches_whitened_svd(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(80, 4))
    Y = X @ rng.normal(size=(4, 3)) + 0.5 * rng.normal(size=(80, 3))
    res = cca(X, Y, k=3, reg=1e-6)
    np.testing.assert_allclose(res.correlations, whitened_svd_correlations(X, Y, 1e-6)[:3], atol=1e-8)


def test_cca_projections_have_unit_variance_and_given_correlation():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(200, 3))
    Y = X @ rng.normal(size=(3, 3)) + rng.normal(size=(200, 3))
    res = cca(X, Y, k=2, reg=0.0)
    u = (X - res.x_mean) @ res.x_weights
    v = (Y - res.y_mean) @ res.y_weights
    np.testing.assert_allclose(u.T @ u / len(u), np.eye(2), atol=1e-8)
    np.testing.assert_allclose(np.diag(u.T @ v / len(u)), res.correlations, atol=1e-8)


@given(st.integers(0, 2**32 - 1))
def test_cca_correlations_bounded_and_sorted(seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(30, 4)), rng.normal(size=(30, 3))
    rho = cca(X, Y, k=3).correlations
    assert np.all(rho >= 0) and np.all(rho <= 1 + 1e-9)
    assert np.all(np.diff(rho) <= 1e-12)


def test_cca_argument_errors():
    with pytest.raises(ValueError):
        cca(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        cca(np.zeros((2, 3)), np.zeros((2, 3)), k=2)


# ---- CTW -----------------------------------------------------------------


def _pair(seed, T1=20, T2=24, N=5):
    rng = np.random.default_rng(seed)
    t1, t2 = np.linspace(0, 1, T1), np.linspace(0, 1, T2) ** 1.2
    base = rng.normal(size=(N, 3))
    amp = rng.normal(size=(N, 3))
    ce = base + np.sin(2 * np.pi * t1)[:, None, None] * amp + 0.05 * rng.normal(size=(T1, N, 3))
    ie = base + np.sin(2 * np.pi * t2)[:, None, None] * amp * 1.2 + 0.05 * rng.normal(size=(T2, N, 3))
    return ce, ie


@given(st.integers(0, 2**32 - 1))
def test_ctw_objective_non_increasing(seed):
    ce, ie = _pair(seed)
    res = ctw(ce, ie, k=3)
    assert is_valid_path(res.path, len(ce), len(ie))
    assert np.all(np.diff(res.objectives) <= 1e-9)


def test_ctw_identical_inputs_diagonal_in_one_iteration():
    ce, _ = _pair(0)
    res = ctw(ce, ce)
    assert res.iterations == 1 and res.converged
    assert res.path == [(i, i) for i in range(len(ce))]
    assert res.objectives[0] < 1e-9


def test_ctw_duplicated_frames():
    ce, _ = _pair(1, T1=12)
    ie = np.repeat(ce, 2, axis=0)
    res = ctw(ce, ie, k=3)
    assert res.objectives[-1] < 1e-6
    matched = {}
    for i, j in res.path:
        matched.setdefault(i, set()).add(j)
    assert all(matched[i] == {2 * i, 2 * i + 1} for i in range(len(ce)))


def test_joint_scores_zero_for_identical():
    ce, _ = _pair(2)
    path = [(i, i) for i in range(len(ce))]
    np.testing.assert_array_equal(ctw_joint_scores(ce, ce, path), 0.0)


def test_joint_scores_constant_offset():
    ce, _ = _pair(3)
    delta = np.array([0.3, -0.4, 0.0])
    ie = ce.copy()
    ie[:, 2] += delta
    path = [(i, i) for i in range(len(ce))]
    s = ctw_joint_scores(ce, ie, path)
    assert s[2] == pytest.approx(len(ce) * 0.5)
    assert np.all(np.delete(s, 2) == 0)


def test_ie_frame_aggregation_counts_duplicates_once():
    ce = np.zeros((2, 1, 3))
    ie = np.ones((2, 1, 3))
    path = [(0, 0), (1, 0), (1, 1)]
    assert ctw_joint_scores(ce, ie, path, "step")[0] == pytest.approx(3 * np.sqrt(3))
    assert ctw_joint_scores(ce, ie, path, "ie_frame")[0] == pytest.approx(2 * np.sqrt(3))


# ---- hop adjustment ------------------------------------------------------


def test_hop_adjust_hand_values():
    topo = h36m_topology()
    raw = np.full(topo.num_joints, 2.0)
    adj = hop_adjust(raw, topo)
    assert adj[topo.root] == 2.0
    assert adj[topo.index("l_ankle")] == 2.0 / 4  # pelvis -> l_hip -> l_knee -> l_ankle
    assert adj[topo.index("r_wrist")] == 2.0 / 6  # via torso, neck, r_shoulder, r_elbow


def test_hop_adjust_decreasing_in_hops_and_bounded():
    topo = h36m_topology()
    adj = hop_adjust(np.ones(17), topo)
    hops = np.asarray(topo.hops)
    for a in range(17):
        for b in range(17):
            if hops[a] < hops[b]:
                assert adj[a] > adj[b]
    raw = np.random.default_rng(0).random(17)
    assert np.all(hop_adjust(raw, topo) <= raw)


def test_ctw_scores_report_is_json_ready():
    import json
    topo = h36m_topology()
    rng = np.random.default_rng(5)
    ce = rng.normal(size=(10, 17, 3))
    rep = ctw_scores(ce, ce + 0.01 * rng.normal(size=ce.shape), topo, k=3)
    assert set(rep) >= {"path", "raw", "adjusted", "objectives"}
    json.dumps(rep)
