"""Acceptance criteria 1-12, each at its stated tolerance and time budget.

Run under pytest (a summary line per criterion is printed at the end) or
directly with ``python3 tests/test_acceptance.py``.
"""
import itertools
import math
import time

import numpy as np
import pytest

from exechecker import pipeline as pl
from exechecker import tensor as tt
from exechecker.align import cca, ctw, dtw, hop_adjust
from exechecker.joa import JoAAnnotation, joa_score, minmax_normalize, permutation_test
from exechecker.skeldata import from_bone_vectors, h36m_topology, mirror, normalize, to_bone_vectors
from exechecker.stgat import STGAT, StgatConfig
from exechecker.triplet import compose_triplets, margin_loss, pairwise_distance, ratio_loss, ratio_loss_t

try:
    from conftest import ACCEPTANCE, make_seq, max_rel_error, numeric_grad
except ImportError:  # pragma: no cover - direct script execution
    import sys
    from pathlib import Path
    sys.path.insert(0, str(Path(__file__).parent))
    from conftest import ACCEPTANCE, make_seq, max_rel_error, numeric_grad


def record(number: int, name: str, ok: bool, detail: str, seconds: float) -> None:
    ACCEPTANCE[number] = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} ({name}): {detail} [{seconds:.1f} s]"
    print(ACCEPTANCE[number])
    assert ok, ACCEPTANCE[number]


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


# 1 -------------------------------------------------------------------------


def test_criterion_01_triplet_combinatorics():
    with Timer() as t:
        big, small = len(compose_triplets(60, 60)), len(compose_triplets(10, 10))
    ok = big == 106_200 and small == 450 and t.seconds < 1
    record(1, "triplet counts", ok, f"(60,60) -> {big}, (10,10) -> {small}", t.seconds)


# 2 -------------------------------------------------------------------------


def test_criterion_02_loss_identities():
    with Timer() as t:
        rng = np.random.default_rng(0)
        d = rng.uniform(0, 10, size=2)
        equal = ratio_loss(d[0], d[0])
        dap, dan = rng.uniform(0, 20, size=(2, 100_000))
        r = ratio_loss(dap, dan)
        mu = 0.7
        hinge = margin_loss(dap, dan, mu)
        m0 = margin_loss(0.0, mu, mu)
    ok = equal == 0.25 and bool(np.all((r > 0) & (r < 1))) and m0 == 0.0 and bool(np.all(hinge >= 0)) \
        and t.seconds < 1
    record(2, "loss identities", ok,
           f"ratio(d,d)={equal}, ratio range ({r.min():.3g}, {r.max():.3g}), margin(0,mu,mu)={m0}, "
           f"min hinge {hinge.min()}", t.seconds)


# 3 -------------------------------------------------------------------------


def _ratio_triplet_loss(model, clips):
    emb, _ = model.forward_batch(clips)
    a, p, n = (tt.take(emb, [i]) for i in range(3))
    return tt.mean(ratio_loss_t(pairwise_distance(a, p), pairwise_distance(a, n)))


def test_criterion_03_gradient_correctness():
    cfg = StgatConfig(num_joints=4, tau=3, heads=2, channels=(4,), embed_dim=4, key_dim=2)
    worst = 0.0
    with Timer() as t:
        for draw in range(10):
            rng = np.random.default_rng(draw)
            model = STGAT(cfg, seed=1000 + draw)
            clips = rng.uniform(-1, 1, size=(3, 6, 4, 3))
            model.zero_grad()
            _ratio_triplet_loss(model, clips).backward()
            for p in model.parameters():
                def f():
                    with tt.no_grad():
                        return _ratio_triplet_loss(model, clips).item()
                worst = max(worst, max_rel_error(p.grad, numeric_grad(f, p.data)))
    ok = worst < 1e-4 and t.seconds < 30
    record(3, "gradient check", ok, f"max relative error {worst:.2e} over 10 draws", t.seconds)


# 4 -------------------------------------------------------------------------


def test_criterion_04_attention_distributions():
    worst, negative = 0.0, False
    with Timer() as t:
        rng = np.random.default_rng(4)
        for i in range(100):
            cfg = StgatConfig(num_joints=int(rng.integers(2, 18)), tau=int(rng.choice([1, 3, 5])),
                              heads=int(rng.integers(1, 9)), channels=(8, 8), key_dim=4, embed_dim=8)
            model = STGAT(cfg, seed=i)
            x = rng.normal(size=(int(rng.integers(1, 10)), cfg.num_joints, 3)) * rng.uniform(0.1, 5)
            _, maps = model.forward(x)
            for arr in maps.blocks:
                negative |= bool(np.any(arr < 0))
                worst = max(worst, float(np.abs(arr.sum(axis=(2, 4)) - 1).max()))
    ok = worst <= 1e-9 and not negative and t.seconds < 10
    record(4, "attention rows", ok, f"max |row sum - 1| = {worst:.1e}, negative entries: {negative}", t.seconds)


# 5 -------------------------------------------------------------------------


def _enumerated_min_cost(X, Y):
    """Minimum over every monotone path of its cost, accumulated along the path."""
    C = np.linalg.norm(X[:, None] - Y[None], axis=-1)
    T1, T2 = C.shape
    best = math.inf

    def walk(i, j, cost):
        nonlocal best
        if (i, j) == (T1 - 1, T2 - 1):
            best = min(best, cost)
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < T1 and j + dj < T2:
                walk(i + di, j + dj, C[i + di, j + dj] + cost)

    walk(0, 0, C[0, 0])
    return best


def test_criterion_05_dtw_oracle():
    mismatches = 0
    with Timer() as t:
        rng = np.random.default_rng(5)
        for _ in range(200):
            T1, T2, D = rng.integers(1, 7), rng.integers(1, 7), rng.integers(1, 4)
            X, Y = rng.normal(size=(T1, D)), rng.normal(size=(T2, D))
            _, cost = dtw(X, Y)
            mismatches += cost != _enumerated_min_cost(X, Y)
    ok = mismatches == 0 and t.seconds < 30
    record(5, "DTW oracle", ok, f"{mismatches} of 200 pairs differ from exhaustive minimum", t.seconds)


# 6 -------------------------------------------------------------------------


def _random_walk_pair(rng, topo):
    T1, T2 = rng.integers(20, 50, size=2)
    base = rng.normal(size=(topo.num_joints, 3))
    ce = base + np.cumsum(0.05 * rng.normal(size=(T1, topo.num_joints, 3)), axis=0)
    ie = base + np.cumsum(0.05 * rng.normal(size=(T2, topo.num_joints, 3)), axis=0)
    return normalize(make_seq(ce), topo), normalize(make_seq(ie), topo)


def test_criterion_06_ctw_monotonicity():
    topo = h36m_topology()
    worst_rise, identical_ok = -math.inf, True
    with Timer() as t:
        rng = np.random.default_rng(6)
        for _ in range(50):
            ce, ie = _random_walk_pair(rng, topo)
            obj = ctw(ce, ie).objectives
            if len(obj) > 1:
                worst_rise = max(worst_rise, float(np.max(np.diff(obj))))
            same = ctw(ce, ce)
            identical_ok &= same.iterations == 1 and same.objectives[0] < 1e-9 and \
                same.path == [(i, i) for i in range(ce.num_frames)]
    ok = worst_rise <= 1e-9 and identical_ok and t.seconds < 60
    record(6, "CTW monotone", ok,
           f"largest per-iteration change {worst_rise:.2e}, identical inputs diagonal in one iteration: "
           f"{identical_ok}", t.seconds)


# 7 -------------------------------------------------------------------------


def _whitened_svd(X, Y, reg):
    X, Y = X - X.mean(axis=0), Y - Y.mean(axis=0)
    T = len(X)

    def inv_sqrt(C):
        w, V = np.linalg.eigh(C)
        return (V / np.sqrt(w)) @ V.T

    cxx = X.T @ X / T + reg * np.eye(X.shape[1])
    cyy = Y.T @ Y / T + reg * np.eye(Y.shape[1])
    return np.linalg.svd(inv_sqrt(cxx) @ (X.T @ Y / T) @ inv_sqrt(cyy), compute_uv=False)


def test_criterion_07_cca_oracle():
    worst = 0.0
    with Timer() as t:
        rng = np.random.default_rng(7)
        for _ in range(50):
            T, d1, d2 = rng.integers(30, 120), rng.integers(2, 8), rng.integers(2, 8)
            X = rng.normal(size=(T, d1))
            Y = X @ rng.normal(size=(d1, d2)) + rng.uniform(0.1, 2) * rng.normal(size=(T, d2))
            k = min(d1, d2)
            rho = cca(X, Y, k=k).correlations
            worst = max(worst, float(np.abs(rho - _whitened_svd(X, Y, 1e-6)[:k]).max()))
        X = rng.normal(size=(100, 6))
        self_rho = cca(X, X, k=1).correlations[0]
    ok = worst < 1e-8 and abs(self_rho - 1) <= 1e-6 and t.seconds < 10
    record(7, "CCA oracle", ok, f"max deviation {worst:.1e}, self-correlation {self_rho:.9f}", t.seconds)


# 8 -------------------------------------------------------------------------


def test_criterion_08_joa_arithmetic():
    with Timer() as t:
        ann = JoAAnnotation("e", frozenset({0, 2}))
        indicator = joa_score(ann.indicator(4), ann)
        example = joa_score([1.0, 0.3, 0.5, 0.9], ann)
        constant = joa_score(minmax_normalize([2.0, 2.0, 2.0, 2.0]), ann)
    ok = indicator == 1.0 and example == 0.75 and constant == 0.0 and t.seconds < 1
    record(8, "JoA arithmetic", ok, f"indicator {indicator}, example {example}, constant raw {constant}", t.seconds)


# 9 -------------------------------------------------------------------------


def test_criterion_09_hop_adjustment():
    topo = h36m_topology()
    # hops by joint: pelvis 0; hips 1, knees 2, ankles 3; torso 1, neck 2, nose 3, head 4;
    # shoulders 3, elbows 4, wrists 5
    hand_hops = {"pelvis": 0, "r_hip": 1, "r_knee": 2, "r_ankle": 3, "l_hip": 1, "l_knee": 2, "l_ankle": 3,
                 "torso": 1, "neck": 2, "nose": 3, "head": 4, "l_shoulder": 3, "l_elbow": 4,
                 "l_wrist": 5, "r_shoulder": 3, "r_elbow": 4, "r_wrist": 5}
    raw = np.arange(1.0, 18.0)
    with Timer() as t:
        adj = hop_adjust(raw, topo)
    expected = np.array([raw[topo.index(n)] / (h + 1) for n, h in hand_hops.items()])
    got = np.array([adj[topo.index(n)] for n in hand_hops])
    ok = bool(np.all(got == expected)) and adj[topo.root] == raw[topo.root] and t.seconds < 1
    record(9, "hop adjustment", ok, f"17 joints match hand values exactly: {bool(np.all(got == expected))}, "
           f"root divisor 1", t.seconds)


# 10 ------------------------------------------------------------------------


def test_criterion_10_transform_involutions():
    topo = h36m_topology()
    with Timer() as t:
        rng = np.random.default_rng(10)
        mirror_ok, bone_err, norm_err = True, 0.0, 0.0
        for _ in range(50):
            seq = make_seq(rng.normal(size=(int(rng.integers(1, 30)), 17, 3)) * rng.uniform(0.1, 10))
            mirror_ok &= bool(np.array_equal(mirror(mirror(seq, topo), topo).frames, seq.frames))
            rel = seq.frames - seq.frames[:, :1]
            bone_err = max(bone_err, float(np.abs(from_bone_vectors(to_bone_vectors(seq, topo), topo).frames
                                                  - rel).max()))
            once = normalize(seq, topo)
            norm_err = max(norm_err, float(np.abs(normalize(once, topo).frames - once.frames).max()))
    ok = mirror_ok and bone_err <= 1e-12 and norm_err <= 1e-12
    record(10, "transform involutions", ok,
           f"mirror bit-exact {mirror_ok}, bone round trip {bone_err:.1e}, normalize idempotence {norm_err:.1e}",
           t.seconds)


# 11 ------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_11_synthetic_end_to_end():
    seeds = range(5)
    accs, norms, anns, above = [], [], [], []
    with Timer() as t:
        for seed in seeds:
            res = pl.run_benchmark(pl.desk_config(seed), seed=seed, n_subjects=20, n_test=5, with_ctw=True)
            accs.append(res.accuracy)
            norms += res.attention_normalized
            anns += res.attention_annotations
            above += res.ctw_above_median
        perm = permutation_test(norms, anns, n_permutations=1000, seed=0)
    acc = float(np.mean(accs))
    ok_a, ok_b, ok_c = acc >= 0.9, perm["p_value"] < 0.05 and perm["observed"] > perm["null_mean"], all(above)
    ok = ok_a and ok_b and ok_c and t.seconds < 600
    record(11, "synthetic end-to-end", ok,
           f"(a) accuracy {acc:.3f} [{', '.join(f'{a:.2f}' for a in accs)}]; "
           f"(b) attention S_JoA {perm['observed']:.3f} vs null {perm['null_mean']:.3f}, p={perm['p_value']:.4f}; "
           f"(c) CTW perturbed joints above median in {sum(above)}/{len(above)}", t.seconds)


# 12 ------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_12_ablation_grid():
    with Timer() as t:
        table = pl.run_ablation(pl.desk_config(0), seed=0)
    exercises = sorted({ex for row in table.values() for ex in row})
    lines = ["config," + ",".join(exercises)] + [
        name + "," + ",".join(f"{table[name][ex]:.3f}" for ex in exercises) for name in table]
    print("\n".join(lines))
    expected = [name for name, _, _ in pl.ABLATION_GRID]
    ok = list(table) == expected and all(len(table[n]) == len(pl.SYNTHETIC_EXERCISES) for n in table) and \
        all(0 <= v <= 1 for row in table.values() for v in row.values())
    record(12, "ablation grid", ok, f"{len(table)} rows: " + "; ".join(
        f"{n} mean {np.mean(list(table[n].values())):.3f}" for n in table), t.seconds)


if __name__ == "__main__":  # pragma: no cover
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    raise SystemExit(1 if failed else 0)
