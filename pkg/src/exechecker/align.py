"""Canonical time warping baseline for joint scoring.

CTW alternates between fitting CCA projections on the currently aligned
frame pairs and re-aligning the projected sequences with DTW. The final
path pairs correct (CE) and incorrect (IE) frames; per-joint Euclidean
distances along it are the raw joint scores, which are then divided by
``hops + 1`` to offset the bias of distal joints.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import RankError
from .skeldata import SkeletonSequence, SkeletonTopology

WarpPath = list[tuple[int, int]]


def _frames(x) -> np.ndarray:
    return x.frames if isinstance(x, SkeletonSequence) else np.asarray(x, dtype=np.float64)


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x.reshape(len(x), -1)


def frame_distances(X, Y) -> np.ndarray:
    """(T1, T2) Euclidean distances between the frames of two feature sequences."""
    X, Y = _as_2d(X), _as_2d(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"feature dimensions differ: {X.shape[1]} vs {Y.shape[1]}")
    diff = X[:, None, :] - Y[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def dtw(X, Y, metric: str = "euclidean") -> tuple[WarpPath, float]:
    """Optimal monotone alignment with steps (1,0), (0,1), (1,1).

    Ties prefer the diagonal predecessor, then (1,0), then (0,1). Returns the
    path from (0, 0) to (T1-1, T2-1) and its summed frame cost.
    """
    if metric != "euclidean":
        raise ValueError(f"unsupported metric {metric!r}")
    C = frame_distances(X, Y)
    T1, T2 = C.shape
    if T1 < 1 or T2 < 1:
        raise ValueError("sequences must be non-empty")
    D = np.full((T1 + 1, T2 + 1), np.inf)
    D[0, 0] = 0.0
    choice = np.zeros((T1, T2), dtype=np.int8)
    # Cells on one anti-diagonal only depend on the previous two.
    for d in range(T1 + T2 - 1):
        i = np.arange(max(0, d - T2 + 1), min(d, T1 - 1) + 1)
        j = d - i
        prev = np.stack([D[i, j], D[i, j + 1], D[i + 1, j]])  # diag, (1,0), (0,1)
        k = np.argmin(prev, axis=0)
        choice[i, j] = k
        D[i + 1, j + 1] = C[i, j] + prev[k, np.arange(len(i))]
    path = [(T1 - 1, T2 - 1)]
    i, j = T1 - 1, T2 - 1
    while (i, j) != (0, 0):
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            k = choice[i, j]
            if k == 0:
                i, j = i - 1, j - 1
            elif k == 1:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    return path, float(D[T1, T2])


def path_cost(X, Y, path: WarpPath) -> float:
    C = frame_distances(X, Y)
    total = 0.0
    for i, j in path:
        total += C[i, j]
    return total


def is_valid_path(path: WarpPath, T1: int, T2: int) -> bool:
    if not path or tuple(path[0]) != (0, 0) or tuple(path[-1]) != (T1 - 1, T2 - 1):
        return False
    steps = {(1, 0), (0, 1), (1, 1)}
    return all((b[0] - a[0], b[1] - a[1]) in steps for a, b in zip(path, path[1:]))


# --------------------------------------------------------------------------
# CCA
# --------------------------------------------------------------------------


class CCAResult(NamedTuple):
    x_weights: np.ndarray     # (D1, k)
    y_weights: np.ndarray     # (D2, k)
    correlations: np.ndarray  # (k,), non-increasing
    x_mean: np.ndarray
    y_mean: np.ndarray


def cca(X, Y, k: int = 1, reg: float = 1e-6) -> CCAResult:
    """Canonical correlation analysis via the ridge-regularized generalized eigenproblem.

    ``[[0, Cxy], [Cyx, 0]] w = rho * [[Cxx + reg I, 0], [0, Cyy + reg I]] w``.
    Weights satisfy ``Wx' (Cxx + reg I) Wx = I`` (same for ``Wy``), so the
    projections have unit variance up to the ridge.
    """
    X, Y = _as_2d(X), _as_2d(Y)
    T, d1 = X.shape
    if Y.shape[0] != T:
        raise ValueError("X and Y must have the same number of rows")
    d2 = Y.shape[1]
    if not 1 <= k <= min(d1, d2):
        raise ValueError(f"k must be in [1, {min(d1, d2)}], got {k}")
    if T <= k:
        raise ValueError(f"need more than k={k} rows, got {T}")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    cxx = Xc.T @ Xc / T + reg * np.eye(d1)
    cyy = Yc.T @ Yc / T + reg * np.eye(d2)
    cxy = Xc.T @ Yc / T
    A = np.zeros((d1 + d2, d1 + d2))
    A[:d1, d1:] = cxy
    A[d1:, :d1] = cxy.T
    B = np.zeros_like(A)
    B[:d1, :d1] = cxx
    B[d1:, d1:] = cyy
    try:
        w, V = scipy.linalg.eigh(A, B, subset_by_index=[d1 + d2 - k, d1 + d2 - 1])
    except np.linalg.LinAlgError as exc:
        raise RankError(f"covariance is singular beyond ridge {reg:g}") from exc
    order = np.argsort(w)[::-1]
    rho, V = w[order], V[:, order] * np.sqrt(2.0)
    wx, wy = V[:d1], V[d1:]
    # Deterministic signs: largest |entry| of each x direction is positive.
    flip = np.sign(wx[np.abs(wx).argmax(axis=0), np.arange(k)])
    flip[flip == 0] = 1.0
    return CCAResult(wx * flip, wy * flip, np.clip(rho, 0.0, None), mx, my)


# --------------------------------------------------------------------------
# CTW
# --------------------------------------------------------------------------


@dataclass
class CTWResult:
    path: WarpPath
    objectives: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    correlations: np.ndarray | None = None


def ctw(ce, ie, k: int | None = None, max_iter: int = 20, tol: float = 1e-6,
        reg: float = 1e-6) -> CTWResult:
    """Canonical time warping of two pose sequences.

    Inputs are (T, N, 3) sequences, flattened per frame. The path starts
    from plain DTW on the features; each iteration fits CCA on the aligned
    pairs and re-runs DTW between the projected sequences. An iteration
    whose objective would rise is rejected and ends the loop, so the
    recorded objectives never increase.
    """
    X = _as_2d(_frames(ce))
    Y = _as_2d(_frames(ie))
    if X.shape[1] != Y.shape[1]:
        raise ValueError("CE and IE must have the same joint layout")
    X = X - X.mean(axis=0)
    Y = Y - Y.mean(axis=0)
    if k is None:
        k = min(X.shape[1], 10)
    path, _ = dtw(X, Y)
    result = CTWResult(path=path)
    prev = np.inf
    for _ in range(max_iter):
        idx = np.asarray(path)
        kk = min(k, len(idx) - 1)
        proj = cca(X[idx[:, 0]], Y[idx[:, 1]], kk, reg)
        new_path, cost = dtw(X @ proj.x_weights, Y @ proj.y_weights)
        if cost > prev:
            break
        result.path, result.correlations = new_path, proj.correlations
        result.objectives.append(cost)
        result.iterations += 1
        path = new_path
        if prev - cost < tol or cost < tol:
            result.converged = True
            break
        prev = cost
    return result


def ctw_joint_scores(ce, ie, path: WarpPath, aggregate: str = "step") -> np.ndarray:
    """Per-joint 3D distance between aligned CE and IE frames.

    ``step`` sums over every path step; ``ie_frame`` first averages the
    steps that share an IE frame, so duplicated matches count once.
    """
    A, B = _frames(ce), _frames(ie)
    idx = np.asarray(path, dtype=np.intp)
    d = np.linalg.norm(A[idx[:, 0]] - B[idx[:, 1]], axis=-1)  # (L, N)
    if aggregate == "step":
        return d.sum(axis=0)
    if aggregate == "ie_frame":
        frames, inv, counts = np.unique(idx[:, 1], return_inverse=True, return_counts=True)
        per = np.zeros((len(frames), d.shape[1]))
        np.add.at(per, inv, d)
        return (per / counts[:, None]).sum(axis=0)
    raise ValueError(f"unknown aggregate {aggregate!r}")


def hop_adjust(raw, topology: SkeletonTopology) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    return raw / (np.asarray(topology.hops, dtype=np.float64) + 1.0)


def ctw_scores(ce, ie, topology: SkeletonTopology, k: int | None = None, max_iter: int = 20,
               tol: float = 1e-6, aggregate: str = "step") -> dict:
    """Run CTW and return the path, raw and hop-adjusted scores."""
    res = ctw(ce, ie, k=k, max_iter=max_iter, tol=tol)
    raw = ctw_joint_scores(ce, ie, res.path, aggregate)
    return {
        "path": [list(p) for p in res.path],
        "raw": raw.tolist(),
        "adjusted": hop_adjust(raw, topology).tolist(),
        "objectives": list(res.objectives),
        "iterations": res.iterations,
        "converged": res.converged,
    }
