"""Triplet composition, ranking losses, AdamW and the training loop."""
from __future__ import annotations

import dataclasses
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import tensor as tt
from .errors import DegenerateError, InsufficientDataError
from .skeldata import CropMode, Label, SampleMode, SkeletonSequence, crop_frames, sample_frames
from .stgat import STGAT
from .tensor import Tensor

log = logging.getLogger(__name__)


class DistanceKind(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"


class LossKind(str, enum.Enum):
    RATIO = "ratio"
    MARGIN = "margin"


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int


# --------------------------------------------------------------------------
# Triplets
# --------------------------------------------------------------------------


def triplet_count(n_correct: int, n_incorrect: int) -> int:
    return math.comb(n_correct, 2) * n_incorrect


def compose_triplets(correct: Sequence[SkeletonSequence] | int,
                     incorrect: Sequence[SkeletonSequence] | int) -> list[Triplet]:
    """Every unordered pair of correct sequences combined with every incorrect one.

    Indices refer to positions in ``correct`` (anchor, positive) and
    ``incorrect`` (negative). Plain integers may be passed instead of
    sequence lists when only the index structure is needed.
    """
    n = correct if isinstance(correct, int) else len(correct)
    m = incorrect if isinstance(incorrect, int) else len(incorrect)
    if n < 2 or m < 1:
        raise InsufficientDataError(f"need >= 2 correct and >= 1 incorrect sequences, got {n} and {m}")
    if not isinstance(correct, int) and not isinstance(incorrect, int):
        exercises = {s.exercise_id for s in correct} | {s.exercise_id for s in incorrect}
        if len(exercises) > 1:
            raise ValueError(f"triplets must come from one exercise, got {sorted(exercises)}")
        if any(s.label is not Label.CORRECT for s in correct) or \
                any(s.label is not Label.INCORRECT for s in incorrect):
            raise ValueError("anchor/positive must be correct and negatives incorrect")
    return [Triplet(a, p, k) for a in range(n) for p in range(a + 1, n) for k in range(m)]


# --------------------------------------------------------------------------
# Distances and losses
# --------------------------------------------------------------------------


def distance(u, v, kind: DistanceKind | str = DistanceKind.EUCLIDEAN) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"embedding shapes differ: {u.shape} vs {v.shape}")
    if DistanceKind(kind) is DistanceKind.EUCLIDEAN:
        return float(np.linalg.norm(u - v))
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DegenerateError("cosine distance of a zero vector")
    return float(max(0.0, 1.0 - np.dot(u, v) / (nu * nv)))


def pairwise_distance(u: Tensor, v: Tensor, kind: DistanceKind | str = DistanceKind.EUCLIDEAN) -> Tensor:
    """Row-wise distances between two (B, D) tensors, differentiable."""
    if DistanceKind(kind) is DistanceKind.EUCLIDEAN:
        diff = u - v
        return tt.sqrt(tt.sum_(diff * diff, axis=-1))
    dot = tt.sum_(u * v, axis=-1)
    nu = tt.sqrt(tt.sum_(u * u, axis=-1))
    nv = tt.sqrt(tt.sum_(v * v, axis=-1))
    if np.any(nu.data == 0) or np.any(nv.data == 0):
        raise DegenerateError("cosine distance of a zero vector")
    return 1.0 - dot / (nu * nv)


def margin_loss(d_ap, d_an, margin: float):
    """Hinged ranking loss ``max(0, d_ap - d_an + margin)``."""
    out = np.maximum(0.0, np.asarray(d_ap, dtype=np.float64) - d_an + margin)
    return float(out) if out.ndim == 0 else out


def ratio_loss(d_ap, d_an):
    """Squared softmax weight of the positive distance, in (0, 1)."""
    d_ap = np.asarray(d_ap, dtype=np.float64)
    d_an = np.asarray(d_an, dtype=np.float64)
    m = np.maximum(d_ap, d_an)
    ep, en = np.exp(d_ap - m), np.exp(d_an - m)
    out = (ep / (ep + en)) ** 2
    return float(out) if out.ndim == 0 else out


def margin_loss_t(d_ap: Tensor, d_an: Tensor, margin: float) -> Tensor:
    return tt.relu(tt.add(d_ap - d_an, margin))


def ratio_loss_t(d_ap: Tensor, d_an: Tensor) -> Tensor:
    pair = tt.concat([tt.reshape(d_ap, (-1, 1)), tt.reshape(d_an, (-1, 1))], axis=1)
    w = tt.take(tt.softmax(pair, axis=1), 0, axis=1)
    return w * w


def anchor_swap(a, p, n, kind: DistanceKind | str = DistanceKind.EUCLIDEAN):
    """Swap anchor and positive when the positive is strictly closer to the negative."""
    if distance(p, n, kind) < distance(a, n, kind):
        return p, a
    return a, p


# --------------------------------------------------------------------------
# Optimizer
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None], state: AdamState,
               lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 0.01) -> None:
    """One in-place AdamW update; decay is applied before the moment step."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p)
            state.v[i] = np.zeros_like(p)
        v = state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class AdamW:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamState()

    def step(self) -> None:
        adamw_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                   self.lr, self.betas[0], self.betas[1], self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        tt.zero_grads(self.params)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass
class TrainConfig:
    loss: LossKind = LossKind.RATIO
    margin: float = 0.2
    distance: DistanceKind = DistanceKind.EUCLIDEAN
    lr: float = 1e-3
    gamma: float = 0.9
    steps_per_epoch: int = 2
    epochs: int = 10
    batch_size: int = 20
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    sample_len: int = 160
    crop_len: int = 128
    max_triplets_per_epoch: int | None = None
    seed: int = 0

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        self.distance = DistanceKind(self.distance)
        self.betas = tuple(self.betas)
        if self.loss is LossKind.MARGIN and not self.margin > 0:
            raise ValueError("margin must be positive for the margin loss")
        if self.batch_size < 1 or self.epochs < 0 or self.steps_per_epoch < 0:
            raise ValueError("batch_size must be >= 1 and epochs/steps_per_epoch >= 0")
        if self.crop_len > self.sample_len:
            raise ValueError("crop_len cannot exceed sample_len")

    def lr_at(self, scheduler_steps: int) -> float:
        return self.lr * self.gamma ** scheduler_steps

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["loss"], d["distance"], d["betas"] = self.loss.value, self.distance.value, list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainResult:
    model: STGAT
    history: list[dict] = field(default_factory=list)
    config: TrainConfig | None = None
    final_lr: float | None = None

    @property
    def losses(self) -> list[float]:
        return [h["loss"] for h in self.history]

    def epoch_means(self) -> list[float]:
        out: dict[int, list[float]] = {}
        for h in self.history:
            out.setdefault(h["epoch"], []).append(h["loss"])
        return [float(np.mean(v)) for _, v in sorted(out.items())]

    def metrics(self) -> dict:
        return {"config": self.config.to_dict() if self.config else None, "batches": self.history}


def training_clip(seq: SkeletonSequence, config: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    s = sample_frames(seq, config.sample_len, SampleMode.RANDOM_UNIFORM, rng)
    return crop_frames(s, config.crop_len, CropMode.RANDOM_WINDOW, rng).frames


def evaluation_clip(seq: SkeletonSequence, sample_len: int, crop_len: int) -> np.ndarray:
    s = sample_frames(seq, sample_len, SampleMode.UNIFORM)
    return crop_frames(s, crop_len, CropMode.CENTER).frames


def _flatten(dataset) -> tuple[list[SkeletonSequence], list[tuple[int, int, int]]]:
    """Concatenate per-exercise groups into one pool and global triplet indices."""
    if isinstance(dataset, tuple) and len(dataset) == 2:
        dataset = {"_": dataset}
    pool: list[SkeletonSequence] = []
    triplets: list[tuple[int, int, int]] = []
    for _, (correct, incorrect) in sorted(dataset.items()):
        base_c = len(pool)
        pool.extend(correct)
        base_i = len(pool)
        pool.extend(incorrect)
        triplets.extend((base_c + a, base_c + p, base_i + n) for a, p, n in compose_triplets(correct, incorrect))
    return pool, triplets


def train(dataset, config: TrainConfig, model: STGAT) -> TrainResult:
    """Train ``model`` in place on triplets from ``dataset``.

    ``dataset`` is either ``(correct, incorrect)`` for one exercise or a
    mapping ``exercise_id -> (correct, incorrect)``; triplets never cross
    exercises. Per batch: embed the batch's sequences, swap anchor and
    positive where that gives the harder negative, average the loss, step
    AdamW. The learning rate decays by ``gamma`` ``steps_per_epoch`` times
    per epoch at evenly spaced batches.
    """
    pool, triplets = _flatten(dataset)
    trip = np.asarray(triplets, dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    opt = AdamW(model.parameters(), config.lr, config.betas, config.eps, config.weight_decay)
    result = TrainResult(model=model, config=config)
    for epoch in range(config.epochs):
        order = rng.permutation(len(trip))
        if config.max_triplets_per_epoch:
            order = order[: config.max_triplets_per_epoch]
        batches = [order[i : i + config.batch_size] for i in range(0, len(order), config.batch_size)]
        for b, rows in enumerate(batches):
            # The scheduler steps at evenly spaced batch boundaries within the epoch.
            opt.lr = config.lr_at(epoch * config.steps_per_epoch + b * config.steps_per_epoch // len(batches))
            cur = trip[rows]
            uniq, inv = np.unique(cur, return_inverse=True)
            inv = inv.reshape(cur.shape)
            clips = np.stack([training_clip(pool[i], config, rng) for i in uniq])
            emb, _ = model.forward_batch(clips)
            e = emb.data
            a, p, n = inv[:, 0], inv[:, 1], inv[:, 2]
            d_an = np.array([distance(e[i], e[k], config.distance) for i, k in zip(a, n)])
            d_pn = np.array([distance(e[j], e[k], config.distance) for j, k in zip(p, n)])
            swap = d_pn < d_an
            a, p = np.where(swap, p, a), np.where(swap, a, p)
            ea, ep, en = tt.take(emb, a), tt.take(emb, p), tt.take(emb, n)
            dap = pairwise_distance(ea, ep, config.distance)
            dan = pairwise_distance(ea, en, config.distance)
            per = ratio_loss_t(dap, dan) if config.loss is LossKind.RATIO \
                else margin_loss_t(dap, dan, config.margin)
            loss = tt.mean(per)
            opt.zero_grad()
            loss.backward()
            opt.step()
            result.history.append({
                "epoch": epoch, "batch": b, "loss": loss.item(), "lr": opt.lr,
                "swapped": int(swap.sum()),
            })
        log.debug("epoch %d mean loss %.4f", epoch,
                  np.mean([h["loss"] for h in result.history if h["epoch"] == epoch]))
    result.final_lr = config.lr_at(config.epochs * config.steps_per_epoch)
    return result
