"""Spatial-temporal graph attention encoder.

For every frame ``t`` each joint of the centre pose attends to every joint
of the ``tau`` poses around ``t`` (edge-padded at the sequence ends). Heads
aggregate the window with their own attention rows, project with their own
value weights, and are averaged before the activation:

    Y_t = relu( (1/H) * sum_h  W_h^T (A_h^T X_window) )

Blocks are stacked with residual connections, then features are mean-pooled
over frames and joints and linearly projected to the embedding.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as tt
from .errors import ShapeError
from .tensor import Tensor


@dataclass
class StgatConfig:
    num_joints: int = 17
    in_channels: int = 3
    tau: int = 3
    heads: int = 8
    channels: tuple[int, ...] = (32, 64, 128)
    embed_dim: int = 128
    key_dim: int = 16
    joint_embedding: bool = True
    activation: str = "relu"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.tau < 1 or self.tau % 2 == 0:
            raise ValueError(f"tau must be a positive odd integer, got {self.tau}")
        if self.heads < 1 or self.key_dim < 1 or self.embed_dim < 1:
            raise ValueError("heads, key_dim and embed_dim must be positive")
        if not self.channels or min(self.channels) < 1:
            raise ValueError("channels must be a non-empty list of positive ints")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def blocks(self) -> int:
        return len(self.channels)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StgatConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class AttentionMaps:
    """Per-block attention of one sequence.

    ``blocks[b]`` has shape ``(T, H, tau, N, N)``: for frame ``t`` and head
    ``h``, entry ``[t, h, s, i, j]`` is the weight that centre-frame joint
    ``i`` puts on joint ``j`` of window slot ``s``. The weights of each
    ``(t, h, i)`` sum to one over ``(s, j)``.
    """

    blocks: list[np.ndarray] = field(default_factory=list)

    @property
    def num_frames(self) -> int:
        return self.blocks[0].shape[0]


def window_indices(num_frames: int, tau: int) -> np.ndarray:
    """(T, tau) frame indices of the edge-padded window centred on each frame."""
    half = tau // 2
    idx = np.arange(num_frames)[:, None] + np.arange(-half, half + 1)[None, :]
    return np.clip(idx, 0, num_frames - 1)


def build_window(features: Tensor | np.ndarray, t: int, tau: int) -> Tensor:
    """The ``tau`` frames centred at ``t`` of a (T, N, C) tensor, edge padded."""
    features = tt.as_tensor(features)
    T = features.shape[0]
    if not 0 <= t < T:
        raise IndexError(f"frame {t} out of range for {T} frames")
    return tt.take(features, window_indices(T, tau)[t], axis=0)


def _attend(center: Tensor, window: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
            heads: int, key_dim: int) -> tuple[Tensor, Tensor]:
    """Core of one attention layer over arbitrary leading batch axes.

    center: (..., N, C_in); window: (..., S, C_in) with S = tau * N.
    Returns pre-activation output (..., N, C_out) and attention (..., H, N, S).
    """
    lead = center.shape[:-2]
    N, C = center.shape[-2:]
    S = window.shape[-2]
    H, dk = heads, key_dim
    nl = len(lead)
    q = tt.reshape(tt.scale(center @ wq, 1.0 / np.sqrt(dk)), lead + (N, H, dk))
    q = tt.transpose(q, tuple(range(nl)) + (nl + 1, nl, nl + 2))          # (..., H, N, dk)
    k = tt.reshape(window @ wk, lead + (S, H, dk))
    k = tt.transpose(k, tuple(range(nl)) + (nl + 1, nl + 2, nl))          # (..., H, dk, S)
    attn = tt.softmax(q @ k, axis=-1)                                     # (..., H, N, S)
    agg = tt.reshape(attn, lead + (H * N, S)) @ window                    # (..., H*N, C)
    agg = tt.transpose(tt.reshape(agg, lead + (H, N, C)), tuple(range(nl)) + (nl + 1, nl, nl + 2))
    agg = tt.reshape(agg, lead + (N, H * C))
    out = tt.scale(agg @ wv, 1.0 / H)                                     # (..., N, C_out)
    return out, attn


def attention_layer(window: Tensor | np.ndarray, weights: dict[str, Tensor], heads: int,
                    key_dim: int | None = None) -> tuple[Tensor, np.ndarray]:
    """Apply one attention layer to a single (tau, N, C_in) window.

    ``weights`` holds ``query``/``key`` of shape (C_in, H*dk) and ``value``
    of shape (H*C_in, C_out). Returns the activated (N, C_out) output and
    the (H, tau, N, N) attention slice.
    """
    window = tt.as_tensor(window)
    if window.ndim != 3:
        raise ShapeError(f"window must be (tau, N, C), got {window.shape}")
    tau, N, C = window.shape
    wq, wk, wv = weights["query"], weights["key"], weights["value"]
    if wq.shape[0] != C or wv.shape[0] != heads * C:
        raise ShapeError("weights do not match the window channels")
    dk = key_dim or wq.shape[1] // heads
    if wq.shape[1] != heads * dk or wk.shape != wq.shape:
        raise ShapeError("query/key weights must be (C_in, heads * key_dim)")
    center = tt.take(window, tau // 2, axis=0)
    out, attn = _attend(center, tt.reshape(window, (tau * N, C)), wq, wk, wv, heads, dk)
    maps = attn.data.reshape(heads, N, tau, N).transpose(0, 2, 1, 3)
    return tt.relu(out), maps


def _init_params(cfg: StgatConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    def normal(shape, fan_in, gain=1.0):
        return rng.normal(0.0, gain / np.sqrt(fan_in), size=shape)

    c0 = cfg.channels[0]
    p: dict[str, np.ndarray] = {
        "input.weight": normal((cfg.in_channels, c0), cfg.in_channels),
        "input.bias": np.zeros(c0),
    }
    if cfg.joint_embedding:
        p["joint_embed"] = normal((cfg.num_joints, c0), 1.0, 0.5)
    c_in = c0
    for b, c_out in enumerate(cfg.channels):
        p[f"block{b}.query"] = normal((c_in, cfg.heads * cfg.key_dim), c_in)
        p[f"block{b}.key"] = normal((c_in, cfg.heads * cfg.key_dim), c_in)
        p[f"block{b}.value"] = normal((cfg.heads * c_in, c_out), c_in, np.sqrt(2.0))
        if c_in != c_out:
            p[f"block{b}.residual"] = normal((c_in, c_out), c_in)
        c_in = c_out
    p["head.weight"] = normal((c_in, cfg.embed_dim), c_in)
    p["head.bias"] = np.zeros(cfg.embed_dim)
    return p


class STGAT:
    """Graph-attention sequence encoder with named float64 parameters."""

    def __init__(self, config: StgatConfig | None = None, seed: int | None = 0,
                 params: dict[str, np.ndarray] | None = None):
        self.config = config or StgatConfig()
        arrays = params if params is not None else _init_params(self.config, np.random.default_rng(seed))
        self.params: dict[str, Tensor] = tt.parameters_from(arrays)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        tt.zero_grads(self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def forward_batch(self, frames: np.ndarray) -> tuple[Tensor, list[np.ndarray]]:
        """Embed a (B, T, N, C) batch.

        Returns the (B, embed_dim) embedding tensor and, per block, the
        (B, T, H, tau, N, N) attention array.
        """
        cfg = self.config
        x = np.asarray(frames, dtype=np.float64)
        if x.ndim != 4 or x.shape[2] != cfg.num_joints or x.shape[3] != cfg.in_channels:
            raise ShapeError(
                f"expected (B, T, {cfg.num_joints}, {cfg.in_channels}) input, got {x.shape}"
            )
        B, T, N, _ = x.shape
        P = self.params
        h = tt.add(tt.matmul(Tensor(x), P["input.weight"]), P["input.bias"])
        if cfg.joint_embedding:
            h = h + P["joint_embed"]
        widx = window_indices(T, cfg.tau)
        maps = []
        for b in range(cfg.blocks):
            C = h.shape[-1]
            window = tt.reshape(tt.take(h, widx, axis=1), (B, T, cfg.tau * N, C))
            out, attn = _attend(h, window, P[f"block{b}.query"], P[f"block{b}.key"],
                                P[f"block{b}.value"], cfg.heads, cfg.key_dim)
            res = h @ P[f"block{b}.residual"] if f"block{b}.residual" in P else h
            h = tt.relu(out) + res
            maps.append(attn.data.reshape(B, T, cfg.heads, N, cfg.tau, N).transpose(0, 1, 2, 4, 3, 5))
        pooled = tt.mean(h, axis=(1, 2))
        emb = tt.add(tt.matmul(pooled, P["head.weight"]), P["head.bias"])
        return emb, maps

    def forward(self, frames: np.ndarray) -> tuple[np.ndarray, AttentionMaps]:
        """Embedding vector and attention maps of one (T, N, C) sequence."""
        with tt.no_grad():
            emb, maps = self.forward_batch(np.asarray(frames)[None])
        return emb.data[0].copy(), AttentionMaps([m[0] for m in maps])

    def embed(self, batch: np.ndarray) -> np.ndarray:
        with tt.no_grad():
            emb, _ = self.forward_batch(batch)
        return emb.data

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        tt.save_checkpoint(path, self.params, {"config": self.config.to_dict(), **(meta or {})})

    @classmethod
    def load(cls, path: str | Path) -> "STGAT":
        arrays, meta = tt.load_checkpoint(path)
        return cls(StgatConfig.from_dict(meta["config"]), params=arrays)


def joint_attention_scores(maps: AttentionMaps, block: int = -1, aggregate: str = "destination",
                           frame: int | None = None) -> np.ndarray:
    """Raw per-joint attention scores at the centre frame.

    Heads are averaged; ``destination`` sums the attention each joint
    receives over all source joints and window slots, ``source`` sums what
    each joint sends.
    """
    arr = maps.blocks[block]
    t = arr.shape[0] // 2 if frame is None else frame
    avg = arr[t].mean(axis=0)  # (tau, N_src, N_dst)
    if aggregate == "destination":
        return avg.sum(axis=(0, 1))
    if aggregate == "source":
        return avg.sum(axis=(0, 2))
    raise ValueError(f"unknown aggregate {aggregate!r}")
