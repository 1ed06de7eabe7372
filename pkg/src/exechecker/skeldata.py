"""Skeleton sequences: data model, file IO, normalization and augmentation.

A sequence is a ``(T, N, 3)`` float64 array of joint positions plus
metadata. Every transform here returns a new :class:`SkeletonSequence` and
never mutates its input.
"""
from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateError, LengthError, ParseError, SchemaError, SpecError


class Label(str, enum.Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"


class SampleMode(str, enum.Enum):
    RANDOM_UNIFORM = "random_uniform"
    UNIFORM = "uniform"


class CropMode(str, enum.Enum):
    RANDOM_WINDOW = "random_window"
    CENTER = "center"


# --------------------------------------------------------------------------
# Topology
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SkeletonTopology:
    """Joint names, kinematic tree and left/right symmetry of a skeleton.

    ``parents[root] == root``. ``head`` is the joint used as the scale
    reference by :func:`normalize`.
    """

    joint_names: tuple[str, ...]
    parents: tuple[int, ...]
    root: int = 0
    mirror_pairs: tuple[tuple[int, int], ...] = ()
    mirror_axis: int = 0
    head: int | None = None

    def __post_init__(self):
        n = len(self.joint_names)
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(
            self, "mirror_pairs", tuple((int(a), int(b)) for a, b in self.mirror_pairs)
        )
        if len(set(self.joint_names)) != n:
            raise SchemaError("duplicate joint names")
        if len(self.parents) != n:
            raise SchemaError(f"{len(self.parents)} parents for {n} joints")
        if not 0 <= self.root < n or self.parents[self.root] != self.root:
            raise SchemaError("root must be a valid index that is its own parent")
        if any(not 0 <= p < n for p in self.parents):
            raise SchemaError("parent index out of range")
        if self.mirror_axis not in (0, 1, 2):
            raise SchemaError("mirror_axis must be 0, 1 or 2")
        seen: set[int] = set()
        for a, b in self.mirror_pairs:
            if a == b or a in seen or b in seen or not (0 <= a < n and 0 <= b < n):
                raise SchemaError(f"invalid mirror pair ({a}, {b})")
            seen.update((a, b))
        if self.head is not None and not 0 <= self.head < n:
            raise SchemaError("head index out of range")
        # Computing hops walks every chain to the root, which rejects cycles.
        object.__setattr__(self, "_hops", self._compute_hops())

    def _compute_hops(self) -> tuple[int, ...]:
        n = len(self.parents)
        hops = []
        for j in range(n):
            h, k = 0, j
            while k != self.root:
                k = self.parents[k]
                h += 1
                if h > n:
                    raise SchemaError(f"joint {self.joint_names[j]!r} does not reach the root")
            hops.append(h)
        return tuple(hops)

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def hops(self) -> tuple[int, ...]:
        """Number of kinematic hops from each joint to the root."""
        return self._hops  # type: ignore[attr-defined]

    @property
    def bones(self) -> list[tuple[int, int]]:
        """(parent, child) pairs for every non-root joint."""
        return [(p, j) for j, p in enumerate(self.parents) if j != self.root]

    @property
    def mirror_permutation(self) -> np.ndarray:
        perm = np.arange(self.num_joints)
        for a, b in self.mirror_pairs:
            perm[a], perm[b] = b, a
        return perm

    def topological_order(self) -> list[int]:
        """Joint indices sorted so that every parent precedes its children."""
        return sorted(range(self.num_joints), key=lambda j: (self.hops[j], j))

    def index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise KeyError(f"unknown joint {name!r}") from None

    def indices(self, names: Sequence[str | int]) -> list[int]:
        return [n if isinstance(n, (int, np.integer)) else self.index(n) for n in names]

    def subtree(self, joint: int) -> set[int]:
        """``joint`` and all of its descendants."""
        out = {joint}
        for j in self.topological_order():
            if j != self.root and self.parents[j] in out:
                out.add(j)
        return out

    def to_dict(self) -> dict:
        d = {
            "joints": list(self.joint_names),
            "parents": list(self.parents),
            "root": self.root,
            "mirror_pairs": [list(p) for p in self.mirror_pairs],
            "mirror_axis": self.mirror_axis,
        }
        if self.head is not None:
            d["head"] = self.head
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonTopology":
        try:
            return cls(
                joint_names=tuple(d["joints"]),
                parents=tuple(d["parents"]),
                root=int(d["root"]),
                mirror_pairs=tuple(tuple(p) for p in d.get("mirror_pairs", [])),
                mirror_axis=int(d.get("mirror_axis", 0)),
                head=d.get("head"),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad topology: {exc}") from exc


def load_topology(path: str | Path) -> SkeletonTopology:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(d, dict):
        raise SchemaError(f"{path}: topology must be a JSON object")
    return SkeletonTopology.from_dict(d)


def save_topology(topology: SkeletonTopology, path: str | Path) -> None:
    Path(path).write_text(json.dumps(topology.to_dict(), indent=2), encoding="utf-8")


H36M_JOINTS = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "torso", "neck", "nose", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)
_H36M_PARENTS = (0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)
_H36M_PAIRS = ((4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16))


def h36m_topology() -> SkeletonTopology:
    """The 17-joint Human3.6M layout, pelvis at the root, x lateral."""
    return SkeletonTopology(
        joint_names=H36M_JOINTS,
        parents=_H36M_PARENTS,
        root=0,
        mirror_pairs=_H36M_PAIRS,
        mirror_axis=0,
        head=10,
    )


def execheck_topology() -> SkeletonTopology:
    """Human3.6M joints plus both hands and feet (21 joints)."""
    return SkeletonTopology(
        joint_names=H36M_JOINTS + ("l_hand", "r_hand", "l_foot", "r_foot"),
        parents=_H36M_PARENTS + (13, 16, 6, 3),
        root=0,
        mirror_pairs=_H36M_PAIRS + ((17, 18), (19, 20)),
        mirror_axis=0,
        head=10,
    )


# --------------------------------------------------------------------------
# Sequences
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SkeletonSequence:
    frames: np.ndarray
    exercise_id: str = ""
    subject_id: str = ""
    label: Label = Label.CORRECT
    fps: float = 30.0

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[2] != 3 or frames.shape[0] < 1:
            raise SchemaError(f"frames must be (T, N, 3) with T >= 1, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("sequence contains non-finite coordinates")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "label", Label(self.label))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_joints(self) -> int:
        return self.frames.shape[1]

    def replace(self, **changes) -> "SkeletonSequence":
        return dataclasses.replace(self, **changes)

    def to_dict(self, topology: SkeletonTopology) -> dict:
        return {
            "exercise_id": self.exercise_id,
            "subject_id": self.subject_id,
            "label": self.label.value,
            "fps": self.fps,
            "joints": list(topology.joint_names),
            "frames": self.frames.tolist(),
        }


def load_sequence(path: str | Path, topology: SkeletonTopology) -> SkeletonSequence:
    """Read a sequence JSON file and reorder its joints to ``topology``."""
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return sequence_from_dict(d, topology, source=str(path))


def sequence_from_dict(d, topology: SkeletonTopology, source: str = "<dict>") -> SkeletonSequence:
    if not isinstance(d, dict):
        raise SchemaError(f"{source}: expected a JSON object")
    missing = {"exercise_id", "subject_id", "label", "fps", "joints", "frames"} - d.keys()
    if missing:
        raise SchemaError(f"{source}: missing keys {sorted(missing)}")
    joints = d["joints"]
    if not isinstance(joints, list) or sorted(map(str, joints)) != sorted(topology.joint_names):
        raise SchemaError(
            f"{source}: joints do not match topology "
            f"({len(joints) if isinstance(joints, list) else '?'} vs {topology.num_joints})"
        )
    if d["label"] not in ("correct", "incorrect"):
        raise SchemaError(f"{source}: label must be 'correct' or 'incorrect'")
    try:
        frames = np.asarray(d["frames"], dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"{source}: frames are not a numeric T x N x 3 array") from exc
    if frames.ndim != 3 or frames.shape[1:] != (len(joints), 3) or frames.shape[0] < 1:
        raise SchemaError(f"{source}: frames have shape {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise ValueError(f"{source}: non-finite coordinate")
    order = [joints.index(name) for name in topology.joint_names]
    try:
        fps = float(d["fps"])
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{source}: fps must be a number") from exc
    return SkeletonSequence(
        frames=frames[:, order],
        exercise_id=str(d["exercise_id"]),
        subject_id=str(d["subject_id"]),
        label=Label(d["label"]),
        fps=fps,
    )


def save_sequence(seq: SkeletonSequence, topology: SkeletonTopology, path: str | Path) -> None:
    Path(path).write_text(json.dumps(seq.to_dict(topology)), encoding="utf-8")


def _check_joints(seq: SkeletonSequence, topology: SkeletonTopology) -> None:
    if seq.num_joints != topology.num_joints:
        raise SchemaError(
            f"sequence has {seq.num_joints} joints, topology has {topology.num_joints}"
        )


def normalize(seq: SkeletonSequence, topology: SkeletonTopology) -> SkeletonSequence:
    """Root-center every frame and scale so the mean root-to-head distance is 1."""
    _check_joints(seq, topology)
    if topology.head is None:
        raise SchemaError("topology defines no head joint")
    centered = seq.frames - seq.frames[:, topology.root : topology.root + 1]
    scale = np.linalg.norm(centered[:, topology.head], axis=-1).mean()
    if scale < 1e-9:
        raise DegenerateError(f"root-to-head distance {scale:g} is too small to normalize")
    return seq.replace(frames=centered / scale)


def mirror(seq: SkeletonSequence, topology: SkeletonTopology) -> SkeletonSequence:
    """Swap left/right joints and negate the lateral axis."""
    _check_joints(seq, topology)
    frames = seq.frames[:, topology.mirror_permutation].copy()
    frames[..., topology.mirror_axis] *= -1.0
    return seq.replace(frames=frames)


def uniform_indices(num_frames: int, target_len: int) -> np.ndarray:
    # round(k * T / L) with ties going down, in exact integer arithmetic
    k = np.arange(target_len, dtype=np.int64)
    num = 2 * k * num_frames - target_len
    idx = -((-num) // (2 * target_len))
    return np.clip(idx, 0, num_frames - 1)


def sample_frames(
    seq: SkeletonSequence,
    target_len: int,
    mode: SampleMode | str = SampleMode.UNIFORM,
    seed: int | np.random.Generator | None = None,
) -> SkeletonSequence:
    """Resample to exactly ``target_len`` frames, keeping temporal order.

    ``uniform`` picks evenly spaced frames deterministically. ``random_uniform``
    draws sorted frame indices, with replacement only when the sequence is
    shorter than ``target_len``.
    """
    if target_len < 1:
        raise ValueError("target_len must be positive")
    mode = SampleMode(mode)
    T = seq.num_frames
    if mode is SampleMode.UNIFORM:
        idx = uniform_indices(T, target_len)
    else:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(T, size=target_len, replace=T < target_len))
    return seq.replace(frames=seq.frames[idx])


def crop_frames(
    seq: SkeletonSequence,
    crop_len: int,
    mode: CropMode | str = CropMode.CENTER,
    seed: int | np.random.Generator | None = None,
) -> SkeletonSequence:
    """Cut a contiguous window of ``crop_len`` frames."""
    mode = CropMode(mode)
    T = seq.num_frames
    if crop_len < 1:
        raise ValueError("crop_len must be positive")
    if T < crop_len:
        raise LengthError(f"cannot crop {crop_len} frames from a {T}-frame sequence")
    if mode is CropMode.CENTER:
        start = (T - crop_len) // 2
    else:
        start = int(np.random.default_rng(seed).integers(0, T - crop_len + 1))
    return seq.replace(frames=seq.frames[start : start + crop_len])


def to_bone_vectors(seq: SkeletonSequence, topology: SkeletonTopology) -> SkeletonSequence:
    """Replace each joint by the vector from its parent to itself (root -> 0)."""
    _check_joints(seq, topology)
    bones = seq.frames - seq.frames[:, list(topology.parents)]
    return seq.replace(frames=bones)


def from_bone_vectors(seq: SkeletonSequence, topology: SkeletonTopology) -> SkeletonSequence:
    """Sum bone vectors down each kinematic chain, giving root-relative positions."""
    _check_joints(seq, topology)
    out = np.zeros_like(seq.frames)
    for j in topology.topological_order():
        if j != topology.root:
            out[:, j] = out[:, topology.parents[j]] + seq.frames[:, j]
    return seq.replace(frames=out)


# --------------------------------------------------------------------------
# Synthetic paired motion
# --------------------------------------------------------------------------

# Rest-pose bone offsets (parent -> child, meters) for the 17-joint layout;
# x is lateral (+x = left), y is up, z is forward.
_H36M_REST_BONES = {
    "r_hip": (-0.12, 0.0, 0.0), "r_knee": (0.0, -0.42, 0.0), "r_ankle": (0.0, -0.42, 0.0),
    "l_hip": (0.12, 0.0, 0.0), "l_knee": (0.0, -0.42, 0.0), "l_ankle": (0.0, -0.42, 0.0),
    "torso": (0.0, 0.24, 0.0), "neck": (0.0, 0.26, 0.0),
    "nose": (0.0, 0.10, 0.08), "head": (0.0, 0.10, -0.06),
    "l_shoulder": (0.17, -0.02, 0.0), "l_elbow": (0.0, -0.28, 0.0), "l_wrist": (0.0, -0.25, 0.0),
    "r_shoulder": (-0.17, -0.02, 0.0), "r_elbow": (0.0, -0.28, 0.0), "r_wrist": (0.0, -0.25, 0.0),
}

_AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


@dataclass(frozen=True)
class JointOscillation:
    """Rotation of the bone ending at ``joint`` over one repetition.

    The angle is ``amplitude * (1 - cos(2*pi*cycles*s + phase)) / 2`` for
    repetition progress ``s`` in [0, 1].
    """

    joint: str
    axis: str | tuple[float, float, float] = "x"
    amplitude: float = 0.5
    phase: float = 0.0
    cycles: float = 1.0


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic exercise.

    The correct execution rotates bones sinusoidally over one repetition.
    The incorrect execution adds ``amplitude`` (radians) worth of extra
    rotation, shaped as a half-sine bump, to the bones ending at each
    perturbed joint, so only those joints and their descendants move
    differently.
    """

    exercise_id: str
    motion: tuple[JointOscillation, ...]
    perturb_joints: tuple[str, ...]
    amplitude: float
    perturb_axis: str | tuple[float, float, float] = "z"
    num_frames: int = 96
    fps: float = 30.0
    noise: float = 0.005
    bone_scale_jitter: float = 0.05
    motion_jitter: float = 0.05
    time_warp: float = 0.08
    length_jitter: int = 0


@dataclass(frozen=True)
class JoAAnnotation:
    """Joints of attention for an exercise (indices into a topology)."""

    exercise_id: str
    joints: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "joints", frozenset(int(j) for j in self.joints))

    @property
    def size(self) -> int:
        return len(self.joints)

    def indicator(self, num_joints: int) -> np.ndarray:
        out = np.zeros(num_joints)
        out[sorted(self.joints)] = 1.0
        return out


def mirror_annotation(annotation: JoAAnnotation, topology: SkeletonTopology) -> JoAAnnotation:
    perm = topology.mirror_permutation
    return JoAAnnotation(annotation.exercise_id, frozenset(int(perm[j]) for j in annotation.joints))


def _axis(axis) -> np.ndarray:
    v = np.asarray(_AXES[axis] if isinstance(axis, str) else axis, dtype=np.float64)
    return v / np.linalg.norm(v)


def _forward_kinematics(
    topology: SkeletonTopology,
    rest: np.ndarray,
    angles: dict[int, list[tuple[np.ndarray, np.ndarray]]],
    T: int,
) -> np.ndarray:
    """Positions (T, N, 3) from rest bones and per-joint (axis, angle[T]) rotations."""
    N = topology.num_joints
    pos = np.zeros((T, N, 3))
    glob = np.empty((N,), dtype=object)
    for j in topology.topological_order():
        local = Rotation.identity(T)
        for axis, theta in angles.get(j, []):
            local = local * Rotation.from_rotvec(theta[:, None] * axis[None, :])
        if j == topology.root:
            glob[j] = local
            continue
        p = topology.parents[j]
        glob[j] = glob[p] * local
        pos[:, j] = pos[:, p] + glob[j].apply(rest[j])
    return pos


def generate_synthetic_pair(
    spec: SyntheticSpec,
    seed: int | np.random.Generator | None = None,
    topology: SkeletonTopology | None = None,
    subject_id: str = "s0",
) -> tuple[SkeletonSequence, SkeletonSequence, JoAAnnotation]:
    """Generate a (correct, incorrect) pair by one synthetic subject.

    Both executions share the subject's bone lengths and motion style; each
    gets its own time warp and sensor noise.
    """
    if not spec.perturb_joints:
        raise SpecError("perturbation joint set is empty")
    if not spec.amplitude > 0:
        raise SpecError("perturbation amplitude must be positive")
    if spec.num_frames < 2:
        raise SpecError("num_frames must be at least 2")
    topology = topology or h36m_topology()
    missing = set(topology.joint_names) - set(_H36M_REST_BONES) - {topology.joint_names[topology.root]}
    if missing:
        raise SpecError(f"no rest pose for joints {sorted(missing)}")
    rng = np.random.default_rng(seed)
    N = topology.num_joints
    perturbed = topology.indices(spec.perturb_joints)

    base_rest = np.zeros((N, 3))
    for j, name in enumerate(topology.joint_names):
        if j != topology.root:
            base_rest[j] = _H36M_REST_BONES[name]
    # Left/right bones of a subject share one scale so the body stays symmetric.
    scale = 1.0 + spec.bone_scale_jitter * rng.uniform(-1, 1, N)
    for a, b in topology.mirror_pairs:
        scale[b] = scale[a]
    rest = base_rest * scale[:, None]
    style = [
        (topology.index(m.joint), _axis(m.axis),
         m.amplitude * (1.0 + spec.motion_jitter * rng.uniform(-1, 1)),
         m.phase + spec.motion_jitter * rng.uniform(-1, 1), m.cycles)
        for m in spec.motion
    ]
    error_size = spec.amplitude * (1.0 + spec.motion_jitter * rng.uniform(-1, 1))
    pelvis_height = 1.0 + 0.05 * rng.uniform(-1, 1)

    def render(incorrect: bool) -> np.ndarray:
        T = spec.num_frames + (int(rng.integers(-spec.length_jitter, spec.length_jitter + 1))
                                 if spec.length_jitter else 0)
        u = np.linspace(0.0, 1.0, T)
        # Smooth monotone time warp; |warp| * pi < 1 keeps it monotone.
        warp = np.clip(spec.time_warp * rng.uniform(-1, 1), -0.3, 0.3)
        s = u + warp * np.sin(np.pi * u) / np.pi
        angles: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
        for j, axis, amp, phase, cycles in style:
            angles.setdefault(j, []).append((axis, amp * 0.5 * (1.0 - np.cos(2 * np.pi * cycles * s + phase))))
        if incorrect:
            bump = error_size * np.sin(np.pi * s)
            for j in perturbed:
                axis = _axis(spec.perturb_axis)
                # Lateral axes flip sign on the right side so a perturbation
                # means the same thing anatomically on either side.
                if topology.joint_names[j].startswith("r_") and spec.perturb_axis in ("y", "z"):
                    axis = -axis
                angles.setdefault(j, []).append((axis, bump))
        pos = _forward_kinematics(topology, rest, angles, T)
        pos[..., 1] += pelvis_height
        if spec.noise > 0:
            pos = pos + rng.normal(0.0, spec.noise, pos.shape)
        return pos

    common = dict(exercise_id=spec.exercise_id, subject_id=subject_id, fps=spec.fps)
    ce = SkeletonSequence(frames=render(False), label=Label.CORRECT, **common)
    ie = SkeletonSequence(frames=render(True), label=Label.INCORRECT, **common)
    return ce, ie, JoAAnnotation(spec.exercise_id, frozenset(perturbed))
