"""Joints-of-attention scoring of per-joint localization scores."""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import AnnotationError, ParseError, SchemaError
from .skeldata import JoAAnnotation, Label, SkeletonSequence, SkeletonTopology


class ScoreSource(str, enum.Enum):
    ATTENTION = "attention"
    CTW = "ctw"


def minmax_normalize(raw) -> np.ndarray:
    """Rescale to [0, 1]; a constant vector maps to all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def joa_score(normalized, annotation: JoAAnnotation | Sequence[int]) -> float:
    """Mean normalized score over the annotated joints."""
    joints = annotation.joints if isinstance(annotation, JoAAnnotation) else frozenset(annotation)
    if not joints:
        raise AnnotationError("annotation has no joints")
    s = np.asarray(normalized, dtype=np.float64)
    if max(joints) >= len(s) or min(joints) < 0:
        raise AnnotationError("annotation joint index out of range")
    indicator = np.zeros(len(s))
    indicator[sorted(joints)] = 1.0
    return float(np.dot(indicator, s) / len(joints))


def topk(normalized, k: int = 5) -> list[int]:
    """Indices of the ``k`` highest scores; ties go to the lower index."""
    s = np.asarray(normalized, dtype=np.float64)
    if not 0 <= k <= len(s):
        raise ValueError(f"k={k} out of range for {len(s)} joints")
    return [int(i) for i in np.lexsort((np.arange(len(s)), -s))[:k]]


@dataclass
class JointScoreReport:
    exercise_id: str
    source: ScoreSource
    raw: list[float]
    normalized: list[float]
    topk: list[int]
    joa_score: float | None = None
    joint_names: list[str] = field(default_factory=list)
    annotation: list[int] | None = None

    @classmethod
    def from_raw(cls, exercise_id: str, source: ScoreSource | str, raw, k: int = 5,
                 annotation: JoAAnnotation | None = None,
                 topology: SkeletonTopology | None = None) -> "JointScoreReport":
        norm = minmax_normalize(raw)
        return cls(
            exercise_id=exercise_id,
            source=ScoreSource(source),
            raw=[float(x) for x in np.asarray(raw, dtype=np.float64)],
            normalized=[float(x) for x in norm],
            topk=topk(norm, k),
            joa_score=None if annotation is None else joa_score(norm, annotation),
            joint_names=list(topology.joint_names) if topology else [],
            annotation=None if annotation is None else sorted(annotation.joints),
        )

    def to_dict(self) -> dict:
        return {
            "exercise_id": self.exercise_id,
            "source": self.source.value,
            "raw": self.raw,
            "normalized": self.normalized,
            "topk": self.topk,
            "joa_score": self.joa_score,
            "joint_names": self.joint_names,
            "annotation": self.annotation,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "JointScoreReport":
        return cls(
            exercise_id=d["exercise_id"], source=ScoreSource(d["source"]), raw=list(d["raw"]),
            normalized=list(d["normalized"]), topk=list(d["topk"]), joa_score=d.get("joa_score"),
            joint_names=list(d.get("joint_names", [])), annotation=d.get("annotation"),
        )


# --------------------------------------------------------------------------
# Annotation files
# --------------------------------------------------------------------------


def annotation_from_dict(d: Mapping, topology: SkeletonTopology) -> JoAAnnotation:
    try:
        names = d["joa"]
        exercise = str(d["exercise_id"])
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"annotation needs 'exercise_id' and 'joa': {exc}") from exc
    if not names:
        raise AnnotationError(f"annotation for {exercise!r} is empty")
    try:
        return JoAAnnotation(exercise, frozenset(topology.indices(names)))
    except KeyError as exc:
        raise SchemaError(str(exc)) from exc


def load_annotation(path: str | Path, topology: SkeletonTopology) -> JoAAnnotation:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return annotation_from_dict(d, topology)


def annotation_to_dict(annotation: JoAAnnotation, topology: SkeletonTopology) -> dict:
    return {
        "exercise_id": annotation.exercise_id,
        "joa": [topology.joint_names[j] for j in sorted(annotation.joints)],
    }


def save_annotation(annotation: JoAAnnotation, topology: SkeletonTopology, path: str | Path) -> None:
    Path(path).write_text(json.dumps(annotation_to_dict(annotation, topology), indent=2), encoding="utf-8")


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


@dataclass
class SplitEvaluation:
    per_exercise: dict[str, float]
    scores: list[tuple[str, float]]
    normalized: list[np.ndarray]
    annotations: list[JoAAnnotation]


def evaluate_split(score_fn: Callable[[SkeletonSequence], np.ndarray],
                   sequences: Sequence[SkeletonSequence],
                   annotations: Mapping[str, JoAAnnotation] | Sequence[JoAAnnotation]) -> SplitEvaluation:
    """Mean S_JoA per exercise over the incorrect sequences of a split.

    ``annotations`` is either one annotation per exercise or a list aligned
    with ``sequences`` (so mirrored sequences can carry mirrored sides).
    """
    per_seq = not isinstance(annotations, Mapping)
    if per_seq and len(annotations) != len(sequences):
        raise ValueError("need one annotation per sequence")
    scores: list[tuple[str, float]] = []
    norms, anns = [], []
    for i, seq in enumerate(sequences):
        if seq.label is not Label.INCORRECT:
            continue
        ann = annotations[i] if per_seq else annotations[seq.exercise_id]
        norm = minmax_normalize(score_fn(seq))
        scores.append((seq.exercise_id, joa_score(norm, ann)))
        norms.append(norm)
        anns.append(ann)
    if not scores:
        raise ValueError("split has no incorrect sequences")
    grouped: dict[str, list[float]] = {}
    for ex, s in scores:
        grouped.setdefault(ex, []).append(s)
    return SplitEvaluation({ex: float(np.mean(v)) for ex, v in sorted(grouped.items())}, scores, norms, anns)


def permutation_test(normalized: Sequence[np.ndarray], annotations: Sequence[JoAAnnotation],
                     n_permutations: int = 1000, seed: int | None = 0) -> dict:
    """Compare the mean S_JoA against randomly relabelled joints.

    Each draw permutes every score vector independently and recomputes the
    mean S_JoA. ``p_value`` counts draws at least as large as the observed
    mean, with the usual +1 correction.
    """
    if len(normalized) != len(annotations) or not normalized:
        raise ValueError("need matching, non-empty score and annotation lists")
    rng = np.random.default_rng(seed)
    S = np.stack([np.asarray(s, dtype=np.float64) for s in normalized])
    M = np.stack([a.indicator(S.shape[1]) / a.size for a in annotations])
    observed = float((S * M).sum(axis=1).mean())
    null = np.empty(n_permutations)
    for b in range(n_permutations):
        perm = rng.permuted(S, axis=1)
        null[b] = (perm * M).sum(axis=1).mean()
    p = (1 + int(np.sum(null >= observed))) / (n_permutations + 1)
    return {"observed": observed, "null_mean": float(null.mean()), "p_value": p,
            "n_permutations": n_permutations}


def comparison_csv(rows: Mapping[str, Mapping[str, float]], columns: Sequence[str],
                   index_name: str = "exercise") -> str:
    """One row per key of ``rows``; columns in the given order, 3 decimals."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([index_name, *columns])
    for key in sorted(rows):
        w.writerow([key, *(f"{rows[key][c]:.3f}" if c in rows[key] else "" for c in columns)])
    return buf.getvalue()
