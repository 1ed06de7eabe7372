"""Embedding database of correct executions and inference-time classification."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensor as tt
from .errors import EmptyError, SchemaError, UnknownExerciseError
from .skeldata import Label
from .triplet import DistanceKind, distance


class DecisionMode(str, enum.Enum):
    MEAN = "mean"
    NEAREST = "nearest"


@dataclass
class ExerciseEntry:
    embeddings: np.ndarray                # (M, D)
    roles: list[str]
    threshold: float
    intra_correct: float = float("nan")
    correct_incorrect: float = float("nan")
    subjects: list[str] = field(default_factory=list)


@dataclass
class ClassificationResult:
    label: Label
    mean_distance: float
    threshold: float
    distances: list[float]

    def to_dict(self) -> dict:
        return {"label": self.label.value, "mean_distance": self.mean_distance,
                "threshold": self.threshold, "distances": self.distances}


@dataclass
class EmbeddingDatabase:
    entries: dict[str, ExerciseEntry] = field(default_factory=dict)
    checkpoints: dict[str, str] = field(default_factory=dict)
    distance: DistanceKind = DistanceKind.EUCLIDEAN
    mode: DecisionMode = DecisionMode.MEAN
    meta: dict = field(default_factory=dict)

    @property
    def embed_dim(self) -> int:
        return next(iter(self.entries.values())).embeddings.shape[1]

    def save(self, path: str | Path) -> None:
        arrays = {f"{ex}/embeddings": e.embeddings for ex, e in sorted(self.entries.items())}
        header = {
            "kind": "embedding_database",
            "distance": DistanceKind(self.distance).value,
            "mode": DecisionMode(self.mode).value,
            "checkpoints": dict(sorted(self.checkpoints.items())),
            "exercises": {
                ex: {"roles": e.roles, "threshold": e.threshold, "intra_correct": e.intra_correct,
                     "correct_incorrect": e.correct_incorrect, "subjects": e.subjects}
                for ex, e in sorted(self.entries.items())
            },
            "meta": self.meta,
        }
        tt.save_checkpoint(path, arrays, header)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingDatabase":
        arrays, header = tt.load_checkpoint(path)
        if header.get("kind") != "embedding_database":
            raise SchemaError(f"{path}: not an embedding database")
        entries = {}
        for ex, info in header["exercises"].items():
            entries[ex] = ExerciseEntry(
                embeddings=arrays[f"{ex}/embeddings"], roles=list(info["roles"]),
                threshold=float(info["threshold"]), intra_correct=float(info["intra_correct"]),
                correct_incorrect=float(info["correct_incorrect"]), subjects=list(info.get("subjects", [])),
            )
        return cls(entries, dict(header.get("checkpoints", {})), DistanceKind(header["distance"]),
                   DecisionMode(header.get("mode", "mean")), dict(header.get("meta", {})))


def calibrate_threshold(correct: np.ndarray, incorrect: np.ndarray | None,
                        kind: DistanceKind | str = DistanceKind.EUCLIDEAN) -> tuple[float, float, float]:
    """Midpoint between mean correct-correct and mean correct-incorrect distance.

    Returns ``(threshold, intra_correct, correct_incorrect)``. Without
    incorrect embeddings the threshold falls back to twice the intra-correct
    mean.
    """
    intra = [distance(a, b, kind) for a, b in itertools.combinations(correct, 2)]
    intra_mean = float(np.mean(intra)) if intra else 0.0
    if incorrect is None or len(incorrect) == 0:
        return 2.0 * intra_mean, intra_mean, float("nan")
    cross = float(np.mean([distance(a, b, kind) for a in correct for b in incorrect]))
    return 0.5 * (intra_mean + cross), intra_mean, cross


def build_entry(correct: np.ndarray, incorrect: np.ndarray | None = None,
                kind: DistanceKind | str = DistanceKind.EUCLIDEAN,
                subjects: Sequence[str] = ()) -> ExerciseEntry:
    correct = np.asarray(correct, dtype=np.float64)
    if correct.ndim != 2 or len(correct) == 0:
        raise EmptyError("no correct embeddings to store")
    threshold, intra, cross = calibrate_threshold(correct, incorrect, kind)
    # Stored references alternate between the anchor and positive roles.
    roles = ["anchor" if i % 2 == 0 else "positive" for i in range(len(correct))]
    return ExerciseEntry(correct, roles, threshold, intra, cross, list(subjects))


def classify_embedding(embedding: np.ndarray, db: EmbeddingDatabase, exercise_id: str,
                       mode: DecisionMode | str | None = None) -> ClassificationResult:
    """Incorrect iff the mean (or nearest) distance to stored correct embeddings exceeds the threshold."""
    if exercise_id not in db.entries:
        raise UnknownExerciseError(exercise_id)
    entry = db.entries[exercise_id]
    mode = DecisionMode(mode or db.mode)
    dists = [distance(embedding, ref, db.distance) for ref in entry.embeddings]
    stat = float(np.mean(dists)) if mode is DecisionMode.MEAN else float(np.min(dists))
    label = Label.INCORRECT if stat > entry.threshold else Label.CORRECT
    return ClassificationResult(label, stat, entry.threshold, dists)


def training_accuracy(db: EmbeddingDatabase, exercise_id: str, correct: np.ndarray,
                      incorrect: np.ndarray) -> float:
    hits = [classify_embedding(e, db, exercise_id).label is Label.CORRECT for e in correct]
    hits += [classify_embedding(e, db, exercise_id).label is Label.INCORRECT for e in incorrect]
    return float(np.mean(hits))


def merge(dbs: Mapping[str, EmbeddingDatabase]) -> EmbeddingDatabase:
    out = EmbeddingDatabase()
    for db in dbs.values():
        out.entries.update(db.entries)
        out.checkpoints.update(db.checkpoints)
        out.distance, out.mode = db.distance, db.mode
    return out
