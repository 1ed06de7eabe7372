"""End-to-end workflow: preprocessing, per-exercise models, database, scoring.

Also hosts the synthetic benchmark used to check that the trained encoder
separates correct from incorrect executions and that its attention lands
on the perturbed joints.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import align, joa
from .database import EmbeddingDatabase, build_entry, classify_embedding
from .errors import EmptyError, UnknownExerciseError
from .joa import JointScoreReport, ScoreSource
from .skeldata import (
    JoAAnnotation,
    JointOscillation,
    Label,
    SkeletonSequence,
    SkeletonTopology,
    SyntheticSpec,
    generate_synthetic_pair,
    h36m_topology,
    mirror,
    mirror_annotation,
    normalize,
    to_bone_vectors,
)
from .stgat import STGAT, StgatConfig, joint_attention_scores
from .triplet import DistanceKind, TrainConfig, TrainResult, evaluation_clip, train

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    stgat: StgatConfig = field(default_factory=StgatConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    features: str = "positions"          # or "bones"
    mirror_train: bool = True
    mirror_test: bool = True
    shared_model: bool = False
    attention_block: int = -1
    attention_aggregate: str = "destination"
    ctw_k: int | None = None
    ctw_aggregate: str = "step"
    top_k: int = 5

    def __post_init__(self):
        if isinstance(self.stgat, Mapping):
            self.stgat = StgatConfig.from_dict(self.stgat)
        if isinstance(self.train, Mapping):
            self.train = TrainConfig.from_dict(self.train)
        if self.features not in ("positions", "bones"):
            raise ValueError(f"features must be 'positions' or 'bones', got {self.features!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stgat"] = self.stgat.to_dict()
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def desk_config(seed: int = 0, **overrides) -> PipelineConfig:
    """A configuration small enough to train in seconds on one CPU core."""
    cfg = PipelineConfig(
        stgat=StgatConfig(channels=(16, 32), key_dim=8, heads=8, tau=3, embed_dim=128),
        train=TrainConfig(lr=0.01, epochs=8, batch_size=20, sample_len=40, crop_len=32,
                          max_triplets_per_epoch=40, seed=seed),
    )
    for k, v in overrides.items():
        if hasattr(cfg.train, k):
            setattr(cfg.train, k, v)
        elif hasattr(cfg.stgat, k):
            setattr(cfg.stgat, k, v)
        else:
            setattr(cfg, k, v)
    return cfg


# --------------------------------------------------------------------------
# Preprocessing
# --------------------------------------------------------------------------


def prepare(seq: SkeletonSequence, topology: SkeletonTopology, features: str = "positions") -> SkeletonSequence:
    """Normalize, then optionally convert to bone vectors."""
    out = normalize(seq, topology)
    return to_bone_vectors(out, topology) if features == "bones" else out


@dataclass
class Sample:
    """One prepared sequence plus the bookkeeping the evaluation needs."""

    seq: SkeletonSequence          # model input features
    positions: SkeletonSequence    # normalized positions (for CTW and rendering)
    annotation: JoAAnnotation
    mirrored: bool = False


def make_samples(pairs: Sequence[tuple[SkeletonSequence, SkeletonSequence, JoAAnnotation]],
                 topology: SkeletonTopology, features: str, with_mirror: bool) -> list[Sample]:
    out = []
    for ce, ie, ann in pairs:
        for raw in (ce, ie):
            out.append(_sample(raw, ann, topology, features, False))
            if with_mirror:
                out.append(_sample(mirror(raw, topology), mirror_annotation(ann, topology),
                                   topology, features, True))
    return out


def _sample(raw, ann, topology, features, mirrored) -> Sample:
    pos = normalize(raw, topology)
    seq = to_bone_vectors(pos, topology) if features == "bones" else pos
    return Sample(seq, pos, ann, mirrored)


# --------------------------------------------------------------------------
# Models and database
# --------------------------------------------------------------------------


def train_exercise_models(train_samples: Sequence[Sample], cfg: PipelineConfig,
                          seed: int | None = None) -> tuple[dict[str, STGAT], dict[str, TrainResult]]:
    """One encoder per exercise (or one shared encoder when configured)."""
    seed = cfg.train.seed if seed is None else seed
    groups: dict[str, tuple[list, list]] = {}
    for s in train_samples:
        c, i = groups.setdefault(s.seq.exercise_id, ([], []))
        (c if s.seq.label is Label.CORRECT else i).append(s.seq)
    tcfg = dataclasses.replace(cfg.train, seed=seed)
    models, results = {}, {}
    if cfg.shared_model:
        model = STGAT(cfg.stgat, seed=seed)
        res = train(groups, tcfg, model)
        for ex in groups:
            models[ex], results[ex] = model, res
        return models, results
    for k, (ex, data) in enumerate(sorted(groups.items())):
        model = STGAT(cfg.stgat, seed=seed * 1000 + k)
        results[ex] = train(data, dataclasses.replace(tcfg, seed=seed * 1000 + k), model)
        models[ex] = model
    return models, results


def embed_sequences(model: STGAT, seqs: Sequence[SkeletonSequence], cfg: PipelineConfig) -> np.ndarray:
    if not seqs:
        return np.zeros((0, cfg.stgat.embed_dim))
    clips = np.stack([evaluation_clip(s, cfg.train.sample_len, cfg.train.crop_len) for s in seqs])
    return model.embed(clips)


def build_db(models: Mapping[str, STGAT], correct: Mapping[str, Sequence[SkeletonSequence]],
             incorrect: Mapping[str, Sequence[SkeletonSequence]] | None, cfg: PipelineConfig,
             checkpoints: Mapping[str, str] | None = None) -> EmbeddingDatabase:
    """Embed every correct training sequence per exercise and calibrate thresholds."""
    if not any(len(v) for v in correct.values()):
        raise EmptyError("no correct sequences to store")
    db = EmbeddingDatabase(distance=cfg.train.distance, checkpoints=dict(checkpoints or {}),
                           meta={"pipeline": cfg.to_dict()})
    for ex in sorted(correct):
        if not correct[ex]:
            raise EmptyError(f"no correct sequences for {ex!r}")
        model = models[ex]
        ce = embed_sequences(model, correct[ex], cfg)
        ie = embed_sequences(model, (incorrect or {}).get(ex, []), cfg)
        db.entries[ex] = build_entry(ce, ie, cfg.train.distance, [s.subject_id for s in correct[ex]])
    return db


def classify(seq: SkeletonSequence, db: EmbeddingDatabase, models: Mapping[str, STGAT],
             cfg: PipelineConfig, mode: str | None = None):
    """Classify an already prepared sequence against its exercise's references."""
    if seq.exercise_id not in db.entries or seq.exercise_id not in models:
        raise UnknownExerciseError(seq.exercise_id)
    emb = embed_sequences(models[seq.exercise_id], [seq], cfg)[0]
    return classify_embedding(emb, db, seq.exercise_id, mode)


def attention_raw_scores(model: STGAT, seq: SkeletonSequence, cfg: PipelineConfig) -> np.ndarray:
    clip = evaluation_clip(seq, cfg.train.sample_len, cfg.train.crop_len)
    _, maps = model.forward(clip)
    return joint_attention_scores(maps, cfg.attention_block, cfg.attention_aggregate)


def explain(model: STGAT, seq: SkeletonSequence, cfg: PipelineConfig, annotation: JoAAnnotation | None = None,
            topology: SkeletonTopology | None = None, k: int | None = None) -> JointScoreReport:
    raw = attention_raw_scores(model, seq, cfg)
    return JointScoreReport.from_raw(seq.exercise_id, ScoreSource.ATTENTION, raw, k or cfg.top_k,
                                     annotation, topology)


def ctw_raw_scores(ce: SkeletonSequence, ie: SkeletonSequence, topology: SkeletonTopology,
                   cfg: PipelineConfig) -> tuple[np.ndarray, np.ndarray]:
    """(raw, hop-adjusted) CTW joint scores for a CE/IE pair of normalized positions."""
    res = align.ctw(ce, ie, k=cfg.ctw_k)
    raw = align.ctw_joint_scores(ce, ie, res.path, cfg.ctw_aggregate)
    return raw, align.hop_adjust(raw, topology)


# --------------------------------------------------------------------------
# Synthetic benchmark
# --------------------------------------------------------------------------


def _osc(joint, axis, amplitude, phase=0.0, cycles=1.0):
    return JointOscillation(joint, axis, amplitude, phase, cycles)


SYNTHETIC_EXERCISES: tuple[SyntheticSpec, ...] = (
    SyntheticSpec("shoulder_abduction",
                  (_osc("l_elbow", "z", 1.3), _osc("r_elbow", "z", -1.3)),
                  perturb_joints=("l_elbow",), amplitude=0.5, perturb_axis="z"),
    SyntheticSpec("squat",
                  (_osc("l_knee", "x", -1.0), _osc("r_knee", "x", -1.0),
                   _osc("l_ankle", "x", 1.6), _osc("r_ankle", "x", 1.6), _osc("torso", "x", 0.3)),
                  perturb_joints=("l_knee", "r_knee"), amplitude=0.35, perturb_axis="z"),
    SyntheticSpec("knee_raise",
                  (_osc("l_knee", "x", -1.3), _osc("l_ankle", "x", 1.3)),
                  perturb_joints=("torso",), amplitude=0.3, perturb_axis="z"),
    SyntheticSpec("shoulder_flexion",
                  (_osc("l_elbow", "x", -1.5), _osc("r_elbow", "x", -1.5)),
                  perturb_joints=("l_wrist",), amplitude=0.9, perturb_axis="x"),
    SyntheticSpec("hip_abduction",
                  (_osc("l_knee", "z", 0.6), _osc("torso", "z", -0.1)),
                  perturb_joints=("neck",), amplitude=0.35, perturb_axis="z"),
)


def synthetic_dataset(n_subjects: int = 20, seed: int = 0,
                      specs: Sequence[SyntheticSpec] = SYNTHETIC_EXERCISES,
                      topology: SkeletonTopology | None = None, **spec_overrides):
    """``{exercise_id: [(ce, ie, annotation), ...]}`` with one pair per subject."""
    topology = topology or h36m_topology()
    rng = np.random.default_rng(seed)
    out = {}
    for spec in specs:
        if spec_overrides:
            spec = dataclasses.replace(spec, **spec_overrides)
        out[spec.exercise_id] = [
            generate_synthetic_pair(spec, rng.integers(2**63), topology, subject_id=f"s{i:02d}")
            for i in range(n_subjects)
        ]
    return out


def split_by_subject(dataset, n_test: int):
    train_pairs, test_pairs = {}, {}
    for ex, pairs in dataset.items():
        train_pairs[ex], test_pairs[ex] = pairs[:-n_test], pairs[-n_test:]
    return train_pairs, test_pairs


@dataclass
class BenchmarkResult:
    seed: int
    accuracy: float
    per_exercise_accuracy: dict[str, float]
    attention_joa: dict[str, float]
    ctw_joa: dict[str, float]
    attention_normalized: list[np.ndarray]
    attention_annotations: list[JoAAnnotation]
    ctw_above_median: list[bool]
    histories: dict[str, list[float]]


def run_benchmark(cfg: PipelineConfig, seed: int = 0, n_subjects: int = 20, n_test: int = 5,
                  topology: SkeletonTopology | None = None, with_ctw: bool = True,
                  specs: Sequence[SyntheticSpec] = SYNTHETIC_EXERCISES) -> BenchmarkResult:
    """Train per-exercise models on synthetic data and score the held-out subjects."""
    topology = topology or h36m_topology()
    data = synthetic_dataset(n_subjects, seed, specs, topology)
    train_pairs, test_pairs = split_by_subject(data, n_test)
    train_s = [s for ex in sorted(train_pairs) for s in
               make_samples(train_pairs[ex], topology, cfg.features, cfg.mirror_train)]
    test_s = [s for ex in sorted(test_pairs) for s in
              make_samples(test_pairs[ex], topology, cfg.features, cfg.mirror_test)]
    models, results = train_exercise_models(train_s, cfg, seed)

    def by_label(samples, label):
        out: dict[str, list[SkeletonSequence]] = {}
        for s in samples:
            if s.seq.label is label:
                out.setdefault(s.seq.exercise_id, []).append(s.seq)
        return out

    db = build_db(models, by_label(train_s, Label.CORRECT), by_label(train_s, Label.INCORRECT), cfg)
    hits: dict[str, list[bool]] = {}
    for s in test_s:
        res = classify(s.seq, db, models, cfg)
        hits.setdefault(s.seq.exercise_id, []).append(res.label is s.seq.label)

    incorrect = [s for s in test_s if s.seq.label is Label.INCORRECT]
    att = joa.evaluate_split(lambda q: attention_raw_scores(models[q.exercise_id], q, cfg),
                             [s.seq for s in incorrect], [s.annotation for s in incorrect])

    ctw_joa: dict[str, list[float]] = {}
    above: list[bool] = []
    if with_ctw:
        # Each incorrect sample is paired with the same subject's correct one.
        correct_of = {(s.seq.exercise_id, s.seq.subject_id, s.mirrored): s
                      for s in test_s if s.seq.label is Label.CORRECT}
        for s in incorrect:
            ce = correct_of[(s.seq.exercise_id, s.seq.subject_id, s.mirrored)]
            _, adj = ctw_raw_scores(ce.positions, s.positions, topology, cfg)
            med = np.median(adj)
            above.append(bool(all(adj[j] > med for j in s.annotation.joints)))
            ctw_joa.setdefault(s.seq.exercise_id, []).append(
                joa.joa_score(joa.minmax_normalize(adj), s.annotation))

    acc_ex = {ex: float(np.mean(v)) for ex, v in sorted(hits.items())}
    return BenchmarkResult(
        seed=seed,
        accuracy=float(np.mean([h for v in hits.values() for h in v])),
        per_exercise_accuracy=acc_ex,
        attention_joa=att.per_exercise,
        ctw_joa={ex: float(np.mean(v)) for ex, v in sorted(ctw_joa.items())},
        attention_normalized=att.normalized,
        attention_annotations=att.annotations,
        ctw_above_median=above,
        histories={ex: r.losses for ex, r in results.items()},
    )


ABLATION_GRID = (
    ("ExeChecker", "positions", DistanceKind.EUCLIDEAN),
    ("EC-cos", "positions", DistanceKind.COSINE),
    ("EC-Bone", "bones", DistanceKind.EUCLIDEAN),
    ("EC-Bone-cos", "bones", DistanceKind.COSINE),
)


def run_ablation(cfg: PipelineConfig, seed: int = 0, n_subjects: int = 20, n_test: int = 5,
                 topology: SkeletonTopology | None = None) -> dict[str, dict[str, float]]:
    """Distance x input-feature grid; rows are configurations, columns exercises."""
    table = {}
    for name, features, dist in ABLATION_GRID:
        c = dataclasses.replace(cfg, features=features, train=dataclasses.replace(cfg.train, distance=dist))
        res = run_benchmark(c, seed, n_subjects, n_test, topology, with_ctw=False)
        table[name] = dict(res.attention_joa)
    return table
