"""Command-line interface.

Dataset directories share one layout, written by ``synth`` and ``prepare``
and read by every other subcommand::

    topology.json
    manifest.json             [{"path", "split", "mirrored"}, ...]
    annotations/<exercise>.json
    sequences/<exercise>/<file>.json

Exit status is 0 on success, 1 on a domain error (bad data, unknown
exercise, degenerate input) and 2 on a usage error. Errors are reported as a
single line on stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import align, joa, pipeline
from . import tensor as tt
from .database import EmbeddingDatabase, training_accuracy
from .errors import ExeCheckerError, SchemaError, UnknownExerciseError
from .pipeline import PipelineConfig, Sample
from .render import skeleton_svg, write_svg
from .skeldata import (
    JoAAnnotation,
    Label,
    SkeletonSequence,
    SkeletonTopology,
    h36m_topology,
    load_sequence,
    load_topology,
    mirror,
    mirror_annotation,
    normalize,
    save_sequence,
    save_topology,
    to_bone_vectors,
)
from .stgat import STGAT
from .triplet import evaluation_clip

log = logging.getLogger("exechecker")

SEED_ENV = "EXECHECKER_SEED"
MODEL_SUFFIX = ".exck"
DB_NAME = "database.exdb"


class UsageError(Exception):
    """Bad command-line usage detected after argument parsing."""


# --------------------------------------------------------------------------
# Configuration and seeds
# --------------------------------------------------------------------------


def resolve_seed(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _deep_update(base: dict, upd: Mapping) -> dict:
    for k, v in upd.items():
        if isinstance(v, Mapping) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def load_config(path: str | None, seed: int, overrides: Mapping | None = None) -> PipelineConfig:
    """Desk configuration, updated by an optional JSON file and then by CLI overrides."""
    d = pipeline.desk_config(seed).to_dict()
    if path:
        try:
            upd = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
        if not isinstance(upd, dict):
            raise SchemaError(f"{path}: config must be a JSON object")
        _deep_update(d, upd)
    _deep_update(d, overrides or {})
    d["train"]["seed"] = seed
    return PipelineConfig.from_dict(d)


# --------------------------------------------------------------------------
# Dataset directories
# --------------------------------------------------------------------------


@dataclass
class Entry:
    seq: SkeletonSequence
    split: str
    mirrored: bool
    path: str


@dataclass
class Dataset:
    topology: SkeletonTopology
    entries: list[Entry]
    annotations: dict[str, JoAAnnotation] = field(default_factory=dict)

    def split(self, name: str) -> list[Entry]:
        return [e for e in self.entries if e.split == name]


def read_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    if not (root / "topology.json").is_file():
        raise SchemaError(f"{root}: not a dataset directory (no topology.json)")
    topology = load_topology(root / "topology.json")
    manifest_path = root / "manifest.json"
    if manifest_path.is_file():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{manifest_path}: {exc}") from exc
    else:
        manifest = [{"path": str(p.relative_to(root)), "split": "train", "mirrored": False}
                    for p in sorted((root / "sequences").rglob("*.json"))]
    entries = [Entry(load_sequence(root / m["path"], topology), m.get("split", "train"),
                     bool(m.get("mirrored", False)), m["path"]) for m in manifest]
    annotations = {}
    for p in sorted((root / "annotations").glob("*.json")):
        ann = joa.load_annotation(p, topology)
        annotations[ann.exercise_id] = ann
    return Dataset(topology, entries, annotations)


def write_dataset(root: str | Path, ds: Dataset) -> None:
    root = Path(root)
    (root / "annotations").mkdir(parents=True, exist_ok=True)
    save_topology(ds.topology, root / "topology.json")
    for ex, ann in sorted(ds.annotations.items()):
        joa.save_annotation(ann, ds.topology, root / "annotations" / f"{ex}.json")
    manifest = []
    for e in ds.entries:
        path = root / e.path
        path.parent.mkdir(parents=True, exist_ok=True)
        save_sequence(e.seq, ds.topology, path)
        manifest.append({"path": e.path, "split": e.split, "mirrored": e.mirrored})
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")


def _seq_path(seq: SkeletonSequence, mirrored: bool) -> str:
    tag = "_mirror" if mirrored else ""
    return f"sequences/{seq.exercise_id}/{seq.subject_id}_{seq.label.value}{tag}.json"


def to_samples(ds: Dataset, entries: Sequence[Entry], cfg: PipelineConfig,
               augment: bool = False) -> list[Sample]:
    """Model inputs for dataset entries, optionally adding mirrored copies."""
    out = []
    for e in entries:
        variants = [(e.seq, e.mirrored)]
        if augment and not e.mirrored:
            variants.append((mirror(e.seq, ds.topology), True))
        for seq, mirrored in variants:
            pos = normalize(seq, ds.topology)
            feats = to_bone_vectors(pos, ds.topology) if cfg.features == "bones" else pos
            ann = ds.annotations.get(seq.exercise_id)
            if ann is not None and mirrored:
                ann = mirror_annotation(ann, ds.topology)
            out.append(Sample(feats, pos, ann, mirrored))
    return out


def _has_mirrored(entries: Sequence[Entry]) -> bool:
    return any(e.mirrored for e in entries)


def _training_entries(ds: Dataset) -> list[Entry]:
    entries = ds.split("train")
    if not entries:
        raise SchemaError("dataset has no training sequences")
    return entries


# --------------------------------------------------------------------------
# Model directories
# --------------------------------------------------------------------------


def save_models(models: Mapping[str, STGAT], cfg: PipelineConfig, out: Path) -> dict[str, str]:
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for ex, model in sorted(models.items()):
        path = out / f"{ex}{MODEL_SUFFIX}"
        model.save(path, {"exercise_id": ex, "pipeline": cfg.to_dict()})
        paths[ex] = str(path.resolve())
    return paths


def load_models(model_dir: str | Path) -> tuple[dict[str, STGAT], PipelineConfig]:
    model_dir = Path(model_dir)
    files = sorted(model_dir.glob(f"*{MODEL_SUFFIX}"))
    if not files:
        raise SchemaError(f"{model_dir}: no model checkpoints")
    models, cfg = {}, None
    for f in files:
        _, meta = tt.load_checkpoint(f)
        models[meta.get("exercise_id", f.stem)] = STGAT.load(f)
        if cfg is None and "pipeline" in meta:
            cfg = PipelineConfig.from_dict(meta["pipeline"])
    return models, cfg or PipelineConfig()


def _prepared(seq: SkeletonSequence, topology: SkeletonTopology, cfg: PipelineConfig):
    pos = normalize(seq, topology)
    return pos, (to_bone_vectors(pos, topology) if cfg.features == "bones" else pos)


def _topology(arg: str | None) -> SkeletonTopology:
    return load_topology(arg) if arg else h36m_topology()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_synth(args, seed: int, cfg: PipelineConfig) -> int:
    topology = h36m_topology()
    specs = pipeline.SYNTHETIC_EXERCISES
    if args.exercises:
        known = {s.exercise_id: s for s in specs}
        missing = [e for e in args.exercises if e not in known]
        if missing:
            raise UsageError(f"unknown synthetic exercise(s): {', '.join(missing)}")
        specs = tuple(known[e] for e in args.exercises)
    if not 0 <= args.test_subjects < args.subjects:
        raise UsageError("--test-subjects must be smaller than --subjects")
    data = pipeline.synthetic_dataset(args.subjects, seed, specs, topology)
    entries, annotations = [], {}
    for ex, pairs in data.items():
        for i, (ce, ie, ann) in enumerate(pairs):
            split = "test" if i >= args.subjects - args.test_subjects else "train"
            for seq in (ce, ie):
                entries.append(Entry(seq, split, False, _seq_path(seq, False)))
            annotations[ex] = ann
    write_dataset(args.out, Dataset(topology, entries, annotations))
    print(f"wrote {len(entries)} sequences for {len(data)} exercises to {args.out}")
    return 0


def cmd_prepare(args, seed: int, cfg: PipelineConfig) -> int:
    ds = read_dataset(args.data)
    entries = []
    for e in ds.entries:
        entries.append(Entry(normalize(e.seq, ds.topology), e.split, e.mirrored, e.path))
        if args.mirror and not e.mirrored:
            m = normalize(mirror(e.seq, ds.topology), ds.topology)
            entries.append(Entry(m, e.split, True, _seq_path(m, True)))
    write_dataset(args.out, Dataset(ds.topology, entries, ds.annotations))
    print(f"prepared {len(entries)} sequences into {args.out}")
    return 0


def cmd_train(args, seed: int, cfg: PipelineConfig) -> int:
    ds = read_dataset(args.data)
    entries = _training_entries(ds)
    if args.exercise:
        entries = [e for e in entries if e.seq.exercise_id in set(args.exercise)]
        if not entries:
            raise SchemaError("no training sequences for the requested exercises")
    samples = to_samples(ds, entries, cfg, augment=cfg.mirror_train and not _has_mirrored(entries))
    t0 = time.perf_counter()
    models, results = pipeline.train_exercise_models(samples, cfg, seed)
    out = Path(args.out)
    paths = save_models(models, cfg, out / "models")
    metrics = {
        "seed": seed,
        "pipeline": cfg.to_dict(),
        "seconds": time.perf_counter() - t0,
        "exercises": {ex: {"checkpoint": paths[ex], "epoch_mean_loss": r.epoch_means(),
                           "batches": r.history} for ex, r in sorted(results.items())},
    }
    _write_json(out / "metrics.json", metrics)
    for ex, r in sorted(results.items()):
        means = r.epoch_means()
        print(f"{ex}: loss {means[0]:.4f} -> {means[-1]:.4f} over {len(means)} epochs")
    return 0


def _by_label(samples: Sequence[Sample], label: Label) -> dict[str, list[SkeletonSequence]]:
    out: dict[str, list[SkeletonSequence]] = {}
    for s in samples:
        if s.seq.label is label:
            out.setdefault(s.seq.exercise_id, []).append(s.seq)
    return out


def cmd_build_db(args, seed: int, _cfg: PipelineConfig) -> int:
    models, cfg = load_models(args.models)
    ds = read_dataset(args.data)
    entries = [e for e in _training_entries(ds) if e.seq.exercise_id in models]
    samples = to_samples(ds, entries, cfg, augment=cfg.mirror_train and not _has_mirrored(entries))
    correct, incorrect = _by_label(samples, Label.CORRECT), _by_label(samples, Label.INCORRECT)
    checkpoints = {ex: str((Path(args.models) / f"{ex}{MODEL_SUFFIX}").resolve()) for ex in models}
    db = pipeline.build_db(models, correct, incorrect, cfg, checkpoints)
    if args.mode:
        db.mode = args.mode
    db.meta["seed"] = seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    db.save(out / DB_NAME)
    for ex, entry in sorted(db.entries.items()):
        emb_c = pipeline.embed_sequences(models[ex], correct.get(ex, []), cfg)
        emb_i = pipeline.embed_sequences(models[ex], incorrect.get(ex, []), cfg)
        acc = training_accuracy(db, ex, emb_c, emb_i)
        print(f"{ex}: {len(entry.embeddings)} references, threshold {entry.threshold:.4f} "
              f"(intra {entry.intra_correct:.4f}, cross {entry.correct_incorrect:.4f}), "
              f"training accuracy {acc:.3f}")
    return 0


def _db_and_models(args) -> tuple[EmbeddingDatabase, dict[str, STGAT], PipelineConfig]:
    db_path = Path(args.db)
    if db_path.is_dir():
        db_path = db_path / DB_NAME
    db = EmbeddingDatabase.load(db_path)
    if args.models:
        models, cfg = load_models(args.models)
    else:
        models = {ex: STGAT.load(p) for ex, p in db.checkpoints.items()}
        cfg = PipelineConfig.from_dict(db.meta["pipeline"]) if "pipeline" in db.meta else PipelineConfig()
    return db, models, cfg


def cmd_classify(args, seed: int, _cfg: PipelineConfig) -> int:
    db, models, cfg = _db_and_models(args)
    topology = _topology(args.topology)
    results = []
    for path in args.input:
        seq = load_sequence(path, topology)
        if args.exercise:
            seq = seq.replace(exercise_id=args.exercise)
        _, feats = _prepared(seq, topology, cfg)
        res = pipeline.classify(feats, db, models, cfg, args.mode)
        results.append({"input": str(path), "exercise_id": seq.exercise_id, **res.to_dict()})
        print(f"{path}: {res.label.value} (mean distance {res.mean_distance:.4f}, "
              f"threshold {res.threshold:.4f})")
    _write_json(Path(args.out) / "classification.json", results)
    return 0


def cmd_explain(args, seed: int, _cfg: PipelineConfig) -> int:
    models, cfg = load_models(args.models)
    topology = _topology(args.topology)
    seq = load_sequence(args.input, topology)
    if seq.exercise_id not in models:
        raise UnknownExerciseError(seq.exercise_id)
    annotation = joa.load_annotation(args.annotation, topology) if args.annotation else None
    pos, feats = _prepared(seq, topology, cfg)
    report = pipeline.explain(models[seq.exercise_id], feats, cfg, annotation, topology, args.top_k)
    clip = evaluation_clip(pos, cfg.train.sample_len, cfg.train.crop_len)
    centre = clip[clip.shape[0] // 2]
    svg = skeleton_svg(centre, topology, report.normalized, report.topk,
                       sorted(annotation.joints) if annotation else (),
                       title=f"{seq.exercise_id} {seq.subject_id}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    write_svg(out / "explain.svg", svg)
    names = ", ".join(topology.joint_names[j] for j in report.topk)
    line = f"top-{len(report.topk)}: {names}"
    if report.joa_score is not None:
        line += f"; S_JoA {report.joa_score:.3f}"
    print(line)
    return 0


def cmd_align(args, seed: int, cfg: PipelineConfig) -> int:
    topology = _topology(args.topology)
    ce = normalize(load_sequence(args.ce, topology), topology)
    ie = normalize(load_sequence(args.ie, topology), topology)
    report = align.ctw_scores(ce, ie, topology, k=args.k or cfg.ctw_k, max_iter=args.max_iter,
                              aggregate=cfg.ctw_aggregate)
    report["joint_names"] = list(topology.joint_names)
    report["ce"], report["ie"] = str(args.ce), str(args.ie)
    _write_json(Path(args.out) / "align.json", report)
    top = joa.topk(joa.minmax_normalize(report["adjusted"]), min(cfg.top_k, topology.num_joints))
    print(f"{report['iterations']} iterations, final objective {report['objectives'][-1]:.6g}; "
          f"top joints: {', '.join(topology.joint_names[j] for j in top)}")
    return 0


def evaluate_dataset(ds: Dataset, cfg: PipelineConfig, seed: int,
                     models: Mapping[str, STGAT] | None = None) -> dict[str, dict[str, float]]:
    """Per-exercise mean CTW and attention S_JoA over the test split's incorrect sequences."""
    test = ds.split("test")
    if not test:
        raise SchemaError("dataset has no test sequences")
    if models is None:
        train_entries = _training_entries(ds)
        samples = to_samples(ds, train_entries, cfg,
                             augment=cfg.mirror_train and not _has_mirrored(train_entries))
        models, _ = pipeline.train_exercise_models(samples, cfg, seed)
    test_s = to_samples(ds, test, cfg, augment=cfg.mirror_test and not _has_mirrored(test))
    if any(s.annotation is None for s in test_s):
        raise SchemaError("every test exercise needs an annotation")
    incorrect = [s for s in test_s if s.seq.label is Label.INCORRECT and s.seq.exercise_id in models]
    if not incorrect:
        raise SchemaError("test split has no incorrect sequences for the trained exercises")
    att = joa.evaluate_split(lambda q: pipeline.attention_raw_scores(models[q.exercise_id], q, cfg),
                             [s.seq for s in incorrect], [s.annotation for s in incorrect])
    correct_of = {(s.seq.exercise_id, s.seq.subject_id, s.mirrored): s
                  for s in test_s if s.seq.label is Label.CORRECT}
    ctw: dict[str, list[float]] = {}
    for s in incorrect:
        ce = correct_of.get((s.seq.exercise_id, s.seq.subject_id, s.mirrored))
        if ce is None:
            continue
        _, adj = pipeline.ctw_raw_scores(ce.positions, s.positions, ds.topology, cfg)
        ctw.setdefault(s.seq.exercise_id, []).append(joa.joa_score(joa.minmax_normalize(adj), s.annotation))
    rows = {}
    for ex, score in att.per_exercise.items():
        rows[ex] = {"attention_joa": score}
        if ex in ctw:
            rows[ex]["ctw_joa"] = float(np.mean(ctw[ex]))
    return rows


def cmd_evaluate(args, seed: int, cfg: PipelineConfig) -> int:
    ds = read_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models = None
    if args.models:
        models, cfg = load_models(args.models)
    rows = evaluate_dataset(ds, cfg, seed, models)
    csv_text = joa.comparison_csv(rows, ["ctw_joa", "attention_joa"])
    (out / "evaluation.csv").write_text(csv_text, encoding="utf-8")
    sys.stdout.write(csv_text)
    if args.ablation:
        table = {}
        for name, features, dist in pipeline.ABLATION_GRID:
            c = dataclasses.replace(cfg, features=features, train=dataclasses.replace(cfg.train, distance=dist))
            res = evaluate_dataset(ds, c, seed)
            table[name] = {ex: r["attention_joa"] for ex, r in res.items()}
        exercises = sorted({ex for r in table.values() for ex in r})
        lines = ["config," + ",".join(exercises)]
        for name, _, _ in pipeline.ABLATION_GRID:
            lines.append(name + "," + ",".join(f"{table[name][ex]:.3f}" for ex in exercises))
        ablation_csv = "\n".join(lines) + "\n"
        (out / "ablation.csv").write_text(ablation_csv, encoding="utf-8")
        sys.stdout.write(ablation_csv)
    return 0


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Reports usage errors as one line and exit status 2."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"random seed (falls back to ${SEED_ENV}, then 0)")
    common.add_argument("--config", default=None, help="JSON file overriding the pipeline configuration")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="exechecker", description="Exercise correctness checking from skeleton motion.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--subjects", type=int, default=20)
    s.add_argument("--test-subjects", type=int, default=5)
    s.add_argument("--exercises", nargs="*", default=None)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prepare", parents=[common], help="normalize (and mirror-augment) a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--mirror", action="store_true", help="add left/right mirrored copies")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", parents=[common], help="train per-exercise encoders")
    s.add_argument("--data", required=True)
    s.add_argument("--exercise", nargs="*", default=None)
    s.add_argument("--loss", choices=["ratio", "margin"], default=None)
    s.add_argument("--margin", type=float, default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--lr", type=float, default=None)
    s.add_argument("--distance", choices=["euclidean", "cosine"], default=None)
    s.add_argument("--features", choices=["positions", "bones"], default=None)
    s.add_argument("--shared", action="store_true", help="one encoder for all exercises")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("build-db", parents=[common], help="embed correct training sequences")
    s.add_argument("--data", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--mode", choices=["mean", "nearest"], default=None)
    s.set_defaults(func=cmd_build_db)

    s = sub.add_parser("classify", parents=[common], help="label sequences correct or incorrect")
    s.add_argument("--db", required=True)
    s.add_argument("--models", default=None)
    s.add_argument("--input", nargs="+", required=True)
    s.add_argument("--exercise", default=None, help="override the exercise id stored in the input")
    s.add_argument("--topology", default=None)
    s.add_argument("--mode", choices=["mean", "nearest"], default=None)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("explain", parents=[common], help="attention report and SVG for one sequence")
    s.add_argument("--models", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--annotation", default=None)
    s.add_argument("--topology", default=None)
    s.add_argument("--top-k", type=int, default=5)
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("align", parents=[common], help="CTW alignment report for a CE/IE pair")
    s.add_argument("--ce", required=True)
    s.add_argument("--ie", required=True)
    s.add_argument("--topology", default=None)
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--max-iter", type=int, default=20)
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("evaluate", parents=[common], help="per-exercise CTW and attention S_JoA table")
    s.add_argument("--data", required=True)
    s.add_argument("--models", default=None, help="pretrained models (otherwise train on the train split)")
    s.add_argument("--ablation", action="store_true", help="also run the distance x feature grid")
    s.set_defaults(func=cmd_evaluate)
    return p


def _overrides(args) -> dict:
    train = {k: getattr(args, k) for k in ("loss", "margin", "epochs", "lr", "distance")
             if getattr(args, k, None) is not None}
    out: dict = {"train": train} if train else {}
    if getattr(args, "features", None):
        out["features"] = args.features
    if getattr(args, "shared", False):
        out["shared_model"] = True
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        seed = resolve_seed(args.seed)
        cfg = load_config(args.config, seed, _overrides(args))
        return args.func(args, seed, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ExeCheckerError, ValueError, KeyError, OSError) as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
