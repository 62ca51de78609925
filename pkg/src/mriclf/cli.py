"""Batch command line: ``cv``, ``train``, ``test``, ``map`` and ``synth``.

Every command reads one JSON experiment config; ``--seed`` and ``--out`` are
the only overrides. Results go to ``<output_dir>/<command>/``. Exit codes:
0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from itertools import combinations
from pathlib import Path

import numpy as np

from . import cnn, svm
from .dataset import load_manifest, stratified_splits, validation_split
from .errors import ConfigError, DataError, FeatureMismatch, KindMismatch, MriclfError, NumericalError
from .features import PIPELINES, load_volumes, masked_features
from .rng import derive_seed
from .stats import (
    ScoredSet,
    accuracy,
    auc,
    bonferroni_threshold,
    bootstrap_ci,
    contingency_table,
    corrected_resampled_ci,
    mcnemar,
    write_predictions,
)
from .synth import synth_cohort
from .volume import Mask, Volume, read_mask, unflatten, write_volume

log = logging.getLogger("mriclf")

CLASSIFIERS = ("svm", "cnn")


# -- configuration -------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    base_dir: Path
    negative: tuple = ("CN",)
    positive: tuple = ("AD",)
    classifiers: tuple = ("svm",)
    pipelines: tuple = ("modulated",)
    manifests: dict = field(default_factory=dict)
    mask: Path | None = None
    iterations: int = 20
    train_fraction: float = 0.9
    c_grid: tuple = svm.DEFAULT_C_GRID
    svm_folds: int = 5
    pmap_alpha: float = 0.05
    train: cnn.TrainConfig = field(default_factory=cnn.TrainConfig)
    bootstrap_samples: int = 500
    level: float = 0.95
    alpha: float = 0.05
    comparisons: int | None = None
    seed: int = 0
    output_dir: Path = Path("results")
    test: dict = field(default_factory=dict)
    map: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)

    @property
    def task_label(self) -> str:
        return f"{'+'.join(self.positive)}-vs-{'+'.join(self.negative)}"

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p


def _task(spec, where):
    if isinstance(spec, dict):
        neg, pos = spec.get("negative"), spec.get("positive")
    elif isinstance(spec, (list, tuple)) and len(spec) == 2:
        neg, pos = spec
    else:
        raise ConfigError(f"{where}: task must be {{negative, positive}} or a [negative, positive] pair")
    neg = (neg,) if isinstance(neg, str) else tuple(neg or ())
    pos = (pos,) if isinstance(pos, str) else tuple(pos or ())
    if not neg or not pos or set(neg) & set(pos):
        raise ConfigError(f"{where}: task classes must be nonempty and disjoint")
    return neg, pos


def load_config(path, seed=None, out=None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    try:
        cfg = ExperimentConfig(base_dir=path.resolve().parent)
        if "task" in raw:
            cfg.negative, cfg.positive = _task(raw["task"], "task")
        clf = raw.get("classifiers", raw.get("classifier", list(cfg.classifiers)))
        cfg.classifiers = tuple([clf] if isinstance(clf, str) else clf)
        pipe = raw.get("pipelines", raw.get("pipeline", list(cfg.pipelines)))
        cfg.pipelines = tuple([pipe] if isinstance(pipe, str) else pipe)
        cfg.manifests = {k: cfg.resolve(v) for k, v in raw.get("manifests", {}).items()}
        if raw.get("mask") is not None:
            cfg.mask = cfg.resolve(raw["mask"])
        split = raw.get("split", {})
        cfg.iterations = int(split.get("iterations", cfg.iterations))
        cfg.train_fraction = float(split.get("train_fraction", cfg.train_fraction))
        s = raw.get("svm", {})
        cfg.c_grid = tuple(float(c) for c in s.get("c_grid", cfg.c_grid))
        cfg.svm_folds = int(s.get("folds", cfg.svm_folds))
        cfg.pmap_alpha = float(s.get("pmap_alpha", cfg.pmap_alpha))
        known = {f.name for f in fields(cnn.TrainConfig)}
        c = raw.get("cnn", {})
        unknown = set(c) - known
        if unknown:
            raise ConfigError(f"unknown cnn settings: {sorted(unknown)}")
        cfg.train = cnn.TrainConfig(**c)
        st = raw.get("stats", {})
        cfg.bootstrap_samples = int(st.get("bootstrap_samples", cfg.bootstrap_samples))
        cfg.level = float(st.get("level", cfg.level))
        cfg.alpha = float(st.get("alpha", cfg.alpha))
        cfg.comparisons = st.get("comparisons")
        cfg.seed = int(raw.get("seed", 0) if seed is None else seed)
        cfg.output_dir = Path(out) if out is not None else cfg.resolve(raw.get("output_dir", "results"))
        cfg.test = dict(raw.get("test", {}))
        cfg.map = dict(raw.get("map", {}))
        cfg.synth = dict(raw.get("synth", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for c in cfg.classifiers:
        if c not in CLASSIFIERS:
            raise ConfigError(f"unknown classifier {c!r}")
    for p in cfg.pipelines:
        if p not in PIPELINES:
            raise ConfigError(f"unknown pipeline {p!r}")
    if cfg.iterations < 1:
        raise ConfigError("split.iterations must be at least 1")
    return cfg


def _require_inputs(cfg: ExperimentConfig, pipelines):
    if cfg.mask is None or not cfg.mask.exists():
        raise ConfigError(f"mask {cfg.mask} not found")
    for p in pipelines:
        if p not in cfg.manifests:
            raise ConfigError(f"no manifest configured for pipeline {p!r}")
        if not cfg.manifests[p].exists():
            raise ConfigError(f"manifest {cfg.manifests[p]} not found")


def _out(cfg: ExperimentConfig, command: str) -> Path:
    d = cfg.output_dir / command
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- data ------------------------------------------------------------------------------

def task_records(manifest_path, negative, positive):
    """Records of the task's diagnoses and their 0/1 labels (1 = positive)."""
    recs = [r for r in load_manifest(manifest_path) if r.diagnosis in negative or r.diagnosis in positive]
    labels = np.array([1 if r.diagnosis in positive else 0 for r in recs], dtype=np.int64)
    if not recs or labels.min() == labels.max():
        raise DataError(f"{manifest_path}: task needs subjects of both classes")
    return recs, labels


def _aligned_cohort(cfg: ExperimentConfig, pipelines, mask: Mask):
    """Subjects shared by every pipeline manifest, in the first manifest's order."""
    per_pipe = {p: task_records(cfg.manifests[p], cfg.negative, cfg.positive) for p in pipelines}
    first = pipelines[0]
    recs0, labels = per_pipe[first]
    ids = [r.subject_id for r in recs0]
    volumes = {}
    for p in pipelines:
        recs, labs = per_pipe[p]
        by_id = {r.subject_id: (r, lab) for r, lab in zip(recs, labs)}
        if set(by_id) != set(ids):
            raise DataError(f"manifests for {first!r} and {p!r} list different subjects")
        ordered = [by_id[s][0] for s in ids]
        if any(by_id[s][1] != lab for s, lab in zip(ids, labels)):
            raise DataError(f"manifests for {first!r} and {p!r} disagree on diagnoses")
        volumes[p] = load_volumes(ordered, mask, p)
    return ids, labels, volumes


# -- classifiers -------------------------------------------------------------------------

def fit_svm(volumes, labels, mask, cfg: ExperimentConfig, seed: int):
    X = masked_features(volumes, mask)
    y = np.where(labels == 1, 1, -1)
    C = svm.select_C(X, y, cfg.c_grid, seed=seed, n_folds=cfg.svm_folds)
    model = svm.train_linear_svm(X, y, C, seed=seed)
    return model


def score_svm(model, volumes, mask):
    scores = svm.decision_scores(model, masked_features(volumes, mask))
    return scores, (scores >= 0).astype(np.int64)


def fit_cnn(volumes, labels, ids, cfg: ExperimentConfig, seed: int):
    core, val = validation_split(labels.tolist(), cfg.train.validation_fraction, seed)
    tc = cnn.TrainConfig(**{**cfg.train.as_dict(), "seed": seed})
    model, records = cnn.train(None, volumes[core], labels[core], volumes[val], labels[val], tc,
                               train_ids=[ids[i] for i in core])
    return model, records


def score_cnn(model, volumes):
    probs = cnn.predict(model, volumes)
    return probs, (probs >= 0.5).astype(np.int64)


def _ci_dict(ci, **extra):
    if ci is None:
        return None
    return {**ci.as_dict(), **extra}


# -- commands -----------------------------------------------------------------------------

def cmd_cv(cfg: ExperimentConfig) -> Path:
    """Repeated stratified train/test splits shared by every classifier and pipeline."""
    _require_inputs(cfg, cfg.pipelines)
    out = _out(cfg, "cv")
    mask = read_mask(cfg.mask)
    ids, labels, volumes = _aligned_cohort(cfg, list(cfg.pipelines), mask)
    plan = stratified_splits(labels.tolist(), cfg.iterations, cfg.train_fraction, cfg.seed)
    summary = {
        "command": "cv",
        "task": cfg.task_label,
        "seed": cfg.seed,
        "iterations": cfg.iterations,
        "train_fraction": cfg.train_fraction,
        "n_subjects": len(ids),
        "splits": [[ids[i] for i in te] for te in plan.test],
        "results": {},
    }
    for clf in cfg.classifiers:
        for pipe in cfg.pipelines:
            name = f"{clf}_{pipe}"
            per_iter, scored_sets = [], []
            for j, (tr, te) in enumerate(plan):
                seed_j = derive_seed(cfg.seed, j)
                try:
                    if clf == "svm":
                        model = fit_svm(volumes[pipe][tr], labels[tr], mask, cfg, seed_j)
                        scores, pred = score_svm(model, volumes[pipe][te], mask)
                        info = {"C": model.C}
                    else:
                        model, records = fit_cnn(volumes[pipe][tr], labels[tr], [ids[i] for i in tr], cfg, seed_j)
                        scores, pred = score_cnn(model, volumes[pipe][te])
                        info = {"best_epoch": model.meta["best_epoch"], "epochs_run": len(records)}
                except MriclfError as exc:
                    raise type(exc)(f"{name}, iteration {j}: {exc}") from exc
                scored = ScoredSet.build([ids[i] for i in te], labels[te], scores, pred)
                scored_sets.append(scored)
                per_iter.append({"iteration": j, "auc": auc(scored), "accuracy": accuracy(scored),
                                 "n_train": int(len(tr)), "n_test": int(len(te)), **info})
                log.info("%s iteration %d: AUC %.3f", name, j, per_iter[-1]["auc"])
            combo_dir = out / name
            combo_dir.mkdir(exist_ok=True)
            for j, scored in enumerate(scored_sets):
                write_predictions(scored, combo_dir / f"predictions_iter{j:02d}.csv")
            n_train = int(np.mean([r["n_train"] for r in per_iter]))
            n_test = int(np.mean([r["n_test"] for r in per_iter]))
            metrics = {}
            for metric in ("auc", "accuracy"):
                values = [r[metric] for r in per_iter]
                ci = corrected_resampled_ci(values, n_train, n_test, cfg.level) if len(values) >= 2 else None
                metrics[metric] = {"metric": metric, "mean": float(np.mean(values)), "J": cfg.iterations,
                                   "seed": cfg.seed, "ci": _ci_dict(ci)}
            summary["results"][name] = {"classifier": clf, "pipeline": pipe, "per_iteration": per_iter,
                                        "metrics": metrics}
    _write_json(summary, out / "summary.json")
    return out


def cmd_train_full(cfg: ExperimentConfig) -> Path:
    """Train one model per classifier/pipeline on every task subject."""
    _require_inputs(cfg, cfg.pipelines)
    out = _out(cfg, "train")
    mask = read_mask(cfg.mask)
    ids, labels, volumes = _aligned_cohort(cfg, list(cfg.pipelines), mask)
    seed = derive_seed(cfg.seed, 10_000)
    summary = {"command": "train", "task": cfg.task_label, "seed": cfg.seed, "n_subjects": len(ids), "models": {}}
    for clf in cfg.classifiers:
        for pipe in cfg.pipelines:
            name = f"{clf}_{pipe}"
            d = out / name
            d.mkdir(exist_ok=True)
            meta = {"classifier": clf, "pipeline": pipe, "task": {"negative": list(cfg.negative),
                                                                  "positive": list(cfg.positive)},
                    "input_dims": list(mask.dims), "mask_voxels": mask.count}
            if clf == "svm":
                model = fit_svm(volumes[pipe], labels, mask, cfg, seed)
                model.meta = meta
                svm.save_svm(model, d / "model")
                scores, pred = score_svm(model, volumes[pipe], mask)
                summary["models"][name] = {"C": model.C}
            else:
                model, records = fit_cnn(volumes[pipe], labels, ids, cfg, seed)
                model.meta = {**meta, **model.meta}
                cnn.save_cnn(model, d / "model")
                cnn.write_training_log(records, d / "training_log.csv")
                scores, pred = score_cnn(model, volumes[pipe])
                summary["models"][name] = {"best_epoch": model.meta["best_epoch"], "epochs_run": len(records)}
            write_predictions(ScoredSet.build(ids, labels, scores, pred), d / "train_scores.csv")
    _write_json(summary, out / "summary.json")
    return out


def load_model(path):
    header = json.loads(Path(path).with_suffix(".json").read_text())
    kind = header.get("kind")
    if kind == "linear_svm":
        return "svm", svm.load_svm(path)
    if kind == "cnn":
        return "cnn", cnn.load_cnn(path)
    raise FeatureMismatch(f"{path}: unknown model kind {kind!r}")


def _model_paths(cfg: ExperimentConfig, section: dict, kinds=CLASSIFIERS):
    if section.get("models"):
        paths = [cfg.resolve(p) for p in section["models"]]
    elif section.get("model"):
        paths = [cfg.resolve(section["model"])]
    else:
        train_dir = cfg.output_dir / "train"
        paths = sorted(p for k in kinds for p in train_dir.glob(f"{k}_*/model.json"))
    if not paths:
        raise ConfigError("no models given and none found in the train output directory")
    for p in paths:
        if not Path(p).with_suffix(".json").exists():
            raise ConfigError(f"model {p} not found")
    return [Path(p).with_suffix(".json") for p in paths]


def _model_name(path: Path) -> str:
    return path.parent.name if path.stem == "model" else path.stem


def _score_model(kind, model, volumes, mask):
    if kind == "svm":
        if model.feature_count != mask.count:
            raise FeatureMismatch(f"model has {model.feature_count} features, mask has {mask.count} voxels")
        return score_svm(model, volumes, mask)
    dims = model.meta.get("input_dims")
    if dims is not None and tuple(dims) != tuple(volumes.shape[1:]):
        raise FeatureMismatch(f"model expects inputs of {tuple(dims)}, got {tuple(volumes.shape[1:])}")
    return score_cnn(model, volumes)


def cmd_external_test(cfg: ExperimentConfig) -> Path:
    """Apply trained models to an independent cohort; bootstrap CIs and pairwise McNemar tests."""
    t = cfg.test
    negative, positive = _task(t["task"], "test.task") if "task" in t else (cfg.negative, cfg.positive)
    manifests = {k: cfg.resolve(v) for k, v in t.get("manifests", {}).items()}
    if "manifest" in t:
        manifests.setdefault("*", cfg.resolve(t["manifest"]))
    if cfg.mask is None or not cfg.mask.exists():
        raise ConfigError(f"mask {cfg.mask} not found")
    mask = read_mask(cfg.mask)
    out = _out(cfg, "test")
    report = {"command": "test", "task": f"{'+'.join(positive)}-vs-{'+'.join(negative)}", "seed": cfg.seed,
              "bootstrap_samples": cfg.bootstrap_samples, "level": cfg.level, "models": {}, "mcnemar": []}
    scored_by_model = {}
    for path in _model_paths(cfg, t):
        kind, model = load_model(path)
        name = _model_name(path)
        pipe = model.meta.get("pipeline", "modulated")
        manifest = manifests.get(pipe, manifests.get("*"))
        if manifest is None or not manifest.exists():
            raise ConfigError(f"no test manifest for pipeline {pipe!r}")
        recs, labels = task_records(manifest, negative, positive)
        volumes = load_volumes(recs, mask, pipe)
        scores, pred = _score_model(kind, model, volumes, mask)
        scored = ScoredSet.build([r.subject_id for r in recs], labels, scores, pred)
        d = out / name
        d.mkdir(exist_ok=True)
        write_predictions(scored, d / "predictions.csv")
        scored_by_model[name] = scored
        entry = {"classifier": kind, "pipeline": pipe, "n": len(scored)}
        for metric in ("auc", "accuracy"):
            ci = bootstrap_ci(scored, metric, cfg.bootstrap_samples, cfg.level, seed=cfg.seed)
            entry[metric] = _ci_dict(ci, metric=metric, B=cfg.bootstrap_samples, seed=cfg.seed)
        report["models"][name] = entry
    pairs = list(combinations(sorted(scored_by_model), 2))
    k = int(cfg.comparisons or max(len(pairs), 1))
    threshold = bonferroni_threshold(cfg.alpha, k)
    for a, b in pairs:
        sa, sb = scored_by_model[a], scored_by_model[b]
        common = sorted(set(sa.subject_ids) & set(sb.subject_ids))
        ia = {s: i for i, s in enumerate(sa.subject_ids)}
        ib = {s: i for i, s in enumerate(sb.subject_ids)}
        ca = [sa.predicted[ia[s]] == sa.labels[ia[s]] for s in common]
        cb = [sb.predicted[ib[s]] == sb.labels[ib[s]] for s in common]
        table = contingency_table(ca, cb)
        entry = {"a": a, "b": b, "table": {"n00": table.n00, "n01": table.n01, "n10": table.n10,
                                           "n11": table.n11}, "threshold": threshold, "comparisons": k}
        if table.n01 + table.n10 == 0:
            entry.update(statistic=None, p_value=1.0, significant=False, note="no disagreement")
        else:
            stat, p = mcnemar(table)
            entry.update(statistic=stat, p_value=p, significant=bool(p < threshold))
        report["mcnemar"].append(entry)
    _write_json(report, out / "summary.json")
    return out


def dice(a, b) -> float:
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    denom = a.sum() + b.sum()
    return float(2 * (a & b).sum() / denom) if denom else 1.0


def cmd_export_map(cfg: ExperimentConfig) -> Path:
    """P-maps for SVM models, guided-backprop saliency for CNN models."""
    m = cfg.map
    kind_wanted = m.get("kind", "pmap")
    if kind_wanted not in ("pmap", "saliency"):
        raise ConfigError(f"map.kind must be pmap or saliency, got {kind_wanted!r}")
    if cfg.mask is None or not cfg.mask.exists():
        raise ConfigError(f"mask {cfg.mask} not found")
    mask = read_mask(cfg.mask)
    region = read_mask(cfg.resolve(m["reference_region"])) if m.get("reference_region") else None
    out = _out(cfg, "map")
    report = {"command": "map", "kind": kind_wanted, "maps": {}}
    model_kind = "svm" if kind_wanted == "pmap" else "cnn"
    for path in _model_paths(cfg, m, kinds=(model_kind,)):
        kind, model = load_model(path)
        if kind != model_kind:
            raise KindMismatch(f"{kind_wanted} maps need a {model_kind} model, {path} is {kind}")
        pipe = model.meta.get("pipeline", "modulated")
        manifest = cfg.resolve(m["manifest"]) if m.get("manifest") else cfg.manifests.get(pipe)
        if manifest is None or not Path(manifest).exists():
            raise ConfigError(f"no manifest to compute the {kind_wanted} map for pipeline {pipe!r}")
        task = model.meta.get("task", {"negative": cfg.negative, "positive": cfg.positive})
        recs, labels = task_records(manifest, tuple(task["negative"]), tuple(task["positive"]))
        volumes = load_volumes(recs, mask, pipe)
        name = _model_name(path)
        d = out / name
        d.mkdir(exist_ok=True)
        if kind == "svm":
            X = model.standardizer.transform(masked_features(volumes, mask))
            pm = svm.analytic_pmap(X, np.where(labels == 1, 1, -1), cfg.pmap_alpha)
            write_volume(unflatten(pm.p, mask, fill=1.0), d / "map_p")
            thresholded = unflatten(pm.significant.astype(np.float64), mask).data > 0
            write_volume(Volume(thresholded.astype(np.float32), mask.spacing_mm), d / "map_p_significant")
            entry = {"alpha": cfg.pmap_alpha, "significant_voxels": int(pm.significant.sum()),
                     "mask_voxels": mask.count}
        else:
            sal = cnn.guided_backprop_saliency(model, volumes, labels)
            write_volume(Volume(sal.values, mask.spacing_mm), d / "map_saliency")
            write_volume(Volume(sal.threshold_mask.astype(np.float32), mask.spacing_mm), d / "map_saliency_threshold")
            thresholded = sal.threshold_mask
            entry = {"threshold": sal.threshold, "threshold_voxels": int(sal.threshold_mask.sum()),
                     "subjects_averaged": sal.n_subjects}
        if region is not None:
            entry["dice_reference_region"] = dice(thresholded, region.data)
        report["maps"][name] = entry
    _write_json(report, out / "summary.json")
    return out


def cmd_synth(cfg: ExperimentConfig) -> Path:
    s = cfg.synth
    out = _out(cfg, "synth")
    cohort = synth_cohort(out, n_per_class=int(s.get("n_per_class", 30)), dims=tuple(s.get("dims", (24, 24, 24))),
                          effect_size=float(s.get("effect_size", 0.3)), noise_sigma=float(s.get("noise_sigma", 0.05)),
                          seed=cfg.seed, cohort=s.get("cohort", "SYNTH"))
    template = {
        "task": {"negative": "CN", "positive": "AD"},
        "classifiers": ["svm", "cnn"],
        "pipelines": ["minimal", "modulated"],
        "manifests": {"minimal": cohort.manifest_minimal.name, "modulated": cohort.manifest_modulated.name},
        "mask": cohort.mask_path.name,
        "split": {"iterations": 20, "train_fraction": 0.9},
        "seed": cfg.seed,
        "output_dir": "results",
        "map": {"reference_region": cohort.region_path.name},
    }
    _write_json(template, out / "experiment.json")
    return out


COMMANDS = {
    "cv": cmd_cv,
    "train": cmd_train_full,
    "test": cmd_external_test,
    "map": cmd_export_map,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mriclf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "cv": "repeated stratified cross-validation with corrected resampled t-test CIs",
        "train": "train on every subject and save the models",
        "test": "evaluate saved models on an independent cohort",
        "map": "export SVM p-maps or CNN saliency maps",
        "synth": "generate a synthetic cohort",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=name != "synth", help="experiment JSON file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is None:
            cfg = ExperimentConfig(base_dir=Path.cwd(), seed=args.seed or 0,
                                   output_dir=Path(args.out or "results"))
        else:
            cfg = load_config(args.config, seed=args.seed, out=args.out)
        out = COMMANDS[args.command](cfg)
    except MriclfError as exc:
        print(f"mriclf {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError) as exc:
        print(f"mriclf {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"mriclf {args.command}: numerical failure: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
