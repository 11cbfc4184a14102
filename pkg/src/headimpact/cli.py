"""Command-line entry point: ``headimpact <subcommand> ...``.

Stdout carries machine-readable JSON only; logs go to stderr. Failures print
one JSON line ``{"error": ..., "type": ...}`` to stderr and exit 1; usage
errors exit 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, kinematics, model, surrogate
from .errors import ParseError
from .model import ALL_TARGETS, Hyperparameters

log = logging.getLogger("headimpact")

CONFIG_ENV = "HEADIMPACT_CONFIG"
CONFIG_SCHEMA = 1


@dataclass
class RunConfig:
    dataset_dir: str = "data"
    model_dir: str = "models"
    report_dir: str = "reports"
    surrogate: dict = field(default_factory=dict)
    hyperparameters: dict = field(default_factory=dict)
    search_grid: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    split: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    keep_pairs: bool = True

    def __post_init__(self):
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions {self.split} must sum to 1")

    @classmethod
    def load(cls, path) -> "RunConfig":
        raw = json.loads(Path(path).read_text())
        schema = raw.pop("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise ValueError(f"config schema {schema} not supported (expected {CONFIG_SCHEMA})")
        paths = raw.pop("paths", {})
        for key in ("dataset_dir", "model_dir", "report_dir"):
            if key.split("_")[0] in paths:
                raw[key] = paths[key.split("_")[0]]
        return cls(**raw)

    def surrogate_config(self) -> surrogate.SurrogateConfig:
        return surrogate.SurrogateConfig.from_dict(self.surrogate)

    def hyper(self, seed: int | None = None):
        """Hyperparameters, either shared or ``{"default": {...}, "<target>": {...}}`` per target."""
        h = dict(self.hyperparameters)
        per_target = {t: h.pop(t) for t in list(h) if t in ALL_TARGETS}
        base = h.pop("default", h)
        if seed is not None:
            base = {**base, "seed": seed}
        if not per_target:
            return Hyperparameters.from_dict(base)
        return {t: Hyperparameters.from_dict({**base, **per_target.get(t, {})}) for t in ALL_TARGETS}


def _load_config(args) -> RunConfig:
    path = getattr(args, "config_file", None) or os.environ.get(CONFIG_ENV)
    return RunConfig.load(path) if path else RunConfig()


def _json_out(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _manifest_path(path) -> Path:
    path = Path(path)
    return path / "manifest.csv" if path.is_dir() else path


def _load_data(dataset) -> evaluation.ExperimentData:
    records = surrogate.load_records(_manifest_path(dataset))
    if not records:
        raise ParseError(f"{dataset}: dataset is empty")
    return evaluation.ExperimentData.from_records(records)


# ----------------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    grid = json.loads(Path(args.grid).read_text())
    sim_cfg = surrogate.SurrogateConfig.from_dict(json.loads(Path(args.config).read_text())) if args.config \
        else cfg.surrogate_config()
    out = args.out or cfg.dataset_dir
    seed = args.seed if args.seed is not None else 0
    manifest = surrogate.generate_dataset(grid, sim_cfg, out, seed=seed, workers=args.workers)
    with open(manifest) as fh:
        n = sum(1 for _ in fh) - 1
    _json_out({"manifest": str(manifest), "n_impacts": n})
    return 0


def cmd_preprocess(args) -> int:
    records = surrogate.load_records(_manifest_path(args.dataset))
    out = Path(args.out)
    (out / "features").mkdir(parents=True, exist_ok=True)
    index = out / "index.csv"
    with open(index, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "source_id", "features_file"])
        for rec in records:
            rel = f"features/{rec.impact_id}.csv"
            kinematics.write_features_csv(kinematics.build_features(rec.impact.series), out / rel)
            w.writerow([rec.impact_id, rec.source_id, rel])
    _json_out({"index": str(index), "n_impacts": len(records)})
    return 0


def _split(cfg: RunConfig, data, seed):
    return evaluation.split_indices(data.groups, seed, cfg.split, cfg.keep_pairs)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data = _load_data(args.dataset or cfg.dataset_dir)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    tr, va, te = _split(cfg, data, seed)
    hyper = Hyperparameters.from_dict(json.loads(Path(args.hyper).read_text())) if args.hyper else cfg.hyper()
    targets = args.targets.split(",") if args.targets else list(ALL_TARGETS)
    models = {}
    for target in targets:
        h = evaluation._hyper_for(hyper, target, seed)
        log.info("training %s (%d train / %d val)", target, len(tr), len(va))
        models[target] = model.train(target, data.training_data(target, tr), data.training_data(target, va), h)
    out = Path(args.out or cfg.model_dir)
    model.save_models(models, out)
    evaluation.write_json({"seed": seed, "split": cfg.split, "keep_pairs": cfg.keep_pairs,
                           "train": tr.tolist(), "val": va.tolist(), "test": te.tolist()}, out / "split.json")
    _json_out({"model_dir": str(out), "targets": targets,
               "val_mae": {t: m.log[-1].get("val_mae") for t, m in models.items()}})
    return 0


def cmd_tune(args) -> int:
    cfg = _load_config(args)
    data = _load_data(args.dataset or cfg.dataset_dir)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    tr, va, _ = _split(cfg, data, seed)
    grid = json.loads(Path(args.grid).read_text()) if args.grid else cfg.search_grid
    if not grid:
        raise ValueError("no search grid given (--grid or config search_grid)")
    best, results = model.tune(args.target, data.training_data(args.target, tr), data.training_data(args.target, va),
                               grid)
    payload = {"target": args.target, "best": asdict(best),
               "results": [{"hyperparameters": asdict(h), "val_mae": v} for h, v in results]}
    if args.out:
        evaluation.write_json(payload, args.out)
    _json_out(payload)
    return 0


def cmd_predict(args) -> int:
    models = model.load_models(args.model)
    series = kinematics.read_kinematics_csv(args.input)
    if args.filter:
        series = kinematics.filter_series(series)
    feats = kinematics.build_features(series)
    info = model.predict_impact_info(models, feats)
    loc = model.predict_location(models, feats)
    helmet, head = model.predict_force(models, feats)
    _json_out({
        **info,
        "theta": loc.location.theta,
        "eta": loc.location.eta,
        "region": loc.region.value,
        "line_missed_sphere": loc.missed,
        "force_helmet": helmet.tolist(),
        "force_head": head.tolist(),
    })
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    data = _load_data(args.dataset or cfg.dataset_dir)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else cfg.seeds
    hyper = Hyperparameters.from_dict(json.loads(Path(args.hyper).read_text())) if args.hyper else cfg.hyper()
    result = evaluation.evaluate_pipeline(data, hyper, seeds, cfg.split, keep_pairs=cfg.keep_pairs)
    out = Path(args.out or cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_json(result.report, out / "report.json")
    evaluation.write_report_tables(result.report, out)
    _json_out({"report": str(out / "report.json"), "summary": result.report["summary"]["test"],
               "ranking": result.report.get("comparison", {}).get("ranking")})
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    data = _load_data(args.dataset or cfg.dataset_dir)
    models = model.load_models(args.model or cfg.model_dir)
    split_file = Path(args.model or cfg.model_dir) / "split.json"
    if not args.all and split_file.exists():
        data = data.subset(json.loads(split_file.read_text())["test"])
    result = evaluation.compare_methods(data, models)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        evaluation.write_json(result, out / "comparison.json")
        evaluation.write_report_tables(result, out)
    _json_out(result)
    return 0


def cmd_report(args) -> int:
    report = json.loads(Path(args.input).read_text())
    written = evaluation.write_report_tables(report, args.out)
    _json_out({"written": [str(p) for p in written]})
    return 0


# ----------------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="headimpact", description="Head impact retrieval from head kinematics")
    p.add_argument("--log-level", default="INFO")
    p.add_argument("--log-file", help="also append logs (with timestamps) to this file")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--run-config", dest="config_file", help=f"RunConfig JSON (default: ${CONFIG_ENV})")
        return sp

    sp = add("simulate", cmd_simulate, "simulate a parameter grid into a dataset")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--config", help="surrogate config JSON")
    sp.add_argument("--out")
    sp.add_argument("--workers", type=int, default=1)

    sp = add("preprocess", cmd_preprocess, "write 48-channel feature CSVs for a dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train the seven LSTM models on one split")
    sp.add_argument("--dataset")
    sp.add_argument("--hyper", help="hyperparameter JSON")
    sp.add_argument("--targets", help="comma-separated subset of " + ",".join(ALL_TARGETS))
    sp.add_argument("--out")

    sp = add("tune", cmd_tune, "grid search hyperparameters for one target")
    sp.add_argument("--dataset")
    sp.add_argument("--target", required=True, choices=ALL_TARGETS)
    sp.add_argument("--grid", help="search grid JSON {field: [values]}")
    sp.add_argument("--out")

    sp = add("predict", cmd_predict, "predict impact information for one kinematics CSV")
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--filter", action="store_true", help="apply the 300 Hz zero-phase filter first")

    sp = add("evaluate", cmd_evaluate, "repeated-split experiment plus method comparison")
    sp.add_argument("--dataset")
    sp.add_argument("--hyper")
    sp.add_argument("--seeds", help="comma-separated seed list")
    sp.add_argument("--out")

    sp = add("compare", cmd_compare, "confusion matrices of the LSTM and the baselines")
    sp.add_argument("--dataset")
    sp.add_argument("--model")
    sp.add_argument("--all", action="store_true", help="use every impact, not the saved test split")
    sp.add_argument("--out")

    sp = add("report", cmd_report, "render CSV tables and SVG figures from a report JSON")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = [logging.StreamHandler(sys.stderr)]
    if args.log_file:
        handlers.append(logging.FileHandler(args.log_file))
    logging.basicConfig(level=args.log_level.upper(), handlers=handlers,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s" if args.log_file else
                        "%(levelname)s %(name)s: %(message)s", force=True)
    if args.seed is not None:
        np.random.seed(args.seed)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as one machine-readable line
        sys.stderr.write(json.dumps({"error": str(exc), "type": type(exc).__name__}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
