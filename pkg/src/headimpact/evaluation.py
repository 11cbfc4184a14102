"""Metrics, the repeated-split experiment protocol, method comparison and report files."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import baselines
from .errors import DegenerateInputError, TrainingDivergedError, UndefinedMetricError
from .geometry import REGIONS, HelmetRegion, classify_region
from .kinematics import build_feature_batch
from .model import (
    ALL_TARGETS,
    FORCE_TARGETS,
    SCALAR_TARGETS,
    Hyperparameters,
    TrainingData,
    predict_force,
    predict_location,
    train,
)

log = logging.getLogger(__name__)

REPORT_SCHEMA = 1


# ----------------------------------------------------------------------------
# Metrics
# ----------------------------------------------------------------------------

def _pair(pred, ref):
    pred = np.asarray(pred, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if pred.shape != ref.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {ref.size}")
    if pred.size == 0:
        raise ValueError("metrics need at least one value")
    return pred, ref


def mae(pred, ref) -> float:
    pred, ref = _pair(pred, ref)
    return float(np.mean(np.abs(pred - ref)))


def rmse(pred, ref) -> float:
    pred, ref = _pair(pred, ref)
    return float(np.sqrt(np.mean((pred - ref) ** 2)))


def r2(pred, ref) -> float:
    pred, ref = _pair(pred, ref)
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 is undefined for a constant reference")
    return 1.0 - float(np.sum((ref - pred) ** 2)) / ss_tot


def peaks(profiles) -> np.ndarray:
    """Maximum of each profile (ties resolve to the earliest index, which does not change the value)."""
    profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
    return profiles[np.arange(len(profiles)), np.argmax(profiles, axis=1)]


def peak_metrics(pred_profiles, ref_profiles) -> tuple[float, float, float]:
    pred_profiles = np.atleast_2d(np.asarray(pred_profiles, dtype=float))
    ref_profiles = np.atleast_2d(np.asarray(ref_profiles, dtype=float))
    if pred_profiles.shape != ref_profiles.shape:
        raise ValueError(f"profile shape mismatch: {pred_profiles.shape} vs {ref_profiles.shape}")
    p, r = peaks(pred_profiles), peaks(ref_profiles)
    return mae(p, r), rmse(p, r), r2(p, r)


def pointwise_metrics(pred_profiles, ref_profiles) -> tuple[float, float]:
    pred_profiles = np.asarray(pred_profiles, dtype=float)
    ref_profiles = np.asarray(ref_profiles, dtype=float)
    if pred_profiles.shape != ref_profiles.shape:
        raise ValueError(f"profile shape mismatch: {pred_profiles.shape} vs {ref_profiles.shape}")
    return mae(pred_profiles, ref_profiles), rmse(pred_profiles, ref_profiles)


def scalar_metrics(pred, ref) -> dict:
    out = {"mae": mae(pred, ref), "rmse": rmse(pred, ref)}
    try:
        out["r2"] = r2(pred, ref)
    except UndefinedMetricError:
        out["r2"] = None
    return out


def force_metrics(pred_profiles, ref_profiles) -> dict:
    pw_mae, pw_rmse = pointwise_metrics(pred_profiles, ref_profiles)
    p, r = peaks(pred_profiles), peaks(ref_profiles)
    out = {"pointwise_mae": pw_mae, "pointwise_rmse": pw_rmse, "peak_mae": mae(p, r), "peak_rmse": rmse(p, r)}
    try:
        out["peak_r2"] = r2(p, r)
    except UndefinedMetricError:
        out["peak_r2"] = None
    return out


@dataclass(frozen=True)
class ConfusionMatrix5:
    """Counts with rows = reference region, columns = predicted region, both in ``REGIONS`` order."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def to_dict(self) -> dict:
        return {"labels": [r.value for r in REGIONS], "counts": self.counts.tolist(), "accuracy": self.accuracy,
                "total": self.total}


def confusion(pred_regions, ref_regions) -> ConfusionMatrix5:
    pred_regions, ref_regions = list(pred_regions), list(ref_regions)
    if len(pred_regions) != len(ref_regions):
        raise ValueError("prediction and reference lists differ in length")
    if not ref_regions:
        raise ValueError("accuracy is undefined for an empty set")
    index = {r: i for i, r in enumerate(REGIONS)}
    counts = np.zeros((5, 5), dtype=np.int64)
    for p, r in zip(pred_regions, ref_regions):
        try:
            counts[index[HelmetRegion(r)], index[HelmetRegion(p)]] += 1
        except ValueError:
            raise ValueError(f"unknown region label in pair ({p!r}, {r!r})") from None
    return ConfusionMatrix5(counts)


# ----------------------------------------------------------------------------
# Experiment data and splits
# ----------------------------------------------------------------------------

@dataclass
class ExperimentData:
    features: np.ndarray  # (N, 145, 48) raw
    targets: dict  # name -> (N,) or (N, 145)
    groups: np.ndarray  # (N,) mirrored pairs share a group
    series: list
    regions: list

    def __len__(self):
        return len(self.features)

    @classmethod
    def from_records(cls, records) -> "ExperimentData":
        impacts = [r.impact for r in records]
        source = {}
        groups = np.array([source.setdefault(r.source_id, len(source)) for r in records], dtype=np.int64)
        return cls.from_impacts(impacts, groups)

    @classmethod
    def from_impacts(cls, impacts, groups=None) -> "ExperimentData":
        targets = {
            "speed": np.array([i.setup.speed for i in impacts]),
            "alpha": np.array([i.setup.alpha for i in impacts]),
            "beta": np.array([i.setup.beta for i in impacts]),
            "Y": np.array([i.setup.Y for i in impacts]),
            "Z": np.array([i.setup.Z for i in impacts]),
            "force_helmet": np.array([i.force_helmet for i in impacts]).reshape(len(impacts), -1),
            "force_head": np.array([i.force_head for i in impacts]).reshape(len(impacts), -1),
        }
        if groups is None:
            groups = np.arange(len(impacts))
        return cls(build_feature_batch([i.series for i in impacts]), targets, np.asarray(groups),
                   [i.series for i in impacts], [i.region for i in impacts])

    def subset(self, idx) -> "ExperimentData":
        idx = np.asarray(idx)
        return ExperimentData(self.features[idx], {k: v[idx] for k, v in self.targets.items()}, self.groups[idx],
                              [self.series[i] for i in idx], [self.regions[i] for i in idx])

    def training_data(self, target: str, idx=None) -> TrainingData:
        if idx is None:
            return TrainingData(self.features, self.targets[target])
        return TrainingData(self.features[idx], self.targets[target][idx])


def split_indices(groups, seed: int, fractions=(0.8, 0.1, 0.1), keep_pairs: bool = True):
    """Shuffle and split into train/val/test index arrays (each sorted).

    With ``keep_pairs`` whole groups (an impact and its mirror) go to one
    partition.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"split fractions {fractions} must be three nonnegative numbers summing to 1")
    groups = np.asarray(groups)
    units = np.unique(groups) if keep_pairs else np.arange(len(groups))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(units))
    n = len(units)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    if keep_pairs:
        chosen = [np.isin(groups, units[p]) for p in parts]
        return tuple(np.flatnonzero(c) for c in chosen)
    return tuple(np.sort(p) for p in parts)


# ----------------------------------------------------------------------------
# Experiment protocol
# ----------------------------------------------------------------------------

def _hyper_for(hyper, target: str, seed: int) -> Hyperparameters:
    h = hyper[target] if isinstance(hyper, dict) else hyper
    return replace(h, seed=int(seed) * 1000 + ALL_TARGETS.index(target))


def evaluate_models(models: dict, data: ExperimentData) -> dict:
    out = {}
    for target in SCALAR_TARGETS:
        if target in models:
            out[target] = scalar_metrics(models[target].predict(data.features), data.targets[target])
    if all(t in models for t in FORCE_TARGETS):
        pred = dict(zip(FORCE_TARGETS, predict_force(models, data.features)))
        for target in FORCE_TARGETS:
            out[target] = force_metrics(pred[target], data.targets[target])
    return out


@dataclass
class SeedRun:
    seed: int
    split: tuple
    models: dict = field(default_factory=dict)
    diverged: dict = field(default_factory=dict)


@dataclass
class ExperimentResult:
    report: dict
    runs: list


def run_experiment(data: ExperimentData, hyper, seeds=tuple(range(20)), split=(0.8, 0.1, 0.1),
                   targets=ALL_TARGETS, keep_pairs: bool = True) -> ExperimentResult:
    """Train and score every target on one random split per seed; summarize mean and std over seeds."""
    if len(data) < 10:
        raise ValueError("run_experiment needs at least 10 impacts")
    split_indices(data.groups, 0, split, keep_pairs)  # validates fractions up front
    per_seed, runs = [], []
    for seed in seeds:
        tr, va, te = split_indices(data.groups, seed, split, keep_pairs)
        run = SeedRun(int(seed), (tr, va, te))
        entry = {"seed": int(seed), "n_train": len(tr), "n_val": len(va), "n_test": len(te),
                 "diverged": {}, "val": {}, "test": {}}
        for target in targets:
            h = _hyper_for(hyper, target, seed)
            try:
                model = train(target, data.training_data(target, tr), data.training_data(target, va), h)
            except TrainingDivergedError as exc:
                log.warning("seed %d target %s diverged: %s", seed, target, exc)
                entry["diverged"][target] = exc.epoch
                continue
            run.models[target] = model
            entry.setdefault("selected_epoch", {})[target] = model.log[-1].get("selected_epoch")
        run.diverged = entry["diverged"]
        for name, idx in (("val", va), ("test", te)):
            if len(idx):
                entry[name] = evaluate_models(run.models, data.subset(idx))
        per_seed.append(entry)
        runs.append(run)
        log.info("seed %d done: %s", seed, {t: m.get("r2", m.get("peak_r2")) for t, m in entry["test"].items()})
    report = {
        "schema": REPORT_SCHEMA,
        "n_impacts": len(data),
        "split": list(split),
        "keep_pairs": keep_pairs,
        "seeds": [int(s) for s in seeds],
        "hyperparameters": ({t: asdict(h) for t, h in hyper.items()} if isinstance(hyper, dict) else asdict(hyper)),
        "per_seed": per_seed,
        "summary": summarize(per_seed),
    }
    check_report(report)
    return ExperimentResult(report, runs)


def summarize(per_seed: list) -> dict:
    """Mean and (population) standard deviation of every metric across seeds."""
    summary = {}
    for part in ("val", "test"):
        collected = {}
        for entry in per_seed:
            for target, metrics in entry.get(part, {}).items():
                for name, value in metrics.items():
                    if value is not None:
                        collected.setdefault(target, {}).setdefault(name, []).append(value)
        summary[part] = {
            t: {m: {"mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)} for m, v in ms.items()}
            for t, ms in collected.items()
        }
    return summary


def check_report(report: dict) -> None:
    """RMSE >= MAE for every metric pair in every seed."""
    for entry in report["per_seed"]:
        for part in ("val", "test"):
            for target, m in entry.get(part, {}).items():
                for prefix in ("", "pointwise_", "peak_"):
                    a, b = m.get(prefix + "mae"), m.get(prefix + "rmse")
                    if a is not None and b is not None:
                        assert b >= a - 1e-12, f"RMSE < MAE for {target} {prefix} seed {entry['seed']}"


# ----------------------------------------------------------------------------
# Method comparison
# ----------------------------------------------------------------------------

METHODS = ("lstm",) + baselines.BASELINE_METHODS


def baseline_regions(method: str, series_list, params=None):
    """Regions predicted by a baseline; degenerate cases come back as None."""
    out = []
    for s in series_list:
        try:
            out.append(classify_region(baselines.estimate(method, s, params)))
        except DegenerateInputError:
            out.append(None)
    return out


def compare_methods(data: ExperimentData, models: dict, params=None, methods=METHODS) -> dict:
    """Confusion matrix per method against the ground-truth regions of ``data``."""
    predictions = {}
    for method in methods:
        if method == "lstm":
            predictions[method] = [p.region for p in predict_location(models, data.features)]
        else:
            predictions[method] = baseline_regions(method, data.series, params)
    return score_predictions(predictions, data.regions)


def score_predictions(predictions: dict, reference) -> dict:
    results = {}
    for method, preds in predictions.items():
        ok = [i for i, p in enumerate(preds) if p is not None]
        cm = confusion([preds[i] for i in ok], [reference[i] for i in ok]) if ok else None
        results[method] = {
            "confusion": cm.to_dict() if cm else None,
            "accuracy": cm.accuracy if cm else None,
            "n_classified": len(ok),
            "n_failed": len(preds) - len(ok),
        }
    ranking = sorted((m for m in results if results[m]["accuracy"] is not None),
                     key=lambda m: (-results[m]["accuracy"], METHODS.index(m) if m in METHODS else 99))
    return {"methods": results, "ranking": [{"method": m, "accuracy": results[m]["accuracy"]} for m in ranking]}


# ----------------------------------------------------------------------------
# Report files
# ----------------------------------------------------------------------------

def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_report_tables(report: dict, out_dir) -> list[Path]:
    """CSV tables (and SVG figures) from a report or comparison JSON object."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "summary" in report:
        path = out_dir / "summary.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["split", "target", "metric", "mean", "std", "n"])
            for part, targets in sorted(report["summary"].items()):
                for target, metrics in sorted(targets.items()):
                    for name, s in sorted(metrics.items()):
                        w.writerow([part, target, name, repr(s["mean"]), repr(s["std"]), s["n"]])
        written.append(path)
        path = out_dir / "per_seed.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "split", "target", "metric", "value"])
            for entry in report["per_seed"]:
                for part in ("val", "test"):
                    for target, metrics in sorted(entry.get(part, {}).items()):
                        for name, value in sorted(metrics.items()):
                            w.writerow([entry["seed"], part, target, name, "" if value is None else repr(value)])
        written.append(path)
    comparison = report.get("comparison", report if "methods" in report else None)
    if comparison:
        path = out_dir / "ranking.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "method", "accuracy", "n_classified", "n_failed"])
            for rank, item in enumerate(comparison["ranking"], start=1):
                res = comparison["methods"][item["method"]]
                w.writerow([rank, item["method"], repr(item["accuracy"]), res["n_classified"], res["n_failed"]])
        written.append(path)
        for method, res in sorted(comparison["methods"].items()):
            if res["confusion"] is None:
                continue
            path = out_dir / f"confusion_{method}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["reference\\predicted", *res["confusion"]["labels"]])
                for label, row in zip(res["confusion"]["labels"], res["confusion"]["counts"]):
                    w.writerow([label, *row])
            written.append(path)
            written.append(plot_confusion(res["confusion"], method, out_dir / f"confusion_{method}.svg"))
    if report.get("force_examples"):
        written.append(plot_force_examples(report["force_examples"], out_dir / "force_examples.svg"))
    return written


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "headimpact"
    return plt


def plot_confusion(cm: dict, title: str, path) -> Path:
    plt = _pyplot()
    counts = np.array(cm["counts"])
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    correct = np.eye(5, dtype=bool)
    ax.imshow(np.where(correct, 1.0, 0.0), cmap="coolwarm_r", vmin=-1, vmax=2, alpha=0.35)
    for i in range(5):
        for j in range(5):
            ax.text(j, i, str(counts[i, j]), ha="center", va="center", fontsize=9)
    ax.set_xticks(range(5), cm["labels"], rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(5), cm["labels"], fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("reference")
    ax.set_title(f"{title}: {100 * cm['accuracy']:.1f}%", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)


def plot_force_examples(examples: list, path) -> Path:
    plt = _pyplot()
    n = len(examples)
    cols = min(3, n)
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.4 * rows), squeeze=False)
    for ax, ex in zip(axes.ravel(), examples):
        t = np.arange(len(ex["reference"]))
        ax.plot(t, ex["reference"], color="k", lw=1.2, label="reference")
        ax.plot(t, ex["predicted"], color="tab:orange", lw=1.2, ls="--", label="LSTM")
        ax.set_title(f"{ex['target']} #{ex['id']}  MAE {ex['pointwise_mae']:.3f} kN", fontsize=8)
        ax.set_xlabel("t (ms)", fontsize=8)
        ax.set_ylabel("kN", fontsize=8)
        ax.tick_params(labelsize=7)
    for ax in axes.ravel()[n:]:
        ax.axis("off")
    axes.ravel()[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)


def force_examples(models: dict, data: ExperimentData, n: int = 6) -> list:
    """A few test-set force profiles (reference vs prediction) for the overlay figure."""
    if not all(t in models for t in FORCE_TARGETS) or len(data) == 0:
        return []
    idx = np.arange(min(n, len(data)))
    sub = data.subset(idx)
    preds = dict(zip(FORCE_TARGETS, predict_force(models, sub.features)))
    out = []
    for target in FORCE_TARGETS:
        for k, i in enumerate(idx[: max(1, n // 2)]):
            ref, pred = sub.targets[target][k], preds[target][k]
            out.append({"target": target, "id": int(i), "reference": ref.tolist(), "predicted": pred.tolist(),
                        "pointwise_mae": mae(pred, ref)})
    return out


def evaluate_pipeline(data: ExperimentData, hyper, seeds=(0, 1, 2), split=(0.8, 0.1, 0.1), params=None,
                      keep_pairs: bool = True) -> ExperimentResult:
    """run_experiment plus the method comparison on every seed's test split.

    The report gains a ``comparison`` block (confusion matrices pooled over
    all test splits), per-seed accuracies and force-overlay examples from the
    first seed.
    """
    result = run_experiment(data, hyper, seeds, split, keep_pairs=keep_pairs)
    pooled = {m: [] for m in METHODS}
    reference = []
    per_seed_acc = []
    for run in result.runs:
        test = data.subset(run.split[2])
        if not len(test) or not all(t in run.models for t in SCALAR_TARGETS):
            continue
        preds = {"lstm": [p.region for p in predict_location(run.models, test.features)]}
        for method in baselines.BASELINE_METHODS:
            preds[method] = baseline_regions(method, test.series, params)
        scored = score_predictions(preds, test.regions)
        per_seed_acc.append({"seed": run.seed, **{m: scored["methods"][m]["accuracy"] for m in METHODS}})
        for m in METHODS:
            pooled[m].extend(preds[m])
        reference.extend(test.regions)
    if reference:
        result.report["comparison"] = score_predictions(pooled, reference)
        result.report["comparison"]["per_seed"] = per_seed_acc
    first = result.runs[0] if result.runs else None
    if first is not None:
        result.report["force_examples"] = force_examples(first.models, data.subset(first.split[2]))
    return result
