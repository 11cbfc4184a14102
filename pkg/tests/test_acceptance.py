"""Acceptance gate: ten criteria, each printing one PASS/FAIL line.

Criteria 7-10 share one end-to-end surrogate experiment (about 25 minutes on
one CPU core); criterion 10 repeats it from scratch.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from headimpact import baselines, evaluation
from headimpact.baselines import solve_contact_point
from headimpact.evaluation import ExperimentData, evaluate_pipeline
from headimpact.geometry import ImpactSetup, impact_line, setup_to_region, sphere_intersection
from headimpact.kinematics import N_SAMPLES, mirror_series, zero_phase_lowpass
from headimpact.model import Hyperparameters, Mode
from headimpact.surrogate import PAPER_RANGES, generate_dataset, load_records, simulate_batch

import oracles
from conftest import random_series
from gradcheck import gradient_errors

CONFIG = json.loads((Path(__file__).parent.parent / "configs" / "acceptance.json").read_text())
LINES = []


def record(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}"
    LINES.append(line)
    print(line)
    return ok


def random_setups(rng, n):
    lo = np.array([-180.0, PAPER_RANGES["beta"][0], -120, -120, 3])
    hi = np.array([180.0, PAPER_RANGES["beta"][1], 120, 120, 10])
    return [ImpactSetup(*map(float, row)) for row in rng.uniform(lo, hi, size=(n, 5))]


def test_1_gradient_oracle():
    t0 = time.perf_counter()
    errors = {m.value: gradient_errors(m, hidden=4, n=3) for m in Mode}
    elapsed = time.perf_counter() - t0
    worst = max(max(e.values()) for e in errors.values())
    ok = worst < 1e-4 and elapsed < 60
    assert record(1, ok, f"max relative gradient error {worst:.2e} (< 1e-4) over every matrix, {elapsed:.1f} s (< 60)"), errors


def test_2_geometry_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, mismatched, hits, disagree = 0.0, 0, 0, 0
    for s in random_setups(rng, 10_000):
        analytic = sphere_intersection(impact_line(s))
        marched = oracles.ray_march(s.alpha, s.beta, s.Y, s.Z)
        if (analytic is None) != (marched is None):
            disagree += 1
            continue
        if analytic is None:
            continue
        hits += 1
        worst = max(worst, float(np.linalg.norm(analytic - marched)))
        mismatched += setup_to_region(s).value != oracles.region_of_point(marched)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-3 and mismatched == 0 and disagree == 0 and elapsed < 60
    assert record(2, ok, f"{hits} hits, max |analytic - ray march| {worst:.2e} mm (< 1e-3), "
                         f"{mismatched} region mismatches, {disagree} hit/miss disagreements, {elapsed:.1f} s (< 60)")


def test_3_contact_solver_roundtrip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    R = 0.135
    worst_angle, worst_res, flagged = 0.0, 0.0, 0
    for _ in range(2000):
        r0 = rng.normal(size=3)
        r0 *= R / np.linalg.norm(r0)
        F = rng.normal(size=3) * 1000.0
        if F @ r0 > 0:
            F = -F
        T = np.cross(r0, F)
        r, out = solve_contact_point(F, T, R)
        flagged += out
        cos = np.clip(r @ r0 / (np.linalg.norm(r) * R), -1.0, 1.0)
        worst_angle = max(worst_angle, float(np.arccos(cos)))
        worst_res = max(worst_res, float(np.linalg.norm(np.cross(r, F) - T) / np.linalg.norm(T)))
    elapsed = time.perf_counter() - t0
    ok = worst_angle < 1e-6 and worst_res < 1e-9 and flagged == 0 and elapsed < 10
    assert record(3, ok, f"2000 cases: max angle {worst_angle:.2e} rad (< 1e-6), max residual {worst_res:.2e} "
                         f"(< 1e-9), {elapsed:.2f} s (< 10)")


def test_4_mirror_chain():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    setups = []
    while len(setups) < 50:
        s = random_setups(rng, 1)[0]
        if sphere_intersection(impact_line(s)) is not None:
            setups.append(s)
    direct = simulate_batch(setups)
    mirrored = simulate_batch([s.mirrored() for s in setups])
    worst_rms, worst_deg = 0.0, 0.0
    for a, b in zip(direct, mirrored):
        m = mirror_series(a.series)
        for x, y in ((m.lin_acc, b.series.lin_acc), (m.ang_vel, b.series.ang_vel)):
            worst_rms = max(worst_rms, float(np.sqrt(np.mean((x - y) ** 2))))
        for method in baselines.BASELINE_METHODS:
            la = baselines.estimate(method, a.series)
            lb = baselines.estimate(method, mirror_series(a.series))
            worst_deg = max(worst_deg, abs(lb.eta - la.eta), abs((la.theta + lb.theta + 180) % 360 - 180))
    elapsed = time.perf_counter() - t0
    ok = worst_rms < 1e-9 and worst_deg < 1e-6 and elapsed < 300
    assert record(4, ok, f"50 setups: kinematics RMS {worst_rms:.2e} (< 1e-9), estimator equivariance "
                         f"{worst_deg:.2e} deg (< 1e-6), {elapsed:.1f} s (< 300)")


def test_5_filter_properties():
    t = np.arange(N_SAMPLES)
    peaks_ok = all(
        int(np.argmax(zero_phase_lowpass(np.clip(1 - np.abs(t - k) / w, 0, None)))) == k
        for k in range(10, 135, 5) for w in (2, 4, 8)
    )
    dc = max(float(np.max(np.abs(zero_phase_lowpass(np.full(N_SAMPLES, c)) - c))) for c in (-7.5, 1.0, 300.0))
    x = np.sin(2 * np.pi * 10 * t * 1e-3)
    inner = slice(20, -20)
    amp = np.max(np.abs(zero_phase_lowpass(x)[inner])) / np.max(np.abs(x[inner]))
    ratio = np.tan(np.pi * 10 / 1000) / np.tan(np.pi * 300 / 1000)
    gain = 1.0 / (1.0 + ratio**4)
    rel = abs(amp - gain) / gain
    ok = peaks_ok and dc < 1e-9 and rel < 0.01
    assert record(5, ok, f"symmetric-pulse peaks preserved: {peaks_ok}, DC error {dc:.1e} (< 1e-9), "
                         f"10 Hz amplitude off by {100 * rel:.3f}% (< 1%)")


def test_6_metric_oracles():
    rng = np.random.default_rng(6)
    worst, power_mean = 0.0, True
    labels = [r.value for r in evaluation.REGIONS]
    confusion_ok = True
    for _ in range(100):
        n = int(rng.integers(2, 40))
        p, r = rng.normal(size=n), rng.normal(size=n)
        P, Rf = rng.random((5, N_SAMPLES)) * 3, rng.random((5, N_SAMPLES)) * 3
        pairs = [
            (evaluation.mae(p, r), oracles.mae(p, r)),
            (evaluation.rmse(p, r), oracles.rmse(p, r)),
            (evaluation.r2(p, r), oracles.r2(p, r)),
            *zip(evaluation.pointwise_metrics(P, Rf), (oracles.mae(P, Rf), oracles.rmse(P, Rf))),
            *zip(evaluation.peak_metrics(P, Rf), (oracles.mae(oracles.peaks(P), oracles.peaks(Rf)),
                                                  oracles.rmse(oracles.peaks(P), oracles.peaks(Rf)),
                                                  oracles.r2(oracles.peaks(P), oracles.peaks(Rf)))),
        ]
        worst = max(worst, max(abs(a - b) for a, b in pairs))
        power_mean &= evaluation.rmse(p, r) >= evaluation.mae(p, r)
        fm = evaluation.force_metrics(P, Rf)
        power_mean &= fm["pointwise_rmse"] >= fm["pointwise_mae"] and fm["peak_rmse"] >= fm["peak_mae"]
        pred = [labels[i] for i in rng.integers(0, 5, n)]
        ref = [labels[i] for i in rng.integers(0, 5, n)]
        cm = evaluation.confusion(pred, ref)
        brute = oracles.confusion_counts(pred, ref, labels)
        confusion_ok &= cm.counts.tolist() == brute
        confusion_ok &= abs(cm.accuracy - sum(brute[i][i] for i in range(5)) / n) < 1e-12
    ok = worst < 1e-12 and power_mean and confusion_ok
    assert record(6, ok, f"100 fixtures: max deviation {worst:.1e} (< 1e-12), confusion exact: {confusion_ok}, "
                         f"RMSE >= MAE throughout: {power_mean}")


# -- end-to-end surrogate experiment -------------------------------------------------

def run_pipeline(out_dir: Path):
    t0 = time.perf_counter()
    manifest = generate_dataset(CONFIG["grid"], None, out_dir / "dataset", seed=CONFIG["dataset_seed"])
    data = ExperimentData.from_records(load_records(manifest))
    result = evaluate_pipeline(data, Hyperparameters.from_dict(CONFIG["hyperparameters"]), CONFIG["seeds"],
                               CONFIG["split"], keep_pairs=CONFIG["keep_pairs"])
    elapsed = time.perf_counter() - t0
    evaluation.write_json(result.report, out_dir / "report.json")
    return data, result.report, elapsed


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("acceptance_run_1"))


@pytest.mark.slow
def test_7_end_to_end_experiment(experiment):
    data, report, elapsed = experiment
    test = report["summary"]["test"]
    per_seed = [e["test"] for e in report["per_seed"]]
    speed, beta, z = (test[t]["r2"]["mean"] for t in ("speed", "beta", "Z"))
    speed_min = min(e["speed"]["r2"] for e in per_seed)
    beta_min = min(e["beta"]["r2"] for e in per_seed)
    diverged = [e["diverged"] for e in report["per_seed"] if e["diverged"]]
    ok = (len(data) >= 2000 and len(report["seeds"]) == 3 and not diverged
          and speed >= 0.90 and beta >= 0.70 and elapsed < 45 * 60)
    assert record(7, ok, f"{len(data)} impacts, 3 seeds: R2 speed {speed:.3f} (>= 0.90; min seed {speed_min:.3f}), "
                         f"beta {beta:.3f} (>= 0.70; min seed {beta_min:.3f}), Z {z:.3f} (reported), "
                         f"{elapsed / 60:.1f} min (< 45)")


@pytest.mark.slow
def test_8_method_ranking(experiment):
    _, report, _ = experiment
    methods = report["comparison"]["methods"]
    lstm = methods["lstm"]["accuracy"]
    opposite = methods["opposite_acceleration"]["accuracy"]
    ranking = ", ".join(f"{r['method']} {100 * r['accuracy']:.1f}%" for r in report["comparison"]["ranking"])
    assert record(8, lstm > opposite, f"pooled hold-out region accuracy LSTM {100 * lstm:.1f}% > opposite "
                                      f"acceleration {100 * opposite:.1f}% ({ranking})")


@pytest.mark.slow
def test_9_force_profiles(experiment):
    data, report, _ = experiment
    details, ok = [], True
    for target in ("force_helmet", "force_head"):
        mean_peak = float(np.mean(np.max(data.targets[target], axis=1)))
        r2_seeds = [e["test"][target]["peak_r2"] for e in report["per_seed"]]
        mae_seeds = [e["test"][target]["pointwise_mae"] for e in report["per_seed"]]
        ok &= min(r2_seeds) >= 0.80 and max(mae_seeds) <= 0.10 * mean_peak
        details.append(f"{target} peak R2 min {min(r2_seeds):.3f} (>= 0.80), pointwise MAE max "
                       f"{max(mae_seeds):.4f} kN (<= {0.10 * mean_peak:.4f})")
    assert record(9, ok, "; ".join(details))


@pytest.mark.slow
def test_10_determinism(experiment, tmp_path_factory):
    _, first, _ = experiment
    _, second, _ = run_pipeline(tmp_path_factory.mktemp("acceptance_run_2"))
    a = json.dumps(first, sort_keys=True).encode()
    b = json.dumps(second, sort_keys=True).encode()
    assert record(10, a == b, f"rerun with seeds {CONFIG['seeds']} gives a bit-identical report "
                              f"({len(a)} bytes): {a == b}")
