"""Exit criteria. Each test records a PASS/FAIL line printed at the end of the run.

Criteria 6-9 run the full protocol (10 replications, default training
steps) and take a few minutes in total.
"""

import math
import os
import time
import warnings

import numpy as np
import pytest

from alcpd.active import dacd_acquisition, rbf_derivative_kernels
from alcpd.dataset import TimeSeriesDataset
from alcpd.detect import detect_threshold, f1
from alcpd.dgp import DgpModel, elbo_objective
from alcpd.harness import preset, run_replication
from alcpd.numerics import KernelSpec, RngStream, dft_magnitude
from alcpd.spectral import diss, scdm, scm, sgd, smc
from alcpd.svgp import SvgpLayer, predict

from conftest import record
from oracles import algorithm1_replay, brute_force_matching, exact_gp, exact_inducing_posterior, rbf

SEEDS = range(10)


def _report(number, ok, detail):
    record(number, bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_1_spectral_metrics():
    start = time.perf_counter()
    hand = [
        (smc([1, 2, 3], [2, 2, 4]), math.sqrt(2)),
        (scm([1, 2, 3], [3, 1, 2]), -0.5),
        (sgd([1, 2, 3], [1, 3, 5]), math.sqrt(2)),
        (diss([1, 2, 3], [3, 1, 2]), 2.25),
        # SMC here is sqrt(4 + 1 + 1)
        (scdm([1, 2, 3], [3, 1, 2]), math.sqrt(6) + 2.25),
    ]
    worst_hand = max(abs(a - b) for a, b in hand)
    rng = np.random.default_rng(0)
    bound_ok = True
    for _ in range(10_000):
        n = int(rng.integers(2, 12))
        a, b = rng.normal(size=n), rng.normal(size=n)
        r = scm(a, b)
        bound_ok &= -1 - 1e-12 <= r <= 1 + 1e-12 and scdm(a, b) >= 0
    worst_diss = 0.0
    for _ in range(100):
        x = rng.normal(size=int(rng.integers(2, 12)))
        worst_diss = max(worst_diss, diss(x, rng.uniform(0.01, 100) * x))
    elapsed = time.perf_counter() - start
    ok = worst_hand <= 1e-9 and bound_ok and worst_diss <= 1e-9 and elapsed < 5
    _report(1, ok, f"hand max err {worst_hand:.1e}, bounds {bound_ok}, diss(x,cx) max {worst_diss:.1e}, "
                   f"{elapsed:.2f}s")


def test_criterion_2_algorithm_1():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    agree = invariants = True
    for _ in range(1000):
        loc = np.arange(200.0)
        val = rng.exponential(size=200)
        b, delta = float(rng.uniform(0, 2)), float(rng.integers(1, 25))
        cps = detect_threshold(loc, val, b, delta)
        ref = algorithm1_replay(loc, val, b, delta)
        agree &= cps.locations.tolist() == ref[0] and cps.scores.tolist() == ref[1]
        invariants &= bool(np.all(cps.scores > b)) and (len(cps) < 2 or np.min(np.diff(cps.locations)) >= delta)
    elapsed = time.perf_counter() - start
    _report(2, agree and invariants and elapsed < 10,
            f"replay agreement {agree}, invariants {invariants}, {elapsed:.2f}s")


def test_criterion_3_evaluation():
    rng = np.random.default_rng(2)
    agree = True
    for _ in range(500):
        truth = rng.integers(0, 40, int(rng.integers(0, 6))).astype(float)
        pred = rng.integers(0, 40, int(rng.integers(0, 6))).astype(float)
        margin = float(rng.integers(0, 8))
        agree &= len(f1(pred, truth, margin).matches) == brute_force_matching(truth, pred, margin)
    ex1 = f1([52, 60], [50], 5)
    ex2 = f1([51], [50, 52], 2)
    examples = (ex1.precision, ex1.recall, ex2.precision, ex2.recall) == (0.5, 1.0, 1.0, 0.5) \
        and ex1.f1 == ex2.f1 == 2 / 3
    _report(3, agree and examples, f"brute-force agreement {agree}, worked examples {examples}")


def test_criterion_4_gp_correctness():
    rng = np.random.default_rng(3)
    x = np.linspace(0, 1, 10) + rng.uniform(-0.02, 0.02, 10)
    y = np.sin(6 * x) + 0.1 * rng.normal(size=10)
    noise = 0.05
    kern = lambda a, b: rbf(a, b, 1.0, 0.2)
    m, cov = exact_inducing_posterior(kern, x, y, noise)
    layer = SvgpLayer(KernelSpec("rbf", 1.0, 0.2), x, m, np.linalg.cholesky(cov + 1e-12 * np.eye(10)))
    xs = np.linspace(0, 1, 50)
    mu_ref, var_ref, _ = exact_gp(kern, x, y, xs, noise)
    pred = predict(layer, xs)
    mean_rms = float(np.sqrt(np.mean((pred.mean - mu_ref) ** 2)))
    var_err = float(np.max(np.abs(pred.variance - var_ref)))

    t = np.arange(5.0)
    y5 = np.array([0.3, -0.5, 1.2, 0.8, -0.1])
    model = DgpModel.initialize(t, y5, "matern52", depth=2, num_inducing=5)
    value_fn, grad_fn, x0 = elbo_objective(model, TimeSeriesDataset(t, y5), RngStream(0).normal((1, 3, 5)))
    x0 = x0 + 0.05 * np.random.default_rng(4).normal(size=x0.size)
    g = grad_fn(x0)
    fd = np.array([(value_fn(x0 + e) - value_fn(x0 - e)) / 2e-4 for e in 1e-4 * np.eye(x0.size)])
    rel = float(np.max(np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-4)))
    ok = mean_rms <= 1e-4 and var_err <= 1e-3 and rel <= 1e-3
    _report(4, ok, f"mean RMS {mean_rms:.1e}, variance max err {var_err:.1e}, "
                   f"ELBO gradient max rel err {rel:.1e} over {x0.size} params")


def test_criterion_5_dft_and_dacd_formulas():
    n = np.arange(16)
    worst_bin = 0.0
    for k in range(1, 8):
        mag = dft_magnitude(np.cos(2 * np.pi * k * n / 16))
        expected = np.zeros(9)
        expected[k] = 8.0
        worst_bin = max(worst_bin, float(np.max(np.abs(mag - expected))))
    ei0 = float(dacd_acquisition([0.0], [1.0], 0.0, 0.0)[0])
    ei1 = float(dacd_acquisition([1.0], [1.0], 0.0, 0.0)[0])
    xa, xb = np.linspace(0, 1, 6), np.linspace(0.1, 0.9, 5)
    _, dk, _ = rbf_derivative_kernels(1.0, 0.3, xa, xb)
    fd = (rbf_derivative_kernels(1.0, 0.3, xa + 1e-4, xb)[0] - rbf_derivative_kernels(1.0, 0.3, xa - 1e-4, xb)[0]) / 2e-4
    kern_rel = float(np.max(np.abs(fd - dk) / np.maximum(np.abs(dk), 1e-3)))
    ok = worst_bin <= 1e-9 and abs(ei0 - 0.39894) <= 1e-4 and abs(ei1 - 1.08331) <= 1e-4 and kern_rel <= 1e-4
    _report(5, ok, f"bin identity err {worst_bin:.1e}, EI(0) {ei0:.5f}, EI(1) {ei1:.5f}, "
                   f"derivative kernel rel err {kern_rel:.1e}")


# end-to-end runs at the default training budget

def _runs(mode, pattern, beta):
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s in SEEDS:
            cfg = preset(mode, pattern=pattern, beta=beta, kernel="matern52", window=15, seed=s)
            out.append(run_replication(cfg, 0, s))
    return out


@pytest.fixture(scope="module")
def sp_runs():
    start = time.perf_counter()
    return _runs("simulate", "SP", 0.75), time.perf_counter() - start


def _mean_rmse(records):
    vals = [r.rmse for r in records if r.status == "ok" and r.rmse is not None]
    return float(np.mean(vals)) if len(vals) == len(records) else math.inf


@pytest.mark.slow
def test_criterion_6_sp_rmse(sp_runs):
    runs, elapsed = sp_runs
    mean = _mean_rmse(runs)
    detail = [r.detected[0] if r.detected else None for r in runs]
    _report(6, mean <= 5.0 and elapsed < 300,
            f"SP M-15 beta=0.75 mean RMSE {mean:.2f} (target <= 5.0), detections {detail}, {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_7_tp_rmse():
    start = time.perf_counter()
    runs = _runs("simulate", "TP", 0.5)
    elapsed = time.perf_counter() - start
    mean = _mean_rmse(runs)
    _report(7, mean <= 5.0 and elapsed < 300, f"TP M-15 beta=0.5 mean RMSE {mean:.2f} (target <= 5.0), {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_8_dacd_contrast(sp_runs):
    start = time.perf_counter()
    dacd = _runs("baseline", "SP", 0.75)
    elapsed = time.perf_counter() - start
    ours, d = _mean_rmse(sp_runs[0]), _mean_rmse(dacd)
    _report(8, d >= 2 * ours + 1.0 and elapsed < 300,
            f"DACD mean RMSE {d:.2f} vs spectral {ours:.2f} (need >= {2 * ours + 1.0:.2f}), {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_9_selection_concentration(sp_runs):
    runs, _ = sp_runs
    picked = np.concatenate([np.asarray(sel, float).ravel() for r in runs for sel in r.selected])
    frac = float(np.mean(np.abs(picked - 50) <= 10))
    # uniform draw from the unsampled grid: 19 of 90 candidates lie in [40, 60]
    uniform = 19 / 90
    _report(9, frac >= 0.30, f"{frac:.0%} of {picked.size} selected points within +-10 of cp "
                             f"(target >= 30%, uniform {uniform:.0%})")


WELL_LOG = os.environ.get("ALCPD_WELL_LOG")


@pytest.mark.slow
@pytest.mark.skipif(not WELL_LOG, reason="set ALCPD_WELL_LOG to the Well log CSV (truth in <stem>.truth.csv)")
def test_criterion_10_well_log():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = preset("real", "well_log", dataset=WELL_LOG, pattern=None, beta=0.25, kernel="matern52", seed=0)
        rec = run_replication(cfg, 0, 0)
    score = rec.f1 if rec.f1 is not None else 0.0
    _report(10, rec.status == "ok" and score >= 0.5, f"Well log F1 {score:.3f} (target >= 0.5), status {rec.status}")


def test_criterion_10_skip_notice():
    if not WELL_LOG:
        record(10, None, "Well log data not supplied (set ALCPD_WELL_LOG); non-blocking")
