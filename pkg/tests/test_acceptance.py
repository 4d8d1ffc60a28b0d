"""Acceptance criteria, one test each.

Every test prints a single ``[PASS]``/``[FAIL]`` line naming the criterion
and the measured quantity, then asserts at the stated tolerance.
"""
import json
import math
import re
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from hazard_scorecard.cli import main
from hazard_scorecard.features import build_design, interaction_from_bad_rates
from hazard_scorecard.hazard_model import CoefficientTable, fit, predict_hazard, weighted_loglik, weighted_score
from hazard_scorecard.ingest import MonthlyCounts, monthly_counts, validate_and_label
from hazard_scorecard.panel import (backward_weighted_sample, explode_full, explode_panel, exploded_size,
                                    original_panel, rate_for, selection_probabilities)
from hazard_scorecard.scorecard_eval import (ConfusionMatrix, ScoreScale, classification_metrics, roc,
                                             score_band_table, to_score, youden_cutoff)
from hazard_scorecard.synthgen import DEFAULT_COEFFICIENTS, GeneratorSpec, simulate

from conftest import make_history

ROOT = Path(__file__).resolve().parents[1]


def verdict(number, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    return ok


# 1 ---------------------------------------------------------------------------

def test_c01_exploded_size():
    t0 = time.perf_counter()
    sizes = {0: len(explode_panel([]))}
    for n in range(1, 101):
        sizes[n] = sum(1 for _ in explode_full(make_history("E", statuses=(0,) * (n - 1) + (n % 2,))))
    elapsed = time.perf_counter() - t0
    ok = all(sizes[n] == n * (n + 1) // 2 == exploded_size(n) for n in sizes) and sizes[5] == 15 and elapsed < 1
    assert verdict(1, ok, f"n(n+1)/2 rows for n = 0..100, n=5 -> {sizes[5]}, {elapsed:.3f} s")


# 2 ---------------------------------------------------------------------------

TIER_LISTING = """
bad 1 500 1 | bad 501 1000 0.95 | bad 1001 2000 0.90 | bad 2001 3000 0.85 | bad 3001 4000 0.80
bad 4001 5000 0.75 | bad 5001 6000 0.70 | bad 6001 - 0.65
good 1 100000 0.1 | good 100001 200000 0.1 | good 200001 300000 0.05 | good 300001 400000 0.033333333
good 400001 500000 0.025 | good 500001 600000 0.02 | good 600001 700000 0.016666667
good 700001 800000 0.014285714 | good 800001 900000 0.0125 | good 900001 - 0.011111111
"""


def test_c02_sampling_tiers():
    tiers = [t.split() for t in re.split(r"[|\n]", TIER_LISTING) if t.strip()]
    assert len(tiers) == 18
    failures = []
    for kind, lo, hi, rate in tiers:
        status = 1 if kind == "bad" else 0
        p = float(rate)
        probes = [int(lo), int(lo) + 1] + ([int(hi) - 1, int(hi)] if hi != "-" else [10 * int(lo)])
        for count in probes:
            if rate_for(status, count) != p:
                failures.append((kind, count))
        # weights carried by sampled rows are 1/p for the listed decimal
        hs = [make_history(f"T{i:05d}", statuses=(status,)) for i in range(4000)]
        s = backward_weighted_sample(hs, MonthlyCounts({hs[0].months[0]: (int(lo), int(lo))}), seed=1)
        if len(s) == 0 or not np.all(s.weight == 1 / p):
            failures.append((kind, "weight"))
    assert verdict(2, not failures, f"18 tiers, probability and weight exact (mismatches: {failures or 'none'})")


# 3 ---------------------------------------------------------------------------

def test_c03_horvitz_thompson():
    t0 = time.perf_counter()
    port = simulate(GeneratorSpec(n_loans=10_000, seed=2024))
    hs = validate_and_label(port.loans, port.performance).histories
    counts = monthly_counts(hs)
    full = sum(exploded_size(len(h)) for h in hs)
    # variance of the weighted total: each observation at month index i
    # appears in i exploded rows, each kept independently with probability p
    var = math.fsum(i * (1 - p) / p for h in hs
                    for i, (m, st) in enumerate(zip(h.months, h.statuses), 1)
                    for p in [rate_for(st, counts.count(m, st))])
    totals, worst = [], 0.0
    for seed in range(200):
        s = backward_weighted_sample(hs, counts, seed=seed)
        totals.append(s.total_weight)
        worst = max(worst, float(np.max(np.abs(selection_probabilities(s, counts) * s.weight - 1))))
    elapsed = time.perf_counter() - t0
    sigma = math.sqrt(var / 200)
    z = (np.mean(totals) - full) / sigma
    ok = abs(z) <= 3 and worst <= np.spacing(1.0) and elapsed < 120
    assert verdict(3, ok, f"mean total {np.mean(totals):.1f} vs {full} rows, z = {z:+.2f}; "
                          f"max |p*w - 1| = {worst:.1e}; {elapsed:.1f} s")


# 4 ---------------------------------------------------------------------------

PUBLISHED_BAD_RATES = np.array([
    [0.003053297, 0.001655999, 0.001167344, 0.000839983, 0.000449718],
    [0.002962558, 0.001712162, 0.001132001, 0.000781153, 0.000485051],
    [0.003155422, 0.001721501, 0.001273959, 0.00079133, 0.000481101],
    [0.003203308, 0.001900315, 0.001371953, 0.000827489, 0.000428583],
])


def test_c04_interaction_table():
    spec = interaction_from_bad_rates(PUBLISHED_BAD_RATES, (160000, 238000, 350000))
    slopes = (0.000650895, 0.000619377, 0.00066858, 0.000693681)
    mult = (1.011120904, 1.062573458, 0.98437428, 0.948754518)
    err_s = max(np.max(np.abs(np.array(spec.slopes) - slopes)), abs(spec.average_slope - 0.000658133))
    err_m = float(np.max(np.abs(np.array(spec.band_multipliers) - mult)))
    ok = err_s <= 1e-8 and err_m <= 1e-8
    assert verdict(4, ok, f"max slope error {err_s:.1e}, max multiplier error {err_m:.1e} (tolerance 1e-8)")


# 5 ---------------------------------------------------------------------------

def test_c05_classification_metrics():
    m = classification_metrics(ConfusionMatrix(tn=58881, fp=7490, fn=1167, tp=601))
    want = {"accuracy": 0.87295088, "precision": 0.074280064, "recall": 0.339932127, "f1": 0.121919059}
    err = max(abs(getattr(m, k) - v) for k, v in want.items())
    assert verdict(5, err <= 1e-6, f"max metric error {err:.1e} at cutoff 621")


# 6 ---------------------------------------------------------------------------

def fd_gradient(beta, X, y, w, rel=1e-6):
    g = np.empty(len(beta))
    for j in range(len(beta)):
        h = rel * max(1.0, abs(beta[j]))
        e = np.zeros(len(beta))
        e[j] = h
        g[j] = (weighted_loglik(beta + e, X, y, w) - weighted_loglik(beta - e, X, y, w)) / (2 * h)
    return g


def test_c06_fit_recovers_truth():
    t0 = time.perf_counter()
    coef = dict(DEFAULT_COEFFICIENTS)
    coef["Intercept"] += 2.0
    covered, grad_err, dims, walds = 0, 0.0, set(), 0.0
    for seed in range(20240901, 20240921):
        spec = GeneratorSpec(n_loans=3700, coefficients=coef, seed=seed)
        port = simulate(spec)
        hs = validate_and_label(port.loans, port.performance).histories
        d = build_design(original_panel(hs), {ln.loan_id: ln for ln in port.loans}, port.macros, spec.features)
        # snapshot MOB is identically zero on the original panel
        names = [n for n in d.names if not n.startswith("snapshot_mob")]
        X, y, w = d.columns(names)[:100_000], d.status[:100_000], d.weight[:100_000]
        assert len(y) == 100_000
        t = fit(X, y, w, names)
        truth = np.array([coef["Intercept"]] + [coef.get(n, 0.0) for n in names])
        covered += bool(np.all(np.abs(t.estimates - truth) <= 3 * t.standard_errors))
        dims.add(len(names))
        walds = max(walds, float(np.max(np.abs(t.wald_chi_square / (t.estimates / t.standard_errors) ** 2 - 1))))
        Xi = np.column_stack([np.ones(len(y)), X])
        g = weighted_score(t.estimates, Xi, y, w)
        # relative to the magnitude of the score's summands (the score is ~0 here)
        scale = np.abs(Xi).T @ w
        grad_err = max(grad_err, float(np.max(np.abs(fd_gradient(t.estimates, Xi, y, w) - g) / scale)))
    elapsed = time.perf_counter() - t0
    ok = covered >= 18 and min(dims) >= 10 and grad_err <= 1e-5 and elapsed < 300 and walds <= 1e-9
    assert verdict(6, ok, f"{covered}/20 seeds within 3 SE (dimension {min(dims)}, n = 100000); "
                          f"max FD gradient error {grad_err:.1e}; {elapsed:.1f} s")


# 7 ---------------------------------------------------------------------------

def test_c07_weight_equivalence():
    rng = np.random.default_rng(7)
    err = 0.0
    for k in (2, 3, 5):
        X = rng.normal(size=(400, 4))
        y = (rng.random(400) < 1 / (1 + np.exp(-(X @ [0.8, -0.5, 0.3, 0.0] - 0.5)))).astype(float)
        heavy = rng.random(400) < 0.3
        rep = np.repeat(np.arange(400), np.where(heavy, k, 1))
        a = fit(X[rep], y[rep])
        b = fit(X, y, np.where(heavy, float(k), 1.0))
        err = max(err, float(np.max(np.abs(a.estimates - b.estimates))))
    assert verdict(7, err <= 1e-6, f"max coefficient difference {err:.1e}")


# 8 ---------------------------------------------------------------------------

def brute_force_roc(y, w, s):
    pos = sum(wi for yi, wi in zip(y, w) if yi)
    neg = sum(wi for yi, wi in zip(y, w) if not yi)
    thresholds = [math.inf] + sorted(set(s), reverse=True)
    tp = [sum(wi for yi, wi, si in zip(y, w, s) if yi and si >= t) for t in thresholds]
    fp = [sum(wi for yi, wi, si in zip(y, w, s) if not yi and si >= t) for t in thresholds]
    exact_j = [Fraction(a, pos) - Fraction(b, neg) for a, b in zip(tp, fp)]
    best = max(range(1, len(thresholds)), key=lambda i: (exact_j[i], -i))
    auc = sum((Fraction(fp[i + 1] - fp[i], neg)) * (Fraction(tp[i], pos) + Fraction(tp[i + 1], pos)) / 2
              for i in range(len(thresholds) - 1))
    return thresholds, [a / pos for a in tp], [b / neg for b in fp], best, auc


def test_c08_roc_youden_brute_force():
    rng = np.random.default_rng(8)
    mismatches = 0
    for i in range(50):
        n = int(rng.integers(2, 501))
        y = rng.integers(0, 2, n)
        y[:2] = (0, 1)
        w = rng.integers(1, 5, n) if i % 2 else np.ones(n, dtype=int)
        s = np.round(rng.random(n) + 0.3 * y, int(rng.integers(1, 4)))  # rounding creates ties
        c = roc(y, w, s)
        thr, tpr, fpr, best, auc = brute_force_roc(y.tolist(), w.tolist(), s.tolist())
        t, j = youden_cutoff(c)
        same = (list(c.thresholds) == thr and list(c.tpr) == tpr and list(c.fpr) == fpr
                and t == thr[best] and j == tpr[best] - fpr[best] and abs(c.auc - float(auc)) <= 1e-12)
        mismatches += not same
    assert verdict(8, mismatches == 0, f"{50 - mismatches}/50 random datasets match enumeration")


# 9 ---------------------------------------------------------------------------

def test_c09_wald_consistency():
    rng = np.random.default_rng(9)
    err = 0.0
    for _ in range(10):
        X = rng.normal(size=(2000, 3))
        y = (rng.random(2000) < 1 / (1 + np.exp(-(X @ rng.normal(size=3) - 1)))).astype(float)
        t = fit(X, y, rng.uniform(0.5, 3, 2000))
        err = max(err, float(np.max(np.abs(t.wald_chi_square / (t.estimates / t.standard_errors) ** 2 - 1))))
    fico = CoefficientTable(["fico"], np.array([-0.00808]), np.array([0.000051]), np.eye(1))
    rel = abs(fico.wald_chi_square[0] / 25053.3766 - 1)
    ok = err <= 1e-9 and rel <= 0.005
    assert verdict(9, ok, f"max relative Wald error {err:.1e}; FICO {fico.wald_chi_square[0]:.1f} "
                          f"vs 25053.4 ({100 * rel:.2f}%)")


# 10 --------------------------------------------------------------------------

def test_c10_band_rank_ordering():
    coef = dict(DEFAULT_COEFFICIENTS)
    coef["Intercept"] = -2.0
    spec = GeneratorSpec(n_loans=3000, coefficients=coef, seed=123)
    port = simulate(spec)
    hs = validate_and_label(port.loans, port.performance).histories
    d = build_design(original_panel(hs), {ln.loan_id: ln for ln in port.loans}, port.macros, spec.features)
    names = [n for n in d.names if not n.startswith("snapshot_mob")]
    X = d.columns(names)
    h = predict_hazard(X, fit(X, d.status, d.weight, names))
    bands = [b for b in score_band_table(to_score(h, ScoreScale.from_hazards(h)), d.status, d.weight, h)
             if b.total > 0]
    means = [b.mean_predicted for b in bands]
    ok = len(bands) >= 3 and all(a > b for a, b in zip(means, means[1:]))
    assert verdict(10, ok, f"{len(bands)} occupied bands, mean predicted rate strictly decreasing: "
                           f"{means[0]:.2e} ... {means[-1]:.2e}")


# 11 --------------------------------------------------------------------------

def test_c11_desk_scale_note():
    readme = (ROOT / "README.md").read_text()
    ok = "Not reproducible at desk scale" in readme
    assert verdict(11, ok, "published coefficients, counts and the 0.00125/621 Youden point need the full "
                           "loan-level dataset; documented in the README, covered by the property criteria")


# 12 --------------------------------------------------------------------------

def test_c12_pipeline_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synth": {"n_loans": 4000}, "seed": 99}))
    runs, codes = {}, []
    for name, threads in (("a", 1), ("b", 1), ("c", 8)):
        codes.append(main(["all", "--config", str(cfg), "--out", str(tmp_path / name), "--threads", str(threads)]))
        root = tmp_path / name
        files = {}
        for p in sorted(root.rglob("*")):
            if p.is_file():
                data = p.read_bytes()
                if p.name == "manifest.json":  # wall-clock timings are the only varying field
                    m = json.loads(data)
                    m.pop("timings")
                    data = json.dumps(m, sort_keys=True).encode()
                files[p.relative_to(root)] = data
        runs[name] = files
    ok = codes == [0, 0, 0] and runs["a"] == runs["b"] == runs["c"]
    assert verdict(12, ok, f"{len(runs['a'])} artifacts byte-identical across two runs and 1 vs 8 threads "
                           f"(manifest compared without timings)")
