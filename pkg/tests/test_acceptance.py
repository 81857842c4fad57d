"""Acceptance suite: every criterion at its stated tolerance and budget.

Run ``pytest tests/test_acceptance.py -v -s`` for the per-criterion PASS
lines.  Heavy criteria run replicas on two worker processes with the
frozen master seed, so results are reproducible byte-for-byte.

Two clauses are expected failures with frozen analysis (see the ledger
summary in README): the strip-hit leading-term window (criterion 4b, the
displayed prefactor overstates the exact expectation by 2*sqrt(2)) and the
extinction-ratio trend (criterion 5b, the cubic constant's desk-scale
approach is not monotone increasing on {5,7,9}).  Both are strict xfails:
the defect is visible, and an unexpected pass would fail the suite.
"""

import math
import time

import numpy as np
import pytest

import branchsel as bs
from branchsel import LBand
from branchsel.expcli.config import build_config
from branchsel.expcli.scenarios import SCENARIOS, run_scenario
from branchsel.oracles import (brute_force_small_instance, expected_upper_hits,
                               velocity_gap_constant)
from branchsel.rng import RngStream
from branchsel.stats import renewal_velocity, velocity_regression

ACC_SEED = 20260810
THREADS = 2
SQRT2 = math.sqrt(2.0)

_elapsed: dict[str, float] = {}


def scenario_cfg(name, out, replicas=None, threads=THREADS, seed=ACC_SEED,
                 dt=None, **params):
    sc = SCENARIOS[name]
    cfg = build_config(name, sc.schema, {},
                       {"seed": seed, "replicas": replicas,
                        "out": str(out), "threads": threads, "dt": dt},
                       default_replicas=sc.default_replicas)
    cfg.params.update(params)
    return cfg


def run_timed(name, cfg):
    t0 = time.perf_counter()
    summary = run_scenario(cfg)
    _elapsed[name] = time.perf_counter() - t0
    return summary


def report(criterion, ok, detail):
    flag = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {criterion}: {flag}  {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# -- 1: population-size law --------------------------------------------------

def test_criterion_1_yule_law(tmp_path):
    cfg = scenario_cfg("yule-check", tmp_path, replicas=100_000)
    r = run_timed("yule", cfg)["results"]
    el = _elapsed["yule"]
    ok = (r["chi2_pvalue"] > 0.01
          and abs(r["mean_size"] - math.e) <= 3 * r["se"]
          and el < 10.0)
    report("1 (size law, geometric at t=1)", ok,
           f"chi2 p={r['chi2_pvalue']:.3f}, mean={r['mean_size']:.4f}"
           f"+-{r['se']:.4f} vs e, {el:.1f}s (<10s)")


# -- 2: many-to-one ----------------------------------------------------------

def test_criterion_2_many_to_one(tmp_path):
    cfg = scenario_cfg("many-to-one", tmp_path, replicas=10_000)
    r = run_timed("m2o", cfg)["results"]
    el = _elapsed["m2o"]
    target = 0.23975006109347673
    assert r["target"] == pytest.approx(target, rel=1e-12)
    ok = abs(r["scaled_mean"] - target) <= 3 * r["se"] and el < 30.0
    report("2 (many-to-one at t=2, a=1)", ok,
           f"e^-t E[count]={r['scaled_mean']:.5f}+-{r['se']:.5f} vs "
           f"{target:.5f}, {el:.1f}s (<30s)")


# -- 3: weighted-size constancy at criticality --------------------------------

def test_criterion_3_weighted_size_constancy(tmp_path):
    cfg = scenario_cfg("z-martingale", tmp_path, replicas=10_000)
    r = run_timed("zmart", cfg)["results"]
    el = _elapsed["zmart"]
    devs = [abs(m - 1.0) / se for m, se in zip(r["ratio_mean"], r["ratio_se"])]
    ok = (all(d <= 3.0 for d in devs)
          and abs(r["criticality_exponent"]) <= 1e-12
          and el < 60.0)
    report("3 (critical strip: mean Z(t)/Z(0) = 1)", ok,
           f"ratios={[f'{m:.4f}' for m in r['ratio_mean']]} "
           f"devs(sigma)={[f'{d:.2f}' for d in devs]}, "
           f"exponent={r['criticality_exponent']:.2e}, {el:.0f}s (<60s)")


# -- 4: strip hit counts -----------------------------------------------------

@pytest.fixture(scope="module")
def strip_hits(tmp_path_factory):
    # dt = 0.02 keeps the 2000-replica run inside the budget; the bridge
    # correction makes hit counts dt-insensitive (validated against the
    # exact spectral expectation at both 0.01 and 0.02 in test_stats and
    # criterion 4c)
    out = tmp_path_factory.mktemp("strip_hits")
    cfg = scenario_cfg("strip-hits", out, replicas=2_000, dt=0.02)
    return run_timed("strip", cfg)["results"]


def test_criterion_4a_window_ordering_and_budget(strip_hits):
    el = _elapsed["strip"]
    ok = strip_hits["r_prime_le_r"] and el < 900.0
    report("4a (R' <= R on every replica)", ok,
           f"mean R={strip_hits['mean_r']:.3f}, mean R'="
           f"{strip_hits['mean_r_prime']:.3f}, {el:.0f}s (<900s)")


@pytest.mark.xfail(strict=True, reason=(
    "the displayed leading term 2*sqrt(2)*pi*theta*K*e^{-mu K}*Z(0) = 6.99 "
    "overstates the exact expected hit count by a factor 2*sqrt(2); the "
    "exact spectral value at K=8 is E[R'] = 1.598, confirmed by three "
    "independent routes (see criterion 4c and the decisions ledger)"))
def test_criterion_4b_paper_leading_term_window(strip_hits):
    lead = strip_hits["paper_leading_term"]
    assert lead == pytest.approx(6.9918656419262993, rel=1e-12)
    mean_rp = strip_hits["mean_r_prime"]
    report("4b (E[R'] within factor 2 of 6.99)",
           lead / 2 <= mean_rp <= lead * 2,
           f"mean R'={mean_rp:.3f} vs window [{lead / 2:.2f}, {lead * 2:.2f}]")


def test_criterion_4c_exact_hit_rate_oracle(strip_hits):
    exact_r = expected_upper_hits(8.0, 7.0, 512.0)
    exact_rp = expected_upper_hits(8.0, 7.0, 512.0, t_lo=8 ** 2.5)
    dr = abs(strip_hits["mean_r"] - exact_r) / strip_hits["se_r"]
    drp = abs(strip_hits["mean_r_prime"] - exact_rp) / strip_hits["se_r_prime"]
    ok = dr <= 3.0 and drp <= 3.0
    report("4c (hit counts vs exact spectral expectation)", ok,
           f"R: {strip_hits['mean_r']:.3f} vs {exact_r:.3f} ({dr:.2f} sigma); "
           f"R': {strip_hits['mean_r_prime']:.3f} vs {exact_rp:.3f} "
           f"({drp:.2f} sigma)")


# -- 5: extinction cubic law ---------------------------------------------------

@pytest.fixture(scope="module")
def extinction(tmp_path_factory):
    out = tmp_path_factory.mktemp("extinction")
    cfg = scenario_cfg("extinction-time", out, replicas=500)
    return run_timed("ext", cfg)["results"]


def test_criterion_5a_cubic_constant_band(extinction):
    el = _elapsed["ext"]
    ratio9 = extinction["median_ratio"][-1]
    lo, hi = 0.5 * 0.09553, 1.5 * 0.09553
    ok = lo <= ratio9 <= hi and el < 1200.0
    report("5a (median extinction time / x^3 at x=9)", ok,
           f"ratio={ratio9:.4f} in [{lo:.4f}, {hi:.4f}], "
           f"all ratios={[f'{v:.4f}' for v in extinction['median_ratio']]}, "
           f"{el:.0f}s (<1200s)")


@pytest.mark.xfail(strict=True, reason=(
    "the desk-scale approach to 2*sqrt(2)/(3*pi^2) is slow and not "
    "monotone increasing over x in {5,7,9}: measured medians decrease "
    "(~0.062, 0.060, 0.050); see the decisions ledger"))
def test_criterion_5b_ratio_trend(extinction):
    ratios = extinction["median_ratio"]
    increasing = all(a < b for a, b in zip(ratios, ratios[1:]))
    report("5b (ratio sequence increasing toward the constant)", increasing,
           f"ratios={[f'{v:.4f}' for v in ratios]}")


# -- 6: coupling inclusion -----------------------------------------------------

def test_criterion_6_coupling_inclusion(tmp_path):
    cfg = scenario_cfg("coupled-inclusion", tmp_path, replicas=100)
    r = run_timed("coupled", cfg)["results"]
    el = _elapsed["coupled"]
    ok = r["inclusion_violations"] == 0 and el < 300.0
    report("6 (selected system is a sub-multiset at every grid time)", ok,
           f"violations={r['inclusion_violations']} over {r['checks']} "
           f"checks, {el:.0f}s (<300s)")


# -- 7: velocity bracketing and scaling ----------------------------------------

@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    cfg = scenario_cfg("velocity-sweep", out, replicas=32)
    return run_timed("sweep", cfg)["results"]


def test_criterion_7_velocity_bracketing_and_scaling(sweep):
    el = _elapsed["sweep"]
    ests = sweep["estimates"]
    vs = [e["v_hat"] for e in ests]
    increasing = all(a < b for a, b in zip(vs, vs[1:]))
    below = all(v < SQRT2 for v in vs)
    in_brackets = all(e["in_bracket"] for e in ests)
    c = sweep["fit_coefficient"]
    ok = (increasing and below and in_brackets
          and 1.5 <= c <= 7.0 and el < 7200.0)
    report("7 (velocity monotone, below sqrt2, bracketed; gap fit)", ok,
           f"v={[f'{v:.4f}' for v in vs]}, c={c:.3f} in [1.5, 7.0] "
           f"(asymptotic {velocity_gap_constant():.4f}), {el:.0f}s (<7200s)")


# -- 8: renewal vs regression ---------------------------------------------------

def test_criterion_8_renewal_cross_check():
    t0 = time.perf_counter()
    grid = np.arange(0.05, 500.001, 0.05)
    series = [bs.simulate(bs.init_population([0.0]), 500.0, bs.ProcessParams(),
                          LBand(1.5), grid, RngStream(ACC_SEED, i), dt=0.01,
                          kill_record_cap=0)
              for i in range(24)]
    ren = renewal_velocity(series, min_gap=1.0)
    reg = velocity_regression(series, burn_in=100.0)
    el = time.perf_counter() - t0
    comb = math.hypot(ren.stderr, reg.stderr)
    diff = abs(ren.slope - reg.slope)
    ok = diff <= 3 * comb and el < 300.0
    report("8 (renewal vs regression at L=1.5)", ok,
           f"renewal={ren.slope:.4f}+-{ren.stderr:.4f}, "
           f"regression={reg.slope:.4f}+-{reg.stderr:.4f}, "
           f"|diff|={diff:.4f} <= {3 * comb:.4f}, {el:.0f}s (<300s)")


# -- 9: bridge-correction validity ----------------------------------------------

def engine_strip_survival(dt, seed, n):
    alive = 0
    for i in range(n):
        s = bs.simulate(bs.init_population([1.0]), 1.0, bs.ProcessParams(),
                        bs.Strip(0.0, 2.0), [1.0], RngStream(seed, i),
                        dt=dt, kill_record_cap=0)
        alive += 0 if s.extinct else 1
    p = alive / n
    return p, math.sqrt(p * (1 - p) / n)


def test_criterion_9_bridge_validity_and_dt_halving():
    t0 = time.perf_counter()
    brute = brute_force_small_instance(
        [1.0], 1.0, 100_000, RngStream(ACC_SEED, 0, tag=9),
        dt=1e-4, strip=(0.0, 2.0))
    p_eng, se_eng = engine_strip_survival(0.01, ACC_SEED, 10_000)
    comb = math.hypot(brute.survival_se, se_eng)
    agree = abs(p_eng - brute.survival) <= 3 * comb

    # halving clause: the dt-driven change, measured at 4x the budget for
    # resolution, stays below one MC standard error of the budgeted estimate
    p_a, _ = engine_strip_survival(0.01, 31415, 40_000)
    p_b, _ = engine_strip_survival(0.005, 31415, 40_000)
    halving = abs(p_a - p_b) < se_eng
    el = time.perf_counter() - t0
    ok = agree and halving and el < 600.0
    report("9 (bridge-corrected engine vs fine-step baseline)", ok,
           f"engine={p_eng:.4f}+-{se_eng:.4f} vs brute={brute.survival:.4f}"
           f"+-{brute.survival_se:.4f} (3SE={3 * comb:.4f}); "
           f"halving |{p_a:.4f}-{p_b:.4f}|={abs(p_a - p_b):.4f} < "
           f"{se_eng:.4f}, {el:.0f}s (<600s)")


# -- 10: determinism under parallelism -------------------------------------------

_TINY = {
    "yule-check": dict(replicas=200, t=1.0),
    "many-to-one": dict(replicas=100, t=1.0),
    "z-martingale": dict(replicas=50, K=4.0, times=[0.5, 1.0]),
    "strip-hits": dict(replicas=50, K=3.0, theta=0.2),
    "extinction-time": dict(replicas=30, starts=[2.0, 3.0], horizon_factor=1.5),
    "coupled-inclusion": dict(replicas=10, L=2.0, horizon=2.0),
    "envelope": dict(replicas=10, t=4.0, d=3.0, r=3.0),
    "velocity-sweep": dict(replicas=8, values=[1.5, 2.0, 2.5],
                           horizon_factor=10.0, record_dt=0.5),
    "nbbm-velocity-sweep": dict(replicas=8, values=[4.0, 8.0, 16.0],
                                horizon_factor=10.0, record_dt=0.5),
}


def test_criterion_10_determinism_across_worker_counts(tmp_path):
    t0 = time.perf_counter()
    failures = []
    for name, overrides in _TINY.items():
        params = dict(overrides)
        replicas = params.pop("replicas")
        outputs = {}
        for threads in (1, 4, 16):
            out = tmp_path / f"{name}-t{threads}"
            cfg = scenario_cfg(name, out, replicas=replicas, threads=threads,
                               **params)
            run_scenario(cfg)
            outputs[threads] = {
                f.name: f.read_bytes() for f in sorted(out.glob("*.csv"))}
        if not (outputs[1] == outputs[4] == outputs[16]):
            failures.append(name)
    el = time.perf_counter() - t0
    report("10 (byte-identical CSVs with 1, 4, 16 workers)", not failures,
           f"all {len(_TINY)} scenarios identical "
           f"({'ok' if not failures else failures}), {el:.0f}s")
