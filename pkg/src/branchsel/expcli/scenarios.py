"""Scenario registry for the experiment CLI.

Each scenario maps to one consistency check or measurement: a per-replica
function (run on worker processes) plus a finalizer that aggregates rows
into the per-replica CSV and the JSONL summary.  Replica streams derive
from (master_seed, replica_index); sweep scenarios additionally separate
values by stream tag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .. import oracles
from ..engine import ProcessParams, SnapshotSeries, advance, init_population, simulate
from ..errors import BranchselError, ConfigError, EstimationError
from ..rng import TAG_SYNTHETIC, RngStream
from ..selection import LBand, LinearBarrier, NBest, Strip, simulate_coupled_lbbm
from ..stats import (VelocityEstimate, envelope_check, gap_scaling_fit,
                     hit_counter, velocity_regression)
from .config import Field, _bool, _float, _floats, _int, _str
from .runner import mean_se, run_replicas

SQRT2 = math.sqrt(2.0)

# Stream tags >= _VALUE_TAG_BASE separate sweep values for the same replica.
_VALUE_TAG_BASE = 16


@dataclass(frozen=True)
class Scenario:
    name: str
    schema: dict[str, Field]
    default_replicas: int
    replica_fn: Callable
    finalize: Callable     # (cfg, results) -> (header, rows, summary, extra)
    is_sweep: bool = False


def _grid(record_dt: float, horizon: float, include_zero: bool = False) -> np.ndarray:
    n = int(round(horizon / record_dt))
    g = record_dt * np.arange(0 if include_zero else 1, n + 1)
    return g


def _snap_up(horizon: float, dt: float) -> float:
    """Smallest whole number of enforcement steps covering the horizon."""
    return dt * max(1, math.ceil(horizon / dt - 1e-9))


# -- yule-check --------------------------------------------------------------

def _yule_replica(cfg, i: int):
    rng = RngStream(cfg.master_seed, i)
    pop = advance(init_population([0.0]), cfg.params["t"], ProcessParams(),
                  rng, cap=cfg.cap)
    return (i, pop.size)


def _yule_finalize(cfg, results):
    from scipy import stats as sps

    t = cfg.params["t"]
    sizes = np.array([r[1] for r in results], dtype=np.int64)
    mean, se = mean_se(sizes)
    target = math.exp(t)
    k_max = cfg.params["k_max"]
    p = math.exp(-t)
    probs = np.array([(1 - p) ** (k - 1) * p for k in range(1, k_max + 1)])
    obs = np.array([(sizes == k).sum() for k in range(1, k_max + 1)]
                   + [(sizes > k_max).sum()], dtype=float)
    exp_counts = np.append(probs, (1 - p) ** k_max) * sizes.size
    chi2 = float(((obs - exp_counts) ** 2 / exp_counts).sum())
    dof = k_max  # k_max + 1 cells, fully specified null
    pvalue = float(sps.chi2.sf(chi2, dof))
    summary = {
        "mean_size": mean, "se": se, "target_mean": target,
        "z_score": (mean - target) / se if se else None,
        "chi2": chi2, "chi2_dof": dof, "chi2_pvalue": pvalue,
    }
    return ("replica", "size"), results, summary, {}


# -- many-to-one -------------------------------------------------------------

def _many_to_one_replica(cfg, i: int):
    p = cfg.params
    rng = RngStream(cfg.master_seed, i)
    pop = advance(init_population([0.0]), p["t"], ProcessParams(drift=p["drift"]),
                  rng, cap=cfg.cap)
    return (i, int((pop.pos >= p["a"]).sum()))


def _many_to_one_finalize(cfg, results):
    p = cfg.params
    t, a, drift = p["t"], p["a"], p["drift"]
    counts = np.array([r[1] for r in results], dtype=float)
    scale = math.exp(-t)
    mean, se = mean_se(scale * counts)
    target = 0.5 * math.erfc((a - drift * t) / math.sqrt(t) / SQRT2)
    summary = {
        "scaled_mean": mean, "se": se, "target": target,
        "z_score": (mean - target) / se if se else None,
    }
    return ("replica", "count_above"), results, summary, {}


# -- z-martingale ------------------------------------------------------------

def _zmart_params(p):
    K = p["K"]
    mu = oracles.mu_for_width(K)
    x0 = p["x0"] if not math.isnan(p["x0"]) else K / 2.0
    return K, mu, x0, sorted(p["times"])


def _zmart_replica(cfg, i: int):
    K, mu, x0, times = _zmart_params(cfg.params)
    rng = RngStream(cfg.master_seed, i)
    grid = np.concatenate([[0.0], times])
    s = simulate(init_population([x0]), times[-1], ProcessParams(drift=-mu),
                 Strip(0.0, K), grid, rng, dt=cfg.dt, cap=cfg.cap,
                 functional=(mu, K), kill_record_cap=0)
    z = np.zeros(grid.size)
    z[:s.n_records] = s.z
    return (i, *z)


def _zmart_finalize(cfg, results):
    K, mu, x0, times = _zmart_params(cfg.params)
    z0 = math.exp(mu * x0) * math.sin(math.pi * x0 / K)
    zs = np.array([r[1:] for r in results], dtype=float)
    ratios = zs[:, 1:] / z0
    means = ratios.mean(axis=0)
    ses = ratios.std(axis=0, ddof=1) / math.sqrt(ratios.shape[0])
    exponent = 1.0 - mu * mu / 2.0 - math.pi ** 2 / (2.0 * K * K)
    summary = {
        "times": list(times), "z0": z0,
        "ratio_mean": means, "ratio_se": ses,
        "criticality_exponent": exponent,
    }
    header = ("replica", "z0") + tuple(f"z_t{t:g}" for t in times)
    return header, results, summary, {}


# -- strip-hits --------------------------------------------------------------

def _strip_hits_replica(cfg, i: int):
    p = cfg.params
    K, theta = p["K"], p["theta"]
    x0 = p["x0"] if not math.isnan(p["x0"]) else K - 1.0
    mu = oracles.mu_for_width(K)
    horizon = _snap_up(theta * K ** 3, cfg.dt)
    rng = RngStream(cfg.master_seed, i)
    s = simulate(init_population([x0]), horizon, ProcessParams(drift=-mu),
                 Strip(0.0, K), [horizon], rng, dt=cfg.dt, cap=cfg.cap,
                 kill_record_cap=0)
    hc = hit_counter(np.asarray(s.kills.hi_times), K, theta)
    return (i, hc.r, hc.r_prime)


def _strip_hits_finalize(cfg, results):
    p = cfg.params
    K, theta = p["K"], p["theta"]
    x0 = p["x0"] if not math.isnan(p["x0"]) else K - 1.0
    mu = oracles.mu_for_width(K)
    r = np.array([x[1] for x in results], dtype=float)
    rp = np.array([x[2] for x in results], dtype=float)
    mr, ser = mean_se(r)
    mrp, serp = mean_se(rp)
    z0 = math.exp(mu * x0) * math.sin(math.pi * x0 / K)
    summary = {
        "mean_r": mr, "se_r": ser, "mean_r_prime": mrp, "se_r_prime": serp,
        "r_prime_le_r": bool((rp <= r).all()),
        "paper_leading_term": 2 * SQRT2 * math.pi * theta * K * math.exp(-mu * K) * z0,
        "exact_expected_r": oracles.expected_upper_hits(K, x0, theta * K ** 3),
        "exact_expected_r_prime": oracles.expected_upper_hits(
            K, x0, theta * K ** 3, t_lo=K ** 2.5),
    }
    return ("replica", "r", "r_prime"), results, summary, {}


# -- extinction-time ---------------------------------------------------------

def _extinction_replica(cfg, i: int):
    p = cfg.params
    rng = RngStream(cfg.master_seed, i)
    rows = []
    for x in p["starts"]:
        horizon = p["horizon_factor"] * oracles.extinction_constant() * x ** 3
        horizon = _snap_up(max(horizon, 10.0 * cfg.dt), cfg.dt)
        s = simulate(init_population([x]), horizon, ProcessParams(drift=-SQRT2),
                     LinearBarrier(0.0, 0.0, "below"), [horizon], rng,
                     dt=cfg.dt, cap=cfg.cap, kill_record_cap=0)
        t_ext = s.extinction_time if s.extinct else math.inf
        rows.append((i, x, bool(s.extinct), t_ext))
    return rows


def _extinction_finalize(cfg, results):
    rows = [row for sub in results for row in sub]
    starts = list(cfg.params["starts"])
    const = oracles.extinction_constant()
    med_ratio, ext_frac = [], []
    for x in starts:
        te = np.array([r[3] for r in rows if r[1] == x], dtype=float)
        ext_frac.append(float(np.isfinite(te).mean()))
        med_ratio.append(float(np.median(te) / x ** 3))
    summary = {
        "starts": starts, "median_ratio": med_ratio,
        "extinct_fraction": ext_frac, "cubic_constant": const,
    }
    return ("replica", "start", "extinct", "t_extinct"), rows, summary, {}


# -- coupled-inclusion -------------------------------------------------------

def _is_submultiset(sub: np.ndarray, full: np.ndarray) -> bool:
    if sub.size > full.size:
        return False
    a = np.sort(sub)
    b = np.sort(full)
    j = 0
    for x in a:
        while j < b.size and b[j] < x:
            j += 1
        if j >= b.size or b[j] != x:
            return False
        j += 1
    return True


def _coupled_replica(cfg, i: int):
    p = cfg.params
    rng = RngStream(cfg.master_seed, i)
    grid = _grid(p["record_dt"], p["horizon"], include_zero=True)
    full, band = simulate_coupled_lbbm(
        init_population([0.0]), p["horizon"], ProcessParams(), p["L"],
        grid, rng, dt=cfg.dt, cap=cfg.cap, record_configs=True)
    violations = sum(
        0 if _is_submultiset(band.configs[j], full.configs[j]) else 1
        for j in range(len(grid)))
    return (i, violations, grid.size, full.size[-1], band.size[-1])


def _coupled_finalize(cfg, results):
    viol = int(sum(r[1] for r in results))
    checks = int(sum(r[2] for r in results))
    summary = {
        "inclusion_violations": viol, "checks": checks,
        "mean_full_size": float(np.mean([r[3] for r in results])),
        "mean_band_size": float(np.mean([r[4] for r in results])),
    }
    header = ("replica", "violations", "checks", "full_final_size", "band_final_size")
    return header, results, summary, {}


# -- envelope ----------------------------------------------------------------

def _envelope_replica(cfg, i: int):
    p = cfg.params
    rng = RngStream(cfg.master_seed, i)
    grid = _grid(p["record_dt"], p["t"], include_zero=True)
    s = simulate(init_population([0.0]), p["t"], ProcessParams(), None, grid,
                 rng, dt=cfg.dt, cap=cfg.cap, genealogy=True)
    ok = envelope_check(s.genealogy, p["t"], p["gamma"], p["r"], p["d"])
    return (i, bool(ok), int(s.size[-1]), float(s.max_pos[-1]))


def _envelope_finalize(cfg, results):
    from ..stats import m_centering

    succ = np.array([r[1] for r in results], dtype=float)
    rate, se = mean_se(succ)
    summary = {"success_rate": rate, "se": se,
               "m_t_minus_d": m_centering(cfg.params["t"]) - cfg.params["d"]}
    return ("replica", "success", "final_size", "final_max"), results, summary, {}


# -- velocity sweeps ---------------------------------------------------------

def _sweep_geometry(mode: str, value: float):
    """(rule, initial positions, frame width L_eff) for one sweep value."""
    if mode == "lband":
        return LBand(value), [0.0], value
    if mode == "nbest":
        n = int(round(value))
        return NBest(n), [0.0] * n, math.log(n) / SQRT2 if n > 1 else 1.0
    if mode == "strip":
        return Strip(0.0, value), [value / 2.0], value
    raise ConfigError(f"unknown sweep mode {mode!r}")


def _frame_drift(L_eff: float) -> float:
    if L_eff > oracles.MIN_STRIP_WIDTH:
        return oracles.mu_for_width(L_eff)
    return 0.0


def _velocity_replica(cfg, i: int):
    p = cfg.params
    value = p["_value"]
    vi = p["_value_index"]
    rule, pop0, l_eff = _sweep_geometry(p["_mode"], value)
    mu_frame = _frame_drift(l_eff)
    horizon = p["horizon_factor"] * l_eff ** 2
    record_dt = p["record_dt"]
    horizon = record_dt * max(2, int(round(horizon / record_dt)))
    grid = _grid(record_dt, horizon)
    rng = RngStream(cfg.master_seed, i, tag=_VALUE_TAG_BASE + vi)
    s = simulate(init_population(pop0), horizon, ProcessParams(drift=-mu_frame),
                 rule, grid, rng, dt=cfg.dt, cap=cfg.cap, kill_record_cap=0)
    track = np.full(grid.size, np.nan)
    track[:s.n_records] = s.max_pos
    return {"replica": i, "track": track, "extinct": s.extinct,
            "times": grid, "mu_frame": mu_frame, "l_eff": l_eff,
            "horizon": horizon}


def _per_replica_slopes(times: np.ndarray, tracks: np.ndarray,
                        burn_in: float) -> np.ndarray:
    sel = times >= burn_in
    t = times[sel]
    tc = t - t.mean()
    return (tracks[:, sel] @ tc) / float((tc * tc).sum())


def _estimate_value(cfg, value, results):
    p = cfg.params
    times = results[0]["times"]
    mu_frame = results[0]["mu_frame"]
    l_eff = results[0]["l_eff"]
    horizon = results[0]["horizon"]
    alive = [r for r in results if not r["extinct"]]
    n_extinct = len(results) - len(alive)
    if len(alive) < 8:
        raise EstimationError(
            f"only {len(alive)} surviving replicas at value {value}; need >= 8")
    tracks = np.vstack([r["track"] for r in alive])
    burn_in = p["burn_frac"] * horizon
    series = [SnapshotSeries(record_times=times, size=np.zeros(times.size, np.int64),
                             max_pos=row, min_pos=row) for row in tracks]
    est = velocity_regression(series, burn_in)
    vhat = VelocityEstimate(slope=est.slope + mu_frame, stderr=est.stderr,
                            window=est.window, method=est.method,
                            replicas=est.replicas)
    slopes = _per_replica_slopes(times, tracks, burn_in)
    rows = [(value, r["replica"], float(s), float(s) + mu_frame)
            for r, s in zip(alive, slopes)]
    try:
        lo, hi = oracles.velocity_bracket(l_eff, p["eps"], clamp=True)
        in_bracket = bool(lo - 3 * vhat.stderr <= vhat.slope
                          <= hi + 3 * vhat.stderr)
    except ConfigError:
        lo, hi, in_bracket = math.nan, math.nan, None
    info = {
        "value": value, "l_eff": l_eff, "v_hat": vhat.slope,
        "stderr": vhat.stderr, "replicas": vhat.replicas,
        "extinct_replicas": n_extinct, "mu_frame": mu_frame,
        "burn_in": burn_in, "horizon": horizon,
        "bracket_lo": lo, "bracket_hi": hi,
        "in_bracket": in_bracket,
    }
    return vhat, rows, info


def _run_velocity_sweep(cfg, mode: str):
    p = cfg.params
    values = list(p["values"])
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows, infos, estimates = [], [], []
    for vi, value in enumerate(values):
        sub = replace(cfg, params={**p, "_value": value, "_value_index": vi,
                                   "_mode": mode})
        if p["synthetic"]:
            rng = RngStream(cfg.master_seed, vi, tag=TAG_SYNTHETIC)
            _, _, l_eff = _sweep_geometry(mode, value)
            noise = p["synthetic_noise"]
            vhat = oracles.theoretical_velocity(l_eff) + noise * rng.normals(1)[0]
            est = VelocityEstimate(vhat, noise, (0.0, 0.0), "synthetic", 1)
            estimates.append((l_eff, est))
            rows.append((value, 0, math.nan, vhat))
            infos.append({"value": value, "l_eff": l_eff, "v_hat": vhat,
                          "stderr": noise, "replicas": 1, "synthetic": True})
            continue
        try:
            results = run_replicas(cfg.scenario, sub)
            est, value_rows, info = _estimate_value(sub, value, results)
        except BranchselError as exc:
            exc.args = (f"sweep aborted at value {value}: {exc.args[0] if exc.args else exc}",
                        ) + exc.args[1:]
            raise
        estimates.append((info["l_eff"], est))
        rows.extend(value_rows)
        infos.append(info)
    c, residuals = gap_scaling_fit(estimates)
    summary = {
        "mode": mode, "values": values, "estimates": infos,
        "fit_coefficient": c, "fit_residuals": residuals,
        "gap_constant_target": oracles.velocity_gap_constant(),
    }
    est_rows = [("velocity", i["value"], i["v_hat"], i["stderr"], i["replicas"])
                for i in infos]
    est_rows.append(("fit", math.nan, c, math.nan,
                     int(sum(i["replicas"] for i in infos))))
    extra = {"estimates": (("kind", "value", "estimate", "stderr", "replicas"),
                           est_rows)}
    header = ("value", "replica", "frame_slope", "v_hat")
    return header, rows, summary, extra


def _velocity_finalize(cfg, results):  # pragma: no cover - dispatched in run_scenario
    raise RuntimeError("sweep scenarios are finalized by _run_velocity_sweep")


# -- registry ----------------------------------------------------------------

_SWEEP_SCHEMA = {
    "values": Field(_floats, [3.0, 4.0, 5.0, 6.0], "sweep values"),
    "horizon_factor": Field(_float, 50.0, "horizon = factor * L_eff^2"),
    "eps": Field(_float, 0.3, "bracket half-width parameter"),
    "burn_frac": Field(_float, 0.2, "burn-in fraction of the horizon"),
    "record_dt": Field(_float, 1.0, "recording interval"),
    "synthetic": Field(_bool, False, "inject theoretical velocities"),
    "synthetic_noise": Field(_float, 0.002, "synthetic noise level"),
}

SCENARIOS: dict[str, Scenario] = {}


def _register(name, schema, default_replicas, replica_fn, finalize, is_sweep=False):
    SCENARIOS[name] = Scenario(name, schema, default_replicas, replica_fn,
                               finalize, is_sweep)


_register("yule-check",
          {"t": Field(_float, 1.0, "observation time"),
           "k_max": Field(_int, 20, "chi-square cells for k <= k_max")},
          100_000, _yule_replica, _yule_finalize)

_register("many-to-one",
          {"t": Field(_float, 2.0, "observation time"),
           "a": Field(_float, 1.0, "threshold"),
           "drift": Field(_float, 0.0, "drift")},
          10_000, _many_to_one_replica, _many_to_one_finalize)

_register("z-martingale",
          {"K": Field(_float, 5.0, "strip width"),
           "x0": Field(_float, math.nan, "start (default K/2)"),
           "times": Field(_floats, [0.5, 1.0, 2.0], "observation times")},
          10_000, _zmart_replica, _zmart_finalize)

_register("strip-hits",
          {"K": Field(_float, 8.0, "strip width"),
           "theta": Field(_float, 1.0, "horizon = theta K^3"),
           "x0": Field(_float, math.nan, "start (default K-1)")},
          2_000, _strip_hits_replica, _strip_hits_finalize)

_register("extinction-time",
          {"starts": Field(_floats, [5.0, 7.0, 9.0], "initial positions"),
           "horizon_factor": Field(_float, 2.0,
                                   "horizon = factor * (2sqrt2/3pi^2) x^3")},
          500, _extinction_replica, _extinction_finalize)

_register("coupled-inclusion",
          {"L": Field(_float, 3.0, "band width"),
           "horizon": Field(_float, 7.0, "run length"),
           "record_dt": Field(_float, 0.1, "inclusion check interval")},
          100, _coupled_replica, _coupled_finalize)

_register("envelope",
          {"t": Field(_float, 12.0, "terminal time"),
           "gamma": Field(_float, 0.25, "tube exponent offset"),
           "d": Field(_float, 8.0, "terminal slack below the centering"),
           "r": Field(_float, 8.0, "tube floor"),
           "record_dt": Field(_float, 0.5, "genealogy snapshot interval")},
          16, _envelope_replica, _envelope_finalize)

_register("velocity-sweep", dict(_SWEEP_SCHEMA), 32,
          _velocity_replica, _velocity_finalize, is_sweep=True)

_register("nbbm-velocity-sweep",
          {**_SWEEP_SCHEMA,
           "values": Field(_floats, [64.0, 256.0, 1024.0], "population sizes")},
          16, _velocity_replica, _velocity_finalize, is_sweep=True)

_SWEEP_MODES = {"velocity-sweep": "lband", "nbbm-velocity-sweep": "nbest"}
_PARAM_TO_SCENARIO = {"L": ("velocity-sweep", "lband"),
                      "N": ("nbbm-velocity-sweep", "nbest"),
                      "K": ("velocity-sweep", "strip")}


# -- orchestration -----------------------------------------------------------

def run_scenario(cfg, sweep_mode: Optional[str] = None) -> dict:
    """Run every replica of the scenario, write the per-replica CSV and the
    JSONL summary, and return the summary."""
    from pathlib import Path

    from .runner import build_id, write_csv, write_jsonl

    sc = SCENARIOS.get(cfg.scenario)
    if sc is None:
        raise ConfigError(f"unknown scenario {cfg.scenario!r} "
                          f"(available: {', '.join(sorted(SCENARIOS))})")
    if sc.is_sweep:
        mode = sweep_mode or _SWEEP_MODES[cfg.scenario]
        header, rows, results, extra = _run_velocity_sweep(cfg, mode)
    else:
        per_replica = run_replicas(cfg.scenario, cfg)
        header, rows, results, extra = sc.finalize(cfg, per_replica)

    out = Path(cfg.out_dir)
    write_csv(out / f"{cfg.scenario}.csv", header, rows)
    for suffix, (h2, r2) in extra.items():
        write_csv(out / f"{cfg.scenario}_{suffix}.csv", h2, r2)
    summary = {"scenario": cfg.scenario, "build": build_id(),
               "config": cfg.echo(), "results": results}
    write_jsonl(out / f"{cfg.scenario}_summary.jsonl", [summary])
    return summary


def run_sweep(cfg, param: str, values: list[float]) -> dict:
    """Sweep over L (band width), N (population size) or K (strip width)."""
    if param not in _PARAM_TO_SCENARIO:
        raise ConfigError(f"sweep parameter must be one of L, N, K; got {param!r}")
    name, mode = _PARAM_TO_SCENARIO[param]
    if cfg.scenario != name:
        raise ConfigError(
            f"sweep over {param} runs scenario {name!r}, but config is for "
            f"{cfg.scenario!r}")
    cfg = replace(cfg, params={**cfg.params, "values": list(values)})
    return run_scenario(cfg, sweep_mode=mode)
