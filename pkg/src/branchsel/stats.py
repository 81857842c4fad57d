"""Functionals and estimators computed from populations and snapshot series.

The strip functionals weight particles by e^{mu x} sin(pi x / width): at
the critical drift for the strip width this weighted size has constant
mean, which is what several of the consistency checks lean on.  Velocity
estimation offers a regression route (slope of the replica-mean front
position) and a renewal route (mean displacement per return-to-one-particle
cycle over mean cycle duration); the regression route is the default since
returns to a single particle become hopeless once the band is wide.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .engine import Genealogy, Population, SnapshotSeries
from .errors import ConfigError, EstimationError
from .selection import CAUSE_BOUNDARY, KillRecord

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class StripFunctionals:
    """Weighted population size z and auxiliary weight v for one configuration."""

    z: float
    v: float
    mu: float
    width: float


@dataclass(frozen=True)
class VelocityEstimate:
    slope: float
    stderr: float
    window: tuple[float, float]
    method: str                 # "regression" | "renewal"
    replicas: int


@dataclass(frozen=True)
class HitCounts:
    r: int          # upper-barrier hits in [0, theta K^3]
    r_prime: int    # upper-barrier hits in [K^{5/2}, theta K^3]
    theta: float

    def __post_init__(self):
        if self.r_prime > self.r:
            raise ConfigError("window counts inconsistent: r_prime > r")


def _positions(pop) -> np.ndarray:
    pos = pop.pos if isinstance(pop, Population) else np.asarray(pop, dtype=float)
    return pos


def max_position(pop) -> float:
    """Exact max of the configuration; NaN for an extinct population."""
    pos = _positions(pop)
    if pos.shape[0] == 0:
        return math.nan
    return float(pos.max())


def z_functional(pop, mu: float, width: float) -> float:
    """Sum of e^{mu x} sin(pi x / width) over the configuration."""
    if width <= 0:
        raise ConfigError(f"width must be positive, got {width}")
    pos = _positions(pop)
    if np.any((pos < 0) | (pos > width)):
        warnings.warn("positions outside [0, width]; functional evaluated as-is",
                      stacklevel=2)
    return float((np.exp(mu * pos) * np.sin((math.pi / width) * pos)).sum())


def v_functional(pop, mu: float) -> float:
    """Sum of x e^{mu x} over the configuration."""
    pos = _positions(pop)
    return float((pos * np.exp(mu * pos)).sum())


def strip_functionals(pop, mu: float, width: float) -> StripFunctionals:
    return StripFunctionals(z=z_functional(pop, mu, width),
                            v=v_functional(pop, mu), mu=mu, width=width)


def m_centering(t: float) -> float:
    """sqrt(2) t - (3/(2 sqrt(2))) log t, the centering of the front position."""
    if t <= 0:
        raise ConfigError(f"time must be positive, got {t}")
    return SQRT2 * t - 3.0 / (2.0 * SQRT2) * math.log(t)


def hit_counter(kill_records, K: float, theta: float) -> HitCounts:
    """Count upper-barrier hits in [0, theta K^3] and [K^{5/2}, theta K^3].

    Accepts a sequence of KillRecord (boundary kills at level K are
    counted) or a plain array of upper-hit times.
    """
    if theta <= 0 or K <= 0:
        raise ConfigError(f"K and theta must be positive, got K={K}, theta={theta}")
    if isinstance(kill_records, np.ndarray):
        times = kill_records
    else:
        times = np.asarray([rec.time for rec in kill_records
                            if rec.cause == CAUSE_BOUNDARY
                            and rec.position_at_kill == K], dtype=float)
    t_end = theta * K ** 3
    t_mid = K ** 2.5
    r = int((times <= t_end).sum())
    r_prime = int(((times >= t_mid) & (times <= t_end)).sum())
    return HitCounts(r=r, r_prime=r_prime, theta=theta)


def _stacked_max(series_collection: Sequence[SnapshotSeries]) -> tuple[np.ndarray, np.ndarray]:
    if not series_collection:
        raise EstimationError("no series provided")
    times = series_collection[0].record_times
    rows = []
    for s in series_collection:
        if s.record_times.shape != times.shape or not np.array_equal(s.record_times, times):
            raise EstimationError("series do not share a common record grid")
        rows.append(s.max_pos)
    return times, np.vstack(rows)


def velocity_regression(series_collection: Sequence[SnapshotSeries],
                        burn_in: float) -> VelocityEstimate:
    """Least-squares slope of the replica-mean max position past burn_in;
    the standard error comes from the dispersion of per-replica slopes."""
    times, ys = _stacked_max(series_collection)
    sel = times >= burn_in
    t = times[sel]
    if t.shape[0] < 2:
        raise EstimationError(
            f"need at least 2 record times after burn_in={burn_in}")
    n_rep = ys.shape[0]
    if n_rep < 8:
        raise EstimationError(f"need at least 8 replicas for a stderr, got {n_rep}")
    y = ys[:, sel]
    if np.isnan(y).any():
        raise EstimationError("series contain extinct records inside the window")
    tc = t - t.mean()
    denom = float((tc * tc).sum())
    slopes = (y @ tc) / denom
    est = float(slopes.mean())
    se = float(slopes.std(ddof=1) / math.sqrt(n_rep))
    return VelocityEstimate(slope=est, stderr=se,
                            window=(float(t[0]), float(t[-1])),
                            method="regression", replicas=n_rep)


def renewal_cycles(series: SnapshotSeries, min_gap: float = 1.0
                   ) -> tuple[np.ndarray, np.ndarray]:
    """(duration, max-increment) pairs of completed return-to-one cycles.

    A cycle boundary is a recorded time with population size 1, with
    successive boundaries at least min_gap apart.
    """
    times = series.record_times
    sizes = series.size
    maxs = series.max_pos
    ones = np.flatnonzero(sizes == 1)
    if ones.size == 0:
        return np.empty(0), np.empty(0)
    bounds = [ones[0]]
    t_last = times[ones[0]]
    for i in ones[1:]:
        if times[i] >= t_last + min_gap:
            bounds.append(i)
            t_last = times[i]
    if len(bounds) < 2:
        return np.empty(0), np.empty(0)
    b = np.asarray(bounds)
    return np.diff(times[b]), np.diff(maxs[b])


def renewal_velocity(series_collection: Sequence[SnapshotSeries],
                     min_gap: float = 1.0) -> VelocityEstimate:
    """Pooled mean max-increment over pooled mean duration across completed
    renewal cycles; the stderr is the dispersion of per-replica ratios."""
    if not series_collection:
        raise EstimationError("no series provided")
    tot_dt = 0.0
    tot_dx = 0.0
    ratios = []
    t_hi = 0.0
    for s in series_collection:
        dts, dxs = renewal_cycles(s, min_gap)
        t_hi = max(t_hi, float(s.record_times[-1]) if s.n_records else 0.0)
        if dts.size == 0:
            continue
        tot_dt += float(dts.sum())
        tot_dx += float(dxs.sum())
        ratios.append(float(dxs.sum() / dts.sum()))
    if tot_dt == 0.0:
        raise EstimationError("no completed renewal cycles in any replica")
    est = tot_dx / tot_dt
    if len(ratios) >= 2:
        se = float(np.std(ratios, ddof=1) / math.sqrt(len(ratios)))
    else:
        se = math.inf
    return VelocityEstimate(slope=est, stderr=se, window=(0.0, t_hi),
                            method="renewal", replicas=len(ratios))


def envelope_check(genealogy: Optional[Genealogy], t: float, gamma: float,
                   r: float, d: float) -> bool:
    """True when some terminal particle ends above m(t) - d with its whole
    recorded ancestor path above (s/t) m(t) - max(r, min(s, t-s)^{1/2+gamma})."""
    if genealogy is None or not genealogy.positions:
        raise ConfigError("genealogy retention was not enabled for this run")
    if t < 1:
        raise ConfigError(f"envelope check needs t >= 1, got {t}")
    times = np.asarray(genealogy.times)
    s = times - times[0]
    if abs(s[-1] - t) > 1e-6:
        raise ConfigError(
            f"genealogy spans {s[-1]:g} time units but t={t:g} was requested")
    mt = m_centering(t)
    terminal = genealogy.positions[-1]
    cand = terminal >= mt - d
    if not cand.any():
        return False
    paths = genealogy.ancestor_matrix()[cand]
    half = 0.5 + gamma
    tube = np.maximum(r, np.minimum(s, t - s) ** half)
    envelope = (s / t) * mt - tube
    return bool(np.all(paths >= envelope, axis=1).any())


def gap_scaling_fit(estimates: Sequence[tuple[float, VelocityEstimate]]
                    ) -> tuple[float, np.ndarray]:
    """Weighted least squares of (sqrt(2) - v_hat) against 1/L^2 through the
    origin, weights 1/stderr^2.  Returns (coefficient, residuals)."""
    if len({L for L, _ in estimates}) < 3:
        raise EstimationError("need at least 3 distinct band widths to fit")
    L = np.asarray([v[0] for v in estimates], dtype=float)
    vhat = np.asarray([v[1].slope for v in estimates], dtype=float)
    se = np.asarray([v[1].stderr for v in estimates], dtype=float)
    if np.any(se < 0):
        raise EstimationError("negative stderr in fit input")
    if np.all(se == 0):
        w = np.ones_like(se)
    elif np.any(se == 0):
        raise EstimationError("mixed zero and nonzero stderrs; weights undefined")
    else:
        w = 1.0 / se ** 2
    x = 1.0 / L ** 2
    g = SQRT2 - vhat
    c = float((w * x * g).sum() / (w * x * x).sum())
    return c, g - c * x
