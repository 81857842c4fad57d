"""Killing rules and the canonical BBM / band-selection coupling.

Four rules: band selection (kill strictly more than L below the running
max of the selected system), best-N (keep the N highest), strip absorption
(kill on exiting a fixed interval, bridge-corrected between grid points)
and a deterministic linear barrier.  The band rule is self-referential but
one pass suffices: removing low particles never changes the max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import kernel
from .engine import (DEFAULT_CAP, DEFAULT_DT, Population, SnapshotSeries,
                     _Recorder, _validate_grid, ProcessParams)
from .errors import ConfigError, ConsistencyError
from .rng import RngStream

CAUSE_SELECTION = "selection"
CAUSE_BOUNDARY = "boundary"

# Bridge kills with probability below 1e-16 are skipped without drawing:
# offset products above diffusion*dt*_BRIDGE_CUT cannot cross in practice.
# The compiled runner uses the same constant, keeping draw order identical.
_BRIDGE_CUT = 18.420680743952367  # -0.5 * ln(1e-16)


@dataclass(frozen=True)
class NoSelection:
    pass


@dataclass(frozen=True)
class LBand:
    """Kill every particle strictly further than L below the selected
    system's own maximum; a particle exactly at max - L survives."""

    L: float

    def __post_init__(self):
        if not self.L > 0:
            raise ConfigError(f"band width must be positive, got {self.L}")


@dataclass(frozen=True)
class NBest:
    """Keep the N highest particles; ties broken by larger id surviving."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"selection size must be >= 1, got {self.n}")


@dataclass(frozen=True)
class Strip:
    """Absorb on exiting (lo, hi); enforcement is bridge-corrected."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"strip requires lo < hi, got ({self.lo}, {self.hi})")


@dataclass(frozen=True)
class LinearBarrier:
    """Absorb at the moving level intercept + slope * t, killing on the
    given side ('below' or 'above')."""

    intercept: float
    slope: float = 0.0
    side: str = "below"

    def __post_init__(self):
        if self.side not in ("below", "above"):
            raise ConfigError(f"barrier side must be 'below' or 'above', got {self.side!r}")


SelectionRule = Union[NoSelection, LBand, NBest, Strip, LinearBarrier]


@dataclass(frozen=True)
class KillRecord:
    time: float
    particle: int
    position_at_kill: float
    cause: str


class KillLog:
    """Exact kill counts plus a reservoir-sampled list of full records.

    Counts (and the upper-barrier hit times used by the hit-count
    estimators) are always exact; only the detailed KillRecord list is
    downsampled once it exceeds the cap.
    """

    __slots__ = ("cap", "_sampler", "n_selection", "n_boundary",
                 "hi_times", "records", "_seen")

    def __init__(self, cap: int = 100_000, sampler=None):
        self.cap = cap
        self._sampler = sampler
        self.n_selection = 0
        self.n_boundary = 0
        self.hi_times: list[float] = []
        self.records: list[KillRecord] = []
        self._seen = 0

    def _push(self, rec: KillRecord):
        if len(self.records) < self.cap:
            self.records.append(rec)
        else:
            j = int(self._sampler.integers(0, self._seen + 1)) if self._sampler is not None else self._seen
            if j < self.cap:
                self.records[j] = rec
        self._seen += 1

    def add_selection(self, time: float, ids, positions):
        k = len(ids)
        self.n_selection += k
        if self.cap > 0:
            for i, x in zip(ids, positions):
                self._push(KillRecord(time, int(i), float(x), CAUSE_SELECTION))

    def add_boundary(self, time: float, ids, level: float, upper: bool):
        k = len(ids)
        self.n_boundary += k
        if upper:
            self.hi_times.extend([time] * k)
        if self.cap > 0:
            for i in ids:
                self._push(KillRecord(time, int(i), level, CAUSE_BOUNDARY))

    @property
    def total(self) -> int:
        return self.n_selection + self.n_boundary

    def upper_hit_times(self) -> np.ndarray:
        return np.asarray(self.hi_times, dtype=float)


# ---------------------------------------------------------------------------
# Array-level rule application (shared by the public ops and the driver)
# ---------------------------------------------------------------------------

def cull_initial(rule, t0, pos, kills: Optional[KillLog], ids) -> Optional[np.ndarray]:
    """Kill mask for configurations that violate the rule already at t0
    (low band particles die instantly; strip/barrier starts must be inside).
    Returns a keep mask or None when nothing is killed."""
    if isinstance(rule, LBand):
        keep = pos >= pos.max() - rule.L
    elif isinstance(rule, NBest):
        return _n_best_keep(pos, ids, rule.n, t0, kills)
    elif isinstance(rule, Strip):
        keep = (pos > rule.lo) & (pos < rule.hi)
        if kills is not None and not keep.all():
            out = ~keep
            at_hi = pos >= rule.hi
            _log_boundary(kills, t0, ids, out & at_hi, rule.hi, True)
            _log_boundary(kills, t0, ids, out & ~at_hi, rule.lo, False)
        return None if keep.all() else keep
    elif isinstance(rule, LinearBarrier):
        level = rule.intercept + rule.slope * t0
        keep = pos > level if rule.side == "below" else pos < level
        if kills is not None and not keep.all():
            _log_boundary(kills, t0, ids, ~keep, level, rule.side == "above")
        return None if keep.all() else keep
    else:
        return None
    if keep.all():
        return None
    if kills is not None:
        kill = ~keep
        kills.add_selection(t0, ids[kill], pos[kill])
    return keep


def _n_best_keep(pos, ids, n_keep, time, kills) -> Optional[np.ndarray]:
    n = pos.shape[0]
    if n <= n_keep:
        return None
    order = np.lexsort((ids, pos))        # ascending by position, then id
    kill_idx = order[:n - n_keep]         # lowest go first; smaller id loses ties
    keep = np.ones(n, dtype=bool)
    keep[kill_idx] = False
    if kills is not None:
        kills.add_selection(time, ids[kill_idx], pos[kill_idx])
    return keep


def _log_boundary(kills, time, ids, mask, level, upper):
    if mask.any():
        kills.add_boundary(time, ids[mask], level, upper)


def apply_rule_arrays(rule, ts, te, pos, prev, ids, diffusion, rng,
                      kills: Optional[KillLog]) -> Optional[np.ndarray]:
    """Apply one enforcement of the rule to the step from ts to te.

    prev holds lineage-aligned positions at ts.  Returns a keep mask, or
    None when nothing is killed.
    """
    if isinstance(rule, LBand):
        keep = pos >= pos.max() - rule.L
        if keep.all():
            return None
        if kills is not None:
            kill = ~keep
            kills.add_selection(te, ids[kill], pos[kill])
        return keep

    if isinstance(rule, NBest):
        return _n_best_keep(pos, ids, rule.n, te, kills)

    if isinstance(rule, Strip):
        dt = te - ts
        sdt = diffusion * dt
        cut = sdt * _BRIDGE_CUT
        lo, hi = rule.lo, rule.hi
        inside = (pos > lo) & (pos < hi)
        hit_hi = pos >= hi
        hit_lo = pos <= lo
        idx = np.flatnonzero(inside)
        if idx.size:
            p_in = pos[idx]
            q_in = prev[idx]
            prod_hi = (hi - q_in) * (hi - p_in)
            cross_hi = _bridge_kills(prod_hi, cut, sdt, rng)
            prod_lo = (q_in - lo) * (p_in - lo)
            prod_lo[cross_hi] = np.inf     # already dead: not eligible below
            cross_lo = _bridge_kills(prod_lo, cut, sdt, rng)
            hit_hi[idx[cross_hi]] = True
            hit_lo[idx[cross_lo]] = True
        keep = ~(hit_hi | hit_lo)
        if keep.all():
            return None
        if kills is not None:
            _log_boundary(kills, te, ids, hit_hi, hi, True)
            _log_boundary(kills, te, ids, hit_lo, lo, False)
        return keep

    if isinstance(rule, LinearBarrier):
        dt = te - ts
        sdt = diffusion * dt
        cut = sdt * _BRIDGE_CUT
        b0 = rule.intercept + rule.slope * ts
        b1 = rule.intercept + rule.slope * te
        if rule.side == "below":
            safe = pos > b1
        else:
            safe = pos < b1
        hit = ~safe
        idx = np.flatnonzero(safe)
        if idx.size:
            if rule.side == "below":
                prod = (prev[idx] - b0) * (pos[idx] - b1)
            else:
                prod = (b0 - prev[idx]) * (b1 - pos[idx])
            cross = _bridge_kills(prod, cut, sdt, rng)
            hit[idx[cross]] = True
        if not hit.any():
            return None
        if kills is not None:
            _log_boundary(kills, te, ids, hit, b1, rule.side == "above")
        return ~hit

    return None


def _bridge_kills(prod: np.ndarray, cut: float, sdt: float,
                  rng: RngStream) -> np.ndarray:
    """Bernoulli bridge-crossing kills given offset products; draws one
    uniform per eligible entry (prod <= cut), in array order."""
    elig = prod <= cut
    out = np.zeros(prod.shape[0], dtype=bool)
    n_el = int(elig.sum())
    if n_el:
        p = np.exp(-2.0 * prod[elig] / sdt)
        out[elig] = rng.uniforms(n_el) < p
    return out


# ---------------------------------------------------------------------------
# Public operations on Population values
# ---------------------------------------------------------------------------

def _subset(pop: Population, keep: Optional[np.ndarray]) -> Population:
    if keep is None:
        return pop.copy()
    if not keep.any():
        out = Population(pop.time, pop.pos[:0].copy(), pop.clock[:0].copy(),
                         pop.ids[:0].copy(), pop.parent[:0].copy(),
                         pop.next_id, extinct=True, extinction_time=pop.time)
        return out
    return Population(pop.time, pop.pos[keep], pop.clock[keep],
                      pop.ids[keep], pop.parent[keep], pop.next_id)


def _records_from(kills: KillLog) -> list[KillRecord]:
    return list(kills.records)


def apply_l_selection(pop: Population, L: float) -> tuple[Population, list[KillRecord]]:
    """Remove every particle strictly below (surviving max) - L.

    One pass is exact: the rule is self-referential, but removing low
    particles never moves the max, so survivor membership is order-free.
    """
    if pop.size == 0:
        raise ConfigError("population is empty")
    rule = LBand(L)
    kills = KillLog()
    keep = cull_initial(rule, pop.time, pop.pos, kills, pop.ids)
    return _subset(pop, keep), _records_from(kills)


def apply_n_selection(pop: Population, N: int) -> tuple[Population, list[KillRecord]]:
    """Keep the N highest particles (newest id survives a tie)."""
    if pop.size == 0:
        raise ConfigError("population is empty")
    rule = NBest(N)
    kills = KillLog()
    keep = cull_initial(rule, pop.time, pop.pos, kills, pop.ids)
    return _subset(pop, keep), _records_from(kills)


def apply_strip(prev_positions: Sequence[float], pop: Population,
                lo: float, hi: float, dt: float, rng: RngStream,
                diffusion: float = 1.0) -> tuple[Population, list[KillRecord]]:
    """Strip enforcement for the step that ended at pop.time.

    Endpoints outside [lo, hi] are killed outright; interior endpoints are
    killed with the Brownian-bridge crossing probability for each barrier,
    with kill positions recorded at the barrier level.
    """
    prev = np.asarray(prev_positions, dtype=float)
    if prev.shape[0] != pop.size:
        raise ConsistencyError(
            f"prev_positions has {prev.shape[0]} entries for {pop.size} particles")
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    rule = Strip(lo, hi)
    kills = KillLog()
    keep = apply_rule_arrays(rule, pop.time - dt, pop.time, pop.pos, prev,
                             pop.ids, diffusion, rng, kills)
    return _subset(pop, keep), _records_from(kills)


def apply_linear_barrier(prev_positions: Sequence[float], pop: Population,
                         intercept: float, slope: float, side: str,
                         dt: float, rng: RngStream,
                         diffusion: float = 1.0) -> tuple[Population, list[KillRecord]]:
    """Linear-barrier enforcement for the step that ended at pop.time."""
    prev = np.asarray(prev_positions, dtype=float)
    if prev.shape[0] != pop.size:
        raise ConsistencyError(
            f"prev_positions has {prev.shape[0]} entries for {pop.size} particles")
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    rule = LinearBarrier(intercept, slope, side)
    kills = KillLog()
    keep = apply_rule_arrays(rule, pop.time - dt, pop.time, pop.pos, prev,
                             pop.ids, diffusion, rng, kills)
    return _subset(pop, keep), _records_from(kills)


# ---------------------------------------------------------------------------
# Canonical coupling
# ---------------------------------------------------------------------------

def simulate_coupled_lbbm(pop0: Population, horizon: float,
                          params: ProcessParams, L: float, grid,
                          rng: RngStream, *,
                          dt: float = DEFAULT_DT,
                          cap: int = DEFAULT_CAP,
                          record_configs: bool = True
                          ) -> tuple[SnapshotSeries, SnapshotSeries]:
    """One realization drives both processes: the full branching diffusion
    and the band-selected system defined on it by membership flags that
    children inherit.  The selected configuration is a sub-multiset of the
    full one at every time by construction; L = inf makes them identical.
    """
    if pop0.extinct or pop0.size == 0:
        raise ConfigError("cannot simulate from an extinct population")
    if not L > 0:
        raise ConfigError(f"band width must be positive, got {L}")
    if horizon <= 0 or dt <= 0:
        raise ConfigError("horizon and dt must be positive")
    t0 = pop0.time
    grid = _validate_grid(grid, t0, horizon)

    w = pop0.copy()
    pos, clock, ids, parent = w.pos, w.clock, w.ids, w.parent
    next_id = w.next_id
    member = np.ones(pos.shape[0], dtype=bool)
    if math.isfinite(L):
        member &= pos >= pos.max() - L

    rec_full = _Recorder(grid.size, None, record_configs, False)
    rec_band = _Recorder(grid.size, None, record_configs, False)
    kills = KillLog()

    gi = 0
    if abs(grid[0] - t0) < 1e-12:
        rec_full.record(t0, pos)
        rec_band.record(t0, pos[member])
        gi = 1
    if gi < grid.size:
        grid_steps = np.rint((grid[gi:] - t0) / dt).astype(np.int64)
        if not np.allclose(t0 + grid_steps * dt, grid[gi:], rtol=0, atol=1e-9):
            raise ConfigError(
                "recording grid times must be multiples of the enforcement step dt")
        targets = set(grid_steps.tolist())
        n_steps = int(grid_steps[-1])
        rate, drift, diff = params.branch_rate, params.drift, params.diffusion
        step = kernel.advance_step
        t = t0
        for k in range(1, n_steps + 1):
            t1 = t0 + k * dt
            pos, clock, ids, parent, _prev, src, next_id = step(
                pos, clock, ids, parent, t, t1, rate, drift, diff,
                next_id, cap, rng)
            member = member[src]
            if member.any() and math.isfinite(L):
                band_max = pos[member].max()
                drop = member & (pos < band_max - L)
                if drop.any():
                    kills.add_selection(t1, ids[drop], pos[drop])
                    member &= ~drop
            t = t1
            if k in targets:
                rec_full.record(t1, pos)
                rec_band.record(t1, pos[member])

    full = rec_full.finish(False, None, None)
    band = rec_band.finish(False, None, kills)
    return full, band
