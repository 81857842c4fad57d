"""Event-driven simulation of drifted branching Brownian motion.

Particles carry exact exponential branch clocks; a step segments each
particle's Brownian displacement at its branch events, so branching times
are never discretized.  Selection rules are enforced on a configurable
time grid (default step 0.01) by the ``simulate`` driver; pure no-selection
runs advance record point to record point in single kernel calls.

All operations are pure functions of (state, rng): parallelism is obtained
by running independent replicas on independent RngStreams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import kernel
from .errors import ConfigError
from .rng import TAG_KILL_SAMPLING, RngStream

DEFAULT_CAP = 1 << 22
DEFAULT_DT = 0.01


@dataclass(frozen=True)
class ProcessParams:
    """Branch rate (events/time), drift (space/time) and diffusion
    (variance/time) of the underlying branching diffusion."""

    branch_rate: float = 1.0
    drift: float = 0.0
    diffusion: float = 1.0

    def __post_init__(self):
        if not (self.branch_rate > 0):
            raise ConfigError(f"branch_rate must be positive, got {self.branch_rate}")
        if not (self.diffusion > 0):
            raise ConfigError(f"diffusion must be positive, got {self.diffusion}")
        if not np.isfinite(self.drift):
            raise ConfigError(f"drift must be finite, got {self.drift}")


class Particle(NamedTuple):
    id: int
    position: float
    next_branch_time: float     # NaN until drawn at the first advance
    parent: int                 # -1 for founders


class Population:
    """Timestamped multiset of particles, array-backed.

    ``clock`` holds absolute next-branch times (NaN = drawn lazily at the
    first advance).  Ids are unique within a run and children always get
    larger ids than their parent.
    """

    __slots__ = ("time", "pos", "clock", "ids", "parent", "next_id",
                 "extinct", "extinction_time")

    def __init__(self, time, pos, clock, ids, parent, next_id,
                 extinct=False, extinction_time=None):
        self.time = float(time)
        self.pos = pos
        self.clock = clock
        self.ids = ids
        self.parent = parent
        self.next_id = int(next_id)
        self.extinct = bool(extinct)
        self.extinction_time = extinction_time

    @property
    def size(self) -> int:
        return self.pos.shape[0]

    def particles(self) -> list[Particle]:
        return [Particle(int(i), float(x), float(c), int(p))
                for i, x, c, p in zip(self.ids, self.pos, self.clock, self.parent)]

    def copy(self) -> "Population":
        return Population(self.time, self.pos.copy(), self.clock.copy(),
                          self.ids.copy(), self.parent.copy(), self.next_id,
                          self.extinct, self.extinction_time)

    def __repr__(self):
        state = "extinct" if self.extinct else f"{self.size} particles"
        return f"Population(t={self.time:g}, {state})"


def init_population(positions: Sequence[float], t0: float = 0.0) -> Population:
    """Fresh population at time t0; branch clocks are drawn lazily."""
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 1 or pos.size == 0:
        raise ConfigError("initial positions must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(pos)):
        raise ConfigError("initial positions must be finite")
    n = pos.size
    return Population(
        time=t0,
        pos=pos.copy(),
        clock=np.full(n, np.nan),
        ids=np.arange(n, dtype=np.int64),
        parent=np.full(n, -1, dtype=np.int64),
        next_id=n,
    )


def _extinct_population(time: float) -> Population:
    empty_f = np.empty(0)
    empty_i = np.empty(0, dtype=np.int64)
    return Population(time, empty_f, empty_f.copy(), empty_i, empty_i.copy(),
                      next_id=0, extinct=True, extinction_time=time)


def advance(pop: Population, dt: float, params: ProcessParams, rng: RngStream,
            cap: int = DEFAULT_CAP) -> Population:
    """Advance a population by dt with exact branch handling (no selection)."""
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if pop.extinct or pop.size == 0:
        raise ConfigError("cannot advance an extinct population")
    w = pop.copy()
    pos, clock, ids, parent, _prev, _src, next_id = kernel.advance_step(
        w.pos, w.clock, w.ids, w.parent, pop.time, pop.time + dt,
        params.branch_rate, params.drift, params.diffusion,
        pop.next_id, cap, rng)
    return Population(pop.time + dt, pos, clock, ids, parent, next_id)


def advance_with_lineage(pop: Population, dt: float, params: ProcessParams,
                         rng: RngStream, cap: int = DEFAULT_CAP
                         ) -> tuple[Population, np.ndarray]:
    """Like advance, but also returns each survivor's ancestor position at
    the start of the step (the lineage endpoints used by barrier rules)."""
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if pop.extinct or pop.size == 0:
        raise ConfigError("cannot advance an extinct population")
    w = pop.copy()
    pos, clock, ids, parent, prev, _src, next_id = kernel.advance_step(
        w.pos, w.clock, w.ids, w.parent, pop.time, pop.time + dt,
        params.branch_rate, params.drift, params.diffusion,
        pop.next_id, cap, rng)
    return Population(pop.time + dt, pos, clock, ids, parent, next_id), prev


@dataclass
class Genealogy:
    """Ancestor paths sampled at the record grid.

    ``links[j][i]`` is the index in snapshot j-1 of the ancestor of particle
    i of snapshot j; ``links[0]`` is an identity map.
    """

    times: list[float] = field(default_factory=list)
    positions: list[np.ndarray] = field(default_factory=list)
    links: list[np.ndarray] = field(default_factory=list)

    def ancestor_matrix(self) -> np.ndarray:
        """(n_terminal, n_snapshots) matrix of ancestor positions."""
        if not self.positions:
            return np.empty((0, 0))
        m = len(self.positions)
        cur = np.arange(self.positions[-1].shape[0], dtype=np.int64)
        out = np.empty((cur.shape[0], m))
        for j in range(m - 1, -1, -1):
            out[:, j] = self.positions[j][cur]
            if j > 0:
                cur = self.links[j][cur]
        return out


@dataclass(eq=False)
class SnapshotSeries:
    """Observables recorded on an ascending time grid.

    Truncated at extinction (the extinct flag and time are set); ``kills``
    carries the run's kill log when a selection rule was active.
    """

    record_times: np.ndarray
    size: np.ndarray
    max_pos: np.ndarray
    min_pos: np.ndarray
    z: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    configs: Optional[list] = None
    extinct: bool = False
    extinction_time: Optional[float] = None
    kills: Optional[object] = None
    genealogy: Optional[Genealogy] = None

    @property
    def n_records(self) -> int:
        return len(self.record_times)


class _Recorder:
    def __init__(self, n_slots, functional, record_configs, genealogy_on):
        self.times = np.empty(n_slots)
        self.size = np.empty(n_slots, dtype=np.int64)
        self.max_pos = np.empty(n_slots)
        self.min_pos = np.empty(n_slots)
        self.functional = functional
        self.z = np.empty(n_slots) if functional is not None else None
        self.v = np.empty(n_slots) if functional is not None else None
        self.configs = [] if record_configs else None
        self.genealogy = Genealogy() if genealogy_on else None
        self.i = 0

    def record(self, t, pos, link=None):
        i = self.i
        self.times[i] = t
        n = pos.shape[0]
        self.size[i] = n
        if n:
            self.max_pos[i] = pos.max()
            self.min_pos[i] = pos.min()
        else:
            self.max_pos[i] = np.nan
            self.min_pos[i] = np.nan
        if self.functional is not None:
            mu, width = self.functional
            s = np.sin((np.pi / width) * pos)
            w = np.exp(mu * pos)
            self.z[i] = float((w * s).sum())
            self.v[i] = float((pos * w).sum())
        if self.configs is not None:
            self.configs.append(pos.copy())
        if self.genealogy is not None:
            g = self.genealogy
            g.times.append(float(t))
            g.positions.append(pos.copy())
            g.links.append(np.arange(n, dtype=np.int64) if link is None else link)
        self.i += 1

    def finish(self, extinct, extinction_time, kills):
        i = self.i
        return SnapshotSeries(
            record_times=self.times[:i],
            size=self.size[:i],
            max_pos=self.max_pos[:i],
            min_pos=self.min_pos[:i],
            z=self.z[:i] if self.z is not None else None,
            v=self.v[:i] if self.v is not None else None,
            configs=self.configs,
            extinct=extinct,
            extinction_time=extinction_time,
            kills=kills,
            genealogy=self.genealogy,
        )


def _validate_grid(grid, t0, horizon) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ConfigError("recording grid must be a nonempty 1-d sequence")
    if np.any(np.diff(g) <= 0):
        raise ConfigError("recording grid must be strictly increasing")
    if g[0] < t0 - 1e-12 or g[-1] > t0 + horizon + 1e-9:
        raise ConfigError(
            f"recording grid must lie within [{t0}, {t0 + horizon}]")
    return g


def simulate(pop0: Population, horizon: float, params: ProcessParams,
             rule, grid, rng: RngStream, *,
             dt: float = DEFAULT_DT,
             cap: int = DEFAULT_CAP,
             functional: Optional[tuple[float, float]] = None,
             record_configs: bool = False,
             genealogy: bool = False,
             kill_record_cap: int = 100_000) -> SnapshotSeries:
    """Drive a population to the end of the recording grid, enforcing the
    selection rule after every step of size dt and recording observables at
    the grid times.

    With no selection the driver advances record point to record point in
    single exact steps, so a one-point grid reproduces a direct ``advance``
    call.  Extinction truncates the series and sets the extinct flag; a
    breached population cap raises CapacityError.
    """
    from .selection import KillLog, NoSelection, cull_initial, apply_rule_arrays

    if horizon <= 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if pop0.extinct or pop0.size == 0:
        raise ConfigError("cannot simulate from an extinct population")
    t0 = pop0.time
    grid = _validate_grid(grid, t0, horizon)

    no_rule = rule is None or isinstance(rule, NoSelection)
    kills = None if no_rule else KillLog(
        cap=kill_record_cap,
        sampler=np.random.Generator(np.random.Philox(
            key=_kill_sampler_key(rng))))

    w = pop0.copy()
    pos, clock, ids, parent = w.pos, w.clock, w.ids, w.parent
    next_id = w.next_id

    rec = _Recorder(grid.size, functional, record_configs, genealogy)

    # Cull configurations that violate the rule before the run starts.
    if not no_rule:
        keep = cull_initial(rule, t0, pos, kills, ids)
        if keep is not None:
            pos, clock, ids, parent = pos[keep], clock[keep], ids[keep], parent[keep]

    gi = 0
    if abs(grid[0] - t0) < 1e-12:
        rec.record(t0, pos)
        gi = 1
    if pos.shape[0] == 0:
        return rec.finish(True, t0, kills)
    if gi == grid.size:
        return rec.finish(False, None, kills)

    rate, drift, diff = params.branch_rate, params.drift, params.diffusion
    step = kernel.advance_step

    if no_rule:
        t = t0
        link = None
        for g in grid[gi:]:
            pos, clock, ids, parent, _prev, src, next_id = step(
                pos, clock, ids, parent, t, g, rate, drift, diff,
                next_id, cap, rng)
            t = g
            rec.record(t, pos, link=src if genealogy else None)
        return rec.finish(False, None, kills)

    # Stepped path: selection enforced every dt, records at aligned grid times.
    grid_steps = np.rint((grid[gi:] - t0) / dt).astype(np.int64)
    if not np.allclose(t0 + grid_steps * dt, grid[gi:], rtol=0, atol=1e-9):
        raise ConfigError(
            "recording grid times must be multiples of the enforcement step dt")
    n_steps = int(grid_steps[-1])

    from .selection import LBand, LinearBarrier, Strip
    if (kernel.HAS_FUSED and not genealogy and kill_record_cap == 0
            and isinstance(rule, (LBand, Strip, LinearBarrier))):
        code, r_lo, r_hi, r_slope, r_band = _fused_rule_params(rule)
        (pos, clock, ids, parent, next_id, went_extinct, t_end,
         c_sel, c_lo, c_hi) = kernel.run_selected(
            pos, clock, ids, parent, t0, dt, n_steps, rate, drift, diff,
            next_id, cap, code, r_lo, r_hi, r_slope, r_band,
            rng, rec, grid_steps, kills.hi_times)
        kills.n_selection += c_sel
        kills.n_boundary += c_lo + c_hi
        if went_extinct:
            return rec.finish(True, t_end, kills)
        return rec.finish(False, None, kills)

    targets = dict(zip(grid_steps.tolist(), range(gi, grid.size)))

    link = np.arange(pos.shape[0], dtype=np.int64) if genealogy else None
    t = t0
    for k in range(1, n_steps + 1):
        t1 = t0 + k * dt
        pos, clock, ids, parent, prev, src, next_id = step(
            pos, clock, ids, parent, t, t1, rate, drift, diff,
            next_id, cap, rng)
        if genealogy:
            link = link[src]
        keep = apply_rule_arrays(rule, t, t1, pos, prev, ids,
                                 diff, rng, kills)
        if keep is not None:
            pos, clock, ids, parent = pos[keep], clock[keep], ids[keep], parent[keep]
            if genealogy:
                link = link[keep]
        t = t1
        if pos.shape[0] == 0:
            return rec.finish(True, t1, kills)
        if k in targets:
            rec.record(t1, pos, link=link)
            if genealogy:
                link = np.arange(pos.shape[0], dtype=np.int64)
    return rec.finish(False, None, kills)


def _kill_sampler_key(rng: RngStream) -> int:
    from .rng import philox_key
    return philox_key(rng.master_seed, rng.replica, TAG_KILL_SAMPLING)


def _fused_rule_params(rule):
    from .selection import LBand, LinearBarrier, Strip
    if isinstance(rule, LBand):
        return 1, 0.0, 0.0, 0.0, rule.L
    if isinstance(rule, Strip):
        return 3, rule.lo, rule.hi, 0.0, 0.0
    if rule.side == "below":
        return 4, rule.intercept, 0.0, rule.slope, 0.0
    return 5, 0.0, rule.intercept, rule.slope, 0.0
