"""Closed-form reference values and brute-force baselines used as test oracles.

Everything here is either an exact formula evaluated in double precision or
a deliberately naive fine-step simulator kept independent of the main
engine, so the two can cross-validate each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import RngStream

SQRT2 = math.sqrt(2.0)

# Narrowest strip that admits a real critical drift.
MIN_STRIP_WIDTH = math.pi / SQRT2


@dataclass(frozen=True)
class TheoryParams:
    """Strip geometry: interval (0, K_A) with K_A = K - A/sqrt(2)."""

    K: float
    A: float = 0.0
    L: float = 0.0

    @property
    def K_A(self) -> float:
        return self.K - self.A / SQRT2


def mu_for_width(K: float) -> float:
    """Critical drift sqrt(2 - pi^2/K^2) for the strip of width K.

    Raises when the radicand is negative (K below pi/sqrt(2): no real
    drift keeps such a narrow strip critical); the root itself maps to 0.
    """
    if K <= 0:
        raise ConfigError(f"strip width must be positive, got {K}")
    radicand = 2.0 - math.pi ** 2 / K ** 2
    if radicand < 0:
        raise ConfigError(
            f"strip width {K} < pi/sqrt(2) ~ {MIN_STRIP_WIDTH:.6f}: drift is imaginary"
        )
    return math.sqrt(radicand)


def theoretical_velocity(L: float) -> float:
    """Leading-order band-selection velocity sqrt(2) - pi^2/(2 sqrt(2) L^2)."""
    if L <= 0:
        raise ConfigError(f"band width must be positive, got {L}")
    return SQRT2 - math.pi ** 2 / (2.0 * SQRT2 * L ** 2)


def velocity_gap_constant() -> float:
    """pi^2/(2 sqrt(2)), the coefficient of the 1/L^2 velocity gap."""
    return math.pi ** 2 / (2.0 * SQRT2)


def velocity_bracket(L: float, eps: float, clamp: bool = False) -> tuple[float, float]:
    """Strip-comparison bracket (mu(L(1-eps)) - eps/L^2, mu(L(1+eps)) + eps/L^2).

    With clamp=True a lower strip too narrow for a real drift contributes a
    trivial lower edge (mu treated as 0) instead of raising.
    """
    if L <= 0 or eps < 0:
        raise ConfigError(f"invalid bracket parameters L={L}, eps={eps}")
    narrow = L * (1.0 - eps)
    if narrow <= MIN_STRIP_WIDTH:
        if not clamp:
            raise ConfigError(
                f"lower strip width L(1-eps)={narrow} <= pi/sqrt(2); "
                "no critical drift exists (pass clamp=True for a trivial edge)"
            )
        mu_lo = 0.0
    else:
        mu_lo = mu_for_width(narrow)
    mu_hi = mu_for_width(L * (1.0 + eps))
    corr = eps / L ** 2
    return (mu_lo - corr, mu_hi + corr)


def equivalent_N(L: float) -> float:
    """Population size e^{sqrt(2) L} whose best-N selection matches band width L."""
    if L < 0:
        raise ConfigError(f"band width must be nonnegative, got {L}")
    return math.exp(SQRT2 * L)


def extinction_constant() -> float:
    """2 sqrt(2)/(3 pi^2): extinction time of the critically drifted process
    started at x is close to this constant times x^3."""
    return 2.0 * SQRT2 / (3.0 * math.pi ** 2)


def yule_pmf(t: float, k: int) -> float:
    """P(population size = k at time t) for rate-1 binary branching,
    i.e. geometric with parameter e^{-t}."""
    if t <= 0:
        raise ConfigError(f"time must be positive, got {t}")
    if k < 1:
        raise ConfigError(f"population size must be >= 1, got {k}")
    p = math.exp(-t)
    return (1.0 - p) ** (k - 1) * p


def expected_upper_hits(K: float, x0: float, t_hi: float, t_lo: float = 0.0,
                        terms: int = 4000) -> float:
    """Exact mean number of particles absorbed at K during [t_lo, t_hi] for
    the strip (0, K) at critical drift, started from one particle at x0.

    Spectral expansion of the absorbed flux: with branching at rate 1 and
    drift -mu(K), the n-th strip eigenmode decays like
    exp(-(n^2-1) pi^2 t / (2 K^2)), so the ground-mode flux is constant in
    time and equals (pi/K^2) e^{-mu K} e^{mu x0} sin(pi x0/K).
    """
    if not (0.0 < x0 < K):
        raise ConfigError(f"start {x0} must lie inside (0, {K})")
    if t_lo < 0 or t_hi < 0:
        raise ConfigError(f"bad time window [{t_lo}, {t_hi}]")
    if t_lo >= t_hi:
        return 0.0
    mu = mu_for_width(K)
    pref = math.exp(-mu * (K - x0)) * math.pi / K ** 2
    total = math.sin(math.pi * x0 / K) * (t_hi - t_lo)
    for n in range(2, terms):
        lam = (n * n - 1) * math.pi ** 2 / (2.0 * K ** 2)
        total += (n * (-1) ** (n + 1) * math.sin(n * math.pi * x0 / K)
                  * (math.exp(-lam * t_lo) - math.exp(-lam * t_hi)) / lam)
    return pref * total


@dataclass
class BruteForceResult:
    """Empirical outcome distribution from the fine-step baseline."""

    replicas: int
    final_sizes: np.ndarray          # per-replica population size at the horizon
    survival: float                  # fraction of replicas with size > 0
    survival_se: float
    size_pmf: dict[int, float]       # empirical pmf of the final size
    final_positions: np.ndarray      # flat positions of all survivors
    final_replica: np.ndarray        # replica index aligned with final_positions


def brute_force_small_instance(
    positions,
    horizon: float,
    replicas: int,
    rng: RngStream,
    *,
    dt: float = 1e-4,
    branch_rate: float = 1.0,
    drift: float = 0.0,
    diffusion: float = 1.0,
    strip: tuple[float, float] | None = None,
    max_particles: int = 2_000_000,
) -> BruteForceResult:
    """Naive fine-step simulator: Euler steps of size dt, branching decided
    per step by a Bernoulli(rate*dt) draw, barrier kills by endpoint checks
    only (no bridge correction).  Deliberately shares nothing with the engine.

    All replicas run fused in flat arrays; only sizes are tracked, which is
    what the cross-checks need.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.size == 0 or not np.all(np.isfinite(positions)):
        raise ConfigError("initial positions must be nonempty and finite")
    if horizon < 0:
        raise ConfigError(f"horizon must be nonnegative, got {horizon}")
    n_steps = int(round(horizon / dt))
    n0 = positions.size

    pos = np.tile(positions, replicas)
    rep = np.repeat(np.arange(replicas, dtype=np.int64), n0)

    sdt = math.sqrt(diffusion * dt)
    mdt = drift * dt
    p_branch = branch_rate * dt
    for _ in range(n_steps):
        n = pos.shape[0]
        if n == 0:
            break
        if n > max_particles:
            raise ConfigError(f"brute-force budget exceeded: {n} particles")
        pos = pos + mdt + sdt * rng.normals(n)
        if strip is not None:
            lo, hi = strip
            keep = (pos > lo) & (pos < hi)
            pos = pos[keep]
            rep = rep[keep]
            n = pos.shape[0]
            if n == 0:
                break
        split = rng.uniforms(n) < p_branch
        if split.any():
            pos = np.concatenate([pos, pos[split]])
            rep = np.concatenate([rep, rep[split]])

    sizes = np.bincount(rep, minlength=replicas).astype(np.int64)
    alive = sizes > 0
    surv = float(alive.mean()) if replicas else 0.0
    se = math.sqrt(max(surv * (1.0 - surv), 0.0) / replicas) if replicas else 0.0
    vals, counts = np.unique(sizes, return_counts=True)
    pmf = {int(v): float(c) / replicas for v, c in zip(vals, counts)}
    return BruteForceResult(replicas, sizes, surv, se, pmf, pos, rep)
