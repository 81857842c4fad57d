"""Brownian-bridge first-passage probabilities for barrier enforcement.

Between grid points a particle's path is a Brownian bridge given its two
endpoints (the drift cancels under the conditioning), so a barrier can be
hit even when both endpoints are on the safe side.  The closed form for the
single-barrier touch probability is exp(-2 x0 x1 / (sigma^2 dt)) with x0,
x1 the endpoint offsets from the barrier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import RngStream


@dataclass(frozen=True)
class BridgeQuery:
    """Endpoint offsets from the barrier (both strictly positive), the step
    duration and the variance rate."""

    x0: float
    x1: float
    dt: float
    diffusion: float = 1.0

    def __post_init__(self):
        if not (self.x0 > 0 and self.x1 > 0):
            raise ConfigError(
                f"bridge offsets must be positive (got x0={self.x0}, x1={self.x1}); "
                "a nonpositive offset means the endpoint is on or past the barrier "
                "and the caller must kill deterministically"
            )
        if self.dt <= 0 or self.diffusion <= 0:
            raise ConfigError(f"dt and diffusion must be positive (dt={self.dt}, diffusion={self.diffusion})")


def crossing_prob(q: BridgeQuery) -> float:
    """Probability that the bridge from x0 to x1 over dt touches the barrier."""
    return float(np.exp(-2.0 * q.x0 * q.x1 / (q.diffusion * q.dt)))


def crossing_prob_array(x0: np.ndarray, x1: np.ndarray, dt: float, diffusion: float) -> np.ndarray:
    """Vectorized crossing_prob; offsets must already be strictly positive."""
    return np.exp(-2.0 * x0 * x1 / (diffusion * dt))


def sample_crossing(q: BridgeQuery, rng: RngStream) -> bool:
    """One Bernoulli(crossing_prob(q)) draw from the stream."""
    return bool(rng.uniforms(1)[0] < crossing_prob(q))
