import numpy as np
import pytest

from branchsel.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(20260810, 0)


def make_rng(replica: int = 0, seed: int = 20260810) -> RngStream:
    return RngStream(seed, replica)


def z_agree(value: float, target: float, se: float, n_se: float = 3.0) -> bool:
    return abs(value - target) <= n_se * se


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))
