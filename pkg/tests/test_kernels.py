"""Compiled kernel vs NumPy fallback: bit-identical states and records.

Both kernels consume the replica stream in the same order and use the same
expression trees (the extension builds with -ffp-contract=off), so entire
trajectories must match exactly, not just statistically.
"""

import math

import numpy as np
import pytest

import branchsel._fallback as fallback
from branchsel import kernel
from branchsel.rng import RngStream

compiled = pytest.importorskip(
    "branchsel._kernel", reason="compiled extension not built")


def fresh_state(positions):
    pos = np.asarray(positions, dtype=float)
    n = pos.size
    return (pos.copy(), np.full(n, np.nan),
            np.arange(n, dtype=np.int64), np.full(n, -1, dtype=np.int64))


def assert_outputs_equal(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        if isinstance(x, np.ndarray):
            assert x.dtype == y.dtype and x.shape == y.shape
            assert np.array_equal(x, y)
        else:
            assert x == y


@pytest.mark.parametrize("positions,t1,rate,drift,diff", [
    ([0.0], 1.0, 1.0, 0.0, 1.0),
    ([0.0, 1.0, -0.5], 2.5, 1.0, -0.3, 1.7),
    ([2.0] * 10, 0.7, 3.0, 1.2, 0.25),
    ([0.0], 6.0, 1.0, 0.0, 1.0),          # deep cascade
])
def test_advance_step_bit_identical(positions, t1, rate, drift, diff):
    for rep in range(5):
        s1 = fresh_state(positions)
        s2 = fresh_state(positions)
        r1 = RngStream(321, rep)
        r2 = RngStream(321, rep)
        out1 = fallback.advance_step(*s1, 0.0, t1, rate, drift, diff,
                                     len(positions), 1 << 22, r1)
        out2 = compiled.advance_step(*s2, 0.0, t1, rate, drift, diff,
                                     len(positions), 1 << 22, r2)
        assert_outputs_equal(out1, out2)
        assert (r1.ncur, r1.ecur, r1.ucur) == (r2.ncur, r2.ecur, r2.ucur)


def run_sim(rule, drift, horizon, grid, seed, kill_cap, functional=None):
    import branchsel as bs
    rng = RngStream(seed, 3)
    return bs.simulate(bs.init_population([1.5]), horizon,
                       bs.ProcessParams(drift=drift), rule, grid, rng,
                       dt=0.01, functional=functional, kill_record_cap=kill_cap)


@pytest.mark.parametrize("rule_name", ["lband", "strip", "barrier"])
def test_fused_runner_matches_python_driver(rule_name):
    from branchsel import LBand, LinearBarrier, Strip
    rule = {"lband": LBand(2.0),
            "strip": Strip(0.0, 3.0),
            "barrier": LinearBarrier(0.0, 0.0, "below")}[rule_name]
    drift = -1.0 if rule_name != "lband" else -0.5
    grid = [0.5, 1.0, 2.0, 3.0]
    for seed in range(40, 52):
        fused = run_sim(rule, drift, 3.0, grid, seed, kill_cap=0)
        plain = run_sim(rule, drift, 3.0, grid, seed, kill_cap=10 ** 6)
        assert np.array_equal(fused.record_times, plain.record_times)
        assert np.array_equal(fused.size, plain.size)
        assert np.array_equal(fused.max_pos, plain.max_pos)
        assert np.array_equal(fused.min_pos, plain.min_pos)
        assert fused.extinct == plain.extinct
        assert fused.extinction_time == plain.extinction_time
        assert fused.kills.n_selection == plain.kills.n_selection
        assert fused.kills.n_boundary == plain.kills.n_boundary
        assert fused.kills.hi_times == plain.kills.hi_times


def test_import_selection_reports_kernel():
    assert kernel.KERNEL_NAME in ("compiled", "numpy")
    assert kernel.HAVE_EXTENSION
    assert kernel.HAS_FUSED
