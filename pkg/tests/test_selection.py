"""Selection rules: band, best-N, strip and barrier enforcement, and the
canonical coupling."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from branchsel import (ConfigError, ConsistencyError, LBand, NBest,
                       ProcessParams, Strip, apply_l_selection,
                       apply_linear_barrier, apply_n_selection, apply_strip,
                       init_population, simulate_coupled_lbbm)
from branchsel.engine import Population
from conftest import make_rng, mean_se


def pop_at(positions, t=0.0):
    p = init_population(positions, t0=t)
    return p


class TestBandSelection:
    def test_direct_rule(self):
        out, kills = apply_l_selection(pop_at([0.0, -0.5, -3.0]), 2.0)
        assert sorted(out.pos) == [-0.5, 0.0]
        assert len(kills) == 1 and kills[0].position_at_kill == -3.0
        assert kills[0].cause == "selection"

    def test_singleton_never_killed(self):
        out, kills = apply_l_selection(pop_at([0.0]), 0.001)
        assert out.size == 1 and not kills

    def test_exactly_at_threshold_survives(self):
        out, kills = apply_l_selection(pop_at([0.0, -2.0]), 2.0)
        assert out.size == 2 and not kills

    def test_empty_population_rejected(self):
        pop, _ = apply_l_selection(pop_at([0.0]), 1.0)
        with pytest.raises(ConfigError):
            apply_l_selection(Population(0.0, pop.pos[:0], pop.clock[:0],
                                         pop.ids[:0], pop.parent[:0], 0), 1.0)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=40),
           st.floats(0.1, 20))
    @settings(max_examples=150, deadline=None)
    def test_invariant_and_idempotence(self, xs, L):
        once, _ = apply_l_selection(pop_at(xs), L)
        assert once.pos.max() - once.pos.min() <= L + 1e-12
        twice, kills = apply_l_selection(once, L)
        assert not kills and np.array_equal(np.sort(twice.pos), np.sort(once.pos))


class TestNBestSelection:
    def test_keeps_n_highest(self):
        out, kills = apply_n_selection(pop_at([0.0, 3.0, -1.0, 2.0, 1.0]), 3)
        assert sorted(out.pos) == [1.0, 2.0, 3.0]
        assert len(kills) == 2

    def test_small_population_unchanged(self):
        out, kills = apply_n_selection(pop_at([1.0, 2.0]), 5)
        assert out.size == 2 and not kills

    def test_ties_resolved_by_newest_id(self):
        pop = pop_at([4.0, 4.0, 4.0, 4.0])
        out, kills = apply_n_selection(pop, 2)
        assert sorted(out.ids) == [2, 3]
        assert sorted(k.particle for k in kills) == [0, 1]

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=40),
           st.integers(1, 12))
    @settings(max_examples=150, deadline=None)
    def test_invariant_and_idempotence(self, xs, n):
        once, _ = apply_n_selection(pop_at(xs), n)
        assert once.size <= n
        twice, kills = apply_n_selection(once, n)
        assert not kills and np.array_equal(twice.pos, once.pos)


class TestStripEnforcement:
    def test_endpoint_outside_always_killed(self):
        pop = pop_at([-0.1, 0.5, 1.2], t=0.01)
        out, kills = apply_strip([0.5, 0.5, 0.5], pop, 0.0, 1.0, 0.01,
                                 make_rng(0))
        assert np.array_equal(out.pos, [0.5])
        assert {k.position_at_kill for k in kills} == {0.0, 1.0}

    def test_bridge_kill_frequency(self):
        # both endpoints one unit above the barrier, dt = 1: kill prob e^{-2}
        n = 40_000
        pop = pop_at([1.0] * n, t=1.0)
        out, kills = apply_strip([1.0] * n, pop, 0.0, 100.0, 1.0, make_rng(1))
        freq = len(kills) / n
        p = math.exp(-2.0)
        se = math.sqrt(p * (1 - p) / n)
        assert abs(freq - p) <= 3 * se

    def test_tiny_dt_no_bridge_kills(self):
        n = 1000
        pop = pop_at([0.5] * n, t=1e-6)
        out, kills = apply_strip([0.5] * n, pop, 0.0, 1.0, 1e-6, make_rng(2))
        assert not kills and out.size == n

    def test_misaligned_lineage_rejected(self):
        pop = pop_at([0.5, 0.6])
        with pytest.raises(ConsistencyError):
            apply_strip([0.5], pop, 0.0, 1.0, 0.01, make_rng(3))

    def test_all_killed_marks_extinction(self):
        pop = pop_at([2.0, 3.0], t=0.01)
        out, kills = apply_strip([0.5, 0.5], pop, 0.0, 1.0, 0.01, make_rng(4))
        assert out.extinct and out.extinction_time == 0.01
        assert len(kills) == 2


class TestLinearBarrier:
    def test_below_kills_at_moving_level(self):
        pop = pop_at([0.2, 2.0], t=1.0)
        out, kills = apply_linear_barrier([1.0, 2.0], pop, 0.0, 0.5, "below",
                                          1.0, make_rng(5))
        # barrier at t=1 sits at 0.5: the particle at 0.2 dies outright
        assert 2.0 in out.pos and 0.2 not in out.pos
        assert kills[0].position_at_kill == 0.5

    def test_above_side(self):
        pop = pop_at([0.2, 2.0], t=0.01)
        out, kills = apply_linear_barrier([0.2, 1.0], pop, 1.0, 0.0, "above",
                                          0.01, make_rng(6))
        assert np.array_equal(out.pos, [0.2])


class TestCoupling:
    def test_infinite_band_is_identity(self):
        grid = np.arange(0.0, 3.01, 0.5)
        full, band = simulate_coupled_lbbm(
            init_population([0.0]), 3.0, ProcessParams(), math.inf, grid,
            make_rng(7))
        assert np.array_equal(full.size, band.size)
        for a, b in zip(full.configs, band.configs):
            assert np.array_equal(a, b)

    def test_inclusion_at_every_grid_time(self):
        grid = np.arange(0.0, 5.01, 0.25)
        for rep in range(10):
            full, band = simulate_coupled_lbbm(
                init_population([0.0]), 5.0, ProcessParams(), 3.0, grid,
                make_rng(rep, seed=31))
            for a, b in zip(band.configs, full.configs):
                ca, cb = np.sort(a), np.sort(b)
                j = 0
                for x in ca:
                    while j < cb.size and cb[j] < x:
                        j += 1
                    assert j < cb.size and cb[j] == x
                    j += 1

    def test_killed_lineages_can_overtake(self):
        # descendants of selection-killed particles later exceed the
        # selected front in some realizations
        overtakes = 0
        grid = [7.0]
        for rep in range(40):
            full, band = simulate_coupled_lbbm(
                init_population([0.0]), 7.0, ProcessParams(), 3.0, grid,
                make_rng(rep, seed=32))
            if full.max_pos[0] > band.max_pos[0] + 1e-9:
                overtakes += 1
        assert overtakes >= 1

    def test_initial_band_violations_culled(self):
        grid = [0.0, 1.0]
        full, band = simulate_coupled_lbbm(
            init_population([0.0, -5.0]), 1.0, ProcessParams(), 2.0, grid,
            make_rng(8, seed=33))
        assert full.size[0] == 2 and band.size[0] == 1
