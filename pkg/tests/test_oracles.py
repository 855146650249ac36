import math

import numpy as np
import pytest

from periodic_execution.model import DEFAULT_PARAMS
from periodic_execution.oracles import (
    default_sweep_grid,
    mc_vs_closed_form,
    sweep_barrier,
)
from periodic_execution.simulation import (
    EpisodeConfig,
    ScheduleStrategy,
    barrier_policy,
    default_horizon,
    estimate_value,
    purify_strategy,
    sell_all_policy,
    truncate_policy,
)
from periodic_execution.value import MarketState, Region, value
from periodic_execution.verification import random_mixed_schedule

P = DEFAULT_PARAMS
STATE = MarketState(1.0, 100.0)


def mc(n=20_000, seed=3):
    return EpisodeConfig(STATE, default_horizon(P), n, seed)


class TestComparison:
    def test_exhausted_is_exact(self, consts):
        rep = mc_vs_closed_form(P, consts, [MarketState(2.0, 0.0)], mc())
        assert rep.regions == [Region.EXHAUSTED]
        assert rep.estimates[0].mean == 0.0 and rep.z_scores[0] == 0.0

    def test_deep_full_liquidation(self, consts):
        y = 40.0
        s = MarketState(10 * consts.F_barrier * math.exp(P.lam * y), y)
        rep = mc_vs_closed_form(P, consts, [s], mc())
        est, v = rep.estimates[0], rep.closed_form[0]
        assert rep.regions == [Region.FULL_LIQUIDATION]
        assert abs(est.mean - v) <= max(3 * est.stderr, 0.01 * v)

    def test_states_across_regions(self, consts):
        F = consts.F_barrier
        states = [MarketState(0.8 * F, 30.0), MarketState(1.1 * F, 30.0), MarketState(3 * F, 20.0)]
        rep = mc_vs_closed_form(P, consts, states, mc())
        assert rep.max_abs_z < 4


class TestSweep:
    def test_grid_shape(self, consts):
        g = default_sweep_grid(consts)
        assert len(g) == 25
        assert np.all(np.diff(g) > 0)
        assert g[0] == P.cost_sell and g[-1] == pytest.approx(2 * consts.F_infinity)
        assert consts.F_barrier in g

    def test_reproducible(self, consts):
        grid = [1.0, consts.F_barrier, 2.0]
        a = sweep_barrier(P, consts, STATE, grid, mc(3000))
        b = sweep_barrier(P, consts, STATE, grid, mc(3000))
        assert np.array_equal(a.means, b.means) and np.array_equal(a.stderrs, b.stderrs)
        assert a.argmax_F == b.argmax_F

    def test_rejects_unsorted_grid(self, consts):
        with pytest.raises(ValueError):
            sweep_barrier(P, consts, STATE, [2.0, 1.0], mc(100))

    def test_unreachable_barrier_earns_nothing(self, consts):
        res = sweep_barrier(P, consts, STATE, [consts.F_barrier, 1e12], mc(2000))
        assert res.means[1] == 0.0

    def test_small_sweep_peaks_at_barrier(self, consts):
        grid = np.union1d([0.6, 1.0, 2.0, 3.0], [consts.F_barrier])
        res = sweep_barrier(P, consts, STATE, grid, mc(10_000))
        assert np.max(res.shortfalls()) < 3
        assert res.argmax_overlaps()


class TestUpperBound:
    """No strategy beats the value function by more than 3 stderr."""

    def test_various_policies(self, consts):
        v = value(STATE.price, STATE.inventory, consts)
        F = consts.F_barrier
        pols = [
            sell_all_policy(),
            barrier_policy(0.8 * F, P.lam),
            barrier_policy(1.3 * F, P.lam),
            truncate_policy(barrier_policy(F, P.lam), 10.0),
        ]
        for pol in pols:
            est = estimate_value(pol, P, mc(20_000))
            assert est.mean <= v + 3 * est.stderr, pol.name

    def test_mixed_and_purified_schedules(self, consts):
        v = value(STATE.price, STATE.inventory, consts)
        rng = np.random.default_rng(12)
        for _ in range(5):
            s, b = random_mixed_schedule(rng, STATE.inventory)
            for strat in (ScheduleStrategy(s, b), ScheduleStrategy(purify_strategy(s, b), np.zeros_like(s))):
                est = estimate_value(strat, P, mc(4096))
                assert est.mean <= v + 3 * est.stderr
