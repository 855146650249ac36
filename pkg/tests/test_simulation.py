import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from periodic_execution.model import DEFAULT_PARAMS
from periodic_execution.simulation import (
    BLOCK_SIZE,
    EpisodeConfig,
    InadmissibleRegimeWarning,
    ScheduleStrategy,
    apply_buy,
    apply_sale,
    barrier_policy,
    block_generator,
    default_horizon,
    estimate_value,
    evolve_price,
    next_arrival,
    purify_strategy,
    run_episode,
    sell_all_first_jump_value,
    sell_all_policy,
    sell_nothing_policy,
    simulate_payoffs,
    trace_paths,
    truncate_policy,
    truncation_bias_bound,
)
from periodic_execution.value import MarketState

P = DEFAULT_PARAMS
STATE = MarketState(1.0, 100.0)


def cfg(n=2000, seed=11, state=STATE, **kw):
    return EpisodeConfig(state, kw.pop("horizon", default_horizon(P)), n, seed, **kw)


class TestRandomness:
    def test_arrival_moments(self):
        g = 2.0
        t = next_arrival(block_generator(5, 0), g, 1_000_000)
        se = t.std() / 1000
        assert abs(t.mean() - 1 / g) < 4 * se
        # variance of an exponential sample variance: (E t^4 - var^2)/N = 8/gamma^4/N
        assert abs(t.var() - 1 / g**2) < 4 * math.sqrt(8 / g**4 / 1_000_000)

    def test_arrivals_reproducible(self):
        a = next_arrival(block_generator(9, 3), 1.5, 100)
        b = next_arrival(block_generator(9, 3), 1.5, 100)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, next_arrival(block_generator(9, 4), 1.5, 100))

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(ValueError):
            next_arrival(block_generator(0, 0), 0.0)

    def test_zero_step_is_identity(self):
        assert evolve_price(1.7, 0.0, 0.3, 0.05, 0.3) == 1.7

    def test_discounted_price_moment(self):
        rng = np.random.default_rng(4)
        t, x = 1.3, 2.0
        z = rng.standard_normal(1_000_000)
        s = math.exp(-P.delta * t) * evolve_price(x, t, z, P.mu, P.sigma)
        assert abs(s.mean() - x * math.exp((P.mu - P.delta) * t)) < 4 * s.std() / 1000

    def test_deterministic_limit(self):
        assert evolve_price(2.0, 3.0, 0.7, 0.05, 0.0) == pytest.approx(2.0 * math.exp(0.15), rel=1e-15)


class TestJumpOperators:
    def test_zero_sale(self):
        s, g = apply_sale(STATE, 0.0, 1.0, P)
        assert s == STATE and g == 0.0

    def test_full_sale_at_upper_boundary(self, consts):
        y = 20.0
        x = consts.F_barrier * math.exp(P.lam * y)
        t = 0.7
        s, g = apply_sale(MarketState(x, y), y, t, P)
        expected = math.exp(-P.delta * t) * ((1 - math.exp(-P.lam * y)) * x / P.lam - P.cost_sell * y)
        assert g == pytest.approx(expected, rel=1e-14)
        assert s.inventory == 0 and s.price == pytest.approx(consts.F_barrier, rel=1e-14)

    def test_small_sale_marginal_gain(self):
        t, nu = 0.4, 1e-7
        _, g = apply_sale(MarketState(3.0, 5.0), nu, t, P)
        assert g / nu == pytest.approx(math.exp(-P.delta * t) * (3.0 - P.cost_sell), rel=1e-6)

    def test_sale_lowers_price(self):
        s, _ = apply_sale(MarketState(3.0, 5.0), 1.0, 0.0, P)
        assert s.price < 3.0 and s.inventory == 4.0

    def test_oversale_rejected(self):
        with pytest.raises(ValueError):
            apply_sale(MarketState(3.0, 5.0), 5.1, 0.0, P)

    def test_zero_buy(self):
        s, c = apply_buy(STATE, 0.0, 2.0, P)
        assert s == STATE and c == 0.0

    def test_buy_price_multiplicative(self):
        s1, _ = apply_buy(STATE, 1.5, 0.0, P)
        s2, _ = apply_buy(s1, 2.5, 0.0, P)
        s3, _ = apply_buy(STATE, 4.0, 0.0, P)
        assert s2.price == pytest.approx(s3.price, rel=1e-15)

    def test_schedule_forbids_simultaneous_trades(self):
        with pytest.raises(ValueError):
            ScheduleStrategy(np.array([1.0]), np.array([1.0]))


class TestPolicies:
    def test_barrier_below_is_idle(self):
        pol = barrier_policy(2.0, P.lam)
        assert pol.decide(np.array([1.9]), np.array([10.0]), np.array([0.0]), 0)[0][0] == 0.0

    def test_barrier_post_sale_price(self):
        F = 1.5
        pol = barrier_policy(F, P.lam)
        x = np.array([1.6, 3.0, 100.0])
        y = np.array([50.0, 50.0, 50.0])
        sold = pol.decide(x, y, np.zeros(3), 0)[0]
        np.testing.assert_allclose(x * np.exp(-P.lam * sold), np.maximum(F, x * np.exp(-P.lam * y)), rtol=1e-14)

    def test_barrier_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            barrier_policy(0.0, P.lam)

    def test_truncate_at_zero_is_sell_all(self):
        a = simulate_payoffs(truncate_policy(barrier_policy(1.4, P.lam), 0.0), P, cfg())
        b = simulate_payoffs(sell_all_policy(), P, cfg())
        assert np.array_equal(a, b)

    def test_truncate_beyond_horizon_is_base(self):
        base = barrier_policy(1.4, P.lam)
        c = cfg(horizon=30.0)
        a = simulate_payoffs(truncate_policy(base, 31.0), P, c)
        b = simulate_payoffs(base, P, c)
        assert np.array_equal(a, b)

    def test_truncate_rejects_negative(self):
        with pytest.raises(ValueError):
            truncate_policy(sell_all_policy(), -1.0)


class TestEpisodes:
    def test_sell_nothing_pays_zero(self):
        pay, recs = run_episode(sell_nothing_policy(), P, cfg(horizon=5.0), 3)
        assert pay == 0.0 and all(r.sold == 0 for r in recs)

    def test_empty_inventory_pays_zero(self):
        est = estimate_value(sell_all_policy(), P, cfg(state=MarketState(1.0, 0.0)))
        assert est.mean == 0.0 and est.stderr == 0.0

    def test_single_path_matches_batch(self):
        c = cfg(n=BLOCK_SIZE + 50)
        pol = barrier_policy(1.4, P.lam)
        batch = simulate_payoffs(pol, P, c)
        for i in (0, 17, BLOCK_SIZE + 3):
            assert run_episode(pol, P, c, i)[0] == batch[i]

    def test_paths_do_not_depend_on_batch_size(self):
        pol = barrier_policy(1.4, P.lam)
        small = simulate_payoffs(pol, P, cfg(n=100))
        big = simulate_payoffs(pol, P, cfg(n=BLOCK_SIZE + 100))
        assert np.array_equal(small[:100], big[:100])

    def test_worker_count_does_not_matter(self):
        pol = barrier_policy(1.4, P.lam)
        c = cfg(n=3 * BLOCK_SIZE + 7)
        a = estimate_value(pol, P, c, workers=1)
        b = estimate_value(pol, P, c, workers=3)
        assert (a.mean, a.stderr) == (b.mean, b.stderr)

    def test_stderr_definition(self):
        est = estimate_value(barrier_policy(1.4, P.lam), P, cfg(), keep_payoffs=True)
        assert est.stderr == pytest.approx(est.payoffs.std(ddof=1) / math.sqrt(est.n_paths), rel=1e-14)

    def test_stderr_scaling(self):
        pol = sell_all_policy()
        ratios = []
        for seed in range(10):
            a = estimate_value(pol, P, cfg(n=20_000, seed=seed))
            b = estimate_value(pol, P, cfg(n=40_000, seed=seed + 100))
            ratios.append(a.stderr / b.stderr)
        assert np.mean(ratios) == pytest.approx(math.sqrt(2), rel=0.2)

    def test_sell_all_closed_form(self):
        for state in (STATE, MarketState(2.5, 30.0)):
            est = estimate_value(sell_all_policy(), P, cfg(n=100_000, state=state))
            exact = sell_all_first_jump_value(state.price, state.inventory, P)
            assert abs(est.mean - exact) < 4 * est.stderr

    def test_antithetic_runs(self):
        est = estimate_value(sell_all_policy(), P, cfg(n=20_000, antithetic=True))
        exact = sell_all_first_jump_value(1.0, 100.0, P)
        assert abs(est.mean - exact) < 4 * est.stderr

    def test_antithetic_pairing(self):
        est = estimate_value(sell_all_policy(), P, cfg(n=BLOCK_SIZE, antithetic=True), keep_payoffs=True)
        h = BLOCK_SIZE // 2
        pm = 0.5 * (est.payoffs[:h] + est.payoffs[h:])
        assert est.stderr == pytest.approx(pm.std(ddof=1) / math.sqrt(h), rel=1e-12)

    def test_truncation_bound(self):
        h = default_horizon(P)
        assert truncation_bias_bound(1.0, h, P) == pytest.approx(1e-5 / P.lam, rel=1e-12)
        assert estimate_value(sell_all_policy(), P, cfg()).truncation_bias_bound == pytest.approx(1e-3)

    def test_inadmissible_regime_flagged(self):
        q = P.replace(mu=0.01, sigma=0.4)
        c = EpisodeConfig(STATE, 20.0, 100, 0)
        with pytest.warns(InadmissibleRegimeWarning):
            est = estimate_value(barrier_policy(1.4, q.lam), q, c)
        assert not est.admissible
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert estimate_value(truncate_policy(barrier_policy(1.4, q.lam), 5.0), q, c).admissible


def mixed_schedule(rng, n=30, y0=40.0):
    s, b = np.zeros(n), np.zeros(n)
    inv = y0
    for k in range(n):
        if rng.random() < 0.6:
            s[k] = min(inv, rng.integers(0, 6 * 64) / 64)
        else:
            b[k] = rng.integers(0, 3 * 64) / 64
        inv += b[k] - s[k]
    return s, b


@pytest.fixture(scope="module")
def records():
    rng = np.random.default_rng(8)
    s, b = mixed_schedule(rng)
    c = EpisodeConfig(MarketState(1.2, 40.0), 1e3, 50, 21)
    return s, b, trace_paths(ScheduleStrategy(s, b), P, c, 50)


class TestPathInvariants:
    def test_never_sell_and_buy_together(self, records):
        assert all(r.sold * r.bought == 0 for r in records[2])

    def test_inventory_conservation(self, records):
        s, b, recs = records
        for pid in {r.path_id for r in recs}:
            rs = [r for r in recs if r.path_id == pid]
            final = rs[-1].pre_sale_state.inventory - rs[-1].sold + rs[-1].bought
            assert 40.0 == pytest.approx(final + sum(r.sold for r in rs) - sum(r.bought for r in rs), abs=1e-12)

    def test_price_consistency(self, records):
        for r in records[2]:
            net_sold = 40.0 - r.pre_sale_state.inventory  # xi_s - xi_b before this arrival
            expected = r.base_price * math.exp(-P.lam * net_sold)
            assert r.pre_sale_state.price == pytest.approx(expected, rel=1e-12)

    def test_barrier_absorption(self, consts):
        F = consts.F_barrier
        c = EpisodeConfig(MarketState(3.0, 100.0), 200.0, 40, 5)
        for r in trace_paths(barrier_policy(F, P.lam), P, c, 40):
            post_inv = r.pre_sale_state.inventory - r.sold
            post_price = r.pre_sale_state.price * math.exp(-P.lam * r.sold)
            if post_inv > 0:
                assert post_price <= F * (1 + 1e-12)


class TestPurification:
    def test_pure_selling_unchanged(self):
        s = np.array([1.0, 0.0, 2.5, 3.0])
        assert np.array_equal(purify_strategy(s, np.zeros(4)), s)

    def test_buys_only(self):
        assert np.array_equal(purify_strategy(np.zeros(3), np.array([1.0, 0.0, 2.0])), np.zeros(3))

    def test_worked_example(self):
        s = np.array([2.0, 0.0, 1.0, 0.0, 3.0])
        b = np.array([0.0, 2.5, 0.0, 0.5, 0.0])
        # 2 sold; then 1 - 2.5 = -1.5 carried; then 3 - 0.5 - 1.5 = 1
        assert np.array_equal(purify_strategy(s, b), [2.0, 0.0, 0.0, 0.0, 1.0])

    def test_malformed(self):
        with pytest.raises(ValueError):
            purify_strategy([1.0, 2.0], [0.0])
        with pytest.raises(ValueError):
            purify_strategy([1.0], [1.0])
        with pytest.raises(ValueError):
            purify_strategy([-1.0], [0.0])
        with pytest.raises(ValueError):
            purify_strategy([5.0], [0.0], y0=1.0)

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.integers(0, 640)), min_size=50, max_size=50))
    def test_prefix_domination(self, steps):
        s = np.array([a / 64 if sell else 0.0 for sell, a in steps])
        b = np.array([0.0 if sell else a / 64 for sell, a in steps])
        out = purify_strategy(s, b)
        cs, cb, cp = np.cumsum(s), np.cumsum(b), np.cumsum(out)
        assert np.all(cs - cb <= cp)
        assert np.all(cp <= cs)
        assert np.all(out[s == 0] == 0)
