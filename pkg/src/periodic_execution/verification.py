"""The acceptance checks, each returning a :class:`CheckResult`.

Every check has a numeric metric, a tolerance and a wall-clock budget; it
passes only when both the metric and the runtime are within bounds.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import DEFAULT_PARAMS, ModelParams, a_gamma, derive_constants, positive_root_n
from .oracles import compare_pde, default_sweep_grid, mc_vs_closed_form, sweep_barrier
from .pde import PdeGridSpec, pde_solve
from .simulation import (
    EpisodeConfig,
    ScheduleStrategy,
    barrier_policy,
    default_horizon,
    estimate_value,
    pooled_stderr,
    purify_strategy,
    sell_all_policy,
    sell_all_first_jump_value,
    truncate_policy,
    truncation_bias_bound,
)
from .value import (
    MarketState,
    argmax_gain,
    hjb_residual,
    on_boundary,
    optimal_sale_quantity,
    smooth_fit_report,
    value,
    value_all,
    value_limit,
)

DEFAULT_STATE = MarketState(1.0, 100.0)


@dataclass
class CheckResult:
    key: int
    name: str
    passed: bool
    metric: float
    tolerance: float
    seconds: float
    budget: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (
            f"{tag} [{self.key:2d}] {self.name}: metric={self.metric:.3e} tol={self.tolerance:.1e} "
            f"time={self.seconds:.2f}s/{self.budget:g}s {self.detail}".rstrip()
        )

    def as_dict(self) -> dict:
        return {
            "key": self.key,
            "name": self.name,
            "passed": self.passed,
            "metric": self.metric,
            "tolerance": self.tolerance,
            "seconds": self.seconds,
            "budget": self.budget,
            "detail": self.detail,
        }


def _timed(key, name, budget, fn: Callable[[], tuple[bool, float, float, str]]) -> CheckResult:
    t0 = time.perf_counter()
    ok, metric, tol, detail = fn()
    dt = time.perf_counter() - t0
    return CheckResult(key, name, bool(ok and dt < budget), float(metric), float(tol), dt, budget, detail)


# ---------------------------------------------------------------- closed form


def check_hjb_residual(p: ModelParams = DEFAULT_PARAMS, y_ref: float = 100.0) -> CheckResult:
    def run():
        c = derive_constants(p)
        F = c.F_barrier
        xs = np.geomspace(F / 20, 20 * F * math.exp(p.lam * 2 * y_ref), 40)
        ys = np.geomspace(y_ref / 1000, 2 * y_ref, 40)
        X, Y = np.meshgrid(xs, ys)
        keep = ~on_boundary(X, Y, c, rtol=1e-9)
        X, Y = X[keep], Y[keep]
        res = hjb_residual(X, Y, c)
        v = value(X, Y, c)
        m = float(np.max(np.abs(res) / (1 + np.abs(v))))
        return m < 1e-8, m, 1e-8, f"points={X.size}"

    return _timed(1, "hjb-residual", 1.0, run)


def check_smooth_fit(p: ModelParams = DEFAULT_PARAMS, y_ref: float = 100.0) -> CheckResult:
    def run():
        c = derive_constants(p)
        ys = np.linspace(2 * y_ref / 50, 2 * y_ref, 50)
        m = smooth_fit_report(c, ys).max_rel()
        return m < 1e-9, m, 1e-9, ""

    return _timed(2, "smooth-fit", 1.0, run)


def _interior_states(c, n, rng, y_ref, margin):
    """Random states at least ``margin`` (relative) away from both free boundaries."""
    p = c.params
    F = c.F_barrier
    xs, ys = [], []
    while len(xs) < n:
        y = rng.uniform(0.01 * y_ref, 2 * y_ref)
        x = F * math.exp(rng.uniform(-2.0, p.lam * y + 2.0))
        upper = F * math.exp(p.lam * y)
        if abs(x / F - 1) > margin and abs(x / upper - 1) > margin:
            xs.append(x)
            ys.append(y)
    return np.array(xs), np.array(ys)


def check_derivatives(p: ModelParams = DEFAULT_PARAMS, seed: int = 0, y_ref: float = 100.0) -> CheckResult:
    """Central differences with steps ``1e-5`` times the coordinate.

    The second difference uses ``1e-3`` instead: with ``1e-5`` its roundoff
    (machine epsilon over the squared step) already exceeds the tolerance.

    The error of each derivative is scaled by its natural size: ``|v_x|``,
    ``|v_y|``, ``|v_xx|`` floored at ``(1 + |v|)`` divided by the matching
    power of the step coordinate, so derivatives that vanish do not turn
    roundoff into a relative error.
    """

    def run():
        c = derive_constants(p)
        rng = np.random.default_rng(seed)
        x, y = _interior_states(c, 1000, rng, y_ref, margin=1e-3)
        v, vx, vy, vxx = value_all(x, y, c)
        hx, hy = 1e-5 * x, 1e-5 * y
        fx = (value(x + hx, y, c) - value(x - hx, y, c)) / (2 * hx)
        fy = (value(x, y + hy, c) - value(x, y - hy, c)) / (2 * hy)
        h2 = 1e-3 * x
        fxx = (value(x + h2, y, c) - 2 * v + value(x - h2, y, c)) / h2**2
        scale = 1 + np.abs(v)
        errs = [
            np.abs(fx - vx) / np.maximum(np.abs(vx), scale / x),
            np.abs(fy - vy) / np.maximum(np.abs(vy), scale / y),
            np.abs(fxx - vxx) / np.maximum(np.abs(vxx), scale / x**2),
        ]
        m = float(max(e.max() for e in errs))
        return m < 1e-5, m, 1e-5, ""

    return _timed(3, "derivatives-vs-finite-differences", 1.0, run)


def check_argmax(p: ModelParams = DEFAULT_PARAMS, seed: int = 0, y_ref: float = 100.0) -> CheckResult:
    def run():
        c = derive_constants(p)
        rng = np.random.default_rng(seed)
        F = c.F_barrier
        worst = 0.0
        for _ in range(1000):
            y = rng.uniform(0.01 * y_ref, 2 * y_ref)
            x = F * math.exp(rng.uniform(-1.0, p.lam * y + 1.0))
            l_num = argmax_gain(x, y, c)
            l_cf = optimal_sale_quantity(x, y, c)
            worst = max(worst, abs(l_num - l_cf) / y)
        return worst < 1e-4, worst, 1e-4, "metric=|l_num - l*|/y"

    return _timed(4, "argmax-identity", 10.0, run)


def random_params(rng: np.random.Generator) -> ModelParams:
    """A draw from the property-test domain of valid parameters."""
    delta = rng.uniform(0.01, 0.5)
    return ModelParams(
        mu=rng.uniform(0.0, delta),
        sigma=rng.uniform(0.05, 1.0),
        delta=delta,
        lam=math.exp(rng.uniform(math.log(1e-4), 0.0)),
        gamma=math.exp(rng.uniform(math.log(1e-3), math.log(1e3))),
        cost_sell=math.exp(rng.uniform(math.log(0.01), math.log(10.0))),
        cost_buy=0.5,
    )


def check_a_gamma_limits(seed: int = 0) -> CheckResult:
    """``a_gamma`` inside ``(1, n/(n-1))``; close to both ends at extreme clock rates.

    The fast limit is approached like ``gamma**-0.5`` and the slow one only
    once ``gamma`` is small against ``delta - mu``, so neither limit
    tolerance holds everywhere on the draw domain; the reported metric is
    the worst limit gap.
    """

    def run():
        rng = np.random.default_rng(seed)
        inside = 0
        for _ in range(10_000):
            q = random_params(rng)
            a = a_gamma(q)
            n = positive_root_n(q)
            inside += 1 < a < n / (n - 1)
        worst_slow = worst_fast = 0.0
        for _ in range(100):
            q = random_params(rng)
            n = positive_root_n(q)
            lim = n / (n - 1)
            worst_slow = max(worst_slow, abs(a_gamma(q.replace(gamma=1e-6)) - 1))
            worst_fast = max(worst_fast, abs(a_gamma(q.replace(gamma=1e6)) - lim) / lim)
        metric = max(worst_slow, worst_fast)
        ok = inside == 10_000 and metric < 1e-4
        detail = f"bounds={inside}/10000 slow={worst_slow:.2e} fast={worst_fast:.2e}"
        return ok, metric, 1e-4, detail

    return _timed(5, "a-gamma-bounds-and-limits", 1.0, run)


# ---------------------------------------------------------------- Monte Carlo


def comparison_states(c, y: float) -> list[MarketState]:
    """Ten states covering every region, placed relative to the barrier."""
    F, lam = c.F_barrier, c.params.lam
    top = F * math.exp(lam * y)
    y_small = 0.1 * y
    return [
        MarketState(F, 0.0),
        MarketState(0.5 * F, y),
        MarketState(0.9 * F, y),
        MarketState(0.7 * F, 0.2 * y),
        MarketState(F * math.exp(0.2 * lam * y), y),
        MarketState(F * math.exp(0.5 * lam * y), y),
        MarketState(F * math.exp(0.8 * lam * y), y),
        MarketState(1.2 * top, y),
        MarketState(10 * top, y),
        MarketState(1.5 * F * math.exp(lam * y_small), y_small),
    ]


def check_mc_agreement(
    p: ModelParams = DEFAULT_PARAMS, seed: int = 0, n_paths: int = 200_000, y_ref: float = 100.0, workers: int = 1
) -> CheckResult:
    def run():
        c = derive_constants(p)
        cfg = EpisodeConfig(DEFAULT_STATE, default_horizon(p), n_paths, seed)
        rep = mc_vs_closed_form(p, c, comparison_states(c, y_ref), cfg, workers=workers)
        ok = rep.max_abs_z < 3 and rep.max_rel_gap < 0.015
        return ok, rep.max_abs_z, 3.0, f"max_rel_gap={rep.max_rel_gap:.2e} (tol 1.5e-02)"

    return _timed(6, "mc-vs-closed-form", 120.0, run)


def check_sell_all(
    p: ModelParams = DEFAULT_PARAMS, state: MarketState = DEFAULT_STATE, seed: int = 0, n_paths: int = 100_000
) -> CheckResult:
    def run():
        cfg = EpisodeConfig(state, default_horizon(p), n_paths, seed)
        est = estimate_value(sell_all_policy(), p, cfg)
        exact = sell_all_first_jump_value(state.price, state.inventory, p)
        z = abs(est.mean - exact) / est.stderr
        return z < 3, z, 3.0, f"mc={est.mean:.6g} exact={exact:.6g}"

    return _timed(7, "sell-all-single-jump", 30.0, run)


def check_sweep(
    p: ModelParams = DEFAULT_PARAMS, state: MarketState = DEFAULT_STATE, seed: int = 0, n_paths: int = 50_000,
    workers: int = 1,
) -> CheckResult:
    def run():
        c = derive_constants(p)
        cfg = EpisodeConfig(state, default_horizon(p), n_paths, seed)
        res = sweep_barrier(p, c, state, default_sweep_grid(c), cfg, workers=workers)
        worst = float(np.max(res.shortfalls()))
        # passes when no barrier beats F_gamma by 3 pooled stderr or more
        return worst < 3, worst, 3.0, f"argmax_F={res.argmax_F:.6g} F_gamma={c.F_barrier:.6g}"

    return _timed(8, "barrier-sweep", 180.0, run)


def check_pde(p: ModelParams = DEFAULT_PARAMS, y_max: float = 100.0, n_x: int = 400, n_y: int = 80) -> CheckResult:
    def run():
        c = derive_constants(p)
        spec = PdeGridSpec.around_barrier(c.F_barrier, p.lam, y_max, n_x, n_y)
        cmp = compare_pde(pde_solve(p, spec), c)
        ok = cmp.max_rel_err < 1e-2 and cmp.max_switch_cells <= 1.0
        return ok, cmp.max_rel_err, 1e-2, f"switch_offset={cmp.max_switch_cells:.3f} cells (tol 1)"

    return _timed(9, "pde-oracle", 120.0, run)


def check_fast_clock_limit(p: ModelParams = DEFAULT_PARAMS, y_ref: float = 100.0) -> CheckResult:
    def run():
        c = derive_constants(p.replace(gamma=1e6))
        F = c.F_infinity
        xs = np.geomspace(F / 4, 4 * F * math.exp(p.lam * y_ref), 20)
        ys = np.linspace(y_ref / 20, y_ref, 20)
        X, Y = np.meshgrid(xs, ys)
        vl = value_limit(X, Y, c)
        rel_v = float(np.max(np.abs(value(X, Y, c) - vl) / np.abs(vl)))
        c9 = derive_constants(p.replace(gamma=1e9))
        rel_F = abs(c9.F_barrier - c9.F_infinity) / c9.F_infinity
        ok = rel_v < 1e-3 and rel_F < 1e-5
        return ok, rel_v, 1e-3, f"F_gap(1e9)={rel_F:.2e} (tol 1e-05)"

    return _timed(10, "fast-clock-limit", 1.0, run)


def random_mixed_schedule(rng: np.random.Generator, y0: float, n_jumps: int = 50):
    """Open-loop sell/buy schedule on a 1/64 lattice, so every partial sum is exact."""
    sells = np.zeros(n_jumps)
    buys = np.zeros(n_jumps)
    inv = y0
    for k in range(n_jumps):
        if rng.random() < 0.6:
            sells[k] = min(inv, rng.integers(0, 8 * 64) / 64)
        else:
            buys[k] = rng.integers(0, 4 * 64) / 64
        inv += buys[k] - sells[k]
    return sells, buys


def check_purification(
    p: ModelParams = DEFAULT_PARAMS, state: MarketState = DEFAULT_STATE, seed: int = 0,
    n_strategies: int = 200, n_paths: int = 4096,
) -> CheckResult:
    def run():
        prefix_ok = True
        worst = -math.inf
        cfg = EpisodeConfig(state, default_horizon(p), n_paths, seed)
        for i in range(n_strategies):
            rng = np.random.default_rng([seed, i])
            s, b = random_mixed_schedule(rng, state.inventory)
            pure = purify_strategy(s, b, state.inventory)
            cs, cb, cp = np.cumsum(s), np.cumsum(b), np.cumsum(pure)
            prefix_ok &= bool(np.all(cs - cb <= cp) and np.all(cp <= cs))
            mixed = estimate_value(ScheduleStrategy(s, b), p, cfg)
            purified = estimate_value(ScheduleStrategy(pure, np.zeros_like(pure)), p, cfg)
            worst = max(worst, (mixed.mean - purified.mean) / pooled_stderr(mixed, purified))
        ok = prefix_ok and worst < 3
        return ok, worst, 3.0, f"prefix_domination={'exact' if prefix_ok else 'VIOLATED'}"

    return _timed(11, "purification", 60.0, run)


EPS_PARAMS = DEFAULT_PARAMS.replace(mu=0.01, sigma=0.4)


def check_eps_optimality(
    p: ModelParams = EPS_PARAMS, state: MarketState = DEFAULT_STATE, seed: int = 0, n_paths: int = 100_000,
    truncations=(5.0, 20.0, 80.0),
) -> CheckResult:
    """Truncated barrier policies improve with ``j`` and approach ``v``.

    The allowance at the last ``j`` is 3 stderr plus ``x e^{-eta j} / lam``,
    which bounds the value still unrealised at time ``j``.
    """

    def run():
        c = derive_constants(p)
        v = value(state.price, state.inventory, c)
        cfg = EpisodeConfig(state, default_horizon(p), n_paths, seed)
        base = barrier_policy(c.F_barrier, p.lam)
        ests = [estimate_value(truncate_policy(base, j), p, cfg) for j in truncations]
        drops = [(a.mean - b.mean) / pooled_stderr(a, b) for a, b in zip(ests, ests[1:])]
        increasing = all(d < 3 for d in drops)
        last = ests[-1]
        allowance = 3 * last.stderr + truncation_bias_bound(state.price, truncations[-1], p)
        gap = abs(v - last.mean)
        means = ", ".join(f"{e.mean:.4f}" for e in ests)
        detail = f"means=[{means}] v={v:.4f} allowance={allowance:.3g} monotone={increasing}"
        return increasing and gap <= allowance, gap, allowance, detail

    return _timed(12, "eps-optimal-truncation", 60.0, run)


def acceptance_checks(seed: int = 0) -> list[Callable[[], CheckResult]]:
    """All twelve criteria at their stated sizes, in order."""
    return [
        check_hjb_residual,
        check_smooth_fit,
        lambda: check_derivatives(seed=seed),
        lambda: check_argmax(seed=seed),
        lambda: check_a_gamma_limits(seed=seed),
        lambda: check_mc_agreement(seed=seed),
        lambda: check_sell_all(seed=seed),
        lambda: check_sweep(seed=seed),
        check_pde,
        check_fast_clock_limit,
        lambda: check_purification(seed=seed),
        lambda: check_eps_optimality(seed=seed),
    ]
