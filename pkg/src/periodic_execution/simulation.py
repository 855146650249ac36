"""Event-driven Monte Carlo for periodic execution strategies.

Paths are simulated jump to jump: between two clock arrivals the unaffected
price is sampled exactly from its lognormal transition, so there is no time
discretisation. Paths are grouped into fixed-size blocks; each block draws
from its own Philox stream keyed by ``(seed, block index)``. The draws used
by path ``i`` at its ``k``-th arrival therefore depend only on
``(seed, i, k)``, whatever policy is simulated and however many workers run.
That gives common random numbers across policy comparisons for free.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import ModelParams, require_valid
from .value import MarketState

BLOCK_SIZE = 4096
DEFAULT_BIAS_TOL = 1e-5


class InadmissibleRegimeWarning(UserWarning):
    """A non-liquidating barrier policy was simulated with ``mu - sigma^2/2 < 0``."""


# --------------------------------------------------------------------------- rng


def block_generator(seed: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(block),))
    return np.random.Generator(np.random.Philox(ss))


def next_arrival(rng: np.random.Generator, gamma: float, size=None):
    """Exponential waiting time(s) with rate ``gamma``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return rng.exponential(1.0 / gamma, size=size)


def evolve_price(x, dt, z, mu: float, sigma: float):
    """Exact GBM transition over ``dt`` driven by standard normal ``z``."""
    dt = np.asarray(dt, dtype=float)
    out = np.asarray(x, dtype=float) * np.exp((mu - 0.5 * sigma**2) * dt + sigma * np.sqrt(dt) * z)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- jump operators


def apply_sale(s: MarketState, nu: float, t: float, p: ModelParams) -> tuple[MarketState, float]:
    if nu < 0 or nu > s.inventory:
        raise ValueError(f"sale of {nu} shares outside [0, {s.inventory}]")
    gain = math.exp(-p.delta * t) * (-math.expm1(-p.lam * nu) * s.price / p.lam - p.cost_sell * nu)
    return MarketState(s.price * math.exp(-p.lam * nu), s.inventory - nu), gain


def apply_buy(s: MarketState, nu: float, t: float, p: ModelParams) -> tuple[MarketState, float]:
    if nu < 0:
        raise ValueError("purchase quantity must be nonnegative")
    cost = math.exp(-p.delta * t) * (math.expm1(p.lam * nu) * s.price / p.lam + p.cost_buy * nu)
    return MarketState(s.price * math.exp(p.lam * nu), s.inventory + nu), cost


# ---------------------------------------------------------------------- policies


@dataclass(frozen=True)
class SellingPolicy:
    """Sale rule ``(price, inventory, time, jump_index) -> shares``, vectorised over paths.

    ``liquidating`` marks policies that sell everything in finite time by
    construction (e.g. truncated ones); it only affects regime warnings.
    """

    rule: Callable
    name: str = "policy"
    liquidating: bool = False
    barrier: float | None = None

    def decide(self, price, inventory, time, jump_index):
        sell = np.asarray(self.rule(price, inventory, time, jump_index), dtype=float)
        return np.broadcast_to(sell, np.shape(price)), None


def barrier_policy(F: float, lam: float) -> SellingPolicy:
    """Sell ``min(Y, ln(X / F)^+ / lam)`` at each arrival: push the price down to ``F``."""
    if not F > 0:
        raise ValueError("barrier must be positive")
    lF = math.log(F)

    def rule(price, inventory, time, jump_index):
        excess = np.maximum(np.log(price) - lF, 0.0) / lam
        return np.minimum(inventory, excess)

    return SellingPolicy(rule, name=f"barrier({F:.6g})", barrier=F)


def sell_nothing_policy() -> SellingPolicy:
    return SellingPolicy(lambda price, inventory, time, k: np.zeros_like(price), name="hold")


def sell_all_policy() -> SellingPolicy:
    return SellingPolicy(lambda price, inventory, time, k: inventory, name="sell-all", liquidating=True)


def truncate_policy(base: SellingPolicy, j: float) -> SellingPolicy:
    """Follow ``base`` up to clock time ``j``; dump all inventory at the first arrival after ``j``."""
    if j < 0:
        raise ValueError("truncation time must be nonnegative")

    def rule(price, inventory, time, jump_index):
        # arrivals at t <= j still belong to the base strategy
        sell = np.asarray(base.rule(price, inventory, time, jump_index), dtype=float)
        return np.where(np.asarray(time) > j, inventory, sell)

    return SellingPolicy(rule, name=f"{base.name}|j={j:g}", liquidating=True, barrier=base.barrier)


@dataclass(frozen=True)
class ScheduleStrategy:
    """Open-loop sell/buy amounts per arrival index (same for every path).

    Arrivals beyond the schedule trade nothing.
    """

    sells: np.ndarray
    buys: np.ndarray
    name: str = "schedule"
    liquidating: bool = True
    barrier: float | None = None

    def __post_init__(self):
        s = np.asarray(self.sells, dtype=float)
        b = np.asarray(self.buys, dtype=float)
        if s.shape != b.shape or s.ndim != 1:
            raise ValueError("sells and buys must be 1-d arrays of equal length")
        if np.any(s < 0) or np.any(b < 0):
            raise ValueError("trade sizes must be nonnegative")
        if np.any((s > 0) & (b > 0)):
            raise ValueError("cannot sell and buy at the same arrival")
        object.__setattr__(self, "sells", s)
        object.__setattr__(self, "buys", b)

    @property
    def n_arrivals(self) -> int:
        """Nothing trades after this many arrivals, so paths can stop there."""
        return len(self.sells)

    def decide(self, price, inventory, time, jump_index):
        shape = np.shape(price)
        if jump_index >= len(self.sells):
            return np.zeros(shape), np.zeros(shape)
        return (
            np.full(shape, self.sells[jump_index]),
            np.full(shape, self.buys[jump_index]),
        )


# ------------------------------------------------------------------ purification


def purify_strategy(sells: Sequence[float], buys: Sequence[float], y0: float | None = None) -> np.ndarray:
    """Sell-only schedule dominated by a mixed sell/buy schedule.

    Each positive sale is netted against the purchases made since the
    previous positive sale; when the netted amount is not positive nothing is
    sold and the shortfall is carried into the next sale. Sales only happen at
    arrivals where the input sells. Cumulative purified sales stay between
    net sales and gross sales at every prefix.
    """
    s = np.asarray(sells, dtype=float)
    b = np.asarray(buys, dtype=float)
    if s.shape != b.shape or s.ndim != 1:
        raise ValueError("sells and buys must be 1-d arrays of equal length")
    if np.any(s < 0) or np.any(b < 0) or not np.all(np.isfinite(s + b)):
        raise ValueError("trade sizes must be finite and nonnegative")
    if np.any((s > 0) & (b > 0)):
        raise ValueError("cannot sell and buy at the same arrival")
    if y0 is not None and np.any(y0 - np.cumsum(s) + np.cumsum(b) < -1e-9 * max(y0, 1.0)):
        raise ValueError("input schedule drives inventory negative")

    out = np.zeros_like(s)
    pending_buys = 0.0  # buys since the last sale arrival
    carry = 0.0  # sum of netted terms since the last positive purified sale
    for k in range(len(s)):
        if b[k] > 0:
            pending_buys += b[k]
        if s[k] > 0:
            carry += s[k] - pending_buys
            pending_buys = 0.0
            if carry > 0:
                out[k] = carry
                carry = 0.0
    return out


# -------------------------------------------------------------------- simulation


@dataclass(frozen=True)
class EpisodeConfig:
    initial_state: MarketState
    horizon: float
    n_paths: int
    seed: int = 0
    antithetic: bool = False

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")


def default_horizon(p: ModelParams, bias_tol: float = DEFAULT_BIAS_TOL) -> float:
    """Horizon at which the unrealised value bound ``x e^{-eta T} / lam`` is ``bias_tol * x / lam``."""
    return math.log(1.0 / bias_tol) / p.eta


def truncation_bias_bound(x: float, horizon: float, p: ModelParams) -> float:
    if math.isinf(horizon):
        return 0.0
    return x * math.exp(-p.eta * horizon) / p.lam


@dataclass(frozen=True)
class DecisionRecord:
    path_id: int
    jump_index: int
    time: float
    pre_sale_state: MarketState
    sold: float
    bought: float
    discounted_gain: float
    base_price: float = float("nan")  # price without any impact, same noise


@dataclass
class PayoffEstimate:
    mean: float
    stderr: float
    n_paths: int
    truncation_bias_bound: float
    seed: int = 0
    admissible: bool = True
    payoffs: np.ndarray | None = field(default=None, repr=False, compare=False)


def _simulate_block(strategy, p: ModelParams, cfg: EpisodeConfig, block: int, size: int, trace: bool):
    rng = block_generator(cfg.seed, block)
    x0, y0 = cfg.initial_state.price, cfg.initial_state.inventory
    price = np.full(size, float(x0))
    base = np.full(size, float(x0))
    inv = np.full(size, float(y0))
    t = np.zeros(size)
    payoff = np.zeros(size)
    active = inv > 0
    records = [] if trace else None
    k = 0
    half = BLOCK_SIZE // 2
    last = getattr(strategy, "n_arrivals", None)
    while active.any() and (last is None or k < last):
        # always draw a full block so a path's noise does not depend on n_paths
        if cfg.antithetic:
            dt_h = next_arrival(rng, p.gamma, half)
            z_h = rng.standard_normal(half)
            dt = np.concatenate([dt_h, dt_h])[:size]
            z = np.concatenate([z_h, -z_h])[:size]
        else:
            dt = next_arrival(rng, p.gamma, BLOCK_SIZE)[:size]
            z = rng.standard_normal(BLOCK_SIZE)[:size]
        t = t + dt
        active &= t <= cfg.horizon
        if not active.any():
            break
        growth = evolve_price(np.ones(size), dt, z, p.mu, p.sigma)
        price = price * growth
        base = base * growth
        sell, buy = strategy.decide(price, inv, t, k)
        sell = np.where(active, sell, 0.0)
        if np.any(sell < -1e-12) or np.any(sell > inv * (1 + 1e-12) + 1e-12):
            raise ValueError(f"{strategy.name}: sale outside [0, inventory] at arrival {k}")
        sell = np.clip(sell, 0.0, inv)
        disc = np.exp(-p.delta * t)
        gain = disc * (-np.expm1(-p.lam * sell) * price / p.lam - p.cost_sell * sell)
        if buy is not None:
            buy = np.where(active, buy, 0.0)
            gain = gain - disc * (np.expm1(p.lam * buy) * price / p.lam + p.cost_buy * buy)
        else:
            buy = np.zeros(size)
        if trace:
            idx = np.nonzero(active)[0]
            for i in idx:
                records.append(
                    DecisionRecord(
                        path_id=block * BLOCK_SIZE + int(i),
                        jump_index=k,
                        time=float(t[i]),
                        pre_sale_state=MarketState(float(price[i]), float(inv[i])),
                        sold=float(sell[i]),
                        bought=float(buy[i]),
                        discounted_gain=float(gain[i]),
                        base_price=float(base[i]),
                    )
                )
        payoff += np.where(active, gain, 0.0)
        price = price * np.exp(-p.lam * (sell - buy))
        inv = inv - sell + buy
        # snap float dust so fully liquidated paths terminate
        inv = np.where(inv <= 1e-12 * max(y0, 1.0), 0.0, inv)
        active &= inv > 0
        k += 1
    return payoff, records


def _blocks(n_paths: int):
    nb = -(-n_paths // BLOCK_SIZE)
    return [(b, min(BLOCK_SIZE, n_paths - b * BLOCK_SIZE)) for b in range(nb)]


def _check_regime(strategy, p: ModelParams) -> bool:
    admissible = p.log_drift >= 0 or getattr(strategy, "liquidating", False)
    if not admissible:
        warnings.warn(
            f"{strategy.name}: mu - sigma^2/2 = {p.log_drift:.4g} < 0, a pure barrier policy "
            "never finishes liquidating; wrap it with truncate_policy",
            InadmissibleRegimeWarning,
            stacklevel=3,
        )
    return admissible


def simulate_payoffs(strategy, p: ModelParams, cfg: EpisodeConfig, workers: int = 1) -> np.ndarray:
    """Discounted payoff of every path, in path-index order."""
    require_valid(p)
    blocks = _blocks(cfg.n_paths)
    job = lambda bs: _simulate_block(strategy, p, cfg, bs[0], bs[1], False)[0]  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, blocks))
    else:
        parts = [job(bs) for bs in blocks]
    return np.concatenate(parts)


def run_episode(strategy, p: ModelParams, cfg: EpisodeConfig, path_index: int = 0):
    """Payoff and decision records of a single path (identical to its value inside a batch run)."""
    require_valid(p)
    if not 0 <= path_index < cfg.n_paths:
        raise IndexError("path_index outside [0, n_paths)")
    block, offset = divmod(path_index, BLOCK_SIZE)
    size = min(BLOCK_SIZE, cfg.n_paths - block * BLOCK_SIZE)
    payoff, records = _simulate_block(strategy, p, cfg, block, size, True)
    pid = block * BLOCK_SIZE + offset
    return float(payoff[offset]), [r for r in records if r.path_id == pid]


def trace_paths(strategy, p: ModelParams, cfg: EpisodeConfig, n_trace: int):
    """Decision records of the first ``n_trace`` paths, ordered by path then arrival."""
    require_valid(p)
    out = []
    for block, size in _blocks(min(n_trace, cfg.n_paths)):
        full = min(BLOCK_SIZE, cfg.n_paths - block * BLOCK_SIZE)
        _, records = _simulate_block(strategy, p, cfg, block, full, True)
        keep = block * BLOCK_SIZE + size
        out.extend(r for r in records if r.path_id < keep)
    out.sort(key=lambda r: (r.path_id, r.jump_index))
    return out


def _summary(payoffs: np.ndarray, antithetic: bool) -> tuple[float, float]:
    n = len(payoffs)
    if n < 2:
        raise ValueError("need at least two paths for a standard error")
    mean = float(payoffs.mean())
    if not antithetic:
        return mean, float(payoffs.std(ddof=1) / math.sqrt(n))
    # path i is paired with i + BLOCK_SIZE/2 in its block; a short last block
    # leaves some paths unpaired, and those count as plain samples
    h = BLOCK_SIZE // 2
    pairs, singles = [], []
    for block, size in _blocks(n):
        chunk = payoffs[block * BLOCK_SIZE : block * BLOCK_SIZE + size]
        k = max(size - h, 0)
        pairs.append(0.5 * (chunk[:k] + chunk[h : h + k]))
        singles.append(chunk[k : min(size, h)])
    pm = np.concatenate(pairs)
    sg = np.concatenate(singles)
    var_pair = pm.var(ddof=1) if len(pm) > 1 else 0.0
    var_single = sg.var(ddof=1) if len(sg) > 1 else payoffs.var(ddof=1)
    var_mean = (4 * len(pm) * var_pair + len(sg) * var_single) / n**2
    return mean, float(math.sqrt(var_mean))


def estimate_value(strategy, p: ModelParams, cfg: EpisodeConfig, workers: int = 1, keep_payoffs=False) -> PayoffEstimate:
    if cfg.n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    admissible = _check_regime(strategy, p)
    payoffs = simulate_payoffs(strategy, p, cfg, workers=workers)
    mean, se = _summary(payoffs, cfg.antithetic)
    return PayoffEstimate(
        mean=mean,
        stderr=se,
        n_paths=cfg.n_paths,
        truncation_bias_bound=truncation_bias_bound(cfg.initial_state.price, cfg.horizon, p),
        seed=cfg.seed,
        admissible=admissible,
        payoffs=payoffs if keep_payoffs else None,
    )


def pooled_stderr(a: PayoffEstimate, b: PayoffEstimate) -> float:
    return math.sqrt(a.stderr**2 + b.stderr**2)


def paired_stderr(a: PayoffEstimate, b: PayoffEstimate) -> float:
    """Standard error of the mean difference of two common-random-number runs."""
    if a.payoffs is None or b.payoffs is None:
        raise ValueError("paired stderr needs per-path payoffs (keep_payoffs=True)")
    d = a.payoffs - b.payoffs
    return float(d.std(ddof=1) / math.sqrt(len(d)))


def sell_all_first_jump_value(x: float, y: float, p: ModelParams) -> float:
    """Closed-form value of dumping everything at the first arrival."""
    return p.gamma / (p.gamma + p.eta) * x * -math.expm1(-p.lam * y) / p.lam - p.gamma / (
        p.gamma + p.delta
    ) * p.cost_sell * y
