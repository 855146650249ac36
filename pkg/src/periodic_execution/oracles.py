"""Cross-checks of the closed form against Monte Carlo and the PDE solver."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .model import DerivedConstants, ModelParams
from .pde import PdeGrid
from .simulation import (
    EpisodeConfig,
    PayoffEstimate,
    barrier_policy,
    estimate_value,
    pooled_stderr,
    truncate_policy,
)
from .value import MarketState, Region, region_index, value


def _barrier_strategy(F: float, p: ModelParams, horizon: float):
    base = barrier_policy(F, p.lam)
    # the pure barrier never finishes selling when the log-price drifts down
    return base if p.log_drift >= 0 else truncate_policy(base, horizon)


# ------------------------------------------------------------------ MC vs closed form


@dataclass
class ComparisonReport:
    states: list[MarketState]
    regions: list[Region]
    closed_form: np.ndarray
    estimates: list[PayoffEstimate]
    z_scores: np.ndarray
    rel_gaps: np.ndarray

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z_scores)))

    @property
    def max_rel_gap(self) -> float:
        return float(np.max(self.rel_gaps))


def mc_vs_closed_form(
    p: ModelParams, c: DerivedConstants, states, mc_cfg: EpisodeConfig, workers: int = 1
) -> ComparisonReport:
    """Barrier-policy estimate at ``F_gamma`` against ``v`` at each state.

    ``mc_cfg`` supplies horizon, path count and seed; its initial state is
    replaced by each entry of ``states``. Exhausted states are exact zeros
    and are not simulated.
    """
    strategy = _barrier_strategy(c.F_barrier, p, mc_cfg.horizon)
    regions, vs, ests, zs, gaps = [], [], [], [], []
    for s in states:
        reg = Region(int(region_index(s.price, s.inventory, c)))
        v = value(s.price, s.inventory, c)
        if reg is Region.EXHAUSTED:
            est = PayoffEstimate(0.0, 0.0, mc_cfg.n_paths, 0.0, mc_cfg.seed)
            z, gap = 0.0, 0.0
        else:
            est = estimate_value(strategy, p, replace(mc_cfg, initial_state=s), workers=workers)
            diff = est.mean - v
            z = diff / est.stderr if est.stderr > 0 else (0.0 if diff == 0 else math.inf)
            gap = abs(diff) / abs(v) if v != 0 else abs(diff)
        regions.append(reg)
        vs.append(v)
        ests.append(est)
        zs.append(z)
        gaps.append(gap)
    return ComparisonReport(list(states), regions, np.array(vs), ests, np.array(zs), np.array(gaps))


# ---------------------------------------------------------------------- sweep


@dataclass
class SweepResult:
    grid: np.ndarray
    estimates: list[PayoffEstimate]
    argmax_F: float
    closed_form_F: float

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean for e in self.estimates])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([e.stderr for e in self.estimates])

    def estimate_at(self, F: float) -> PayoffEstimate:
        return self.estimates[int(np.argmin(np.abs(self.grid - F)))]

    def shortfalls(self) -> np.ndarray:
        """(other - at F_gamma) / pooled stderr for every grid barrier."""
        ref = self.estimate_at(self.closed_form_F)
        out = []
        for e in self.estimates:
            se = pooled_stderr(ref, e)
            out.append((e.mean - ref.mean) / se if se > 0 else 0.0)
        return np.array(out)

    def argmax_overlaps(self, k: float = 3.0) -> bool:
        """Do the ``k``-stderr intervals of the argmax and of ``F_gamma`` overlap?"""
        best = self.estimate_at(self.argmax_F)
        ref = self.estimate_at(self.closed_form_F)
        return best.mean - k * best.stderr <= ref.mean + k * ref.stderr


def default_sweep_grid(c: DerivedConstants, n: int = 25) -> np.ndarray:
    """``n`` barriers: ``n - 1`` evenly spaced over ``[C_s, 2 F_inf]`` plus ``F_gamma``."""
    lo, hi = c.params.cost_sell, 2.0 * c.F_infinity
    grid = np.union1d(np.linspace(lo, hi, n - 1), [c.F_barrier])
    return grid


def sweep_barrier(
    p: ModelParams,
    c: DerivedConstants,
    state: MarketState,
    F_grid,
    mc_cfg: EpisodeConfig,
    workers: int = 1,
) -> SweepResult:
    """Estimate the barrier policy at every ``F`` with the same seed (common random numbers)."""
    grid = np.asarray(F_grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("F_grid must be strictly increasing with at least two points")
    cfg = replace(mc_cfg, initial_state=state)

    def one(F):
        return estimate_value(_barrier_strategy(F, p, cfg.horizon), p, cfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ests = list(pool.map(one, grid))
    else:
        ests = [one(F) for F in grid]
    best = int(np.argmax([e.mean for e in ests]))
    return SweepResult(grid=grid, estimates=ests, argmax_F=float(grid[best]), closed_form_F=c.F_barrier)


# ------------------------------------------------------------------------ PDE


@dataclass
class PdeComparison:
    rel_err: np.ndarray  # on the full grid; nan where not compared
    closed_form: np.ndarray
    max_rel_err: float
    switch_prices: np.ndarray
    cell_widths: np.ndarray  # price width of the cell each switch price closes
    max_switch_cells: float  # inf if some slice never sells


def compare_pde(grid: PdeGrid, c: DerivedConstants, threshold: float = 1e-6) -> PdeComparison:
    """Relative error on interior nodes and switch-curve offset in price cells.

    Interior nodes exclude the ``y = 0`` row and the first and last price
    columns, where the far-field closures act. A node counts as selling when
    its sale exceeds ``threshold`` shares.
    """
    X, Y = np.meshgrid(grid.x, grid.y)
    v = value(X, Y, c)
    rel = np.full_like(v, np.nan)
    inner = (slice(1, None), slice(1, -1))
    rel[inner] = np.abs(grid.values[inner] - v[inner]) / np.maximum(np.abs(v[inner]), 1e-300)
    sw = grid.switch_prices(threshold)
    x = grid.x
    k = np.clip(np.searchsorted(x, sw), 1, len(x) - 1)
    widths = np.where(np.isnan(sw), np.nan, x[k] - x[k - 1])
    dev = np.where(np.isnan(sw), np.inf, np.abs(sw - c.F_barrier) / widths)
    return PdeComparison(
        rel_err=rel,
        closed_form=v,
        max_rel_err=float(np.nanmax(rel)),
        switch_prices=sw,
        cell_widths=widths,
        max_switch_cells=float(np.max(dev[1:])),
    )
