"""Closed-form value function, its derivatives and HJB diagnostics.

All evaluators broadcast over numpy arrays of prices ``x`` and inventories
``y``. Powers of the price are evaluated in log space; prices are clamped
to ``[1e-300, 1e300]`` before taking logarithms.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .model import DerivedConstants, ModelParams

PRICE_FLOOR = 1e-300
PRICE_CEIL = 1e300


class Region(enum.IntEnum):
    EXHAUSTED = 0
    WAITING = 1
    INTERMEDIATE = 2
    FULL_LIQUIDATION = 3


@dataclass(frozen=True)
class MarketState:
    price: float
    inventory: float

    def __post_init__(self):
        if not self.price > 0:
            raise ValueError(f"price must be positive, got {self.price}")
        if not self.inventory >= 0:
            raise ValueError(f"inventory must be nonnegative, got {self.inventory}")


def _logx(x):
    return np.log(np.clip(np.asarray(x, dtype=float), PRICE_FLOOR, PRICE_CEIL))


def region_index(x, y, c: DerivedConstants) -> np.ndarray:
    """Vectorized region codes (see :class:`Region`)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lam = c.params.lam
    lx = _logx(x)
    lF = np.log(c.F_barrier)
    out = np.where(lx < lF, Region.WAITING, Region.INTERMEDIATE)
    # x >= F e^{lam y}, compared in log space so huge y cannot overflow
    out = np.where(lx - lam * y >= lF, Region.FULL_LIQUIDATION, out)
    out = np.where(y <= 0, Region.EXHAUSTED, out)
    return out.astype(int)


def classify_region(s: MarketState, c: DerivedConstants) -> Region:
    return Region(int(region_index(s.price, s.inventory, c)))


def _branch(x, y, c: DerivedConstants, region):
    """(v, v_x, v_y, v_xx) evaluated with the formula of ``region`` (scalar or array)."""
    p = c.params
    lam, d, g, cs = p.lam, p.delta, p.gamma, p.cost_sell
    n, m, F, A = c.n, c.m_gamma, c.F_barrier, c.A_coeff
    x = np.clip(np.asarray(x, dtype=float), PRICE_FLOOR, PRICE_CEIL)
    y = np.asarray(y, dtype=float)
    lx = np.log(x)
    u = lx - np.log(F)  # ln(x / F)
    g1 = g / (lam * (c.eta + g))
    g2 = g * cs / (lam * (d + g))
    k = (F - cs) / lam
    region = np.asarray(region)

    zero = np.zeros(np.broadcast(x, y, region).shape)
    v = zero.copy()
    vx = zero.copy()
    vy = zero.copy()
    vxx = zero.copy()

    def put(mask, val, dx, dy, dxx):
        np.copyto(v, val, where=mask)
        np.copyto(vx, dx, where=mask)
        np.copyto(vy, dy, where=mask)
        np.copyto(vxx, dxx, where=mask)

    with np.errstate(over="ignore", invalid="ignore", under="ignore", divide="ignore"):
        if np.any(region == Region.WAITING):
            P = np.exp(n * u)
            E = np.exp(n * (u - lam * y))  # e^{-lam n y} (x/F)^n
            w = k / n * (P - E)
            put(region == Region.WAITING, w, n * w / x, (F - cs) * E, n * (n - 1) * w / x**2)
        if np.any(region == Region.INTERMEDIATE):
            Q = np.exp(m * u)
            E = np.exp(n * (u - lam * y))
            w = A * Q - k / n * E + g1 * x - g2 * lx + c.C_coeff
            wx = A * m * Q / x - k * E / x + g1 - g2 / x
            wxx = A * m * (m - 1) * Q / x**2 - k * (n - 1) * E / x**2 + g2 / x**2
            put(region == Region.INTERMEDIATE, w, wx, (F - cs) * E, wxx)
        if np.any(region == Region.FULL_LIQUIDATION):
            Q = np.exp(m * u)
            R = np.exp(m * (u - lam * y))  # e^{-lam m y} (x/F)^m
            ey = np.exp(-lam * y)
            w = A * (Q - R) + g1 * x * (1 - ey) - g * cs * y / (d + g)
            wx = A * m * (Q - R) / x + g1 * (1 - ey)
            wxx = A * m * (m - 1) * (Q - R) / x**2
            wy = A * lam * m * R + g1 * lam * x * ey - g * cs / (d + g)
            put(region == Region.FULL_LIQUIDATION, w, wx, wy, wxx)
    return v, vx, vy, vxx


def _maybe_scalar(a):
    return float(a) if np.ndim(a) == 0 else a


def value_all(x, y, c: DerivedConstants):
    """Value and derivatives ``(v, v_x, v_y, v_xx)`` on the natural region of each point."""
    return _branch(x, y, c, region_index(x, y, c))


def value(x, y, c: DerivedConstants):
    return _maybe_scalar(value_all(x, y, c)[0])


def value_dx(x, y, c: DerivedConstants):
    return _maybe_scalar(value_all(x, y, c)[1])


def value_dy(x, y, c: DerivedConstants):
    return _maybe_scalar(value_all(x, y, c)[2])


def value_dxx(x, y, c: DerivedConstants):
    return _maybe_scalar(value_all(x, y, c)[3])


def value_jet(c: DerivedConstants) -> Callable:
    """Handle ``(x, y) -> (v, v_x, v_xx)`` suitable for :func:`generator_L`."""

    def jet(x, y):
        v, vx, _, vxx = value_all(x, y, c)
        return v, vx, vxx

    return jet


def value_limit(x, y, c: DerivedConstants):
    """Value function in the limit of a continuously ringing clock."""
    p = c.params
    lam, cs, n = p.lam, p.cost_sell, c.n
    Fi = c.F_infinity
    x = np.clip(np.asarray(x, dtype=float), PRICE_FLOOR, PRICE_CEIL)
    y = np.asarray(y, dtype=float)
    u = np.log(x) - np.log(Fi)
    with np.errstate(over="ignore", invalid="ignore"):
        waiting = Fi / (lam * n**2) * (np.exp(n * u) - np.exp(n * (u - lam * y)))
        inter = (
            Fi / (lam * n**2) * (1 - np.exp(n * (u - lam * y)))
            + (x - Fi) / lam
            - cs / lam * u
        )
        full = x * (1 - np.exp(-lam * y)) / lam - cs * y
    out = np.where(u < 0, waiting, np.where(u - lam * y >= 0, full, inter))
    out = np.where(y <= 0, 0.0, out)
    return _maybe_scalar(out)


def generator_L(f: Callable, x, y, p: ModelParams):
    """``sigma^2/2 x^2 f_xx + mu x f_x - delta f`` for a handle returning ``(f, f_x, f_xx)``."""
    fv, fx, fxx = f(x, y)
    x = np.asarray(x, dtype=float)
    return _maybe_scalar(0.5 * p.sigma**2 * x**2 * fxx + p.mu * x * fx - p.delta * fv)


def gain_operator_G(x, y, l, f: Callable, p: ModelParams):
    """Jump gain ``f(x e^{-lam l}, y - l) - f(x, y) + (1 - e^{-lam l}) x / lam - C_s l``.

    ``f`` maps ``(x, y)`` to values. ``l`` must lie in ``[0, y]``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    l = np.asarray(l, dtype=float)
    # allow a few ulps of slack so y - l rounding does not reject l == y
    if np.any(l < 0) or np.any(l > y * (1 + 1e-12)):
        raise ValueError("sale quantity must lie in [0, y]")
    rest = np.maximum(y - l, 0.0)
    out = (
        f(x * np.exp(-p.lam * l), rest)
        - f(x, y)
        + -np.expm1(-p.lam * l) * x / p.lam
        - p.cost_sell * l
    )
    return _maybe_scalar(out)


def optimal_sale_quantity(x, y, c: DerivedConstants):
    lam = c.params.lam
    excess = np.maximum(_logx(x) - np.log(c.F_barrier), 0.0) / lam
    return _maybe_scalar(np.minimum(np.asarray(y, dtype=float), excess))


def hjb_residual(x, y, c: DerivedConstants):
    """``L v + gamma G(x, y, l*; v)`` with the barrier sale ``l*``, analytic derivatives.

    Points sitting exactly on a free boundary are evaluated with the formula
    of the region they classify into, i.e. one-sided.
    """
    p = c.params
    val = lambda a, b: value(a, b, c)  # noqa: E731
    lstar = optimal_sale_quantity(x, y, c)
    Lv = generator_L(value_jet(c), x, y, p)
    G = gain_operator_G(x, y, lstar, val, p)
    return _maybe_scalar(np.asarray(Lv) + p.gamma * np.asarray(G))


def on_boundary(x, y, c: DerivedConstants, rtol: float = 1e-12) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    F = c.F_barrier
    upper = F * np.exp(c.params.lam * np.asarray(y, dtype=float))
    return np.isclose(x, F, rtol=rtol, atol=0) | np.isclose(x, upper, rtol=rtol, atol=0)


def argmax_gain(x: float, y: float, c: DerivedConstants, n_grid: int = 1001, xatol=None) -> float:
    """Maximise ``l -> G(x, y, l; v)`` over ``[0, y]``: uniform grid, then bounded Brent refinement.

    Ties on the grid go to the larger ``l``.
    """
    if y <= 0:
        return 0.0
    p = c.params
    val = lambda a, b: value(a, b, c)  # noqa: E731
    grid = np.linspace(0.0, y, n_grid)
    G = gain_operator_G(x, y, grid, val, p)
    k = len(grid) - 1 - int(np.argmax(G[::-1]))
    best_l, best_g = grid[k], G[k]
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)]
    res = minimize_scalar(
        lambda l: -gain_operator_G(x, y, l, val, p),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": xatol if xatol is not None else 1e-9 * max(y, 1.0)},
    )
    if -res.fun > best_g:
        return float(res.x)
    return float(best_l)


@dataclass
class FitReport:
    """One-sided mismatches at both free boundaries, one row per inventory level."""

    y: np.ndarray
    lower: dict[str, np.ndarray]  # at x = F
    upper: dict[str, np.ndarray]  # at x = F e^{lam y}
    lower_rel: dict[str, np.ndarray]
    upper_rel: dict[str, np.ndarray]

    def max_rel(self) -> float:
        vals = [np.max(a) for a in self.lower_rel.values()] + [np.max(a) for a in self.upper_rel.values()]
        return float(max(vals))

    def passed(self, tol: float = 1e-9) -> bool:
        return self.max_rel() < tol


_NAMES = ("v", "v_x", "v_y", "v_xx")


def smooth_fit_report(c: DerivedConstants, y_grid) -> FitReport:
    y = np.asarray(y_grid, dtype=float)
    if np.any(y <= 0):
        raise ValueError("y_grid must be positive")
    F = c.F_barrier
    xu = F * np.exp(c.params.lam * y)
    xl = np.full_like(y, F)
    left_l = _branch(xl, y, c, Region.WAITING)
    right_l = _branch(xl, y, c, Region.INTERMEDIATE)
    left_u = _branch(xu, y, c, Region.INTERMEDIATE)
    right_u = _branch(xu, y, c, Region.FULL_LIQUIDATION)
    lower, upper, lower_rel, upper_rel = {}, {}, {}, {}
    for i, name in enumerate(_NAMES):
        for (a, b), absd, reld in (
            ((left_l[i], right_l[i]), lower, lower_rel),
            ((left_u[i], right_u[i]), upper, upper_rel),
        ):
            diff = np.abs(a - b)
            absd[name] = diff
            reld[name] = diff / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return FitReport(y=y, lower=lower, upper=upper, lower_rel=lower_rel, upper_rel=upper_rel)
