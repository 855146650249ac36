"""Finite-difference policy iteration for the full HJB equation.

The solver never touches the closed-form value function: it discretises
``L w + max_l gamma G(x, y, l; w) = 0`` on a uniform grid in ``z = ln x``
and inventory ``y`` and finds the optimal sale at every node by search.

Sales only lower inventory, so inventory slices are solved in increasing
``y``: a slice depends on already-solved smaller slices and, through the
interpolation of small sales, on itself. Each slice is a 1-d policy
iteration (Howard) problem.

The post-sale point ``(x e^{-lam l}, y - l)`` falls between nodes and is
read off by tensor Lagrange interpolation (cubic by default). Linear
interpolation biases the policy search toward sales that land on grid
nodes, which shifts the recovered switch curve by about a price cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .model import ModelParams, positive_root_n, require_valid

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class PdeConvergenceError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class PdeGridSpec:
    x_min: float
    x_max: float
    y_max: float
    n_x: int = 400
    n_y: int = 80

    @classmethod
    def around_barrier(cls, F: float, lam: float, y_max: float, n_x=400, n_y=80) -> "PdeGridSpec":
        """Price box ``[F/8, 8 F e^{lam y_max}]``; ``F`` only sizes the box."""
        return cls(F / 8.0, 8.0 * F * math.exp(lam * y_max), y_max, n_x, n_y)


@dataclass
class PdeGrid:
    z: np.ndarray  # log-price nodes
    y: np.ndarray  # inventory nodes
    values: np.ndarray  # shape (n_y, n_x)
    policy: np.ndarray  # optimal sale per node, shape (n_y, n_x)
    history: list = field(default_factory=list)  # per slice: sup-norm change per iteration

    @property
    def x(self) -> np.ndarray:
        return np.exp(self.z)

    def switch_prices(self, threshold: float = 1e-6) -> np.ndarray:
        """Per inventory slice, the smallest grid price selling more than ``threshold`` (nan if none)."""
        out = np.full(len(self.y), np.nan)
        for j in range(1, len(self.y)):
            idx = np.nonzero(self.policy[j] > threshold)[0]
            if idx.size:
                out[j] = self.x[idx[0]]
        return out


def _lagrange(t, order):
    """Equispaced Lagrange weights at fractional offset ``t`` from the first of ``order + 1`` nodes."""
    out = []
    for k in range(order + 1):
        w = np.ones_like(t)
        for m in range(order + 1):
            if m != k:
                w = w * (t - m) / (k - m)
        out.append(w)
    return out


def _stencil(zt, yt, z0, dz, dy, j, nz, n, order=3):
    """Interpolation weights of the point (zt, yt) on slices ``<= j``.

    Lagrange interpolation of degree ``order`` in each direction (``order=1``
    is bilinear); stencils are shifted inward at the grid edges. Below the
    price grid the waiting-region decay ``w ~ x^n`` extrapolates from the
    first node of each slice. Returns (slices, cols, weights), each of shape
    ``zt.shape + (k,)``.
    """
    zt, yt = np.broadcast_arrays(np.asarray(zt, dtype=float), np.asarray(yt, dtype=float))
    oy = min(order, j)
    oz = min(order, nz - 1)
    s = np.clip(yt / dy, 0.0, float(j))
    jy = np.minimum(np.floor(s).astype(int), j - 1)
    sy = np.clip(jy - (oy - 1) // 2, 0, j - oy)
    wy = _lagrange(s - sy, oy)

    fz = (zt - z0) / dz
    below = fz < 0
    fzc = np.maximum(fz, 0.0)
    kz = np.minimum(np.floor(fzc).astype(int), nz - 2)
    sz = np.clip(kz - (oz - 1) // 2, 0, nz - 1 - oz)
    wz = _lagrange(fzc - sz, oz)
    ext = np.exp(n * dz * np.minimum(fz, 0.0))
    wz = [np.where(below, ext if k == 0 else 0.0, wz[k]) for k in range(oz + 1)]
    sz = np.where(below, 0, sz)

    slices, cols, weights = [], [], []
    for a in range(oy + 1):
        for b in range(oz + 1):
            slices.append(sy + a)
            cols.append(sz + b)
            weights.append(wy[a] * wz[b])
    return np.stack(slices, axis=-1), np.stack(cols, axis=-1), np.stack(weights, axis=-1)


class _SliceProblem:
    def __init__(self, p: ModelParams, z: np.ndarray, dy: float, n: float, W: np.ndarray, j: int, order: int):
        self.p, self.z, self.dy, self.n, self.W, self.j = p, z, dy, n, W, j
        self.order = order
        self.nz = len(z)
        self.x = np.exp(z)
        self.dz = z[1] - z[0]
        self.yj = j * dy
        self.base = self._diffusion_matrix()

    def _diffusion_matrix(self):
        p, dz, nz = self.p, self.dz, self.nz
        a2 = 0.5 * p.sigma**2 / dz**2
        beta = p.mu - 0.5 * p.sigma**2
        if abs(beta) * dz / (0.5 * p.sigma**2) > 2.0:
            # upwind when central differences lose monotonicity
            lo = a2 + max(-beta, 0.0) / dz
            hi = a2 + max(beta, 0.0) / dz
        else:
            lo = a2 - beta / (2 * dz)
            hi = a2 + beta / (2 * dz)
        diag = np.full(nz, -(lo + hi) - p.delta)
        lower = np.full(nz - 1, lo)
        upper = np.full(nz - 1, hi)
        M = sp.lil_matrix((nz, nz))
        M.setdiag(diag)
        M.setdiag(lower, -1)
        M.setdiag(upper, 1)
        # x v_x = n v at the bottom: ghost w_{-1} = w_1 - 2 dz n w_0
        M[0, 1] = hi + lo
        M[0, 0] = diag[0] - 2 * dz * self.n * lo
        # linear in x at the top: ghost w_N = (1 + e^dz) w_{N-1} - e^dz w_{N-2}
        e = math.exp(dz)
        M[nz - 1, nz - 1] = diag[-1] + hi * (1 + e)
        M[nz - 1, nz - 2] = lo - hi * e
        return M.tocsr()

    def gain(self, l, x):
        p = self.p
        return -np.expm1(-p.lam * l) * x / p.lam - p.cost_sell * l

    def G(self, l, wj, idx=None):
        """Jump gain for candidate sales ``l`` (shape (nz,) or (nz, k)) at the nodes ``idx``."""
        p = self.p
        z = self.z if idx is None else self.z[idx]
        x = self.x if idx is None else self.x[idx]
        w0 = wj if idx is None else wj[idx]
        if np.ndim(l) == 2:
            z, x, w0 = z[:, None], x[:, None], w0[:, None]
        sl, co, wt = _stencil(z - p.lam * l, self.yj - l, self.z[0], self.dz, self.dy, self.j, self.nz, self.n, self.order)
        full = self.W.copy()
        full[self.j] = wj
        nxt = np.sum(wt * full[sl, co], axis=-1)
        return nxt - w0 + self.gain(l, x)

    def improve(self, wj, n_grid=64, golden_iters=40):
        y = self.yj
        cand = np.linspace(0.0, y, n_grid)
        L = np.broadcast_to(cand, (self.nz, n_grid))
        G = self.G(L, wj)
        G[:, 0] = 0.0  # no sale: no gain, exactly
        # ties go to the larger sale
        k = n_grid - 1 - np.argmax(G[:, ::-1], axis=1)
        rows = np.arange(self.nz)
        best_l = cand[k]
        best_g = G[rows, k]
        lo = cand[np.maximum(k - 1, 0)]
        hi = cand[np.minimum(k + 1, n_grid - 1)]
        a, b = lo, hi
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        gc = self.G(c, wj)
        gd = self.G(d, wj)
        for _ in range(golden_iters):
            left = gc >= gd
            a, b = np.where(left, a, c), np.where(left, d, b)
            c, d = (
                np.where(left, b - GOLDEN * (b - a), d),
                np.where(left, c, a + GOLDEN * (b - a)),
            )
            g_new = self.G(np.where(left, c, d), wj)
            gc, gd = np.where(left, g_new, gd), np.where(left, gc, g_new)
        mid = 0.5 * (a + b)
        g_mid = self.G(mid, wj)
        better = g_mid > best_g
        return np.where(better, mid, best_l)

    def evaluate(self, policy):
        """Solve the linear slice equation for a fixed policy."""
        p, nz, j = self.p, self.nz, self.j
        gam = p.gamma
        act = policy > 0
        idx = np.nonzero(act)[0]
        rhs = np.zeros(nz)
        A = self.base.tolil(copy=True)
        if idx.size:
            l = policy[idx]
            sl, co, wt = _stencil(self.z[idx] - p.lam * l, self.yj - l, self.z[0], self.dz, self.dy, j, nz, self.n, self.order)
            own = sl == j
            known = np.where(own, 0.0, wt * self.W[np.minimum(sl, j - 1), co])
            rhs[idx] = -gam * (known.sum(axis=1) + self.gain(l, self.x[idx]))
            A = A.tocsr() - sp.csr_matrix((np.full(idx.size, gam), (idx, idx)), shape=(nz, nz))
            r = np.repeat(idx, own.shape[1])[own.ravel()]
            cc = co.ravel()[own.ravel()]
            vv = gam * wt.ravel()[own.ravel()]
            A = A + sp.csr_matrix((vv, (r, cc)), shape=(nz, nz))
        return spsolve(A.tocsc(), rhs)


def pde_solve(
    p: ModelParams,
    spec: PdeGridSpec,
    tol: float = 1e-10,
    max_iters: int = 200,
    n_policy_grid: int = 64,
    order: int = 3,
) -> PdeGrid:
    """Policy iteration on every inventory slice, smallest inventory first.

    A slice has converged when the sup-norm change of its values, scaled by
    ``max(1, |w|)``, drops below ``tol``.
    """
    require_valid(p)
    n = positive_root_n(p)
    z = np.linspace(math.log(spec.x_min), math.log(spec.x_max), spec.n_x)
    y = np.linspace(0.0, spec.y_max, spec.n_y)
    dy = y[1] - y[0]
    W = np.zeros((spec.n_y, spec.n_x))
    policy = np.zeros_like(W)
    history = []
    if order > 1:
        # first inventory cell: too few slices below for a full-order stencil,
        # so solve it on a sub-grid and keep only its top slice
        sub = max(order, 2)
        Ws = np.zeros((sub + 1, spec.n_x))
        Ps = np.zeros_like(Ws)
        for k in range(1, sub + 1):
            Ws[k], Ps[k] = _solve_slice(p, z, dy / sub, n, Ws, k, order, Ps[k - 1], tol, max_iters, n_policy_grid, history)
        history[-sub:] = [sum(history[-sub:], [])]
        W[1], policy[1] = Ws[sub], Ps[sub]
        first = 2
    else:
        first = 1
    for j in range(first, spec.n_y):
        W[j], policy[j] = _solve_slice(p, z, dy, n, W, j, order, policy[j - 1], tol, max_iters, n_policy_grid, history)
    return PdeGrid(z=z, y=y, values=W, policy=policy, history=history)


def _solve_slice(p, z, dy, n, W, j, order, prev_policy, tol, max_iters, n_policy_grid, history):
    prob = _SliceProblem(p, z, dy, n, W, j, order)
    yj = j * dy
    pol = np.minimum(prev_policy * (j / (j - 1)) if j > 1 else np.zeros(len(z)), yj)
    w = prob.evaluate(pol)
    changes = []
    for _ in range(max_iters):
        pol = prob.improve(w, n_grid=n_policy_grid)
        w_new = prob.evaluate(pol)
        change = float(np.max(np.abs(w_new - w) / np.maximum(1.0, np.abs(w_new))))
        changes.append(change)
        w = w_new
        if change < tol:
            break
    else:
        history.append(changes)
        raise PdeConvergenceError(f"slice y={yj:.6g} did not converge in {max_iters} iterations", history)
    history.append(changes)
    return w, pol
