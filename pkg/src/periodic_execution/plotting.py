"""PNG figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_value_grid(x, y, v, region, F: float, lam: float, path: Path) -> Path:
    """Value surface as a heat map with both free boundaries overlaid."""
    xs, ys = np.unique(x), np.unique(y)
    V = np.asarray(v).reshape(len(ys), len(xs))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    mesh = ax1.pcolormesh(xs, ys, V, shading="auto")
    fig.colorbar(mesh, ax=ax1, label="v(x, y)")
    yy = np.linspace(ys.min(), ys.max(), 200)
    for ax in (ax1, ax2):
        ax.plot(np.full_like(yy, F), yy, "w--", lw=1)
        ax.plot(F * np.exp(lam * yy), yy, "w-", lw=1)
        ax.set_xlim(xs.min(), xs.max())
        ax.set_xlabel("price x")
        ax.set_ylabel("inventory y")
    R = np.asarray(region).reshape(len(ys), len(xs))
    ax2.pcolormesh(xs, ys, R, shading="auto", cmap="viridis", vmin=0, vmax=3)
    ax1.set_title("value")
    ax2.set_title("region")
    return _save(fig, path)


def plot_sweep(grid, means, stderrs, F_gamma: float, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(grid, means, yerr=3 * np.asarray(stderrs), fmt="o-", ms=3, capsize=2)
    ax.axvline(F_gamma, color="k", ls="--", lw=1, label="F_gamma")
    ax.set_xlabel("barrier F")
    ax.set_ylabel("estimated payoff (3 stderr bars)")
    ax.legend()
    return _save(fig, path)


def plot_pde(x, y, rel_err, policy, F: float, lam: float, path: Path) -> Path:
    """Relative error against the closed form and the recovered sale policy."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    err = np.log10(np.maximum(np.nan_to_num(rel_err, nan=1e-16), 1e-16))
    m1 = ax1.pcolormesh(x, y, err, shading="auto")
    fig.colorbar(m1, ax=ax1, label="log10 relative error")
    m2 = ax2.pcolormesh(x, y, policy, shading="auto")
    fig.colorbar(m2, ax=ax2, label="sale l")
    ax2.plot(np.full_like(y, F), y, "w--", lw=1)
    ax2.plot(F * np.exp(lam * y), y, "w-", lw=1)
    for ax in (ax1, ax2):
        ax.set_xscale("log")
        ax.set_xlabel("price x")
        ax.set_ylabel("inventory y")
    return _save(fig, path)


def plot_paths(times, prices, inventories, F: float, path: Path) -> Path:
    """Price and inventory of traced paths; one line per path."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    for t, px, inv in zip(times, prices, inventories):
        ax1.step(t, px, where="post", lw=0.8)
        ax2.step(t, inv, where="post", lw=0.8)
    ax1.axhline(F, color="k", ls="--", lw=1)
    ax1.set_ylabel("pre-sale price")
    ax2.set_ylabel("pre-sale inventory")
    ax2.set_xlabel("time")
    return _save(fig, path)
