"""Command-line front end.

Usage: ``periodic-exec <command> [--config PATH] [--seed S] [--paths N] [--out DIR] [--x X --y Y]``

Commands write CSV files (17 significant digits, header row) and PNG
figures into the output directory and print a JSON summary to stdout.
Exit codes: 0 pass, 1 a check failed, 2 bad usage or configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .model import DegenerateFormulaError, ModelParams, derive_constants, validate_params
from .oracles import compare_pde, default_sweep_grid, mc_vs_closed_form, sweep_barrier
from .pde import PdeConvergenceError, PdeGridSpec, pde_solve
from .simulation import (
    EpisodeConfig,
    barrier_policy,
    default_horizon,
    estimate_value,
    trace_paths,
    truncate_policy,
)
from .value import MarketState, Region, hjb_residual, on_boundary, region_index, value_all
from . import verification

COMMANDS = ("constants", "value", "grid", "simulate", "sweep", "pde", "verify")
NEAR_LIMIT_RTOL = 1e-5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mu: float = 0.05
    sigma: float = 0.3
    delta: float = 0.1
    lam: float = 0.01
    gamma: float = 2.0
    cost_sell: float = 0.5
    cost_buy: float = 0.5
    x: float = 1.0
    y: float = 100.0
    seed: int = 0
    n_paths: int | None = None  # per-command default when null
    horizon: float | None = None  # ln(1/bias_tol)/eta when null
    bias_tol: float = 1e-5
    antithetic: bool = False
    workers: int = 1
    trace_paths: int = 20
    sweep_points: int = 25
    sweep_min: float | None = None  # cost_sell when null
    sweep_max: float | None = None  # 2 F_inf when null
    grid_n_x: int = 41
    grid_n_y: int = 21
    grid_x_min: float | None = None
    grid_x_max: float | None = None
    grid_y_max: float | None = None  # y when null
    pde_n_x: int = 400
    pde_n_y: int = 80
    pde_y_max: float | None = None  # y when null
    pde_tol: float = 1e-10
    pde_max_iters: int = 200
    output_dir: str = "out"

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.mu, self.sigma, self.delta, self.lam, self.gamma, self.cost_sell, self.cost_buy)


_INT_KEYS = {"seed", "n_paths", "workers", "trace_paths", "sweep_points", "grid_n_x", "grid_n_y", "pde_n_x", "pde_n_y", "pde_max_iters"}
_BOOL_KEYS = {"antithetic"}
_STR_KEYS = {"output_dir"}


def _check_type(key, val):
    nullable = RunConfig.__dataclass_fields__[key].default is None
    if val is None:
        if not nullable:
            raise ConfigError(f"{key} may not be null")
        return None
    if key in _BOOL_KEYS:
        if not isinstance(val, bool):
            raise ConfigError(f"{key} must be true or false")
        return val
    if key in _STR_KEYS:
        if not isinstance(val, str):
            raise ConfigError(f"{key} must be a string")
        return val
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{key} must be a number")
    if key in _INT_KEYS:
        if isinstance(val, float) and not val.is_integer():
            raise ConfigError(f"{key} must be an integer")
        return int(val)
    return float(val)


def validate_config(cfg: RunConfig) -> None:
    report = validate_params(cfg.params)
    if not report.ok:
        raise ConfigError("; ".join(report.violations))
    if not cfg.x > 0 or not math.isfinite(cfg.x):
        raise ConfigError("x must be positive and finite")
    if not cfg.y >= 0 or not math.isfinite(cfg.y):
        raise ConfigError("y must be nonnegative and finite")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be in [0, 2^64)")
    positive_ints = ("workers", "sweep_points", "grid_n_x", "grid_n_y", "pde_n_x", "pde_n_y", "pde_max_iters")
    for key in positive_ints:
        if getattr(cfg, key) < 1:
            raise ConfigError(f"{key} must be positive")
    if cfg.trace_paths < 0:
        raise ConfigError("trace_paths must be nonnegative")
    if cfg.n_paths is not None and cfg.n_paths < 2:
        raise ConfigError("n_paths must be at least 2")
    if cfg.sweep_points < 3:
        raise ConfigError("sweep_points must be at least 3")
    if cfg.pde_n_x < 4 or cfg.pde_n_y < 2:
        raise ConfigError("pde grid needs at least 4 x 2 nodes")
    for key in ("horizon", "bias_tol", "sweep_min", "sweep_max", "grid_x_min", "grid_x_max", "grid_y_max", "pde_y_max", "pde_tol"):
        val = getattr(cfg, key)
        if val is not None and not (val > 0 and math.isfinite(val)):
            raise ConfigError(f"{key} must be positive and finite")
    if cfg.sweep_min is not None and cfg.sweep_max is not None and cfg.sweep_min >= cfg.sweep_max:
        raise ConfigError("sweep_min must be below sweep_max")
    if cfg.grid_x_min is not None and cfg.grid_x_max is not None and cfg.grid_x_min >= cfg.grid_x_max:
        raise ConfigError("grid_x_min must be below grid_x_max")
    if cfg.bias_tol >= 1:
        raise ConfigError("bias_tol must be below 1")


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Read a flat JSON object; unknown keys, wrong types and invalid values are errors."""
    if path is None:
        text = resources.files(__package__).joinpath("default_config.json").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(unknown))
    values = {k: _check_type(k, v) for k, v in raw.items()}
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _check_type(k, v)
    cfg = RunConfig(**values)
    validate_config(cfg)
    return cfg


# ------------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, (str, bool, np.bool_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def _emit(summary: dict) -> None:
    print(json.dumps(_jsonable(summary), indent=2, sort_keys=False))


def _mc_config(cfg: RunConfig, n_paths: int, state: MarketState | None = None) -> EpisodeConfig:
    p = cfg.params
    horizon = cfg.horizon if cfg.horizon is not None else default_horizon(p, cfg.bias_tol)
    return EpisodeConfig(state or MarketState(cfg.x, cfg.y), horizon, n_paths, cfg.seed, cfg.antithetic)


def _region_name(code) -> str:
    return Region(int(code)).name.lower()


# ------------------------------------------------------------------ commands


def cmd_constants(cfg: RunConfig, out: Path | None):
    c = derive_constants(cfg.params)
    d = c.as_dict()
    checks = {
        "n > 1": c.n > 1,
        "m_gamma < 0": c.m_gamma < 0,
        "A_coeff < 0": c.A_coeff < 0,
        "F_barrier > cost_sell": c.F_barrier > cfg.cost_sell,
        "1 < a_gamma < n/(n-1)": 1 < c.a_gamma < c.F_infinity / cfg.cost_sell,
    }
    gap = abs(c.F_barrier - c.F_infinity) / c.F_infinity
    flags = ["near-singular-limit"] if gap < NEAR_LIMIT_RTOL else []
    passed = all(checks.values())
    files = []
    if out is not None:
        files.append(str(write_csv(out / "constants.csv", ["name", "value"], d.items())))
    summary = {
        "command": "constants",
        "passed": passed,
        "constants": d,
        "checks": checks,
        "F_gap_to_limit": gap,
        "flags": flags,
        "files": files,
    }
    return summary, passed


def cmd_value(cfg: RunConfig, out: Path | None, x: float, y: float):
    if not (x > 0 and math.isfinite(x)) or not (y >= 0 and math.isfinite(y)):
        raise ConfigError("--x must be positive and --y nonnegative")
    c = derive_constants(cfg.params)
    v, vx, vy, vxx = (float(a) for a in value_all(x, y, c))
    res = float(hjb_residual(x, y, c)) if y > 0 else 0.0
    row = {"x": x, "y": y, "region": _region_name(region_index(x, y, c)), "v": v, "v_x": vx, "v_y": vy, "v_xx": vxx, "hjb_residual": res}
    files = []
    if out is not None:
        files.append(str(write_csv(out / "value.csv", list(row), [list(row.values())])))
    return {"command": "value", "passed": True, **row, "files": files}, True


GRID_HEADER = ["x", "y", "region", "v", "v_x", "v_y", "v_xx", "hjb_residual"]


def value_grid(cfg: RunConfig):
    """Rows of the value grid: prices log-spaced, inventories evenly spaced from 0."""
    p = cfg.params
    c = derive_constants(p)
    y_max = cfg.grid_y_max if cfg.grid_y_max is not None else max(cfg.y, 1.0)
    x_min = cfg.grid_x_min if cfg.grid_x_min is not None else c.F_barrier / 4
    x_max = cfg.grid_x_max if cfg.grid_x_max is not None else 4 * c.F_barrier * math.exp(p.lam * y_max)
    xs = np.geomspace(x_min, x_max, cfg.grid_n_x)
    ys = np.linspace(0.0, y_max, cfg.grid_n_y)
    X, Y = np.meshgrid(xs, ys)
    X, Y = X.ravel(), Y.ravel()
    v, vx, vy, vxx = value_all(X, Y, c)
    res = np.where(Y > 0, hjb_residual(X, np.maximum(Y, 1e-300), c), 0.0)
    reg = region_index(X, Y, c)
    return c, X, Y, reg, v, vx, vy, vxx, res


def cmd_grid(cfg: RunConfig, out: Path):
    from .plotting import plot_value_grid

    c, X, Y, reg, v, vx, vy, vxx, res = value_grid(cfg)
    rows = zip(X, Y, (_region_name(r) for r in reg), v, vx, vy, vxx, res)
    files = [str(write_csv(out / "grid.csv", GRID_HEADER, rows))]
    files.append(str(plot_value_grid(X, Y, v, reg, c.F_barrier, cfg.lam, out / "grid.png")))
    off = (Y > 0) & ~on_boundary(X, Y, c, rtol=1e-9)
    scaled = np.abs(res[off]) / (1 + np.abs(v[off]))
    worst = float(scaled.max()) if scaled.size else 0.0
    passed = worst < 1e-8
    summary = {"command": "grid", "passed": passed, "rows": int(X.size), "max_scaled_residual_off_boundary": worst, "files": files}
    return summary, passed


TRACE_HEADER = ["path_id", "jump_index", "time", "price_pre", "inventory_pre", "sold", "gain_discounted"]


def cmd_simulate(cfg: RunConfig, out: Path):
    from .plotting import plot_paths

    p = cfg.params
    c = derive_constants(p)
    n_paths = cfg.n_paths or 100_000
    mc = _mc_config(cfg, n_paths)
    policy = barrier_policy(c.F_barrier, p.lam)
    if p.log_drift < 0:
        policy = truncate_policy(policy, mc.horizon)
    est = estimate_value(policy, p, mc, workers=cfg.workers)
    v = float(value_all(cfg.x, cfg.y, c)[0])
    z = (est.mean - v) / est.stderr if est.stderr > 0 else 0.0
    rel = abs(est.mean - v) / abs(v) if v else abs(est.mean)
    passed = abs(est.mean - v) <= max(3 * est.stderr, 0.01 * abs(v)) or est.stderr == 0 and v == 0
    records = trace_paths(policy, p, mc, min(cfg.trace_paths, n_paths)) if cfg.trace_paths else []
    rows = (
        (r.path_id, r.jump_index, r.time, r.pre_sale_state.price, r.pre_sale_state.inventory, r.sold, r.discounted_gain)
        for r in records
    )
    files = [str(write_csv(out / "simulate.csv", TRACE_HEADER, rows))]
    if records:
        by_path = {}
        for r in records:
            by_path.setdefault(r.path_id, []).append(r)
        traces = [
            ([r.time for r in rs], [r.pre_sale_state.price for r in rs], [r.pre_sale_state.inventory for r in rs])
            for rs in by_path.values()
        ]
        files.append(str(plot_paths(*zip(*traces), c.F_barrier, out / "simulate.png")))
    summary = {
        "command": "simulate",
        "passed": bool(passed),
        "policy": policy.name,
        "mean": est.mean,
        "stderr": est.stderr,
        "n_paths": est.n_paths,
        "seed": cfg.seed,
        "horizon": mc.horizon,
        "truncation_bias_bound": est.truncation_bias_bound,
        "closed_form_v": v,
        "z": z,
        "rel_gap": rel,
        "files": files,
    }
    return summary, bool(passed)


def cmd_sweep(cfg: RunConfig, out: Path):
    from .plotting import plot_sweep

    p = cfg.params
    c = derive_constants(p)
    lo = cfg.sweep_min if cfg.sweep_min is not None else cfg.cost_sell
    hi = cfg.sweep_max if cfg.sweep_max is not None else 2 * c.F_infinity
    if cfg.sweep_min is None and cfg.sweep_max is None:
        grid = default_sweep_grid(c, cfg.sweep_points)
    else:
        grid = np.union1d(np.linspace(lo, hi, cfg.sweep_points - 1), [c.F_barrier])
    mc = _mc_config(cfg, cfg.n_paths or 50_000)
    res = sweep_barrier(p, c, mc.initial_state, grid, mc, workers=cfg.workers)
    worst = float(np.max(res.shortfalls()))
    passed = worst < 3
    rows = ((F, e.mean, e.stderr, e.n_paths) for F, e in zip(res.grid, res.estimates))
    files = [str(write_csv(out / "sweep.csv", ["F", "mean", "stderr", "n_paths"], rows))]
    files.append(str(plot_sweep(res.grid, res.means, res.stderrs, c.F_barrier, out / "sweep.png")))
    summary = {
        "command": "sweep",
        "passed": passed,
        "F_gamma": c.F_barrier,
        "argmax_F": res.argmax_F,
        "argmax_overlaps_F_gamma": res.argmax_overlaps(),
        "max_excess_over_F_gamma_in_stderr": worst,
        "files": files,
    }
    return summary, passed


def cmd_pde(cfg: RunConfig, out: Path):
    from .plotting import plot_pde

    p = cfg.params
    c = derive_constants(p)
    y_max = cfg.pde_y_max if cfg.pde_y_max is not None else max(cfg.y, 1.0)
    spec = PdeGridSpec.around_barrier(c.F_barrier, p.lam, y_max, cfg.pde_n_x, cfg.pde_n_y)
    grid = pde_solve(p, spec, tol=cfg.pde_tol, max_iters=cfg.pde_max_iters)
    cmp = compare_pde(grid, c)
    X, Y = np.meshgrid(grid.x, grid.y)
    rows = zip(X.ravel(), Y.ravel(), grid.values.ravel(), cmp.closed_form.ravel(), cmp.rel_err.ravel(), grid.policy.ravel())
    files = [str(write_csv(out / "pde.csv", ["x", "y", "v_pde", "v_closed", "rel_err", "policy_l"], rows))]
    files.append(str(plot_pde(grid.x, grid.y, cmp.rel_err, grid.policy, c.F_barrier, p.lam, out / "pde.png")))
    passed = cmp.max_rel_err < 1e-2 and cmp.max_switch_cells <= 1.0
    summary = {
        "command": "pde",
        "passed": passed,
        "nodes": [cfg.pde_n_x, cfg.pde_n_y],
        "max_rel_err_interior": cmp.max_rel_err,
        "max_switch_offset_cells": cmp.max_switch_cells,
        "max_policy_iterations": max(len(h) for h in grid.history),
        "files": files,
    }
    return summary, passed


def cmd_verify(cfg: RunConfig, out: Path | None, paths_given: bool):
    """Smooth fit, residual, derivatives, MC agreement, sweep and PDE on the configured model."""
    p = cfg.params
    state = MarketState(cfg.x, cfg.y)
    y_ref = max(cfg.y, 1.0)
    mc_paths = cfg.n_paths if paths_given else 200_000
    sweep_paths = cfg.n_paths if paths_given else 50_000
    results = [
        verification.check_smooth_fit(p, y_ref),
        verification.check_hjb_residual(p, y_ref),
        verification.check_derivatives(p, cfg.seed, y_ref),
        verification.check_mc_agreement(p, cfg.seed, mc_paths, y_ref, cfg.workers),
        verification.check_sweep(p, state, cfg.seed, sweep_paths, cfg.workers),
        verification.check_pde(p, y_ref, cfg.pde_n_x, cfg.pde_n_y),
    ]
    for r in results:
        print(r.line(), file=sys.stderr)
    passed = all(r.passed for r in results)
    files = []
    if out is not None:
        header = ["key", "name", "passed", "metric", "tolerance", "seconds", "budget"]
        rows = ([r.key, r.name, r.passed, r.metric, r.tolerance, r.seconds, r.budget] for r in results)
        files.append(str(write_csv(out / "verify.csv", header, rows)))
    summary = {"command": "verify", "passed": passed, "checks": [r.as_dict() for r in results], "files": files}
    return summary, passed


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="periodic-exec", description="Periodic liquidation: closed form, Monte Carlo and PDE checks.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat JSON parameter file (default: bundled defaults)")
    ap.add_argument("--seed", type=int, help="RNG seed, overrides the config")
    ap.add_argument("--paths", type=int, help="Monte Carlo paths, overrides the config")
    ap.add_argument("--out", help="output directory for CSV and PNG files")
    ap.add_argument("--x", type=float, help="price for the value command")
    ap.add_argument("--y", type=float, help="inventory for the value command")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "n_paths": args.paths})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else None
    file_out = out or Path(cfg.output_dir)
    try:
        if args.command == "constants":
            summary, ok = cmd_constants(cfg, out)
        elif args.command == "value":
            x = args.x if args.x is not None else cfg.x
            y = args.y if args.y is not None else cfg.y
            summary, ok = cmd_value(cfg, out, x, y)
        elif args.command == "grid":
            summary, ok = cmd_grid(cfg, file_out)
        elif args.command == "simulate":
            summary, ok = cmd_simulate(cfg, file_out)
        elif args.command == "sweep":
            summary, ok = cmd_sweep(cfg, file_out)
        elif args.command == "pde":
            summary, ok = cmd_pde(cfg, file_out)
        else:
            summary, ok = cmd_verify(cfg, out, args.paths is not None)
    except (ConfigError, DegenerateFormulaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PdeConvergenceError as exc:
        print(f"pde did not converge: {exc}", file=sys.stderr)
        return 1
    _emit(summary)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
