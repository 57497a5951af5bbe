"""Experiment drivers behind the command line: compare, regions, solve."""

from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
from pathlib import Path

import numpy as np

from . import rng
from .config import ExperimentConfig
from .estimation import EstimatorState, region_case1, region_case2, run_estimator
from .metrics import MethodReport, method_report, summarize
from .simulation import WealthPaths, run_strategy, simulate_noise
from .solver import (
    FamilyPolicy,
    ValueTable,
    build_state_grid,
    solve_adaptive_family,
    solve_adaptive_robust,
    solve_robust,
    solve_true_model,
)

log = logging.getLogger(__name__)

METHODS = ("true", "robust", "adaptive", "adaptive_robust")


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return repr(float(x))


def write_csv(path: Path, header: list[str], rows) -> None:
    """Write a CSV in one shot: render to memory, then rename a temp file into place."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def horizon_tag(T: float) -> str:
    return f"T{T:.2f}"


def value_table_rows(table: ValueTable, dt: float):
    """Rows ``(t, mean, var, value, action_index, worst_mu, worst_var)``, parameters annualized."""
    T = table.horizon
    for t in range(T + 1):
        vals = table.values[t]
        for i in range(len(vals)):
            if table.states is None:
                mean = var = ""
            else:
                mean, var = table.states[t][i] / dt
            if t < T:
                wm, wv = table.worst_param[t][i] / dt
                yield (t, mean, var, vals[i], int(table.best_action[t][i]), wm, wv)
            else:
                yield (t, mean, var, vals[i], "", "", "")


def family_rows(policy: FamilyPolicy, dt: float):
    T = policy.horizon
    for j, (mu, var) in enumerate(policy.thetas / dt):
        for t in range(T + 1):
            action = int(policy.index[j, t]) if t < T else ""
            worst = (mu, var) if t < T else ("", "")
            yield (t, mu, var, policy.values[j, t], action) + worst


VALUE_HEADER = ["t", "mean", "var", "value", "action", "worst_mu", "worst_var"]


def solve_method(cfg: ExperimentConfig, horizon: float, method: str, grid=None):
    """Solve one method at one horizon; returns ``(policy, table_rows)``."""
    market = cfg.market(horizon)
    dt = cfg.dt
    if method == "true":
        table, policy = solve_true_model(market)
        return policy, value_table_rows(table, dt)
    if method == "robust":
        table, policy = solve_robust(market)
        return policy, value_table_rows(table, dt)
    if method == "adaptive":
        policy = solve_adaptive_family(market, cfg.family_grid())
        return policy, family_rows(policy, dt)
    if method == "adaptive_robust":
        if grid is None:
            grid = build_state_grid(market, cfg.n_grid_paths, cfg.seed)
        table, policy = solve_adaptive_robust(market, grid)
        return policy, value_table_rows(table, dt)
    raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def _prepare(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    return out


def run_compare(cfg: ExperimentConfig, out_dir, write_paths: bool = False) -> list[MethodReport]:
    """Solve the four methods and simulate them on shared noise, horizon by horizon."""
    out = _prepare(out_dir)
    reports: list[MethodReport] = []
    for T in cfg.horizons:
        market = cfg.market(T)
        steps = market.horizon_steps
        tag = horizon_tag(T)
        log.info("horizon %s: %d steps", T, steps)
        noise = simulate_noise(market.true_params, cfg.n_paths, steps, cfg.seed)
        summary_rows = []
        for method in METHODS:
            policy, rows = solve_method(cfg, T, method)
            write_csv(out / f"values_{method}_{tag}.csv", VALUE_HEADER, rows)
            paths = run_strategy(policy, noise, market, seed=cfg.seed)
            reports.append(method_report(method, paths.terminal, cfg.v0, cfg.r, T))
            s = summarize(paths.wealth)
            mean_action = paths.actions.mean(axis=0) if steps else np.zeros(0)
            for t in range(steps + 1):
                a = mean_action[t] if t < steps else ""
                summary_rows.append((method, t, s.mean[t], s.std[t], a))
            if write_paths:
                write_csv(out / f"paths_{method}_{tag}.csv", PATH_HEADER, path_rows(paths, cfg.dt))
        write_csv(out / f"wealth_{tag}.csv", ["method", "t", "mean", "std", "mean_action"], summary_rows)
    write_csv(out / "comparison.csv", ["method", "T", "mean", "std", "var95", "glr"],
              [(r.method, r.T, r.mean, r.std, r.var95, r.glr) for r in reports])
    return reports


PATH_HEADER = ["path", "t", "V", "action", "mean", "var"]


def path_rows(paths: WealthPaths, dt: float):
    """Long-form rows; estimator parameters annualized."""
    n, T = paths.n_paths, paths.steps
    for p in range(n):
        for t in range(T + 1):
            a = paths.actions[p, t] if t < T else ""
            yield (p, t, paths.wealth[p, t], a, paths.means[p, t] / dt, paths.variances[p, t] / dt)


REGION_HEADER = ["t", "mean", "var", "mu_lo", "mu_hi", "var_lo", "var_hi", "kappa", "contains_true"]


def region_rows(cfg: ExperimentConfig, steps: int | None = None):
    """Confidence regions along one simulated estimator path (annualized)."""
    market = cfg.market(max(cfg.horizons))
    steps = market.horizon_steps if steps is None else steps
    theta = market.true_params
    z = simulate_noise(theta, 1, steps, cfg.seed, stream=rng.REGIONS)
    means, variances = run_estimator(z, market.c0, market.space, cfg.case)
    dt = cfg.dt
    for t in range(steps + 1):
        state = EstimatorState(float(means[0, t]), float(variances[0, t]), market.c0.n + t)
        if cfg.case == "I":
            region = region_case1(state, market.sigma, cfg.alpha, market.space)
            kappa = ""
        else:
            region = region_case2(state, cfg.alpha, market.space)
            kappa = region.kappa
        lo, hi, vlo, vhi = region.bounding_box()
        yield (t, state.mean / dt, state.var / dt, lo / dt, hi / dt, vlo / dt, vhi / dt, kappa,
               region.contains(theta))


def run_regions(cfg: ExperimentConfig, out_dir) -> Path:
    out = _prepare(out_dir)
    path = out / "regions.csv"
    write_csv(path, REGION_HEADER, region_rows(cfg))
    return path


def run_solve(cfg: ExperimentConfig, method: str, out_dir) -> list[Path]:
    out = _prepare(out_dir)
    written = []
    for T in cfg.horizons:
        _, rows = solve_method(cfg, T, method)
        path = out / f"values_{method}_{horizon_tag(T)}.csv"
        write_csv(path, VALUE_HEADER, rows)
        written.append(path)
    return written
