"""Evaluation statistics on simulated terminal wealth."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


def _discounted_pnl(terminal_wealth, v0: float, r: float, T_years: float) -> np.ndarray:
    v = np.asarray(terminal_wealth, dtype=float)
    if v.size == 0:
        raise ValueError("terminal wealth sample is empty")
    return math.exp(-r * T_years) * v - v0


def glr(terminal_wealth, v0: float, r: float, T_years: float) -> float:
    """Gain-to-loss ratio of the discounted P&L.

    Zero when the mean P&L is not positive; ``inf`` when it is positive and no
    path loses.
    """
    d = _discounted_pnl(terminal_wealth, v0, r, T_years)
    gain = d.mean()
    if gain <= 0:
        return 0.0
    loss = np.maximum(-d, 0.0).mean()
    if loss == 0:
        return math.inf
    return float(gain / loss)


def var95(terminal_wealth, v0: float, r: float, T_years: float) -> float:
    """Empirical 95% value-at-risk of the discounted loss ``v0 - exp(-rT) V_T``.

    Smallest order statistic ``v`` with at most 5% of losses strictly above it.
    """
    loss = np.sort(-_discounted_pnl(terminal_wealth, v0, r, T_years))
    n = loss.size
    # count(loss > loss[j]) = n - (number of losses <= loss[j])
    at_or_below = np.searchsorted(loss, loss, side="right")
    ok = (n - at_or_below) * 20 <= n
    return float(loss[np.argmax(ok)])


@dataclass
class WealthSummary:
    mean: np.ndarray
    std: np.ndarray
    single_path: bool = False


def summarize(wealth: np.ndarray) -> WealthSummary:
    """Per-step sample mean and standard deviation (ddof=1) across paths."""
    w = np.atleast_2d(np.asarray(getattr(wealth, "wealth", wealth), dtype=float))
    if w.shape[0] < 2:
        warnings.warn("fewer than two paths: standard deviation reported as 0", RuntimeWarning)
        return WealthSummary(w.mean(axis=0), np.zeros(w.shape[1]), single_path=True)
    return WealthSummary(w.mean(axis=0), w.std(axis=0, ddof=1))


@dataclass
class MethodReport:
    method: str
    T: float
    mean: float
    std: float
    var95: float
    glr: float


def method_report(method: str, terminal_wealth, v0: float, r: float, T_years: float) -> MethodReport:
    v = np.asarray(terminal_wealth, dtype=float)
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return MethodReport(method, T_years, float(v.mean()), std,
                        var95(v, v0, r, T_years), glr(v, v0, r, T_years))
