"""Monte Carlo wealth paths under the true model for any policy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .estimation import ModelParams, run_estimator
from .solver import Case, MarketConfig, Policy, StructuralError


@dataclass
class WealthPaths:
    method: str
    wealth: np.ndarray     # (paths, T + 1)
    actions: np.ndarray    # (paths, T)
    means: np.ndarray      # (paths, T + 1), per-step estimates
    variances: np.ndarray  # (paths, T + 1)
    noise: np.ndarray      # (paths, T), realized excess returns
    seed: int | None = None

    @property
    def n_paths(self) -> int:
        return self.wealth.shape[0]

    @property
    def steps(self) -> int:
        return self.actions.shape[1]

    @property
    def terminal(self) -> np.ndarray:
        return self.wealth[:, -1]


def simulate_noise(theta_star: ModelParams, n_paths: int, steps: int, seed: int,
                   stream: int = rng.EVALUATION) -> np.ndarray:
    """Excess returns ``mu + sigma * eps`` with one Philox substream per path."""
    eps = rng.standard_normals(seed, n_paths, steps, stream)
    return theta_star.mu + theta_star.sigma * eps


def run_strategy(policy: Policy, noise: np.ndarray, cfg: MarketConfig, case: Case | None = None,
                 seed: int | None = None) -> WealthPaths:
    """Roll ``policy`` forward through the wealth recursion with online estimation.

    The estimator sees each excess return only after the allocation for that
    period has been chosen.
    """
    case = cfg.case if case is None else case
    z = np.atleast_2d(np.asarray(noise, dtype=float))
    n_paths, T = z.shape
    means, variances = run_estimator(z, cfg.c0, cfg.space, case)
    wealth = np.empty((n_paths, T + 1))
    wealth[:, 0] = cfg.v0
    acts = np.empty((n_paths, T))
    for t in range(T):
        states = np.column_stack([means[:, t], variances[:, t]])
        try:
            idx = policy.action_index(t, states)
        except (IndexError, KeyError) as exc:
            raise StructuralError(f"{policy.method} policy lookup failed at t={t}") from exc
        a = policy.actions[idx]
        acts[:, t] = a
        wealth[:, t + 1] = wealth[:, t] * (1.0 + cfg.r + a * z[:, t])
    return WealthPaths(policy.method, wealth, acts, means, variances, z, seed)
