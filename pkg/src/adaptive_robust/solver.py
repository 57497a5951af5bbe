"""Backward-induction solvers for the CRRA portfolio problem.

Everything runs on the utility scale: the investor maximizes over actions and
the adversary minimizes over parameters. With CRRA utility the value function
factors as ``W_t(v, c) = v**(1 - gamma) * Wt(c)``, so only the wealth-free
part ``Wt`` is tabulated, with ``Wt_T = 1 / (1 - gamma)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from scipy.spatial import cKDTree

from . import rng
from .estimation import (
    EstimatorState,
    ModelParams,
    ParameterSpace,
    RegionGrid,
    mean_recursion,
    mean_var_recursion,
    run_estimator,
)
from .quantization import Quantizer

Case = Literal["I", "II"]
Regions = Callable[[int, np.ndarray], np.ndarray]

THREADS_ENV = "ADAPTIVE_ROBUST_THREADS"
# states per work unit; fixed so results never depend on the thread count
_CHUNK_ELEMENTS = 1 << 20


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


class StructuralError(RuntimeError):
    """A table, grid or policy is missing data it is required to carry."""


@dataclass(frozen=True)
class MarketConfig:
    r: float
    dt: float
    gamma: float
    actions: tuple[float, ...]
    horizon_steps: int
    alpha: float
    quantizer: Quantizer
    space: ParameterSpace
    true_params: ModelParams
    case: Case = "I"
    c0: EstimatorState | None = None
    v0: float = 1.0
    region_resolution: int = 9
    ellipse_angles: int = 12
    ellipse_shells: int = 6
    theta_resolution: int = 9
    lookup: Literal["nearest", "linear"] = "nearest"

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(float(a) for a in self.actions))
        if self.gamma == 1:
            raise ValueError("gamma must differ from 1 (log utility is not supported)")
        if not self.actions:
            raise ValueError("action set is empty")
        if any(not 0.0 <= a <= 1.0 for a in self.actions):
            raise ValueError("actions must lie in [0, 1]")
        if self.horizon_steps < 0:
            raise ValueError("horizon_steps must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.case not in ("I", "II"):
            raise ValueError(f"unknown case {self.case!r}")
        if self.case == "I" and self.space.var_lo != self.space.var_hi:
            raise ValueError("case I needs a collapsed variance axis (known sigma)")
        if self.lookup == "linear" and self.case != "I":
            raise ValueError("linear continuation lookup is only available in case I")
        if self.c0 is None:
            object.__setattr__(self, "c0", EstimatorState(self.true_params.mu, self.true_params.var, 0))
        if self.v0 <= 0:
            raise ValueError("initial wealth must be positive")
        self._check_positive_returns()

    def _check_positive_returns(self):
        # gross return is affine in (mu, sigma) for fixed a and z: corners suffice
        s = self.space
        z = self.quantizer.points
        for a in self.actions:
            for mu in (s.mu_lo, s.mu_hi, self.true_params.mu):
                for var in (s.var_lo, s.var_hi, self.true_params.var):
                    gross = 1.0 + self.r + a * (mu + math.sqrt(var) * z)
                    if np.any(gross <= 0):
                        raise ValueError(
                            f"gross return 1 + r + a*z is non-positive for a={a}, "
                            f"mu={mu}, var={var}; shrink the parameter space or actions")

    @property
    def action_array(self) -> np.ndarray:
        return np.asarray(self.actions)

    @property
    def terminal(self) -> float:
        return 1.0 / (1.0 - self.gamma)

    @property
    def sigma(self) -> float:
        """Known per-step volatility (case I)."""
        return math.sqrt(self.space.var_lo)

    def theta_grid(self, resolution: int | None = None) -> np.ndarray:
        k = self.theta_resolution if resolution is None else resolution
        return self.space.grid(k, k)

    def confidence_regions(self, resolution: int | None = None) -> RegionGrid:
        if self.case == "I":
            res = self.region_resolution if resolution is None else resolution
            return RegionGrid("I", self.alpha, self.space, sigma=self.sigma, resolution=res)
        res = self.ellipse_angles if resolution is None else resolution
        return RegionGrid("II", self.alpha, self.space, resolution=res, shells=self.ellipse_shells)


class FixedRegions:
    """The same parameter set at every time and state."""

    def __init__(self, thetas):
        self.thetas = np.atleast_2d(np.asarray(thetas, dtype=float))

    def __call__(self, n: int, states: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.thetas, (len(states),) + self.thetas.shape)


@dataclass
class StateGrid:
    case: Case
    states: list[np.ndarray]
    n0: int = 0

    def __post_init__(self):
        for t, s in enumerate(self.states):
            if len(s) == 0:
                raise StructuralError(f"state grid is empty at t={t}")

    @property
    def horizon(self) -> int:
        return len(self.states) - 1


class GridLookup:
    """Nearest-neighbour (or linear, 1-d only) lookup on one time slice.

    Distances are Euclidean after scaling each axis by the parameter-space
    width; collapsed axes are ignored. Ties go to the lower grid index.
    """

    def __init__(self, points: np.ndarray, space: ParameterSpace, kind: str = "nearest"):
        self.points = np.asarray(points, dtype=float)
        widths = space.widths
        self.axes = np.flatnonzero(widths > 0)
        self.scale = widths[self.axes]
        self.kind = kind
        self._tree = None
        coords = self._coords(self.points)
        if coords.shape[1] == 1:
            order = np.argsort(coords[:, 0], kind="stable")
            self._order = order
            self._sorted = coords[order, 0]
        elif coords.shape[1] == 2:
            self._tree = cKDTree(coords)
            self._coords_all = coords
        if kind == "linear" and coords.shape[1] != 1:
            raise ValueError("linear lookup needs exactly one varying axis")

    def _coords(self, pts: np.ndarray) -> np.ndarray:
        return pts[..., self.axes] / self.scale

    def index(self, query: np.ndarray, workers: int = 1) -> np.ndarray:
        q = self._coords(np.asarray(query, dtype=float))
        shape = q.shape[:-1]
        if q.shape[-1] == 0 or len(self.points) == 1:
            return np.zeros(shape, dtype=np.intp)
        q = q.reshape(-1, q.shape[-1])
        if self._tree is None:
            x = q[:, 0]
            s = self._sorted
            right = np.clip(np.searchsorted(s, x, side="left"), 1, len(s) - 1)
            left = right - 1
            # stable sort: the first entry of a run of equal values has the lowest index
            left = np.searchsorted(s, s[left], side="left")
            right = np.searchsorted(s, s[right], side="left")
            dl, dr = x - s[left], s[right] - x
            pos = np.where(dr < dl, right, left)
            tie = dr == dl
            pos = np.where(tie & (self._order[right] < self._order[left]), right, pos)
            return self._order[pos].reshape(shape)
        d, idx = self._tree.query(q, k=2, workers=workers)
        best = idx[:, 0]
        # exact ties are rare; resolve them against every point to get the lowest index
        for i in np.flatnonzero(d[:, 0] == d[:, 1]):
            dist = ((self._coords_all - q[i]) ** 2).sum(axis=1)
            best[i] = np.flatnonzero(dist == dist.min())[0]
        return best.reshape(shape)

    def values(self, table: np.ndarray, query: np.ndarray, workers: int = 1) -> np.ndarray:
        if self.kind == "linear" and len(self.points) > 1:
            q = self._coords(np.asarray(query, dtype=float))[..., 0]
            return np.interp(q, self._sorted, np.asarray(table)[self._order])
        return np.asarray(table)[self.index(query, workers)]


@dataclass
class ValueTable:
    """Per-step values with the optimal action and worst-case parameter selectors.

    ``states[t]`` holds the estimator states (rows of per-step ``(mean, var)``)
    for grid methods and is ``None`` for the scalar recursions.
    """

    method: str
    values: list[np.ndarray]
    best_action: list[np.ndarray]
    worst_param: list[np.ndarray]
    states: list[np.ndarray] | None = None

    @property
    def horizon(self) -> int:
        return len(self.values) - 1

    @property
    def value0(self) -> float:
        return float(self.values[0][0])


class Policy:
    method: str
    actions: np.ndarray
    horizon: int

    def action_index(self, t: int, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_t(self, t: int):
        if not 0 <= t < self.horizon:
            raise StructuralError(f"{self.method} policy is not defined at t={t}")

    def action(self, t: int, state) -> float:
        if isinstance(state, EstimatorState):
            state = (state.mean, state.var)
        row = np.asarray(state, dtype=float).reshape(1, 2)
        return float(self.actions[self.action_index(t, row)[0]])


class ScalarPolicy(Policy):
    """Action depends on time only."""

    def __init__(self, method: str, actions, index: np.ndarray):
        self.method = method
        self.actions = np.asarray(actions, dtype=float)
        self.index = np.asarray(index, dtype=np.intp)
        self.horizon = len(self.index)

    def action_index(self, t, states):
        self._check_t(t)
        return np.full(len(states), self.index[t], dtype=np.intp)


class FamilyPolicy(Policy):
    """Certainty-equivalent control: the known-parameter policy of the nearest family member."""

    def __init__(self, actions, thetas: np.ndarray, index: np.ndarray, space: ParameterSpace,
                 values: np.ndarray | None = None, method: str = "adaptive"):
        self.method = method
        self.actions = np.asarray(actions, dtype=float)
        self.thetas = np.asarray(thetas, dtype=float)
        self.index = np.asarray(index, dtype=np.intp)  # (family, T)
        self.values = values  # (family, T + 1) known-parameter values
        self.horizon = self.index.shape[1]
        self._lookup = GridLookup(self.thetas, space)

    def member(self, states: np.ndarray) -> np.ndarray:
        return self._lookup.index(states)

    def action_index(self, t, states):
        self._check_t(t)
        return self.index[self.member(np.asarray(states, dtype=float)), t]


class GridPolicy(Policy):
    """Feedback table on the state grid, read by nearest-neighbour lookup."""

    def __init__(self, actions, grid: StateGrid, index: list[np.ndarray], space: ParameterSpace,
                 method: str = "adaptive_robust"):
        self.method = method
        self.actions = np.asarray(actions, dtype=float)
        self.grid = grid
        self.index = [np.asarray(i, dtype=np.intp) for i in index]
        self.horizon = len(self.index)
        self._lookups = [GridLookup(grid.states[t], space) for t in range(self.horizon)]

    def action_index(self, t, states):
        self._check_t(t)
        return self.index[t][self._lookups[t].index(np.asarray(states, dtype=float))]


def stage_values(actions: np.ndarray, r: float, gamma: float, q: Quantizer,
                 thetas: np.ndarray, continuation: np.ndarray) -> np.ndarray:
    """Quantized one-step expected utility for every (state, action, parameter).

    ``thetas`` is ``(m, k, 2)``, ``continuation`` is ``(m, k, nz)`` (values at
    the propagated states) and ``actions`` is ``(A,)`` or per-state ``(m, A)``.
    Returns ``(m, A, k)``.
    """
    mu = thetas[..., 0]
    sd = np.sqrt(thetas[..., 1])
    acts = np.asarray(actions, dtype=float)
    if acts.ndim == 1:
        acts = np.broadcast_to(acts, (thetas.shape[0], acts.size))
    out = np.zeros((thetas.shape[0], acts.shape[1], thetas.shape[1]))
    power = 1.0 - gamma
    for j, (eps, w) in enumerate(zip(q.points.tolist(), q.weights.tolist())):
        z = mu + sd * eps
        gross = 1.0 + r + acts[:, :, None] * z[:, None, :]
        out += (w * np.power(gross, power)) * continuation[:, None, :, j]
    return out


def _noise(thetas: np.ndarray, q: Quantizer) -> np.ndarray:
    return thetas[..., 0:1] + np.sqrt(thetas[..., 1:2]) * q.points


def _propagate(states: np.ndarray, z: np.ndarray, n: int, space: ParameterSpace, case: Case) -> np.ndarray:
    """Estimator update for every state (rows) and every outcome in ``z`` (m, ...)."""
    shape = z.shape
    extra = (slice(None),) + (None,) * (len(shape) - 1)
    mean = states[:, 0][extra]
    var = states[:, 1][extra]
    if case == "I":
        new_mean = mean_recursion(mean, z, n, space)
        new_var = np.broadcast_to(var, shape)
    else:
        new_mean, new_var = mean_var_recursion(mean, var, z, n, space)
    return np.stack([np.broadcast_to(new_mean, shape), np.broadcast_to(new_var, shape)], axis=-1)


def _scalar_recursion(cfg: MarketConfig, thetas: np.ndarray, method: str) -> tuple[ValueTable, ScalarPolicy]:
    """Backward recursion without state: one value per step, adversary over ``thetas``."""
    T = cfg.horizon_steps
    nz = len(cfg.quantizer)
    th = np.asarray(thetas, dtype=float)[None]
    values = [np.empty(1) for _ in range(T + 1)]
    values[T][0] = cfg.terminal
    best = [np.empty(1, dtype=np.intp) for _ in range(T)]
    worst = [np.empty((1, 2)) for _ in range(T)]
    for t in reversed(range(T)):
        cont = np.full((1, th.shape[1], nz), values[t + 1][0])
        v = stage_values(cfg.action_array, cfg.r, cfg.gamma, cfg.quantizer, th, cont)[0]
        k = np.argmin(v, axis=1)
        adv = v[np.arange(v.shape[0]), k]
        a = int(np.argmax(adv))
        values[t][0] = adv[a]
        best[t][0] = a
        worst[t][0] = th[0, k[a]]
    table = ValueTable(method, values, best, worst)
    return table, ScalarPolicy(method, cfg.actions, [b[0] for b in best])


def solve_true_model(cfg: MarketConfig, theta: ModelParams | None = None) -> tuple[ValueTable, ScalarPolicy]:
    theta = cfg.true_params if theta is None else theta
    return _scalar_recursion(cfg, [theta.as_array()], "true")


def solve_robust(cfg: MarketConfig, thetas: np.ndarray | None = None) -> tuple[ValueTable, ScalarPolicy]:
    """Classical (equivalently strong) robust control over the discretized full parameter set."""
    thetas = cfg.theta_grid() if thetas is None else thetas
    return _scalar_recursion(cfg, thetas, "robust")


def solve_adaptive_family(cfg: MarketConfig, theta_grid: np.ndarray) -> FamilyPolicy:
    """Known-parameter policies for every family member, looked up at the running estimate."""
    th = np.atleast_2d(np.asarray(theta_grid, dtype=float))
    if len(th) == 0:
        raise ValueError("theta_grid is empty")
    s = cfg.space
    if np.any(th < s.lower) or np.any(th > s.upper):
        raise ValueError("theta_grid must lie inside the parameter space")
    T = cfg.horizon_steps
    nz = len(cfg.quantizer)
    fam = len(th)
    values = np.empty((fam, T + 1))
    values[:, T] = cfg.terminal
    index = np.empty((fam, T), dtype=np.intp)
    thetas = th[:, None, :]
    for t in reversed(range(T)):
        cont = np.broadcast_to(values[:, t + 1, None, None], (fam, 1, nz))
        v = stage_values(cfg.action_array, cfg.r, cfg.gamma, cfg.quantizer, thetas, cont)[:, :, 0]
        index[:, t] = np.argmax(v, axis=1)
        values[:, t] = v[np.arange(fam), index[:, t]]
    return FamilyPolicy(cfg.actions, th, index, s, values)


def build_state_grid(cfg: MarketConfig, n_paths: int, seed: int, case: Case | None = None) -> StateGrid:
    """Grid of estimator states visited by ``n_paths`` simulated paths under the true model."""
    case = cfg.case if case is None else case
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    T = cfg.horizon_steps
    eps = rng.standard_normals(seed, n_paths, T, stream=rng.GRID)
    z = cfg.true_params.mu + cfg.true_params.sigma * eps
    means, variances = run_estimator(z, cfg.c0, cfg.space, case)
    states = []
    for t in range(T + 1):
        if case == "I":
            mus = np.unique(means[:, t])
            pts = np.column_stack([mus, np.full(len(mus), cfg.c0.var)])
        else:
            pts = np.unique(np.column_stack([means[:, t], variances[:, t]]), axis=0)
        states.append(pts)
    return StateGrid(case, states, cfg.c0.n)


def _chunks(m: int, per_state: int) -> list[slice]:
    size = max(1, _CHUNK_ELEMENTS // max(per_state, 1))
    return [slice(i, min(i + size, m)) for i in range(0, m, size)]


def _grid_backward(cfg: MarketConfig, grid: StateGrid, regions: Regions,
                   policy: Policy | None = None, method: str = "adaptive_robust") -> ValueTable:
    """Backward induction on the state grid.

    Without ``policy`` the investor maximizes over actions; with one, the
    action is fixed by the policy and only the adversary optimizes.
    """
    case = grid.case
    T = cfg.horizon_steps
    if grid.horizon != T:
        raise StructuralError(f"grid horizon {grid.horizon} does not match config horizon {T}")
    q = cfg.quantizer
    acts = cfg.action_array
    workers = thread_count()
    values: list[np.ndarray] = [None] * (T + 1)  # type: ignore[list-item]
    best: list[np.ndarray] = [None] * T  # type: ignore[list-item]
    worst: list[np.ndarray] = [None] * T  # type: ignore[list-item]
    values[T] = np.full(len(grid.states[T]), cfg.terminal)

    for t in reversed(range(T)):
        S = grid.states[t]
        n = grid.n0 + t
        m = len(S)
        lookup = GridLookup(grid.states[t + 1], cfg.space, cfg.lookup)
        w_next = values[t + 1]
        fixed = None if policy is None else policy.action_index(t, S)
        v_out = np.empty(m)
        b_out = np.empty(m, dtype=np.intp)
        p_out = np.empty((m, 2))

        def work(sl: slice):
            th = np.ascontiguousarray(regions(n, S[sl]))
            z = _noise(th, q)
            nxt = _propagate(S[sl], z, n, cfg.space, case)
            cont = lookup.values(w_next, nxt)
            a_set = acts if fixed is None else acts[fixed[sl]][:, None]
            v = stage_values(a_set, cfg.r, cfg.gamma, q, th, cont)
            k = np.argmin(v, axis=2)
            adv = np.take_along_axis(v, k[:, :, None], axis=2)[:, :, 0]
            a = np.argmax(adv, axis=1)
            rows = np.arange(adv.shape[0])
            v_out[sl] = adv[rows, a]
            b_out[sl] = a if fixed is None else fixed[sl]
            p_out[sl] = th[rows, k[rows, a]]

        per_state = (len(acts) if fixed is None else 1) * 200 * len(q)
        chunks = _chunks(m, per_state)
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(workers) as ex:
                list(ex.map(work, chunks))
        else:
            for sl in chunks:
                work(sl)
        values[t], best[t], worst[t] = v_out, b_out, p_out
    return ValueTable(method, values, best, worst, states=list(grid.states))


def solve_adaptive_robust(cfg: MarketConfig, grid: StateGrid, case: Case | None = None,
                          region_resolution: int | None = None,
                          regions: Regions | None = None) -> tuple[ValueTable, GridPolicy]:
    """Adaptive robust Bellman recursion on the simulated state grid.

    The adversary picks, at each grid state, the worst parameter of the
    discretized confidence region; continuation values are read at the
    propagated estimator state from the next time slice.
    """
    if case is not None and case != grid.case:
        raise ValueError(f"grid was built for case {grid.case}, not {case}")
    regions = cfg.confidence_regions(region_resolution) if regions is None else regions
    table = _grid_backward(cfg, grid, regions)
    return table, GridPolicy(cfg.actions, grid, table.best_action, cfg.space)


def evaluate_policy_worstcase(cfg: MarketConfig, policy: Policy, grid: StateGrid,
                              case: Case | None = None, regions: Regions | None = None,
                              region_resolution: int | None = None) -> float:
    """Value of a fixed policy against the adversary's best response on the same discretization."""
    if case is not None and case != grid.case:
        raise ValueError(f"grid was built for case {grid.case}, not {case}")
    regions = cfg.confidence_regions(region_resolution) if regions is None else regions
    return _grid_backward(cfg, grid, regions, policy=policy, method=policy.method).value0


def step_utility(a: float, theta: ModelParams, q: Quantizer, r: float, gamma: float,
                 continuation: Callable, propagate: Callable, c) -> float:
    """Reference one-step expectation, evaluated point by point."""
    total = 0.0
    for eps, w in zip(q.points.tolist(), q.weights.tolist()):
        z = theta.mu + theta.sigma * eps
        gross = 1.0 + r + a * z
        if gross <= 0:
            raise ValueError(f"non-positive gross return {gross} for a={a}, z={z}")
        total += w * gross ** (1.0 - gamma) * continuation(propagate(c, z))
    return total
