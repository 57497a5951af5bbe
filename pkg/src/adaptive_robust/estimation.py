"""Recursive estimators of (mu, sigma^2) and their confidence regions.

All quantities are per rebalancing step. States are carried as
``(mean, var)`` pairs; in the known-variance case ``var`` is frozen at the
known value and only the mean is updated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .quantization import chi2_2_quantile, normal_quantile

# membership slack for points placed exactly on an ellipse boundary
_BOUNDARY_RTOL = 1e-9


@dataclass(frozen=True)
class ParameterSpace:
    mu_lo: float
    mu_hi: float
    var_lo: float
    var_hi: float

    def __post_init__(self):
        if not self.mu_lo <= self.mu_hi:
            raise ValueError(f"mu_lo={self.mu_lo} > mu_hi={self.mu_hi}")
        if not 0.0 <= self.var_lo <= self.var_hi:
            raise ValueError(f"need 0 <= var_lo <= var_hi, got [{self.var_lo}, {self.var_hi}]")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.mu_lo, self.var_lo])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.mu_hi, self.var_hi])

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, p: "ModelParams") -> bool:
        return self.mu_lo <= p.mu <= self.mu_hi and self.var_lo <= p.var <= self.var_hi

    def grid(self, mu_points: int, var_points: int = 1) -> np.ndarray:
        """Rectangular grid of ``(mu, var)`` rows, endpoints included.

        A collapsed axis contributes a single value whatever the requested count.
        """
        mus = _linspace(self.mu_lo, self.mu_hi, mu_points)
        vs = _linspace(self.var_lo, self.var_hi, var_points)
        m, v = np.meshgrid(mus, vs, indexing="ij")
        return np.column_stack([m.ravel(), v.ravel()])


def _linspace(lo: float, hi: float, k: int) -> np.ndarray:
    if lo == hi or k <= 1:
        return np.array([lo], dtype=float)
    return _spaced(np.array([lo]), np.array([hi]), k)[0]


def _spaced(lo: np.ndarray, hi: np.ndarray, k: int) -> np.ndarray:
    """Rows of ``k`` equally spaced values from ``lo`` to ``hi`` inclusive."""
    step = (hi - lo) / (k - 1)
    out = np.arange(k)[None, :] * step[:, None] + lo[:, None]
    out[:, -1] = hi
    return out


@dataclass(frozen=True)
class ModelParams:
    mu: float
    var: float

    def __post_init__(self):
        if self.var < 0:
            raise ValueError(f"variance must be >= 0, got {self.var}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.var)

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.var])


@dataclass(frozen=True)
class EstimatorState:
    mean: float
    var: float
    n: int = 0


def project(p: ModelParams, space: ParameterSpace) -> ModelParams:
    """Closest point of the rectangle (coordinatewise clamp)."""
    return ModelParams(
        min(max(p.mu, space.mu_lo), space.mu_hi),
        min(max(p.var, space.var_lo), space.var_hi),
    )


# The array recursions below are the single source of truth; the scalar
# wrappers call them so simulation and standalone estimation agree bit-for-bit.

def mean_recursion(mean, z, t, space: ParameterSpace):
    t = float(t)
    raw = (t / (t + 1.0)) * mean + (1.0 / (t + 1.0)) * z
    return np.minimum(np.maximum(raw, space.mu_lo), space.mu_hi)


def mean_var_recursion(mean, var, z, t, space: ParameterSpace):
    t = float(t)
    d = mean - z
    raw_mean = (t / (t + 1.0)) * mean + (1.0 / (t + 1.0)) * z
    raw_var = (t / (t + 1.0)) * var + (t / ((t + 1.0) * (t + 1.0))) * (d * d)
    return (
        np.minimum(np.maximum(raw_mean, space.mu_lo), space.mu_hi),
        np.minimum(np.maximum(raw_var, space.var_lo), space.var_hi),
    )


def update_mean(state: EstimatorState, z: float, space: ParameterSpace) -> EstimatorState:
    mean = mean_recursion(state.mean, z, state.n, space)
    return EstimatorState(float(mean), state.var, state.n + 1)


def update_mean_var(state: EstimatorState, z: float, space: ParameterSpace) -> EstimatorState:
    mean, var = mean_var_recursion(state.mean, state.var, z, state.n, space)
    return EstimatorState(float(mean), float(var), state.n + 1)


@dataclass(frozen=True)
class ConfidenceRegion:
    """Interval, ellipsoid or (no information yet) the whole rectangle, always inside ``clip``.

    For an interval ``center`` holds ``(mean, known var)`` and ``radius`` the
    half-width before clipping; ``kappa`` and ``n`` parametrize the ellipsoid.
    """

    kind: Literal["interval", "ellipsoid", "box"]
    center: tuple[float, float]
    clip: ParameterSpace
    radius: float = 0.0
    kappa: float = 0.0
    n: int = 0

    @property
    def interval(self) -> tuple[float, float]:
        c = self.center[0]
        return max(c - self.radius, self.clip.mu_lo), min(c + self.radius, self.clip.mu_hi)

    @property
    def semi_axes(self) -> tuple[float, float]:
        """Half-widths of the unclipped ellipsoid along mu and var."""
        v = self.center[1]
        return math.sqrt(self.kappa * v / self.n), v * math.sqrt(2.0 * self.kappa / self.n)

    def bounding_box(self) -> tuple[float, float, float, float]:
        """(mu_lo, mu_hi, var_lo, var_hi) of the clipped region."""
        s = self.clip
        if self.kind == "box":
            return s.mu_lo, s.mu_hi, s.var_lo, s.var_hi
        if self.kind == "interval":
            lo, hi = self.interval
            return lo, hi, self.center[1], self.center[1]
        c, v = self.center
        am, av = self.semi_axes
        return (max(c - am, s.mu_lo), min(c + am, s.mu_hi),
                max(v - av, s.var_lo), min(v + av, s.var_hi))

    def ellipsoid_statistic(self, mu: float, var: float) -> float:
        c, v = self.center
        return self.n / v * (c - mu) ** 2 + self.n / (2.0 * v * v) * (v - var) ** 2

    def contains(self, p: ModelParams) -> bool:
        if not self.clip.contains(p):
            return False
        if self.kind == "box":
            return True
        if self.kind == "interval":
            lo, hi = self.interval
            return lo <= p.mu <= hi and p.var == self.center[1]
        return self.ellipsoid_statistic(p.mu, p.var) <= self.kappa * (1.0 + _BOUNDARY_RTOL)


def region_case1(state: EstimatorState, sigma: float, alpha: float,
                 space: ParameterSpace) -> ConfidenceRegion:
    """Interval ``mean +- sigma/sqrt(n) * q_{1-alpha/2}`` for an unknown mean."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    center = (state.mean, state.var)
    if state.n <= 0:
        return ConfidenceRegion("interval", center, space, radius=math.inf, n=0)
    radius = sigma / math.sqrt(state.n) * normal_quantile(1.0 - alpha / 2.0)
    return ConfidenceRegion("interval", center, space, radius=radius, n=state.n)


def region_case2(state: EstimatorState, alpha: float, space: ParameterSpace) -> ConfidenceRegion:
    """Ellipsoidal region for ``(mu, var)`` at chi2(2) level ``1 - alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    center = (state.mean, state.var)
    kappa = chi2_2_quantile(1.0 - alpha)
    if state.n <= 0 or state.var <= 0.0:
        return ConfidenceRegion("box", center, space, kappa=kappa, n=state.n)
    return ConfidenceRegion("ellipsoid", center, space, kappa=kappa, n=state.n)


def _directions(n_angles: int) -> np.ndarray:
    """Unit directions at equal angles; axis directions are exact."""
    k = np.arange(n_angles)
    ang = 2.0 * np.pi * k / n_angles
    d = np.column_stack([np.cos(ang), np.sin(ang)])
    for i in range(n_angles):
        if (4 * i) % n_angles == 0:
            quarter = (4 * i) // n_angles
            d[i] = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][quarter]
    return d


_AXIS_DIRS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


def _ellipse_offsets(n_angles: int, n_shells: int) -> np.ndarray:
    """Unit-ellipse offsets: center, then shells outward, axis extremes appended."""
    dirs = _directions(n_angles)
    radii = np.arange(1, n_shells + 1) / n_shells
    rings = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
    return np.vstack([np.zeros((1, 2)), rings, _AXIS_DIRS])


def _unique_rows(points: np.ndarray) -> np.ndarray:
    _, idx = np.unique(points, axis=0, return_index=True)
    return points[np.sort(idx)]


def discretize_region(region: ConfidenceRegion, resolution: int,
                      shells: int | None = None) -> list[ModelParams]:
    """Finite search set for the adversary.

    Interval: ``resolution`` equally spaced points over the clipped interval.
    Ellipsoid: ``resolution`` angles times ``shells`` radial shells (default
    ``resolution - 1``) plus the center, clipped to the rectangle and
    deduplicated in enumeration order. Box: ``resolution`` points per
    non-degenerate axis.
    """
    pts = _region_points(region, resolution, shells)
    return [ModelParams(float(m), float(v)) for m, v in _unique_rows(pts)]


def _region_points(region: ConfidenceRegion, resolution: int, shells: int | None) -> np.ndarray:
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    s = region.clip
    if region.kind == "interval":
        lo, hi = region.interval
        mus = _linspace(lo, hi, resolution)
        return np.column_stack([mus, np.full(mus.size, region.center[1])])
    if region.kind == "box":
        return s.grid(resolution, resolution)
    shells = resolution - 1 if shells is None else shells
    am, av = region.semi_axes
    off = _ellipse_offsets(resolution, shells)
    pts = np.column_stack([region.center[0] + am * off[:, 0], region.center[1] + av * off[:, 1]])
    return np.clip(pts, s.lower, s.upper)


class RegionGrid:
    """Batched confidence regions for many estimator states at once.

    Produces, for each state, the same points as :func:`discretize_region`
    (before deduplication), padded to a common length by repeating the first
    point so a minimum over the padded axis equals the minimum over the set.
    """

    def __init__(self, case: Literal["I", "II"], alpha: float, space: ParameterSpace,
                 sigma: float | None = None, resolution: int = 9, shells: int | None = None):
        self.case = case
        self.alpha = alpha
        self.space = space
        self.sigma = sigma
        self.resolution = resolution
        self.shells = resolution - 1 if shells is None else shells
        if case == "I":
            if sigma is None:
                raise ValueError("case I needs the known sigma")
            self._q = normal_quantile(1.0 - alpha / 2.0)
        else:
            self._kappa = chi2_2_quantile(1.0 - alpha)
            self._offsets = _ellipse_offsets(resolution, self.shells)
            self._box = space.grid(resolution, resolution)

    def __call__(self, n: int, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        s = self.space
        if self.case == "I":
            mean = states[:, 0]
            if n <= 0:
                lo = np.full(mean.shape, s.mu_lo)
                hi = np.full(mean.shape, s.mu_hi)
            else:
                radius = self.sigma / math.sqrt(n) * self._q
                lo = np.maximum(mean - radius, s.mu_lo)
                hi = np.minimum(mean + radius, s.mu_hi)
            mus = _spaced(lo, hi, self.resolution)
            var = np.broadcast_to(states[:, 1:2], mus.shape)
            return np.stack([mus, var], axis=-1)

        m = states.shape[0]
        off = self._offsets
        n_box = self._box.shape[0]
        ell = (states[:, 1] > 0.0) & (n > 0)
        width = max(off.shape[0] if ell.any() else 0, n_box if not ell.all() else 0)
        out = np.empty((m, width, 2))
        if np.any(ell):
            c = states[ell]
            am = np.sqrt(self._kappa * c[:, 1] / n)
            av = c[:, 1] * math.sqrt(2.0 * self._kappa / n)
            pts = np.stack([c[:, 0:1] + am[:, None] * off[None, :, 0],
                            c[:, 1:2] + av[:, None] * off[None, :, 1]], axis=-1)
            pts = np.clip(pts, s.lower, s.upper)
            pad = np.repeat(pts[:, :1, :], width - off.shape[0], axis=1)
            out[ell] = np.concatenate([pts, pad], axis=1)
        if np.any(~ell):
            box = np.concatenate([self._box, np.repeat(self._box[:1], width - n_box, axis=0)])
            out[~ell] = box[None]
        return out


def run_estimator(z: np.ndarray, start: EstimatorState, space: ParameterSpace,
                  case: Literal["I", "II"]) -> tuple[np.ndarray, np.ndarray]:
    """Estimator trajectories for a matrix of observations (paths x steps).

    Returns ``(means, vars)``, each shaped ``(paths, steps + 1)`` with column 0
    holding the initial guess.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n_paths, steps = z.shape
    means = np.empty((n_paths, steps + 1))
    variances = np.empty((n_paths, steps + 1))
    means[:, 0] = start.mean
    variances[:, 0] = start.var
    for t in range(steps):
        n = start.n + t
        if case == "I":
            means[:, t + 1] = mean_recursion(means[:, t], z[:, t], n, space)
            variances[:, t + 1] = variances[:, t]
        else:
            means[:, t + 1], variances[:, t + 1] = mean_var_recursion(
                means[:, t], variances[:, t], z[:, t], n, space)
    return means, variances
