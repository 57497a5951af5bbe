"""Optimal quantizers of the standard normal law and scalar quantile helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class QuantizerConvergenceError(RuntimeError):
    """Lloyd iteration did not reach the requested stationarity tolerance."""

    def __init__(self, n: int, residual: float, iterations: int):
        super().__init__(
            f"{n}-point quantizer not stationary after {iterations} iterations "
            f"(residual {residual:.3e})"
        )
        self.n = n
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class Quantizer:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if points.ndim != 1 or points.shape != weights.shape or points.size == 0:
            raise ValueError("points and weights must be non-empty 1-d arrays of equal length")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(np.diff(points) <= 0):
            raise ValueError("points must be strictly increasing")
        points.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.points.size

    @property
    def second_moment(self) -> float:
        return float(np.dot(self.weights, self.points**2))


def _pdf(x: np.ndarray) -> np.ndarray:
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _cells(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Voronoi cell probabilities and conditional means under N(0, 1)."""
    edges = np.concatenate(([-np.inf], 0.5 * (points[1:] + points[:-1]), [np.inf]))
    lo, hi = edges[:-1], edges[1:]
    # upper tail via the reflected CDF to keep relative accuracy
    prob = np.where(lo > 0, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
    centroid = (_pdf(lo) - _pdf(hi)) / prob
    return prob, centroid


def lloyd_step(points: np.ndarray) -> np.ndarray:
    """One Lloyd update: move every point to the centroid of its cell."""
    return _cells(np.asarray(points, dtype=float))[1]


def build_normal_quantizer(n: int = 10, tol: float = 1e-12, max_iter: int = 200_000) -> Quantizer:
    """Lloyd fixed point for the ``n``-point quantizer of N(0, 1).

    Starts from the equiprobable quantiles and iterates until no point moves
    by more than ``tol``. Cell masses and centroids are computed in closed form.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if n == 1:
        return Quantizer(np.zeros(1), np.ones(1))

    x = ndtri((np.arange(n) + 0.5) / n)
    residual = np.inf
    for it in range(1, max_iter + 1):
        new = lloyd_step(x)
        new = 0.5 * (new - new[::-1])  # keep exact symmetry
        residual = float(np.max(np.abs(new - x)))
        x = new
        if residual < tol:
            break
    else:
        raise QuantizerConvergenceError(n, residual, max_iter)

    prob, _ = _cells(x)
    prob = 0.5 * (prob + prob[::-1])
    return Quantizer(x, prob)


def stationarity_residual(q: Quantizer) -> float:
    return float(np.max(np.abs(lloyd_step(q.points) - q.points)))


def expect(q: Quantizer, f: Callable[[float], float]) -> float:
    """Quantized expectation ``sum_i w_i f(z_i)``."""
    return float(sum(w * f(z) for z, w in zip(q.points.tolist(), q.weights.tolist())))


def normal_cdf(x: float) -> float:
    return float(ndtr(x))


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"normal quantile needs 0 < p < 1, got {p!r}")
    return float(ndtri(p))


def chi2_2_quantile(p: float) -> float:
    """Quantile of the chi-square law with two degrees of freedom (closed form)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"chi2(2) quantile needs 0 <= p < 1, got {p!r}")
    return -2.0 * math.log1p(-p)
