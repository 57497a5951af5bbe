"""Seeded per-path Gaussian streams on the Philox counter-based generator.

Every path owns its own key, so adding paths or steps never changes the
draws of existing ones, and results do not depend on evaluation order.
"""

from __future__ import annotations

import numpy as np

# independent stream families drawn from one experiment seed
EVALUATION = 0
GRID = 1
REGIONS = 2

_MASK32 = (1 << 32) - 1


def path_generator(seed: int, path: int, stream: int = EVALUATION) -> np.random.Generator:
    if not 0 <= seed < (1 << 64):
        raise ValueError("seed must fit in 64 unsigned bits")
    if not 0 <= path <= _MASK32 or not 0 <= stream <= _MASK32:
        raise ValueError("path and stream indices must fit in 32 bits")
    key = (seed << 64) | (stream << 32) | path
    return np.random.Generator(np.random.Philox(key=key))


def standard_normals(seed: int, n_paths: int, steps: int, stream: int = EVALUATION) -> np.ndarray:
    out = np.empty((n_paths, steps))
    for p in range(n_paths):
        out[p] = path_generator(seed, p, stream).standard_normal(steps)
    return out
