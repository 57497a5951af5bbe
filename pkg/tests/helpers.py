"""Shared builders and brute-force oracles for the test suite."""

import numpy as np

from adaptive_robust.estimation import ModelParams, ParameterSpace
from adaptive_robust.quantization import build_normal_quantizer
from adaptive_robust.solver import MarketConfig

DT = 1.0 / 300


def small_market(case="I", steps=3, actions=(0.0, 0.5, 1.0), qn=3, **kw):
    """A reduced market with per-step parameters derived from annual inputs."""
    if case == "I":
        space = ParameterSpace(-1 * DT, 1 * DT, 0.09 * DT, 0.09 * DT)
        theta = ModelParams(0.07 * DT, 0.09 * DT)
    else:
        space = ParameterSpace(-1 * DT, 1 * DT, 0.0, 0.5 * DT)
        theta = ModelParams(0.09 * DT, 0.09 * DT)
    defaults = dict(r=0.02 * DT, dt=DT, gamma=5.0 if case == "I" else 20.0, actions=actions,
                    horizon_steps=steps, alpha=0.1, quantizer=build_normal_quantizer(qn),
                    space=space, true_params=theta, case=case)
    defaults.update(kw)
    return MarketConfig(**defaults)


def crra(x, gamma):
    return x ** (1.0 - gamma) / (1.0 - gamma)


def nearest_index(points, query, space):
    """Brute-force nearest neighbour with per-axis width scaling; lowest index on ties."""
    w = np.array([space.mu_hi - space.mu_lo, space.var_hi - space.var_lo])
    keep = w > 0
    d = (((np.asarray(points) - np.asarray(query))[:, keep] / w[keep]) ** 2).sum(axis=1)
    return int(np.flatnonzero(d == d.min())[0])



def discretized_regions(cfg, resolution=None, shells=None):
    """Per-state adversary sets built one region at a time (no batching)."""
    from adaptive_robust.estimation import EstimatorState, discretize_region, region_case1, region_case2

    def region(n, c):
        state = EstimatorState(c[0], c[1], n)
        if cfg.case == "I":
            r = region_case1(state, cfg.sigma, cfg.alpha, cfg.space)
            res = cfg.region_resolution if resolution is None else resolution
            return [(p.mu, p.var) for p in discretize_region(r, res)]
        r = region_case2(state, cfg.alpha, cfg.space)
        res = cfg.ellipse_angles if resolution is None else resolution
        sh = cfg.ellipse_shells if shells is None else shells
        return [(p.mu, p.var) for p in discretize_region(r, res, shells=sh if r.kind != "box" else None)]

    return region


def game_tree(cfg, grid, region, v0):
    """Exhaustive minimax over the discretized game, on the cost scale, from wealth ``v0``.

    The estimator moves by the scalar update functions and is snapped to the
    next grid slice by a brute-force nearest-neighbour search.
    """
    from adaptive_robust.estimation import EstimatorState, update_mean, update_mean_var
    from adaptive_robust.generic import solve_minimax

    update = update_mean if cfg.case == "I" else update_mean_var
    n0 = grid.n0

    def transition(t, y, a, z):
        x, c = y
        nxt = update(EstimatorState(c[0], c[1], n0 + t), z, cfg.space)
        pts = grid.states[t + 1]
        snapped = pts[nearest_index(pts, (nxt.mean, nxt.var), cfg.space)]
        return (x * (1.0 + cfg.r + a * z), (float(snapped[0]), float(snapped[1])))

    c0 = tuple(float(v) for v in grid.states[0][0])
    return solve_minimax(
        cfg.horizon_steps, (v0, c0), cfg.actions, transition,
        lambda t, c: region(n0 + t, c),
        lambda theta, eps: theta[0] + np.sqrt(theta[1]) * eps,
        lambda x: -crra(x, cfg.gamma),
        cfg.quantizer,
    )
