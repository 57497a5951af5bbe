import math

import numpy as np
import pytest

from adaptive_robust.estimation import EstimatorState, ModelParams, ParameterSpace, update_mean
from adaptive_robust.quantization import build_normal_quantizer
from adaptive_robust.solver import (
    FixedRegions,
    GridLookup,
    StateGrid,
    StructuralError,
    build_state_grid,
    evaluate_policy_worstcase,
    solve_adaptive_family,
    solve_adaptive_robust,
    solve_robust,
    solve_true_model,
    stage_values,
    step_utility,
)
from helpers import DT, crra, discretized_regions, game_tree, small_market

ACTIONS = tuple(i / 10 for i in range(11))


def case1_market(steps=300, **kw):
    return small_market("I", steps=steps, actions=ACTIONS, qn=10, **kw)


def const(v):
    return lambda c: v


def ident(c, z):
    return c


# ---- one-step expectation -------------------------------------------------

def test_step_utility_zero_allocation_ignores_drift():
    q = build_normal_quantizer(10)
    vals = [step_utility(0.0, ModelParams(mu, 0.09 * DT), q, 0.001, 5.0, const(-0.25), ident, None)
            for mu in (-0.003, 0.0, 0.003)]
    assert vals[0] == vals[1] == vals[2] == pytest.approx(1.001 ** -4 * -0.25, rel=1e-15)


def test_step_utility_degenerate_quantizer():
    q = build_normal_quantizer(1)
    got = step_utility(1.0, ModelParams(0.05, 0.04), q, 0.0, 3.0, const(crra(1.0, 3.0)), ident, None)
    assert got == pytest.approx(1.05 ** -2 / -2, rel=1e-15)


def test_step_utility_hand_sum_and_vectorized_agree(q10):
    r, g, a = 0.02 * DT, 5.0, 0.5
    theta = ModelParams(0.07 * DT, 0.09 * DT)
    by_hand = 0.0
    for z, w in zip(q10.points, q10.weights):
        by_hand += w * (1 + r + a * (theta.mu + math.sqrt(theta.var) * z)) ** (1 - g) * (1 / (1 - g))
    got = step_utility(a, theta, q10, r, g, const(1 / (1 - g)), ident, None)
    assert abs(got - by_hand) < 1e-14
    cont = np.full((1, 1, 10), 1 / (1 - g))
    vec = stage_values(np.array([a]), r, g, q10, theta.as_array()[None, None, :], cont)
    assert abs(vec[0, 0, 0] - by_hand) < 1e-14


def test_step_utility_uses_propagated_state(q10):
    space = ParameterSpace(-1.0, 1.0, 0.01, 0.01)
    theta = ModelParams(0.02, 0.01)
    prop = lambda c, z: update_mean(c, z, space)
    cont = lambda c: c.mean
    got = step_utility(0.3, theta, q10, 0.0, 2.0, cont, prop, EstimatorState(0.0, 0.01, 1))
    want = sum(w * (1 + 0.3 * z) ** -1 * (0.5 * z) for z, w in
               zip(theta.mu + 0.1 * q10.points, q10.weights))
    assert got == pytest.approx(want, rel=1e-13)


# ---- market invariants -----------------------------------------------------

def test_market_rejects_log_utility_and_bad_actions():
    with pytest.raises(ValueError, match="gamma"):
        small_market(gamma=1.0)
    with pytest.raises(ValueError, match="actions"):
        small_market(actions=(0.0, 1.5))
    with pytest.raises(ValueError, match="empty"):
        small_market(actions=())


def test_market_rejects_nonpositive_gross_return():
    with pytest.raises(ValueError, match="gross return"):
        small_market(space=ParameterSpace(-3.0, 1.0, 0.09 * DT, 0.09 * DT))


# ---- true model and robust -------------------------------------------------

def test_zero_horizon_is_terminal_only():
    table, policy = solve_true_model(small_market(steps=0))
    assert table.value0 == crra(1.0, 5.0)
    assert policy.horizon == 0
    with pytest.raises(StructuralError):
        policy.action(0, (0.0, 0.0))


def test_zero_premium_means_no_risky_holding():
    cfg = case1_market(steps=20, true_params=ModelParams(0.0, 0.09 * DT))
    _, policy = solve_true_model(cfg)
    assert all(policy.action(t, (0, 0)) == 0.0 for t in range(20))


def test_true_model_policy_is_constant_and_brute_force_optimal():
    cfg = case1_market()
    table, policy = solve_true_model(cfg)
    acts = {policy.action(t, (0, 0)) for t in range(300)}
    assert len(acts) == 1
    # one-step factor is the same each period, so the best action maximizes it
    g = cfg.gamma
    factor = [step_utility(a, cfg.true_params, cfg.quantizer, cfg.r, g, const(1.0), ident, None)
              for a in ACTIONS]
    best = ACTIONS[int(np.argmin(factor))]  # continuation < 0: smaller factor is better
    merton = 0.07 / (5.0 * 0.09)
    assert acts == {best}
    assert best == min(ACTIONS, key=lambda a: abs(a - merton))
    assert table.value0 == pytest.approx(min(factor) ** 300 * crra(1.0, g), rel=1e-12)


def test_robust_holds_nothing_in_case1():
    cfg = case1_market()
    table, policy = solve_robust(cfg)
    assert all(int(i) == 0 for i in policy.index)
    assert np.all(table.worst_param[0][0] == [cfg.space.mu_lo, cfg.space.var_lo])


def test_robust_over_singleton_equals_true_model():
    cfg = case1_market(steps=50)
    t_true, p_true = solve_true_model(cfg)
    t_rob, p_rob = solve_robust(cfg, thetas=[cfg.true_params.as_array()])
    assert np.array_equal(p_true.index, p_rob.index)
    for a, b in zip(t_true.values, t_rob.values):
        assert abs(a[0] - b[0]) < 1e-14


def test_enlarging_parameter_set_cannot_raise_robust_value():
    small = case1_market(steps=30, space=ParameterSpace(0.0, 0.1 * DT, 0.09 * DT, 0.09 * DT))
    big = case1_market(steps=30)
    assert solve_robust(big)[0].value0 <= solve_robust(small)[0].value0


def test_robust_case2_minimizes_over_variance_too():
    cfg = small_market("II", steps=5, actions=ACTIONS, qn=10, theta_resolution=5)
    table, policy = solve_robust(cfg)
    assert np.all(policy.index == 0)
    assert table.worst_param[0].shape == (1, 2)


# ---- adaptive family -------------------------------------------------------

def test_one_point_family_equals_true_model():
    cfg = case1_market(steps=40)
    fam = solve_adaptive_family(cfg, [cfg.true_params.as_array()])
    _, true_policy = solve_true_model(cfg)
    rng = np.random.default_rng(0)
    states = np.column_stack([rng.uniform(-DT, DT, 50), np.full(50, 0.09 * DT)])
    for t in range(40):
        assert np.all(fam.action_index(t, states) == true_policy.index[t])


def test_family_lookup_exact_and_tie_rule():
    cfg = case1_market(steps=5)
    var = 0.09 * DT
    grid = np.array([[-DT, var], [DT, var], [0.0, var]])
    fam = solve_adaptive_family(cfg, grid)
    assert fam.member(np.array([[DT, var]]))[0] == 1
    # midway between members 0 and 2 -> member 0; between 2 and 1 -> member 1
    assert fam.member(np.array([[-DT / 2, var]]))[0] == 0
    assert fam.member(np.array([[DT / 2, var]]))[0] == 1
    for t in range(5):
        assert fam.action_index(t, np.array([[DT, var]]))[0] == fam.index[1, t]


def test_family_rejects_points_outside_space():
    cfg = case1_market(steps=2)
    with pytest.raises(ValueError):
        solve_adaptive_family(cfg, [[2 * DT, 0.09 * DT]])
    with pytest.raises(ValueError):
        solve_adaptive_family(cfg, np.empty((0, 2)))


# ---- grid lookup -----------------------------------------------------------

def test_grid_lookup_2d_tie_goes_to_lower_index():
    space = ParameterSpace(0.0, 1.0, 0.0, 1.0)
    pts = np.array([[1.0, 0.5], [0.0, 0.5], [0.5, 0.0]])
    lk = GridLookup(pts, space)
    assert lk.index(np.array([[0.5, 0.5]]))[0] == 0
    assert lk.index(np.array([[0.5, 0.01]]))[0] == 2
    square = np.array([[1.0, 1.0], [0.0, 1.0], [1.0, 0.0], [0.0, 0.0]])
    assert GridLookup(square[::-1], space).index(np.array([[0.5, 0.5]]))[0] == 0
    assert GridLookup(square, space).index(np.array([[0.5, 0.5]]))[0] == 0


def test_grid_lookup_matches_brute_force():
    from helpers import nearest_index

    rng = np.random.default_rng(5)
    space = ParameterSpace(-1.0, 1.0, 0.0, 0.5)
    pts = np.column_stack([rng.uniform(-1, 1, 200), rng.uniform(0, 0.5, 200)])
    q = np.column_stack([rng.uniform(-1, 1, 500), rng.uniform(0, 0.5, 500)])
    got = GridLookup(pts, space).index(q)
    assert all(g == nearest_index(pts, x, space) for g, x in zip(got, q))
    space1 = ParameterSpace(-1.0, 1.0, 0.3, 0.3)
    pts1 = np.column_stack([np.round(rng.uniform(-1, 1, 50), 1), np.full(50, 0.3)])
    q1 = np.column_stack([np.round(rng.uniform(-1, 1, 300), 2), np.full(300, 0.3)])
    got1 = GridLookup(pts1, space1).index(q1)
    assert all(g == nearest_index(pts1, x, space1) for g, x in zip(got1, q1))


def test_linear_lookup_interpolates_case1_only():
    space = ParameterSpace(0.0, 1.0, 0.3, 0.3)
    lk = GridLookup(np.array([[1.0, 0.3], [0.0, 0.3]]), space, "linear")
    assert lk.values(np.array([10.0, 0.0]), np.array([[0.25, 0.3]]))[0] == pytest.approx(2.5)
    with pytest.raises(ValueError):
        small_market("II", lookup="linear")


# ---- state grid ------------------------------------------------------------

def test_state_grid_examples():
    cfg = small_market("II", steps=10)
    grid = build_state_grid(cfg, 30, 4)
    assert len(grid.states[0]) == 1
    assert tuple(grid.states[0][0]) == (cfg.c0.mean, cfg.c0.var)
    s = cfg.space
    for pts in grid.states:
        assert np.all(pts >= s.lower) and np.all(pts <= s.upper)
    single = build_state_grid(cfg, 1, 4)
    assert all(len(p) == 1 for p in single.states)
    again = build_state_grid(cfg, 30, 4)
    assert all(np.array_equal(a, b) for a, b in zip(grid.states, again.states))


def test_empty_grid_slice_is_structural_error():
    with pytest.raises(StructuralError):
        StateGrid("I", [np.zeros((1, 2)), np.zeros((0, 2))])


def test_grid_horizon_must_match():
    cfg = small_market(steps=3)
    grid = build_state_grid(small_market(steps=2), 5, 1)
    with pytest.raises(StructuralError):
        solve_adaptive_robust(cfg, grid)


# ---- adaptive robust -------------------------------------------------------

@pytest.mark.parametrize("case,kw,steps", [
    ("I", dict(region_resolution=5), 3),
    ("II", dict(ellipse_angles=4, ellipse_shells=2), 2),
])
def test_adaptive_robust_equals_game_tree(case, kw, steps):
    cfg = small_market(case, steps=steps, **kw)
    grid = build_state_grid(cfg, 20, 11)
    table, policy = solve_adaptive_robust(cfg, grid)
    tree = game_tree(cfg, grid, discretized_regions(cfg), 1.0)
    assert abs(table.value0 - (-tree.value)) < 1e-12
    c0 = tuple(float(v) for v in grid.states[0][0])
    assert tree.action(0, (1.0, c0)) == table.best_action[0][0]
    assert abs(evaluate_policy_worstcase(cfg, policy, grid) - table.value0) < 1e-12


def test_degenerate_regions_reduce_to_true_model():
    theta = ModelParams(0.07 * DT, 0.09 * DT)
    cfg = small_market("I", steps=6, actions=ACTIONS, qn=10, alpha=0.999999,
                       space=ParameterSpace(theta.mu, theta.mu, theta.var, theta.var))
    grid = build_state_grid(cfg, 10, 2)
    table, _ = solve_adaptive_robust(cfg, grid)
    truth, _ = solve_true_model(cfg)
    for t in range(7):
        assert np.max(np.abs(table.values[t] - truth.values[t][0])) < 1e-12


def test_selectors_reattain_recorded_values():
    cfg = small_market("II", steps=4, actions=ACTIONS, qn=10, ellipse_angles=6, ellipse_shells=3)
    grid = build_state_grid(cfg, 40, 9)
    table, _ = solve_adaptive_robust(cfg, grid)
    from adaptive_robust.solver import GridLookup as Lookup
    from adaptive_robust.estimation import update_mean_var

    for t in range(4):
        nxt = Lookup(grid.states[t + 1], cfg.space)
        for i, c in enumerate(grid.states[t]):
            a = cfg.actions[table.best_action[t][i]]
            th = ModelParams(*table.worst_param[t][i])
            cont = lambda s: table.values[t + 1][nxt.index(np.array([[s.mean, s.var]]))[0]]
            prop = lambda s, z: update_mean_var(s, z, cfg.space)
            v = step_utility(a, th, cfg.quantizer, cfg.r, cfg.gamma, cont, prop,
                             EstimatorState(c[0], c[1], t))
            assert abs(v - table.values[t][i]) < 1e-12


def test_robust_policy_against_singleton_regions_is_plain_expected_utility():
    cfg = small_market("I", steps=5, actions=ACTIONS, qn=10)
    grid = build_state_grid(cfg, 30, 1)
    _, rob = solve_robust(cfg)
    single = FixedRegions([cfg.true_params.as_array()])
    got = evaluate_policy_worstcase(cfg, rob, grid, regions=single)
    factor = step_utility(0.0, cfg.true_params, cfg.quantizer, cfg.r, cfg.gamma, const(1.0), ident, None)
    assert got == pytest.approx(factor ** 5 * cfg.terminal, rel=1e-13)


def test_other_policies_do_no_better_against_the_adversary():
    cfg = small_market("I", steps=8, actions=ACTIONS, qn=10)
    grid = build_state_grid(cfg, 60, 3)
    table, ar = solve_adaptive_robust(cfg, grid)
    _, true_policy = solve_true_model(cfg)
    _, rob = solve_robust(cfg)
    fam = solve_adaptive_family(cfg, cfg.space.grid(21))
    for other in (true_policy, rob, fam):
        assert evaluate_policy_worstcase(cfg, other, grid) <= table.value0


class NestedRegions:
    """Confidence interval restricted to a fixed parameter set, always including theta*."""

    def __init__(self, cfg, thetas):
        self.inner = cfg.confidence_regions()
        self.thetas = thetas
        self.star = cfg.true_params.as_array()

    def __call__(self, n, states):
        raw = self.inner(n, states)
        lo, hi = raw[:, :, 0].min(axis=1), raw[:, :, 0].max(axis=1)
        out = np.empty((len(states), len(self.thetas) + 1, 2))
        for i in range(len(states)):
            inside = [th for th in self.thetas if lo[i] <= th[0] <= hi[i]]
            pts = np.array([self.star] + inside)
            out[i, :len(pts)] = pts
            out[i, len(pts):] = self.star
        return out


def test_value_ordering_on_nested_sets():
    cfg = small_market("I", steps=30, actions=ACTIONS, qn=10)
    thetas = np.vstack([cfg.theta_grid(), cfg.true_params.as_array()])
    grid = build_state_grid(cfg, 200, 5)
    v_true = solve_true_model(cfg)[0].value0
    v_rob = solve_robust(cfg, thetas)[0].value0
    v_ar = solve_adaptive_robust(cfg, grid, regions=NestedRegions(cfg, thetas))[0].value0
    assert v_true >= v_ar >= v_rob


def test_more_adversary_points_cannot_raise_values():
    cfg = small_market("I", steps=6, actions=ACTIONS, qn=10)
    grid = build_state_grid(cfg, 50, 8)
    coarse = cfg.confidence_regions(3)
    fine = cfg.confidence_regions(5)  # 5 equally spaced points contain the 3-point set
    t_c, _ = solve_adaptive_robust(cfg, grid, regions=coarse)
    t_f, _ = solve_adaptive_robust(cfg, grid, regions=fine)
    for a, b in zip(t_f.values, t_c.values):
        assert np.all(a <= b)


@pytest.mark.parametrize("case,kw,steps", [
    ("I", dict(region_resolution=5), 3),
    ("II", dict(ellipse_angles=4, ellipse_shells=2), 2),
])
def test_scale_invariance_in_initial_wealth(case, kw, steps):
    cfg = small_market(case, steps=steps, **kw)
    grid = build_state_grid(cfg, 20, 11)
    region = discretized_regions(cfg)
    v1, v2 = 1.0, 37.5
    g1 = game_tree(cfg, grid, region, v1)
    g2 = game_tree(cfg, grid, region, v2)
    ratio = (v1 / v2) ** (1 - cfg.gamma)
    assert abs(g1.value / g2.value / ratio - 1.0) < 1e-10
    by_state1 = {(t, y[1]): s for (t, y), s in g1.selectors.items()}
    by_state2 = {(t, y[1]): s for (t, y), s in g2.selectors.items()}
    common = by_state1.keys() & by_state2.keys()
    assert common
    assert all(by_state1[k][0] == by_state2[k][0] for k in common)
    table, _ = solve_adaptive_robust(cfg, grid)
    assert abs(-g2.value / (v2 ** (1 - cfg.gamma) * table.value0) - 1.0) < 1e-10


def test_solvers_are_deterministic(monkeypatch):
    cfg = small_market("II", steps=5, actions=ACTIONS, qn=10)
    runs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("ADAPTIVE_ROBUST_THREADS", threads)
        grid = build_state_grid(cfg, 80, 21)
        runs.append(solve_adaptive_robust(cfg, grid)[0])
    a, b = runs
    for key in ("values", "best_action", "worst_param"):
        assert all(np.array_equal(x, y) for x, y in zip(getattr(a, key), getattr(b, key)))


def test_terminal_condition_all_methods():
    cfg = small_market("I", steps=4)
    grid = build_state_grid(cfg, 10, 0)
    term = cfg.terminal
    assert solve_true_model(cfg)[0].values[4][0] == term
    assert solve_robust(cfg)[0].values[4][0] == term
    assert np.all(solve_adaptive_robust(cfg, grid)[0].values[4] == term)
    assert np.all(solve_adaptive_family(cfg, cfg.space.grid(5)).values[:, 4] == term)


def test_gamma_below_one_keeps_max_min_convention():
    cfg = small_market("I", steps=3, gamma=0.5, actions=ACTIONS, qn=5)
    table, policy = solve_true_model(cfg)
    assert table.value0 > 0
    rob_table, _ = solve_robust(cfg)
    assert rob_table.value0 <= table.value0
