import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from respo.envs.double_integrator import discretized_double_integrator, stoppable
from respo.envs.gridworld import GridWorldSpec, build_gridworld, hazard_grid_5x5, open_grid
from respo.mdp import FiniteMdp, deterministic_policy, monte_carlo, random_mdp, random_policy, uniform_policy
from respo.oracle import (
    UnsupportedStochasticError, constrained_optimal_reference, optimal_ref, policy_eval, reachability_value,
    reachable_under, ref_bellman, ref_fixed_point, ref_iterates, reentry_certificate, safest_policy, solve,
    trajectory_reachability_values, unconstrained_optimal,
)


def reach_mdp():
    """s0 hits the violating s1 w.p. 0.3, else the safe sink s2."""
    P = np.zeros((3, 1, 3))
    P[0, 0] = (0.0, 0.3, 0.7)
    P[1, 0, 1] = 1.0
    P[2, 0, 2] = 1.0
    return FiniteMdp(P, np.zeros((3, 1)), np.array([0.0, 1.0, 0.0]), 0.99, np.array([1.0, 0, 0]), 10,
                     np.array([False, False, True]))


def chain(n_cost_steps, gamma=0.99):
    """Deterministic chain for the certificate: two costly steps to a safe sink, or a costly self-loop."""
    # states: 0 -a0-> 1 -> 2 (safe sink); a1 keeps 0 on a cost-1 self-loop
    P = np.zeros((3, 2, 3))
    P[0, 0, 1] = 1.0
    P[0, 1, 0] = 1.0
    P[1, :, 2] = 1.0
    P[2, :, 2] = 1.0
    return FiniteMdp(P, np.zeros((3, 2)), np.array([1.0, 1.0, 0.0]), gamma, np.array([1.0, 0, 0]), 20)


def test_geometric_value():
    P = np.ones((1, 1, 1))
    mdp = FiniteMdp(P, np.ones((1, 1)), np.zeros(1), 0.9, np.ones(1), 10)
    assert policy_eval(mdp, uniform_policy(1, 1), "reward")[0] == pytest.approx(10.0, abs=1e-9)
    assert np.all(policy_eval(mdp, uniform_policy(1, 1), "cost") == 0.0)


def test_policy_eval_matches_monte_carlo():
    rng = np.random.default_rng(0)
    mdp = random_mdp(rng, 8, horizon=300)
    pi = random_policy(rng, 8, 2)
    v = policy_eval(mdp, pi, "reward")
    _, dr, _, _, _ = monte_carlo(mdp, pi, np.full(1_000_000, 5), 300, rng)
    assert abs(dr.mean() - v[5]) <= 3 * dr.std() / 1000 + 0.99 ** 300


def test_iterative_path_agrees_with_direct_solve():
    rng = np.random.default_rng(1)
    mdp = random_mdp(rng, 10)
    pi = random_policy(rng, 10, 2)
    direct = policy_eval(mdp, pi, "cost")
    iterative = policy_eval(mdp, pi, "cost", direct_max=0)
    assert np.allclose(direct, iterative, atol=1e-8)


def test_ref_fixed_point_examples():
    mdp = reach_mdp()
    pi = uniform_policy(3, 1)
    assert ref_fixed_point(mdp, pi, 1.0) == pytest.approx([0.3, 1.0, 0.0], abs=1e-12)
    assert ref_fixed_point(mdp, pi, 0.99)[0] == pytest.approx(0.297, abs=1e-9)


def test_undiscounted_iterates_are_monotone():
    rng = np.random.default_rng(2)
    mdp = random_mdp(rng, 10)
    pi = random_policy(rng, 10, 2)
    it = ref_iterates(mdp, pi, 1.0)
    prev = next(it)
    for _ in range(200):
        cur = next(it)
        assert np.all(cur >= prev - 1e-15)
        prev = cur
    assert np.all(prev <= ref_fixed_point(mdp, pi, 1.0) + 1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), gamma=st.floats(0.5, 0.999))
def test_ref_bellman_contraction(seed, gamma):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, int(rng.integers(3, 21)))
    pi = random_policy(rng, mdp.n_states, 2)
    for _ in range(20):
        p, q = rng.random(mdp.n_states), rng.random(mdp.n_states)
        lhs = np.max(np.abs(ref_bellman(mdp, pi, p, gamma) - ref_bellman(mdp, pi, q, gamma)))
        assert lhs <= gamma * np.max(np.abs(p - q)) + 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_zero_cost_value_iff_clean_reachable_set(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, int(rng.integers(3, 13)), 3, violation_rate=0.2)
    pi = random_policy(rng, mdp.n_states, 3, sparsity=0.5)
    vc = policy_eval(mdp, pi, "cost")
    for s in range(mdp.n_states):
        assert (vc[s] <= 1e-9) == (not mdp.violation[reachable_under(mdp, pi, s)].any())


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_safest_ref_below_any_policy_on_deterministic_mdps(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, int(rng.integers(3, 10)), 2, deterministic=True)
    phi_star, _ = optimal_ref(mdp)
    for _ in range(50):
        pi = random_policy(rng, mdp.n_states, 2)
        assert np.all(phi_star <= ref_fixed_point(mdp, pi, 1.0) + 1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_solution_invariants(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, int(rng.integers(3, 12)), 2)
    sol = solve(mdp)
    assert np.all((sol.phi >= 0) & (sol.phi <= 1))
    assert np.all(sol.phi[mdp.violation] == 1.0) and np.all(sol.phi_star[mdp.violation] == 1.0)
    assert np.all(sol.v_c_star[sol.feasible_mask] <= 1e-9)
    assert np.all(sol.V_c >= -1e-12)
    ref = constrained_optimal_reference(mdp)
    if not ref.empty:
        vc = policy_eval(mdp, ref.policy, "cost")
        starts = ref.feasible & (mdp.initial_distribution > 0)
        assert np.all(vc[starts] <= 1e-9)


def test_hazard_free_grid():
    mdp = build_gridworld(open_grid(3, 3))
    sol = solve(mdp)
    assert np.all(sol.phi_star == 0) and np.all(sol.v_c_star == 0) and sol.feasible_mask.all()
    v_star, _ = unconstrained_optimal(mdp)
    assert np.allclose(sol.constrained_optimal_V, v_star, atol=1e-9)


def test_safest_policy_takes_the_detour():
    # 3x3, hazard row y=1 except the right edge; goal at the top
    spec = GridWorldSpec(3, 3, goal=(1, 2), hazards={(0, 1): 1.0, (1, 1): 1.0}, starts=((1, 0),))
    mdp = build_gridworld(spec)
    sp = safest_policy(mdp)
    start = spec.index(1, 0)
    assert sp.v_c[start] == 0.0
    # brute force over deterministic policies on the free cells: the optimum is a zero-cost route
    free = np.flatnonzero(~mdp.absorbing & ~mdp.violation)
    costs = []
    for acts in itertools.product(range(4), repeat=free.size):
        a = np.zeros(9, dtype=int)
        a[free] = acts
        costs.append(policy_eval(mdp, deterministic_policy(a, 4), "cost")[start])
    assert min(costs) == pytest.approx(sp.v_c[start], abs=1e-12)
    assert not mdp.violation[reachable_under(mdp, sp.policy, start)].any()


def test_optimal_ref_matches_policy_search_on_slip_subgrid():
    spec = GridWorldSpec(3, 3, goal=(2, 2), hazards={(1, 1): 1.0}, slip=0.1)
    mdp = build_gridworld(spec)
    phi_star, _ = optimal_ref(mdp)
    free = np.flatnonzero(~mdp.absorbing & ~mdp.violation)
    viol = np.flatnonzero(mdp.violation)
    # slip makes the goal reachable from every cell, so I - Q is nonsingular for every policy
    acts = np.array(list(itertools.product(range(4), repeat=free.size)))
    P = mdp.transition[free[None, :], acts]  # [n_policies, n_free, S]
    Q = P[:, :, free]
    b = P[:, :, viol].sum(axis=2)
    reach = np.linalg.solve(np.eye(free.size) - Q, b[..., None])[..., 0]
    assert np.allclose(phi_star[free], reach.min(axis=0), atol=1e-9)


def test_hazard_cell_has_unit_ref():
    spec = hazard_grid_5x5()
    phi_star, feasible = optimal_ref(build_gridworld(spec))
    assert phi_star[spec.index(2, 2)] == 1.0 and not feasible[spec.index(2, 2)]


def test_reachability_value_examples():
    assert trajectory_reachability_values([0, 2, 1])[0] == 2.0
    assert np.all(trajectory_reachability_values([0, 0, 0]) == 0.0)
    with pytest.raises(UnsupportedStochasticError):
        reachability_value(reach_mdp(), uniform_policy(3, 1))


def test_reachability_value_ignores_smaller_violations():
    a = trajectory_reachability_values([0, 0.3, 0.2, 1.0, 0.0])
    b = trajectory_reachability_values([0, 0.0, 0.0, 1.0, 0.0])
    assert a[0] == b[0] == 1.0


def test_reachability_value_zero_inside_stoppable_set():
    mdp, grid = discretized_double_integrator(21)
    sp = safest_policy(mdp)
    vh = reachability_value(mdp, sp.policy)
    assert np.all(vh[sp.v_c == 0] == 0.0)


def test_safest_cost_zero_on_stoppable_set():
    mdp, grid = discretized_double_integrator(41)
    sp = safest_policy(mdp)
    centers = grid.centers()
    analytic = stoppable(centers)
    agree = np.mean((sp.v_c == 0) == analytic)
    assert agree >= 0.9


def test_empty_feasible_set_reported():
    P = np.ones((1, 1, 1))
    mdp = FiniteMdp(P, np.zeros((1, 1)), np.ones(1), 0.9, np.ones(1), 5)
    assert constrained_optimal_reference(mdp).empty


def test_detour_reference_value():
    # 4x4: direct route up column 1 crosses a hazard; detour through column 3 is 2 steps longer
    spec = GridWorldSpec(4, 4, goal=(1, 3), hazards={(0, 2): 1.0, (1, 2): 1.0, (2, 2): 1.0},
                         starts=((1, 0),), step_reward=-0.1, goal_reward=1.0)
    mdp = build_gridworld(spec)
    ref = constrained_optimal_reference(mdp)
    g = mdp.discount
    # (1,0)->(2,0)->(3,0)->(3,1)->(3,2)->(3,3)->(2,3)->(1,3): 7 moves, last one enters the goal
    path = sum(-0.1 * g ** t for t in range(6)) + 1.0 * g ** 6
    assert ref.value[spec.index(1, 0)] == pytest.approx(path, abs=1e-9)


def test_certificate_examples():
    # feasible set is the sink {2}; path 0 -> 1 -> 2 gives m = 3, the self-loop gives w = 1
    feasible = np.array([False, False, True])
    r = reentry_certificate(chain(2), 0, 0.99, feasible)
    assert r.m == 3 and r.w == 1
    assert r.lhs == pytest.approx(1.99) and r.rhs == pytest.approx(99.0)
    assert r.satisfied
    r = reentry_certificate(chain(2), 0, 0.3, feasible)
    assert r.lhs == pytest.approx(1.3)
    assert r.rhs == pytest.approx(0.3 / 0.7)
    assert not r.satisfied
    r = reentry_certificate(chain(2), 2, 0.99, feasible)
    assert r.satisfied and r.m == 1 and r.lhs == 0.0


def test_certificate_not_applicable_without_path():
    P = np.zeros((2, 1, 2))
    P[0, 0, 0] = P[1, 0, 1] = 1.0
    mdp = FiniteMdp(P, np.zeros((2, 1)), np.array([1.0, 0.0]), 0.9, np.array([1.0, 0.0]), 5)
    r = reentry_certificate(mdp, 0, feasible=np.array([False, True]))
    assert not r.applicable and not r.satisfied


def test_oracle_csv(tmp_path):
    sol = solve(reach_mdp())
    sol.to_csv(tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "state,V,V_c,phi_star,phi_star_discounted,feasible"
    assert len(lines) == 4
