import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from respo.envs.gridworld import PRESETS, build_gridworld, open_grid
from respo.mdp import FiniteMdp, random_mdp
from respo.oracle import policy_eval, ref_fixed_point, safest_policy, solve, unconstrained_optimal
from respo.schedules import polynomial_set
from respo.trainer import (
    DivergenceError, LambdaMaxWarning, TrainerConfig, critic_update, inv_softplus, lagrange_update,
    lambda_max_bound, multi_policy_weight, policy_update, policy_weight, ref_update, softplus, train,
    train_multiconstraint,
)

QUIET = pytest.mark.filterwarnings("ignore::respo.trainer.LambdaMaxWarning")


def cfg(**kw):
    kw.setdefault("schedules", polynomial_set((1.0, 1.0, 1.0, 0.05), k0=1000.0))
    kw.setdefault("eval_every", 0)
    return TrainerConfig(**kw)


# -- single-transition rules


def test_critic_fixed_point_and_arithmetic():
    assert critic_update(2.0, 1.0, 1.1, 0.9, 0.5) == 2.0
    assert critic_update(0.0, 0.0, 1.0, 0.9, 0.5) == 0.5
    with pytest.raises(FloatingPointError):
        critic_update(0.0, np.inf, 1.0, 0.9, 0.5)


def test_policy_weight_branches():
    # p = 1: pure cost minimisation
    assert policy_weight(3.0, 2.0, 1.0, 7.0) == 2.0
    # p = 0, lambda = 0: pure reward ascent
    assert policy_weight(3.0, 2.0, 0.0, 0.0) == -3.0
    theta = np.array([0.1, -0.2, 0.3])
    new = policy_update(theta, 1, 3.0, 2.0, 1.0, 7.0, step=0.1, t=2, gamma=0.9)
    pi = np.exp(theta) / np.exp(theta).sum()
    grad = -pi
    grad[1] += 1
    assert np.allclose(new, theta - 0.1 * 0.81 * 2.0 * grad, atol=1e-15)


def test_policy_update_projects_into_box():
    out = policy_update(np.array([19.9, 0.0]), 0, -1e6, 0.0, 0.0, 0.0, 1.0, 0, 0.9, box=20.0)
    assert np.all(np.abs(out) <= 20.0)


def test_ref_targets():
    assert ref_update(0.2, True, 0.0, 0.99, 1.0) == 1.0
    p = 0.8
    for _ in range(2000):
        p = ref_update(p, False, p, 0.99, 0.5)
    assert p < 1e-4


def test_multiplier_rules():
    assert lagrange_update(0.3, 0.0, 0.0, 1.0, 100.0) == 0.3
    assert lagrange_update(0.3, 5.0, 1.0, 1.0, 100.0) == 0.3
    w = -2.0
    for _ in range(10_000):
        w = lagrange_update(w, 1.0, 0.0, 0.1, 50.0)
    assert softplus(w) == pytest.approx(50.0, rel=1e-9)


@given(q=st.floats(-10, 10), qc=st.floats(0, 10), p=st.floats(0, 1), lam=st.floats(0, 100),
       step=st.floats(0, 1), omega=st.floats(-30, 5))
def test_rule_ranges(q, qc, p, lam, step, omega):
    assert 0.0 <= ref_update(p, False, p, 0.99, step) <= 1.0
    out = lagrange_update(omega, qc, p, step, 20.0)
    assert 0.0 <= softplus(out) <= 20.0 + 1e-9
    row = policy_update(np.zeros(3), 0, q, qc, p, lam, step, 0, 0.99)
    pi = np.exp(row - row.max())
    assert np.isclose((pi / pi.sum()).sum(), 1.0)


# -- lambda_max bound


def test_lambda_max_bound_examples():
    b = lambda_max_bound(1.0, 0.99, 100, 1.0, 1.0)
    assert b == pytest.approx(1.0 / (0.01 * 0.99 ** 100), rel=1e-12)
    assert b == pytest.approx(273.2, abs=0.05)
    assert lambda_max_bound(2.0, 0.99, 100, 1.0, 1.0) == pytest.approx(2 * b, rel=1e-12)
    assert lambda_max_bound(1.0, 0.99, 100, np.inf, 1.0) == 0.0
    assert lambda_max_bound(1.0, 0.9, 10**6, 1.0, 1.0) == np.inf
    with pytest.raises(ValueError):
        lambda_max_bound(1.0, 1.0, 10, 1.0, 1.0)


def test_warns_below_bound():
    mdp = build_gridworld(PRESETS["graded5"]())
    with pytest.warns(LambdaMaxWarning):
        train(mdp, cfg(iterations=1, lam_max=1.0))


# -- training loop


@QUIET
def test_hazard_free_reaches_unconstrained_optimum():
    mdp = build_gridworld(open_grid(4, 1))
    res = train(mdp, cfg(iterations=3000, baseline=True))
    v_star, pi_star = unconstrained_optimal(mdp)
    pi = res.state.greedy_policy()
    v = policy_eval(mdp, pi, "reward")
    assert np.allclose(v[:3], v_star[:3], atol=1e-9)
    assert float(res.state.lam[0]) <= softplus(-2.0) + 1e-12
    assert np.all(res.state.p[0][:3] < 0.05)


@QUIET
def test_infeasible_reward_path_follows_safest_policy():
    # action 1 in s0 pays +1 but passes a violating state; action 0 is safe and pays nothing
    P = np.zeros((4, 2, 4))
    P[0, 0, 3] = 1.0
    P[0, 1, 1] = 1.0
    P[1, :, 2] = 1.0
    P[2, :, 2] = 1.0
    P[3, :, 3] = 1.0
    R = np.zeros((4, 2))
    R[0, 1] = 1.0
    mdp = FiniteMdp(P, R, np.array([0.0, 1.0, 0.0, 0.0]), 0.99, np.array([1.0, 0, 0, 0]), 10,
                    np.array([False, False, True, True]))
    res = train(mdp, cfg(iterations=20_000, lam_max=1000.0, baseline=True))
    vc = policy_eval(mdp, res.state.greedy_policy(), "cost")
    vc_star = safest_policy(mdp).v_c
    assert vc[0] <= vc_star[0] * 1.05 + 1e-12


@QUIET
def test_tabular_ref_converges_on_reach_mdp():
    P = np.zeros((3, 1, 3))
    P[0, 0] = (0.0, 0.3, 0.7)
    P[1, 0, 1] = 1.0
    P[2, 0, 2] = 1.0
    mdp = FiniteMdp(P, np.zeros((3, 1)), np.array([0.0, 1.0, 0.0]), 0.99, np.array([1.0, 0, 0]), 5,
                    np.array([False, True, True]))
    res = train(mdp, cfg(iterations=400_000, schedules=polynomial_set((1, 1, 0.5, 0.05), k0=100.0)))
    target = ref_fixed_point(mdp, np.ones((3, 1)), 0.99)
    assert abs(res.state.p[0, 0] - target[0]) <= 0.02


@QUIET
@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), kind=st.sampled_from(["respo", "scalar_lagrangian", "rcrl", "fac_zero_threshold"]))
def test_state_invariants_after_training(seed, kind):
    mdp = random_mdp(np.random.default_rng(seed), 8, 3)
    res = train(mdp, cfg(kind=kind, iterations=300, lam_max=50.0), seed)
    st_ = res.state
    assert np.all((st_.p >= 0) & (st_.p <= 1))
    assert np.all((st_.lam >= 0) & (st_.lam <= 50.0 + 1e-9))
    assert np.all(np.abs(st_.theta) <= 20.0)
    assert np.allclose(st_.policy().sum(axis=1), 1.0)


@QUIET
def test_seed_determinism_and_cadence_independence():
    mdp = build_gridworld(PRESETS["hazard5"]())
    a = train(mdp, cfg(iterations=1000, eval_every=100), 3)
    b = train(mdp, cfg(iterations=1000, eval_every=100), 3)
    c = train(mdp, cfg(iterations=1000, eval_every=7), 3)
    assert np.array_equal(a.episodes, b.episodes)
    np.testing.assert_equal(a.evals, b.evals)
    assert np.array_equal(a.episodes, c.episodes)
    assert np.array_equal(a.state.theta, c.state.theta)


@QUIET
def test_numba_and_python_kernels_agree():
    from respo import kernels as K

    mdp = build_gridworld(PRESETS["hazard5"]())
    model = mdp.to_sparse()
    config = cfg(iterations=50)
    from respo.trainer import init_state

    outs = []
    for fn in (K.run_chunk, K.run_chunk.py_func):
        st_ = init_state(model, config)
        rng = np.random.default_rng(0)
        n = 50
        u_init, u = rng.random(n), rng.random((n, model.horizon + 1, 2))
        stats = np.zeros((n, 5))
        fn(K.RESPO, model.succ, model.cdf, model.reward, model.costs, model.absorbing, model.init_cdf,
           model.discount, model.discount, model.horizon, st_.theta, st_.q, st_.qc, st_.p, st_.omega,
           np.zeros(1, dtype=np.int64), np.zeros(1), config.schedules.table(np.arange(n)), 100.0, -30.0,
           inv_softplus(100.0), 20.0, 0.2, 1.0, np.ones(4, dtype=np.int64), False, False, False, u_init, u, stats)
        outs.append((stats, st_.theta, st_.p))
    for x, y in zip(*outs):
        assert np.allclose(x, y, atol=1e-12)


def test_divergence_guard():
    mdp = build_gridworld(open_grid(4, 1))
    mdp = FiniteMdp(mdp.transition, mdp.reward * 1e12, mdp.cost, mdp.discount, mdp.initial_distribution,
                    mdp.horizon, mdp.absorbing)
    with pytest.raises(DivergenceError) as err:
        train(mdp, cfg(iterations=100))
    assert err.value.result.diverged_at is not None


def test_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(kind="nope")
    with pytest.raises(ValueError):
        TrainerConfig(iterations=0)
    with pytest.warns(UserWarning):
        TrainerConfig(schedules=polynomial_set(rho=(0.8, 0.65, 0.55, 1.0)))


@QUIET
def test_oracle_attached_metrics():
    spec = PRESETS["hazard5"]()
    mdp = build_gridworld(spec)
    res = train(mdp, cfg(iterations=200, eval_every=100), oracle=solve(mdp), state_mask=spec.state_mask())
    assert len(res.evals) == 2
    assert 0 <= res.evals[-1]["ref_error"] <= 1


# -- nested hard/soft weight


def test_multi_weight_top_gate_dominates():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q, qc, lam, p2 = rng.normal(), rng.random(3), rng.random(3) * 10, rng.random()
        assert multi_policy_weight(q, qc, 1.0, p2, lam) == qc[0]


def test_multi_weight_reduces_to_reward_without_costs():
    assert multi_policy_weight(2.5, np.zeros(3), 0.0, 0.0, np.zeros(3)) == -2.5


@QUIET
def test_multiconstraint_without_costs_is_reward_ascent():
    from respo.envs.drone import DroneTunnelSpec, lattice_model

    model = lattice_model(DroneTunnelSpec(slip=0.0))
    model.costs[:] = 0.0
    res, ms = train_multiconstraint(model, cfg(iterations=200, p_init=0.0, omega_init=-30.0), 0, chi_soft=0.0)
    assert ms.lam_hard1 == ms.lam_hard2 == ms.lam_soft == pytest.approx(softplus(-30.0))
    assert np.all(ms.ref_hard1 == 0.0) and np.all(ms.ref_hard2 == 0.0)
    assert np.all(res.episodes[:, 3:] == 0.0)
