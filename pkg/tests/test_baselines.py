import numpy as np
import pytest

from respo.baselines import (
    Baseline, BaselineKind, safest_action_agreement, train_baseline, train_cbf, train_fac, train_oracle_clamped,
    train_respo_with_vh, train_scalar_lagrangian, train_unconstrained,
)
from respo.envs.gridworld import PRESETS, build_gridworld, open_grid
from respo.schedules import polynomial_set
from respo.trainer import TrainerConfig, softplus, train

pytestmark = pytest.mark.filterwarnings("ignore::respo.trainer.LambdaMaxWarning")

CFG = TrainerConfig(iterations=2000, eval_every=0, schedules=polynomial_set((1.0, 1.0, 1.0, 0.05), k0=1000.0))


@pytest.fixture(scope="module")
def free():
    return build_gridworld(open_grid(4, 2, slip=0.1))


@pytest.fixture(scope="module")
def free_unconstrained(free):
    return train_unconstrained(free, CFG, 1)


def test_infinite_budget_lagrangian_is_unconstrained():
    mdp = build_gridworld(PRESETS["hazard5"]())
    u = train_unconstrained(mdp, CFG, 1)
    lag = train_scalar_lagrangian(mdp, np.inf, CFG, 1)
    assert lag.state.lam.max() <= softplus(CFG.omega_init)
    assert np.allclose(lag.state.theta, u.state.theta, atol=1e-9)


def test_fac_multiplier_never_grows_without_hazards(free, free_unconstrained):
    res = train_fac(free, CFG, 1)
    assert np.all(res.state.lam <= softplus(CFG.omega_init) + 1e-15)
    assert np.array_equal(res.state.theta, free_unconstrained.state.theta)


def test_cbf_inactive_without_hazards(free, free_unconstrained):
    res = train_cbf(free, CFG, seed=1)
    assert np.array_equal(res.state.theta, free_unconstrained.state.theta)


def test_vh_ablation_matches_respo_when_all_safe(free):
    a = train_respo_with_vh(free, CFG, 1)
    b = train(free, CFG, 1)
    assert np.array_equal(a.episodes, b.episodes)
    assert np.array_equal(a.state.theta, b.state.theta)


def test_dispatch_and_validation(free):
    res = train_baseline(free, Baseline(BaselineKind.CBF, nu=0.5), CFG, 1)
    assert res.episodes.shape == (CFG.iterations, 5)
    with pytest.raises(ValueError):
        Baseline(BaselineKind.SCALAR_LAGRANGIAN, chi=-1.0)
    with pytest.raises(ValueError):
        train_cbf(free, CFG, nu=0.0)


def test_oracle_clamped_picks_safest_actions():
    mdp = build_gridworld(PRESETS["detour6"]())
    cfg = TrainerConfig(iterations=20_000, eval_every=0, lam_max=100.0,
                        schedules=polynomial_set((1.0, 1.0, 1.0, 0.05), k0=1000.0))
    res = train_oracle_clamped(mdp, cfg, 0)
    actions = res.state.greedy_policy().argmax(axis=1)
    assert safest_action_agreement(mdp, actions) >= 0.95
