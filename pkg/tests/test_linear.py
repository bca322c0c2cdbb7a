import numpy as np
import pytest
from hypothesis import given, strategies as st

from respo.envs.double_integrator import DoubleIntegratorEnv, DoubleIntegratorSpec
from respo.linear import TileCoder, train_linear
from respo.schedules import polynomial_set
from respo.trainer import TrainerConfig


@given(x=st.floats(-20, 20), v=st.floats(-20, 20), n=st.integers(1, 4))
def test_one_active_tile_per_tiling(x, v, n):
    coder = TileCoder([-6, -6], [6, 6], 12, n_tilings=n)
    idx = coder.active([x, v])
    assert idx.shape == (n,)
    assert np.all((idx >= 0) & (idx < coder.n_features))
    assert np.all(idx // coder.per_tiling == np.arange(n))
    assert coder.features([x, v]).sum() == n


def test_tilings_are_offset():
    coder = TileCoder([0.0], [1.0], 4, n_tilings=2)
    a = coder.active([0.2])
    b = coder.active([0.1])
    # 0.1 and 0.2 share a tile in the first tiling but not in the shifted one
    assert a[0] == b[0] and a[1] != b[1]


def test_bad_coder():
    with pytest.raises(ValueError):
        TileCoder([0, 0], [0, 1], 4)
    with pytest.raises(ValueError):
        TileCoder([0], [1], 4, n_tilings=0)


def test_linear_training_is_deterministic():
    env = DoubleIntegratorEnv(DoubleIntegratorSpec(horizon=30))
    coder = TileCoder([-6, -6], [6, 6], 8)
    cfg = TrainerConfig(iterations=20, eval_every=0, schedules=polynomial_set((1, 0.1, 1, 0.05), k0=100.0))
    levels = np.linspace(-0.5, 0.5, 5)
    a = train_linear(env, coder, levels, cfg, seed=4)
    b = train_linear(env, coder, levels, cfg, seed=4)
    assert np.array_equal(a.episodes, b.episodes)
    assert np.array_equal(a.learner.theta, b.learner.theta)
    assert 0.0 <= a.learner.ref([0.0, 0.0]) <= 1.0
    with pytest.raises(ValueError):
        train_linear(env, coder, levels, TrainerConfig(kind="rcrl", iterations=1))
