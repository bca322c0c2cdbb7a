import numpy as np
from hypothesis import given, settings, strategies as st

from respo.gradcheck import central_difference, expected_update_direction, relative_error, respo_lagrangian
from respo.mdp import random_mdp


def test_central_difference_on_quadratic():
    a = np.array([[1.0, -2.0], [0.5, 3.0]])
    g = central_difference(lambda t: float(np.sum(a * t * t)), np.ones((2, 2)))
    assert np.allclose(g, 2 * a, atol=1e-8)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), p=st.floats(0, 1), lam=st.floats(0, 10))
def test_sampled_direction_matches_objective_gradient_for_constant_gate(seed, p, lam):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 4, 2)
    theta = rng.normal(size=(4, 2))
    fd = central_difference(lambda t: respo_lagrangian(mdp, t, p, lam), theta)
    assert relative_error(expected_update_direction(mdp, theta, p, lam), fd) <= 1e-5
