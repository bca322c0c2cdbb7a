import numpy as np
import pytest
from hypothesis import given, strategies as st

from respo.schedules import LINEAR, Schedule, ScheduleSet, polynomial_set, practical_set, zeta


def test_all_equal_at_start():
    s = polynomial_set()
    assert [zeta(s, i, 0) for i in range(1, 5)] == [1.0, 1.0, 1.0, 1.0]


def test_ratio_at_ten_thousand():
    s = polynomial_set()
    k = 10_000
    assert zeta(s, 4, k) / zeta(s, 3, k) == pytest.approx((1 + k) ** -0.2, rel=1e-12)
    assert zeta(s, 4, k) / zeta(s, 3, k) == pytest.approx(0.158, abs=5e-4)


def test_linear_midpoint_and_freeze():
    s = Schedule(LINEAR, c=1e-3, K=10**6)
    assert s(5 * 10**5) == pytest.approx(5e-4, rel=1e-12)
    assert s(2 * 10**6) == 0.0
    assert practical_set(100).practical


@given(k=st.integers(0, 10**8))
def test_polynomial_ordering_and_monotone(k):
    s = polynomial_set()
    z = [zeta(s, i, k) for i in range(1, 5)]
    z_next = [zeta(s, i, k + 1) for i in range(1, 5)]
    assert all(a > 0 for a in z)
    assert all(b <= a for a, b in zip(z, z_next))
    if k >= 1:
        assert z[0] > z[1] > z[2] > z[3]
        for j in range(1, 4):
            assert z_next[j] / z_next[j - 1] < z[j] / z[j - 1]


def test_a1_violations_reported():
    assert polynomial_set().satisfies_a1()
    bad = polynomial_set(rho=(0.55, 0.8, 0.65, 1.0))
    assert not bad.satisfies_a1() and any("rho2" in v for v in bad.violations())
    assert polynomial_set(rho=(0.4, 0.65, 0.8, 1.0)).violations()


def test_bad_inputs():
    with pytest.raises(ValueError):
        Schedule(c=0.0)
    with pytest.raises(ValueError):
        Schedule()(-1)
    with pytest.raises(ValueError):
        zeta(ScheduleSet(), 5, 0)


def test_table_shape():
    t = polynomial_set().table(np.arange(7))
    assert t.shape == (7, 4) and np.all(t[0] == 1.0)
