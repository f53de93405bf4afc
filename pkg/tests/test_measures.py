import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avgctl.errors import ContractViolation
from avgctl.measures import OccupationalMeasure, mean_functionals, mixture, occupational_from_policy
from avgctl.models import lotka_volterra_example2, rotation_example1
from avgctl.orbits import PeriodicOrbit, orbit_for_level

LV = lotka_volterra_example2()
ROT = rotation_example1()
LV_ORBIT = orbit_for_level(LV, -3.0)
LV_ORBIT_HI = orbit_for_level(LV, -2.3)


def slope_policy(dz):
    """Closed-form minimizer for a fixed slope of the value function."""
    return lambda y, z: np.clip(-0.5 * dz * (np.atleast_2d(y)[:, :1] - 1.0), 0.0, 1.0)


def test_constant_policy_atoms():
    mu = occupational_from_policy(LV_ORBIT, lambda y, z: np.array([0.4]), LV)
    assert len(mu) == LV_ORBIT.n
    assert np.all(mu.weights == 1.0 / LV_ORBIT.n)
    assert np.all(mu.controls == 0.4)
    assert np.array_equal(mu.states, LV_ORBIT.nodes)
    assert mu.level[0] == LV_ORBIT.level[0]
    assert mu.check_support(LV) <= 1e-6
    assert len(mu.atoms) == LV_ORBIT.n


def test_zero_branch_for_negative_slope():
    mu = occupational_from_policy(LV_ORBIT, slope_policy(-1.0), LV)
    low = mu.states[:, 0] <= 1.0
    assert low.any() and (~low).any()
    assert np.all(mu.controls[low, 0] == 0.0)
    assert np.all(mu.controls[~low, 0] > 0.0)


def test_empty_orbit():
    orb = PeriodicOrbit(np.array([-3.0]), 5.0, np.zeros((0, 2)), 0.0)
    with pytest.raises(ContractViolation):
        occupational_from_policy(orb, lambda y, z: np.array([0.0]), LV)


def test_out_of_box_policy():
    with pytest.raises(ContractViolation):
        occupational_from_policy(LV_ORBIT, lambda y, z: np.array([1.5]), LV)


def test_measure_validation():
    with pytest.raises(ContractViolation):
        OccupationalMeasure([0.5, 0.4], [[0.0], [0.0]], [[1.0, 2.0], [2.0, 1.0]], [-2.5])
    with pytest.raises(ContractViolation):
        OccupationalMeasure([1.5, -0.5], [[0.0], [0.0]], [[1.0, 2.0], [2.0, 1.0]], [-2.5])
    with pytest.raises(ContractViolation):
        OccupationalMeasure([], np.zeros((0, 1)), np.zeros((0, 2)), [-2.5])


@pytest.mark.parametrize("u0", [0.0, 0.3, 1.0])
@pytest.mark.parametrize("orbit", [LV_ORBIT, LV_ORBIT_HI])
def test_constant_control_does_not_move_level(u0, orbit):
    mf = mean_functionals(LV, occupational_from_policy(orbit, lambda y, z: np.array([u0]), LV))
    assert abs(mf.h_bar[0]) <= 1e-4
    z = orbit.level[0]
    assert mf.r_bar == pytest.approx(u0 * u0 + (z + 2.05) ** 2, abs=1e-6)


def test_zero_control_cost():
    for orbit in (LV_ORBIT, LV_ORBIT_HI):
        mf = mean_functionals(LV, occupational_from_policy(orbit, lambda y, z: np.array([0.0]), LV))
        assert mf.r_bar == pytest.approx((orbit.level[0] + 2.05) ** 2, abs=1e-6)


def test_rotation_unit_control_cost():
    orb = orbit_for_level(ROT, 2.0)
    mf = mean_functionals(ROT, occupational_from_policy(orb, lambda y, z: np.array([1.0]), ROT))
    assert mf.r_bar == pytest.approx(1.0, abs=1e-14)
    assert mf.h_bar[0] == 0.0


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.0, 1.0), b=st.floats(0.0, 1.0), w=st.floats(0.0, 1.0))
def test_mixture_is_linear(a, b, w):
    mu1 = occupational_from_policy(LV_ORBIT, slope_policy(-2.0 * a - 0.1), LV)
    mu2 = occupational_from_policy(LV_ORBIT, lambda y, z: np.array([b]), LV)
    mix = mixture(mu1, mu2, w)
    assert abs(mix.weights.sum() - 1.0) <= 1e-12
    m1, m2, mm = (mean_functionals(LV, m) for m in (mu1, mu2, mix))
    assert mm.r_bar == pytest.approx(w * m1.r_bar + (1 - w) * m2.r_bar, abs=1e-12)
    assert mm.h_bar[0] == pytest.approx(w * m1.h_bar[0] + (1 - w) * m2.h_bar[0], abs=1e-12)


def test_mixture_needs_common_level():
    mu1 = occupational_from_policy(LV_ORBIT, lambda y, z: np.array([0.0]), LV)
    mu2 = occupational_from_policy(LV_ORBIT_HI, lambda y, z: np.array([0.0]), LV)
    with pytest.raises(ContractViolation):
        mixture(mu1, mu2)


@settings(max_examples=30, deadline=None)
@given(dz=st.floats(-20.0, -1e-3))
def test_negative_slope_does_nonnegative_work(dz):
    mf = mean_functionals(LV, occupational_from_policy(LV_ORBIT, slope_policy(dz), LV))
    assert mf.h_bar[0] >= 0.0


def test_synthesized_feedback_nonnegative_work(ex2_policy, ex2_orbits):
    for orb in ex2_orbits:
        mf = mean_functionals(LV, occupational_from_policy(orb, ex2_policy))
        assert mf.h_bar[0] >= 0.0


def test_atoms_csv(tmp_path):
    mu = occupational_from_policy(LV_ORBIT, lambda y, z: np.array([0.2]), LV)
    path = tmp_path / "mu.csv"
    mu.to_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert path.read_text().splitlines()[0] == "weight,u1,y1,y2"
    assert np.array_equal(data[:, 2:], mu.states)
