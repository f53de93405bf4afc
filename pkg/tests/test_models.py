import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avgctl.errors import ContractViolation, DomainError
from avgctl.models import (
    ModelSpec,
    ProblemSpec,
    check_constant_of_motion,
    eval_fields,
    example2_problem,
    lipschitz_f,
    lotka_volterra_example2,
    rotation_example1,
)

LV = lotka_volterra_example2()
ROT = rotation_example1()
ROT_G = rotation_example1(perturbation_gain=0.7)

lv_states = st.tuples(st.floats(0.05, 10.0), st.floats(0.05, 10.0))
rot_states = st.tuples(st.floats(-10.0, 10.0), st.floats(-10.0, 10.0))


def test_dimensions_and_boxes():
    for model in (LV, ROT):
        assert (model.m, model.k, model.du) == (2, 1, 1)
        assert np.all(model.u_lo <= model.u_hi)
    assert LV.u_lo[0] == 0.0 and LV.u_hi[0] == 1.0
    assert ROT.u_lo[0] == -1.0 and ROT.u_hi[0] == 1.0


def test_unknown_kind_rejected():
    with pytest.raises(ContractViolation):
        ModelSpec("van_der_pol")


def test_published_initial_state_level():
    fields = eval_fields(LV, [0.3], [0.8916, 3.1370])
    assert fields.F[0] == pytest.approx(-3.0, abs=1e-4)


def test_lv_equilibrium():
    for u in (0.0, 0.4, 1.0):
        fields = eval_fields(LV, [u], [1.0, 1.0])
        assert np.array_equal(fields.f, [0.0, 0.0])
        assert fields.F[0] == -2.0
        assert fields.h[0] == 0.0


def test_rotation_fields():
    fields = eval_fields(ROT, [1.0], [1.0, 0.0])
    assert np.allclose(fields.f, [0.0, -1.0])
    assert fields.F[0] == 1.0
    assert float(fields.F_jac[0] @ fields.f) == 0.0
    assert fields.r == 1.0


def test_lv_formulas():
    y = np.array([2.0, 0.5])
    u = np.array([0.25])
    fields = eval_fields(LV, u, y)
    assert np.allclose(fields.f, [-2.0 + 1.0, 0.5 - 1.0])
    assert np.allclose(fields.g, [-0.5, 0.0])
    F = math.log(0.5) - 0.5 + math.log(2.0) - 2.0
    assert fields.F[0] == pytest.approx(F, abs=1e-15)
    assert fields.h[0] == pytest.approx(0.25 * (2.0 - 1.0), abs=1e-15)
    assert fields.r == pytest.approx(0.0625 + (F + 2.05) ** 2, abs=1e-15)


def test_domain_and_box_errors():
    with pytest.raises(DomainError):
        eval_fields(LV, [0.5], [0.0, 1.0])
    with pytest.raises(DomainError):
        eval_fields(LV, [0.5], [1.0, -2.0])
    with pytest.raises(ContractViolation):
        eval_fields(LV, [1.5], [1.0, 2.0])
    with pytest.raises(ContractViolation):
        eval_fields(LV, [-0.1], [1.0, 2.0])
    with pytest.raises(ContractViolation):
        eval_fields(ROT, [-1.2], [1.0, 2.0])


@pytest.mark.parametrize("model", [ROT, ROT_G, LV])
def test_constant_of_motion_sampling(model):
    assert check_constant_of_motion(model, 1000, seed=7) <= 1e-12
    assert check_constant_of_motion(model, 10, seed=3) == check_constant_of_motion(model, 10, seed=3)


def test_constant_of_motion_empty():
    with pytest.raises(ContractViolation):
        check_constant_of_motion(LV, 0, seed=1)


@settings(max_examples=200, deadline=None)
@given(y=lv_states, u=st.floats(0.0, 1.0))
def test_lv_invariants(y, u):
    y = np.array(y)
    uu = np.array([u])
    assert abs(float(LV.F_jac(y)[0] @ LV.f(uu, y))) <= 1e-12 * max(1.0, np.abs(y).max() ** 2)
    assert abs(float(LV.h(uu, y)[0]) - float(LV.F_jac(y)[0] @ LV.g(uu, y))) <= 1e-14 * max(1.0, np.abs(y).max())
    assert LV.r(uu, y) >= 0.0


@settings(max_examples=200, deadline=None)
@given(y=rot_states, u=st.floats(-1.0, 1.0))
def test_rotation_invariants(y, u):
    y = np.array(y)
    uu = np.array([u])
    for model in (ROT, ROT_G):
        assert abs(float(model.F_jac(y)[0] @ model.f(uu, y))) <= 1e-12
        assert float(model.h(uu, y)[0]) == pytest.approx(float(model.F_jac(y)[0] @ model.g(uu, y)), abs=1e-14 * 400)


@settings(max_examples=50, deadline=None)
@given(y=lv_states)
def test_scalar_and_batched_paths_agree(y):
    y = np.array(y)
    batch = np.stack([y, y])
    u = np.array([0.4])
    ub = np.stack([u, u])
    assert np.allclose(LV.f(u, y), LV.f(ub, batch)[0], rtol=0, atol=1e-14)
    assert np.allclose(LV.F(y), LV.F(batch)[0], rtol=0, atol=1e-14)
    assert float(LV.r(u, y)) == pytest.approx(float(LV.r(ub, batch)[0]), abs=1e-13)
    b1, r1 = LV.control_split(y)
    b2, r2 = LV.control_split(batch)
    assert np.allclose(b1, b2[0]) and float(r1) == pytest.approx(float(r2[0]), abs=1e-13)


def test_control_split_matches_fields():
    y = np.array([[0.7, 2.2], [3.0, 0.4]])
    u = np.array([[0.3], [0.9]])
    for model in (LV, ROT_G):
        b, rho = model.control_split(y)
        assert np.allclose(model.h(u, y), u * b)
        assert np.allclose(model.r(u, y), u[:, 0] ** 2 + rho)


def test_lipschitz_constant():
    L = lipschitz_f(LV)
    y = np.array([[10.0, 10.0]])
    assert L >= np.linalg.norm(LV.jacobian_f(np.zeros((1, 1)), y)[0], 2) - 1e-12
    assert 10.0 < L < 30.0
    assert lipschitz_f(ROT) == pytest.approx(1.0)


def test_problem_invariants():
    p = example2_problem()
    assert p.z0[0] == pytest.approx(-3.0000707, abs=1e-7)
    assert p.epsilon == 0.1 and p.discount == 0.1
    with pytest.raises(ContractViolation):
        ProblemSpec(LV, 0.1, 0.1, (0.8916, 3.1370), z0=(-2.9,))
    with pytest.raises(ContractViolation):
        ProblemSpec(LV, 0.0, 0.1, (0.8916, 3.1370))
    with pytest.raises(ContractViolation):
        ProblemSpec(LV, 0.1, -1.0, (0.8916, 3.1370))
    with pytest.raises(ContractViolation):
        ProblemSpec(LV, 0.1, 0.1, (0.8916, 3.1370), z_lo=(-2.0,), z_hi=(-2.5,))
    with pytest.raises(ContractViolation):
        ProblemSpec(LV, 0.1, 0.1, (1.0, 1.0))
