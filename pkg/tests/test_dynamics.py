import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdreswarm.dynamics import (
    ELModel,
    GeneralizedState,
    HolonomicParams,
    SingularMassError,
    christoffel_coriolis,
    forward_dynamics,
    holonomic_model,
    holonomic_split_coriolis,
    integrate_rk4,
    kinetic_energy,
    lagrangian,
    mass_derivative,
    mass_partials,
    skew_symmetry_residual,
)

MODEL = holonomic_model(HolonomicParams(m=0.01, L=0.02))
angles = st.floats(-math.pi, math.pi, allow_nan=False)
speeds = st.floats(-5, 5, allow_nan=False)


def test_mass_matrix_at_zero_heading():
    expected = np.array([[0.03, 0, 0], [0, 0.03, 6e-4], [0, 6e-4, 2e-5]])
    np.testing.assert_allclose(MODEL.mass_matrix(np.zeros(3)), expected, rtol=0, atol=1e-15)


def test_unit_normal_force_acceleration():
    # inverse of the 2x2 lower block [[0.03, 6e-4], [6e-4, 2e-5]] with det 2.4e-7
    acc = forward_dynamics(MODEL, GeneralizedState(np.zeros(3), np.zeros(3)), [1.0, 0.0])
    np.testing.assert_allclose(acc, [0.0, 2e-5 / 2.4e-7, -6e-4 / 2.4e-7], rtol=1e-12, atol=1e-12)
    M0 = MODEL.mass_matrix(np.zeros(3))
    np.testing.assert_allclose(acc, np.linalg.solve(M0, [0.0, 1.0, 0.0]), rtol=1e-12)


def test_lagrangian_translation():
    assert lagrangian(MODEL, GeneralizedState([0, 0, 0], [1, 0, 0])) == pytest.approx(0.015, abs=1e-15)


def test_mass_matrix_positive_definite_on_grid():
    rng = np.random.default_rng(0)
    for th in rng.uniform(-math.pi, math.pi, 1000):
        M = MODEL.mass_matrix(np.array([0.0, 0.0, th]))
        assert np.allclose(M, M.T)
        assert np.linalg.eigvalsh(M)[0] > 0


@settings(max_examples=60, deadline=None)
@given(th=angles, m=st.floats(1e-3, 10), L=st.floats(1e-3, 1))
def test_mass_matrix_spd_any_parameters(th, m, L):
    M = holonomic_model(HolonomicParams(m, L)).mass_matrix(np.array([0.0, 0.0, th]))
    # Schur complement of the translational block is 2 L^2 m > 0
    assert np.linalg.eigvalsh(M)[0] > 0
    np.testing.assert_allclose(np.linalg.det(M), 9 * m ** 2 * 2 * L ** 2 * m, rtol=1e-6)


@settings(max_examples=100, deadline=None)
@given(th=angles, x=speeds, y=speeds, w=speeds)
def test_skew_symmetry(th, x, y, w):
    st_ = GeneralizedState([0.1, -0.2, th], [x, y, w])
    assert skew_symmetry_residual(MODEL, st_) < 1e-12


def test_christoffel_matches_closed_form():
    rng = np.random.default_rng(1)
    for _ in range(50):
        q, qd = rng.normal(size=3), rng.normal(size=3)
        np.testing.assert_allclose(christoffel_coriolis(MODEL, q, qd), MODEL.coriolis(q, qd), atol=1e-15)


def test_alternative_coriolis_same_product_but_not_skew():
    p = HolonomicParams()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        q, qd = rng.normal(size=3), rng.normal(size=3)
        Cp = holonomic_split_coriolis(p, q, qd)
        np.testing.assert_allclose(Cp @ qd, MODEL.coriolis(q, qd) @ qd, atol=1e-15)
        worst = max(worst, skew_symmetry_residual(MODEL, GeneralizedState(q, qd), coriolis=Cp))
    assert worst > 1e-6


def test_mass_partials_match_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = rng.normal(size=3)
        fd = ELModel(3, 2, MODEL.mass_matrix, MODEL.coriolis, MODEL.potential_grad, MODEL.input_matrix, (0,), (1, 2))
        np.testing.assert_allclose(mass_partials(MODEL, q), mass_partials(fd, q), atol=1e-9)
        s = GeneralizedState(q, rng.normal(size=3))
        np.testing.assert_allclose(mass_derivative(MODEL, s, "analytic"), mass_derivative(MODEL, s, "fd"), atol=1e-9)


def test_energy_conserved_without_input():
    s0 = GeneralizedState([0.0, 0.0, 0.3], [0.2, -0.1, 2.0])
    traj = integrate_rk4(MODEL, s0, lambda t: np.zeros(2), 1e-4, 10_000)
    e0 = kinetic_energy(MODEL, s0)
    drift = max(abs(kinetic_energy(MODEL, s) - e0) for s in traj[::100]) / e0
    assert drift < 1e-6


def test_torque_and_normalized_inputs_agree():
    p = HolonomicParams(inputs="normalized")
    mn = holonomic_model(p)
    s = GeneralizedState([0, 0, 0.4], [0.1, 0.2, 0.3])
    u = np.array([0.7, -0.3])
    np.testing.assert_allclose(forward_dynamics(mn, s, u), forward_dynamics(MODEL, s, u * p.input_scale), atol=1e-12)


def test_normalized_heading_equation():
    p = HolonomicParams(inputs="normalized")
    mn = holonomic_model(p)
    rng = np.random.default_rng(4)
    for _ in range(20):
        u = rng.normal(size=2)
        th = rng.uniform(-3, 3)
        acc = forward_dynamics(mn, GeneralizedState([0, 0, th], [0, 0, 0]), u)
        assert acc[2] == pytest.approx((u[1] - u[0]) / (2 * p.m), rel=1e-10)


def test_singular_mass_rejected():
    bad = ELModel(2, 1, lambda q: np.array([[1.0, 1.0], [1.0, 1.0]]), lambda q, v: np.zeros((2, 2)),
                  lambda q: np.zeros(2), lambda q: np.array([[0.0], [1.0]]), (0,), (1,))
    with pytest.raises(SingularMassError):
        forward_dynamics(bad, GeneralizedState([0, 0], [0, 0]), [1.0])


def test_state_validation():
    with pytest.raises(ValueError):
        GeneralizedState([0, 0, 0], [0, 0])
    with pytest.raises(ValueError):
        GeneralizedState([0, np.nan, 0], [0, 0, 0])
    s = GeneralizedState([0, 0, 0], [0, 0, 0])
    with pytest.raises(ValueError):
        s.q[0] = 1.0


def test_model_partition_validation():
    with pytest.raises(ValueError):
        ELModel(3, 2, MODEL.mass_matrix, MODEL.coriolis, MODEL.potential_grad, MODEL.input_matrix, (0,), (0, 1))
    with pytest.raises(ValueError):
        HolonomicParams(m=-1)
    with pytest.raises(ValueError):
        HolonomicParams(inputs="bogus")


def test_input_count_checked():
    with pytest.raises(ValueError):
        forward_dynamics(MODEL, GeneralizedState(np.zeros(3), np.zeros(3)), [1.0])
