import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdreswarm.dynamics import (
    ELModel,
    GeneralizedState,
    HolonomicParams,
    forward_dynamics,
    holonomic_model,
    integrate_rk4,
    kinetic_energy,
)
from sdreswarm.transform import (
    NonIntegrableError,
    build_transform,
    check_assumptions,
    coupling_map,
    decoupled_dynamics,
    decoupled_input_response,
    from_transformed,
    newton_inverse,
    sample_states,
    schur_block,
    to_transformed,
    transform_model,
    transformed_lagrangian,
)

P = HolonomicParams(m=0.01, L=0.02)
MODEL = holonomic_model(P)
SPEC = build_transform(MODEL)
angles = st.floats(-math.pi, math.pi, allow_nan=False)
reals = st.floats(-3, 3, allow_nan=False)


def _model_without_phi(model):
    return ELModel(model.n, model.m_inputs, model.mass_matrix, model.coriolis, model.potential_grad,
                   model.input_matrix, model.unactuated, model.actuated, mass_partials=model.mass_partials)


def test_coupling_map_closed_form():
    for th in np.linspace(-3, 3, 13):
        np.testing.assert_allclose(coupling_map(MODEL, [0, 0, th]), [[0.0, -P.L * math.sin(th)]], atol=1e-16)


def test_T_at_quarter_turn():
    T = SPEC.T([0.0, 0.0, math.pi / 2])
    assert T[0, 2] == pytest.approx(P.L, abs=1e-15)
    np.testing.assert_allclose(T @ SPEC.T_inv([0.0, 0.0, math.pi / 2]), np.eye(3), atol=1e-15)


def test_phi_values():
    np.testing.assert_allclose(SPEC.phi([0.0, 0.0, 0.0]), [P.L, 0.0, 0.0], atol=1e-16)
    np.testing.assert_allclose(SPEC.phi([0.1, 0.2, math.pi / 2]), [0.1, 0.2, math.pi / 2], atol=1e-16)
    np.testing.assert_allclose(SPEC.phi([0.0, 0.0, math.pi]), [-P.L, 0.0, math.pi], atol=1e-16)


@settings(max_examples=50, deadline=None)
@given(x=reals, y=reals, th=angles)
def test_phi_inverse_round_trip(x, y, th):
    q = np.array([x, y, th])
    np.testing.assert_allclose(SPEC.phi_inv(SPEC.phi(q)), q, atol=1e-14)
    np.testing.assert_allclose(newton_inverse(SPEC, SPEC.phi(q)), q, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(th=angles)
def test_block_diagonal_inertia(th):
    q = np.array([0.0, 0.0, th])
    T = SPEC.T(q)
    D = T.T @ MODEL.mass_matrix(q) @ T
    assert np.abs(D[0, 1:]).max() < 1e-12 and np.abs(D[1:, 0]).max() < 1e-12
    assert D[0, 0] == 3 * P.m
    m, L, c, s = P.m, P.L, math.cos(th), math.sin(th)
    S = np.array([[3 * m, 3 * L * m * c], [3 * L * m * c, 5 * L * L * m - 3 * L * L * m * s * s]])
    np.testing.assert_allclose(schur_block(MODEL, q), S, rtol=0, atol=1e-12)
    np.testing.assert_allclose(D[1:, 1:], S, rtol=0, atol=1e-12)


def test_assumptions_hold_for_robot():
    rep = check_assumptions(MODEL, sample_states(3, 40, seed=1))
    assert rep.all_passed, rep.to_text()
    assert "PASS" in rep.to_text()
    assert rep.to_dict()["all_passed"]


def test_assumption_violation_detected():
    # m_uu depends on q_u: A3 and A4 must fail
    def mass(q):
        return np.diag([2.0 + math.sin(q[0]), 1.0, 1.0])

    model = ELModel(3, 2, mass, lambda q, v: np.zeros((3, 3)), lambda q: np.zeros(3),
                    lambda q: np.array([[0, 0], [1, 0], [0, 1.0]]), (0,), (1, 2))
    rep = check_assumptions(model, sample_states(3, 12, seed=2))
    assert not rep["A3"].passed and not rep["A4"].passed
    assert rep["A1"].passed


def test_non_integrable_coupling_rejected():
    def mass(q):
        e = 0.1 * q[2]
        return np.array([[1.0, e, 0.0], [e, 1.0, 0.0], [0.0, 0.0, 1.0]])

    model = ELModel(3, 2, mass, lambda q, v: np.zeros((3, 3)), lambda q: np.zeros(3),
                    lambda q: np.array([[0, 0], [1, 0], [0, 1.0]]), (0,), (1, 2))
    with pytest.raises(NonIntegrableError):
        build_transform(model)


def test_quadrature_phi_matches_closed_form():
    spec_q = build_transform(_model_without_phi(MODEL))
    assert not spec_q.closed_form
    for th in np.linspace(-3, 3, 9):
        q = np.array([0.0, 0.0, th])
        # quadrature starts at zero, the closed form at L
        assert spec_q.phi(q)[0] - SPEC.phi(q)[0] == pytest.approx(-P.L, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(th=angles, a=reals, b=reals, c=reals)
def test_kinetic_energy_invariant(th, a, b, c):
    s = GeneralizedState([0.1, -0.1, th], [a, b, c])
    tm = transform_model(MODEL, SPEC)
    bq, bqd = to_transformed(SPEC, s)
    assert transformed_lagrangian(tm, bq, bqd) == pytest.approx(kinetic_energy(MODEL, s), rel=1e-10, abs=1e-15)
    back = from_transformed(SPEC, bq, bqd)
    np.testing.assert_allclose(back.q, s.q, atol=1e-14)
    np.testing.assert_allclose(back.qdot, s.qdot, atol=1e-12)


def test_decoupled_accelerations_match():
    rng = np.random.default_rng(5)
    for _ in range(100):
        s = GeneralizedState(rng.uniform(-3, 3, 3), rng.normal(size=3))
        u = rng.normal(size=2)
        ref = forward_dynamics(MODEL, s, u)
        np.testing.assert_allclose(decoupled_dynamics(MODEL, SPEC, s, u), ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


def test_input_response_is_exact_derivative():
    rng = np.random.default_rng(6)
    for _ in range(20):
        s = GeneralizedState(rng.uniform(-3, 3, 3), np.zeros(3))
        R = decoupled_input_response(MODEL, SPEC, s.q)
        for k in range(2):
            e = np.eye(2)[k]
            np.testing.assert_allclose(R[:, k], forward_dynamics(MODEL, s, e) - forward_dynamics(MODEL, s, 0 * e),
                                       rtol=1e-9, atol=1e-9)


def test_short_trajectory_equivalence():
    rng = np.random.default_rng(7)
    s0 = GeneralizedState(rng.uniform(-1, 1, 3), rng.normal(size=3) * 0.2)
    u_of_t = lambda t: np.array([1e-3 * math.sin(3 * t), 2e-5 * math.cos(2 * t)])  # noqa: E731
    ref = integrate_rk4(MODEL, s0, u_of_t, 1e-3, 200)
    dec = integrate_rk4(MODEL, s0, u_of_t, 1e-3, 200, accel=lambda st_, u: decoupled_dynamics(MODEL, SPEC, st_, u))
    err = max(np.abs(a.q[:2] - b.q[:2]).max() for a, b in zip(ref, dec))
    assert err < 1e-9


def test_spec_bound_to_model():
    other = holonomic_model(HolonomicParams(m=0.02))
    with pytest.raises(ValueError):
        decoupled_dynamics(other, SPEC, GeneralizedState(np.zeros(3), np.zeros(3)), np.zeros(2))


def test_batched_routes_match_single_state():
    from sdreswarm.dynamics import forward_dynamics_batch
    from sdreswarm.transform import phi_batch, phi_inv_batch, transformed_accelerations, transformed_accelerations_batch

    rng = np.random.default_rng(8)
    Q = rng.uniform(-3, 3, (15, 3))
    V = rng.normal(size=(15, 3))
    U = rng.normal(size=(15, 2)) * 1e-3
    ref = np.stack([forward_dynamics(MODEL, GeneralizedState(q, v), u) for q, v, u in zip(Q, V, U)])
    np.testing.assert_allclose(forward_dynamics_batch(MODEL, Q, V, U), ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())
    bQ = phi_batch(SPEC, Q)
    np.testing.assert_allclose(bQ, np.stack([SPEC.phi(q) for q in Q]), atol=1e-15)
    np.testing.assert_allclose(phi_inv_batch(SPEC, bQ), Q, atol=1e-14)
    bV = np.stack([SPEC.T_inv(q) @ v for q, v in zip(Q, V)])
    ref = np.stack([transformed_accelerations(SPEC, bq, bv, u) for bq, bv, u in zip(bQ, bV, U)])
    np.testing.assert_allclose(transformed_accelerations_batch(SPEC, bQ, bV, U), ref,
                               rtol=1e-12, atol=1e-12 * np.abs(ref).max())


def test_small_solve():
    from sdreswarm.transform import _small_solve

    rng = np.random.default_rng(9)
    for k in (1, 2, 3):
        A = rng.normal(size=(6, 4, k, k)) + 3 * np.eye(k)
        R = rng.normal(size=(6, 4, k, 2))
        np.testing.assert_allclose(_small_solve(A, R), np.linalg.solve(A, R), rtol=1e-12, atol=1e-12)
        # broadcast of a shared matrix over extra right-hand sides
        np.testing.assert_allclose(_small_solve(A[:, None, 0], R), np.linalg.solve(A[:, None, 0], R),
                                   rtol=1e-12, atol=1e-12)


def test_trajectory_equivalence_short():
    from sdreswarm.verify import trajectory_equivalence

    res = trajectory_equivalence(n_traj=5, duration=0.1)
    assert res["max_position_error"] < 1e-9
    assert res["displacement"] > 1e-3
