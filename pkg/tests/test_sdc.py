import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdreswarm.dynamics import HolonomicParams, holonomic_model
from sdreswarm.sdc import (
    controllability_matrix,
    ctrb_rank,
    degenerate_scan,
    plant_rhs,
    reference_diff,
    sdc_factorize,
)
from sdreswarm.transform import build_transform

P = HolonomicParams(inputs="normalized")
MODEL = holonomic_model(P)
SPEC = build_transform(MODEL)
FORM = sdc_factorize(SPEC, MODEL)
PLAIN = sdc_factorize(SPEC, MODEL, lever_gain=0.0)

states = st.tuples(*(st.floats(-1, 1, allow_nan=False) for _ in range(4)),
                   st.floats(-math.pi, math.pi, allow_nan=False), st.floats(-3, 3, allow_nan=False))
inputs = st.tuples(st.floats(-2, 2, allow_nan=False), st.floats(-2, 2, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(x=states, u=inputs)
def test_factorization_reproduces_plant(x, u):
    x, u = np.array(x), np.array(u)
    for form in (FORM, PLAIN):
        A, B = form.evaluate(x)
        f = plant_rhs(MODEL, SPEC, x, u)
        np.testing.assert_allclose(A @ x + B @ u, f, rtol=1e-9, atol=1e-9 * max(1.0, np.abs(f).max()))


@settings(max_examples=100, deadline=None)
@given(x=states)
def test_lever_is_in_null_space(x):
    x = np.array(x)
    np.testing.assert_allclose(FORM.lever_matrix(x) @ x, 0.0, atol=1e-15)


def test_heading_input_column():
    # normalized inputs: theta'' = (u2 - u1) / (2 m)
    for th in (-2.0, 0.0, 0.7):
        B = FORM.B([0, 0, 0, 0, th, 0])
        np.testing.assert_allclose(B[5], [-1 / (2 * P.m), 1 / (2 * P.m)], rtol=1e-10)
        np.testing.assert_allclose(B[[0, 2, 4]], 0.0)


def test_zero_heading_rate_uses_limit():
    x = np.array([0.1, 0.0, -0.1, 0.0, 0.5, 0.0])
    A0 = FORM.A(x)
    A1 = FORM.A(x + np.array([0, 0, 0, 0, 0, 1e-6]))
    np.testing.assert_allclose(A0, A1, atol=1e-5)


def test_controllability_matrix_shape_and_double_integrator():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    np.testing.assert_array_equal(controllability_matrix(A, B), [[0, 1], [1, 0]])
    assert ctrb_rank(A, B) == 2
    assert ctrb_rank(A, np.array([[1.0], [0.0]])) == 1
    with pytest.raises(ValueError):
        ctrb_rank(A, B, tol=0)


def test_rank_six_at_generic_states():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.uniform(-1, 1, 6) * np.array([0.5, 0.5, 0.5, 0.5, math.pi, 2])
        assert ctrb_rank(*FORM.evaluate(x)) == 6


def test_plain_factorization_loses_rank_at_rest():
    x = np.array([0.2, 0.0, 0.1, 0.0, 0.3, 0.0])
    assert ctrb_rank(*PLAIN.evaluate(x)) < 6
    assert ctrb_rank(*FORM.evaluate(x)) == 6


def test_degenerate_catalog():
    cat = degenerate_scan(FORM)
    assert len(cat) == 27
    ranks = {(x[0], x[3], x[4]): r for x, r in cat}
    # zero lever argument at rest: the x1 channel is disconnected
    assert ranks[(0.0, 0.0, 0.0)] < 6
    assert ranks[(0.5, 0.0, 0.0)] == 6


def test_reference_matrices_disagree_with_plant():
    model = holonomic_model(HolonomicParams())
    form = sdc_factorize(build_transform(model), model)
    d = reference_diff(form, [0.1, 0.2, 0.0, 0.1, 0.4, 0.3], [0.01, 0.001])
    assert d["rhs_max_abs_diff"] > 1e-6
    assert "dx1" in d["B_rows_differing"]


def test_rejects_wrong_model():
    other = holonomic_model(HolonomicParams(m=0.02))
    with pytest.raises(ValueError):
        sdc_factorize(SPEC, other)
