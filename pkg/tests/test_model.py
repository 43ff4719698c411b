import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from epilab.model import (
    C_REDESIGNED, C_STANDARD, C_SUM, DEFAULT_PARAMS, G, DomainError, EpileptorParams,
    FeedbackLaw, branch_signature, closed_loop_field, closed_loop_state_jacobian, f1, f2,
    jacobian, output, vector_field,
)

finite = st.floats(-4.0, 4.0, allow_nan=False)
states = arrays(float, 6, elements=finite)
inputs = st.floats(-5.0, 5.0, allow_nan=False)


def test_default_parameters():
    p = DEFAULT_PARAMS
    assert (p.x0, p.y0, p.tau1, p.tau0, p.tau2) == (-1.6, 1.0, 1.0, 2857.0, 10.0)
    assert (p.I_rest1, p.I_rest2, p.gamma) == (3.1, 0.45, 0.01)


@pytest.mark.parametrize("name", ["tau0", "tau1", "tau2", "gamma"])
def test_non_positive_time_constants_rejected(name):
    with pytest.raises(ValueError):
        EpileptorParams(**{name: 0.0})


def test_nan_parameter_rejected():
    with pytest.raises(ValueError):
        EpileptorParams(x0=float("nan"))


def test_output_maps():
    assert list(C_STANDARD) == [1, 0, -1, 0, 0, 0]
    assert list(C_SUM) == [1, 0, 1, 0, 0, 0]
    assert list(C_REDESIGNED) == [1, 0, -0.29, 0, 0, 0]
    assert list(G) == [1, 0, 1, 0, 0, 0]
    with pytest.raises(ValueError):
        C_STANDARD[0] = 2.0


def test_field_at_zero_matches_hand_evaluation():
    # every term with a state factor vanishes, leaving the constants
    dx = vector_field(np.zeros(6))
    expected = [3.1, 1.0, -0.3 * -3.5 + 0.45, 6 * 0.25 / 10, 0.0, 4 * 1.6 / 2857]
    np.testing.assert_allclose(dx, expected, rtol=1e-15)


@given(states, inputs)
def test_field_matches_retyped_equations(x, u):
    np.testing.assert_allclose(vector_field(x, u), oracles.field(x, u), rtol=1e-13, atol=1e-12)


@given(states, inputs, inputs)
def test_input_affinity(x, u1, u2):
    # f(x, u) = f(x, 0) + g u exactly (up to the float addition itself)
    d = vector_field(x, u1) - vector_field(x, u2)
    np.testing.assert_allclose(d, G * (u1 - u2), atol=1e-12 * (1 + abs(u1) + abs(u2)))


@given(arrays(float, (5, 6), elements=finite), inputs)
def test_batch_equals_rowwise(X, u):
    batch = vector_field(X, u)
    for i in range(len(X)):
        np.testing.assert_array_equal(batch[i], vector_field(X[i], u))


@given(finite, finite, st.floats(-0.5, 0.5))
def test_piecewise_terms_continuous(x2, z, h):
    h = abs(h) * 1e-9
    assert abs(f1(-h, x2, z) - f1(h, x2, z)) < 1e-7
    assert abs(f2(-0.25 - h) - f2(-0.25 + h)) < 1e-7


def test_surface_ownership():
    assert f1(0.0, 1.0, 2.0) == 0.0
    assert f2(-0.25) == 0.0
    assert branch_signature([0.0, 0, -0.25, 0, 0, 0]) == (False, True)
    assert branch_signature([-1e-300, 0, -0.2500001, 0, 0, 0]) == (True, False)


def test_jacobian_at_hundred_random_states_matches_finite_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(-3, 3, size=6)
        # keep the central-difference stencil off the switching surfaces
        if abs(x[0]) < 1e-3 or abs(x[2] + 0.25) < 1e-3:
            x[0] += 0.01
            x[2] += 0.01
        J = jacobian(x)
        Jfd = oracles.fd_jacobian(lambda y: oracles.field(y), x)
        rel = np.abs(J - Jfd).max() / max(1.0, np.abs(Jfd).max())
        worst = max(worst, rel)
    assert worst < 1e-5


def test_jacobian_surface_convention():
    # on x1 = 0 the x1 >= 0 branch supplies the derivative
    x = np.array([0.0, 0.0, 0.5, 0.0, 0.0, 3.0])
    assert jacobian(x)[0, 2] == -0.0
    assert jacobian(x)[0, 0] == -(0.5 - 0.6)


@given(states, states, st.floats(-3, 3), st.floats(-3, 3))
def test_output_linear(x, z, a, b):
    for c in (C_STANDARD, C_SUM, C_REDESIGNED):
        np.testing.assert_allclose(output(a * x + b * z, c), a * output(x, c) + b * output(z, c),
                                   atol=1e-10)


def test_domain_errors():
    with pytest.raises(DomainError):
        vector_field(np.zeros(5))
    with pytest.raises(DomainError):
        vector_field([np.nan, 0, 0, 0, 0, 0])
    with pytest.raises(DomainError):
        vector_field(np.zeros(6), u=np.inf)
    with pytest.raises(DomainError):
        jacobian(np.zeros((2, 6)))


def test_feedback_law_validation():
    with pytest.raises(ValueError):
        FeedbackLaw(k=-1.0)
    with pytest.raises(ValueError):
        FeedbackLaw(phi=lambda y: -y)  # outside the sector
    law = FeedbackLaw(u_star=-0.8, k=1.0, y_star=0.5, phi=np.tanh)
    assert not law.is_linear
    assert law.input(0.5) == -0.8


@given(states, st.floats(-3, 0), st.floats(0, 4), st.floats(-2, 2))
def test_closed_loop_field_and_jacobian(x, u_star, k, y_star):
    law = FeedbackLaw(u_star, k, y_star)
    expected = oracles.field(x, u_star - k * (x @ C_STANDARD - y_star))
    np.testing.assert_allclose(closed_loop_field(x, law), expected, rtol=1e-12, atol=1e-10)
    Jcl = closed_loop_state_jacobian(x, law)
    np.testing.assert_array_equal(Jcl, jacobian(x) - k * np.outer(G, C_STANDARD))
