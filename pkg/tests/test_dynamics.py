import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from epilab.analysis import operating_equilibrium
from epilab.dynamics import (
    IntegrationError, SolverOptions, Trajectory, _epileptor_rhs, _pack_params,
    detect_cycles, integrate, phase_plane,
)
from epilab.model import C_STANDARD, C_SUM, DEFAULT_PARAMS, FeedbackLaw, G, vector_field

AUTONOMOUS_X0 = np.array([0.0, -5.0, -5.0, 0.0, 0.0, 3.0])


@pytest.fixture(scope="module")
def autonomous_run():
    return integrate(AUTONOMOUS_X0, (0.0, 4 * DEFAULT_PARAMS.tau0))


@given(arrays(float, 6, elements=st.floats(-4, 4)), st.floats(-3, 1), st.floats(0, 4),
       st.floats(-2, 2))
def test_compiled_rhs_equals_vector_field(x, u_star, k, y_star):
    prm = _pack_params(DEFAULT_PARAMS, u_star, k, y_star, 0.0, C_STANDARD)
    out = np.empty(6)
    _epileptor_rhs(x, prm, out)
    expected = vector_field(x, u_star - k * (x @ C_STANDARD - y_star))
    np.testing.assert_allclose(out, expected, rtol=1e-14, atol=1e-13)


def test_short_run_matches_reference_integrator():
    t_end = 200.0
    traj = integrate(AUTONOMOUS_X0, (0.0, t_end), opts=SolverOptions(rel_tol=1e-11, abs_tol=1e-13))
    ref = oracles.simulate(AUTONOMOUS_X0, t_end, lambda x: 0.0, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(traj.final_state, ref.y[:, -1], rtol=1e-6, atol=1e-7)


def test_closed_loop_matches_reference_integrator():
    eq = operating_equilibrium(-0.8)
    law = FeedbackLaw(-0.8, 1.0, float(C_STANDARD @ eq.x_star))
    x0 = eq.x_star + np.array([0.2, -0.3, 0.1, 0.05, 0.0, -0.1])
    traj = integrate(x0, (0.0, 300.0), law, opts=SolverOptions(rel_tol=1e-11, abs_tol=1e-13))
    ref = oracles.simulate(x0, 300.0, lambda x: law.input(x @ C_STANDARD), rtol=1e-12,
                           atol=1e-14)
    np.testing.assert_allclose(traj.final_state, ref.y[:, -1], rtol=1e-7, atol=1e-8)


def test_tolerance_refinement_converges():
    t_end = 100.0
    ref = oracles.simulate(AUTONOMOUS_X0, t_end, lambda x: 0.0, rtol=1e-13, atol=1e-14).y[:, -1]
    errs = []
    for rtol in (1e-5, 1e-7, 1e-9):
        tr = integrate(AUTONOMOUS_X0, (0.0, t_end),
                       opts=SolverOptions(rel_tol=rtol, abs_tol=rtol * 1e-2))
        errs.append(np.abs(tr.final_state - ref).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-6


def test_variational_equation_matches_flow_sensitivity():
    # d x(T) / d x0 from the linearized equation versus central differences of the flow
    eq = operating_equilibrium(-2.0)
    x0 = eq.x_star + 0.05
    T = 20.0
    opts = SolverOptions(rel_tol=1e-12, abs_tol=1e-14)

    def rhs(t, w):
        x, M = w[:6], w[6:].reshape(6, 6)
        J = oracles.fd_jacobian(lambda y: oracles.field(y, -2.0), x)
        return np.concatenate([oracles.field(x, -2.0), (J @ M).ravel()])

    from scipy.integrate import solve_ivp
    sol = solve_ivp(rhs, (0, T), np.concatenate([x0, np.eye(6).ravel()]), rtol=1e-10, atol=1e-12)
    Phi_ref = sol.y[6:, -1].reshape(6, 6)
    Phi = np.empty((6, 6))
    h = 1e-6
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        Phi[:, i] = (integrate(x0 + e, (0, T), -2.0, opts=opts).final_state
                     - integrate(x0 - e, (0, T), -2.0, opts=opts).final_state) / (2 * h)
    np.testing.assert_allclose(Phi, Phi_ref, rtol=1e-4, atol=1e-6)


def test_runs_are_deterministic():
    a = integrate(AUTONOMOUS_X0, (0.0, 500.0))
    b = integrate(AUTONOMOUS_X0, (0.0, 500.0))
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.states, b.states)


def test_custom_phi_path_agrees_with_linear_path():
    eq = operating_equilibrium(-0.8)
    y_star = float(C_STANDARD @ eq.x_star)
    lin = FeedbackLaw(-0.8, 1.0, y_star)
    custom = FeedbackLaw(-0.8, 1.0, y_star, phi=lambda y: 1.0 * y)
    x0 = eq.x_star + 0.1
    a = integrate(x0, (0.0, 50.0), lin)
    b = integrate(x0, (0.0, 50.0), custom)
    np.testing.assert_allclose(a.final_state, b.final_state, rtol=1e-12, atol=1e-12)


def test_trajectory_records_inputs_and_outputs():
    eq = operating_equilibrium(-0.8)
    law = FeedbackLaw(-0.8, 1.0, float(C_STANDARD @ eq.x_star))
    tr = integrate(eq.x_star + 0.1, (0.0, 10.0), law)
    np.testing.assert_allclose(tr.outputs, tr.states @ C_STANDARD)
    np.testing.assert_allclose(tr.inputs, law.input(tr.outputs))
    assert np.all(np.diff(tr.times) > 0)
    with pytest.raises(ValueError):
        tr.states[0, 0] = 1.0


def test_other_output_map_is_used_for_feedback():
    eq = operating_equilibrium(-2.0)
    law = FeedbackLaw(-2.0, 0.5, float(C_SUM @ eq.x_star))
    tr = integrate(eq.x_star + 0.1, (0.0, 5.0), law, c=C_SUM)
    np.testing.assert_allclose(tr.outputs, tr.states @ C_SUM)


def test_step_budget_raises_with_partial_trajectory():
    with pytest.raises(IntegrationError) as info:
        integrate(AUTONOMOUS_X0, (0.0, 1000.0), opts=SolverOptions(max_steps=50))
    err = info.value
    assert len(err.times) == len(err.states) > 1
    assert err.t == err.times[-1] < 1000.0


@pytest.mark.parametrize("bad", [
    dict(x0=np.zeros(5), t_span=(0, 1)),
    dict(x0=np.zeros(6), t_span=(1, 0)),
    dict(x0=np.full(6, np.nan), t_span=(0, 1)),
])
def test_invalid_inputs(bad):
    with pytest.raises(ValueError):
        integrate(bad["x0"], bad["t_span"])


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(rel_tol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(method="rk4")


def test_autonomous_run_has_recurrent_seizures(autonomous_run):
    rep = detect_cycles(autonomous_run)
    assert rep.n_seizures >= 2
    assert 0.0 < rep.ictal_fraction < 1.0
    assert 1000 < rep.mean_period < 3000
    for a, b in rep.episodes:
        assert b > a


def test_detector_on_synthetic_bursts():
    # 100-unit bursts of a fast oscillation every 1000 units on a flat baseline
    t = np.arange(0.0, 3000.0, 0.1)
    burst = ((t % 1000) >= 400) & ((t % 1000) < 500)
    y = np.where(burst, np.sin(2 * np.pi * t / 5.0), 0.0)
    X = np.zeros((len(t), 6))
    X[:, 0] = y
    tr = Trajectory(t, X, np.zeros_like(t), y)
    rep = detect_cycles(tr)
    assert rep.n_seizures == 3
    assert rep.mean_period == pytest.approx(1000.0, abs=1.0)
    # the centred 50-unit window widens each 100-unit burst by half a window per side
    assert rep.ictal_fraction == pytest.approx(0.15, abs=0.01)


def test_detector_on_quiet_signal():
    t = np.arange(0.0, 3000.0, 0.5)
    tr = Trajectory(t, np.zeros((len(t), 6)), np.zeros_like(t), 1e-3 * np.sin(t))
    rep = detect_cycles(tr)
    assert rep.n_seizures == 0 and rep.ictal_fraction == 0.0


def test_detector_needs_a_slow_time_constant():
    tr = integrate(AUTONOMOUS_X0, (0.0, 100.0))
    with pytest.raises(ValueError):
        detect_cycles(tr)


def test_phase_plane(autonomous_run):
    a = phase_plane(autonomous_run, ("x2", "y2"))
    b = phase_plane(autonomous_run, (2, 3))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        phase_plane(autonomous_run, ("x2", "w"))
    with pytest.raises(IndexError):
        phase_plane(autonomous_run, (0, 6))
