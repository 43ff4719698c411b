import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from epilab.analysis import find_equilibria, operating_equilibrium, spectral_abscissa
from epilab.design import (
    FEASIBILITY_TOL, Loss, NotHurwitzError, UnsupportedModeError, design_output,
    kyp_feasibility, solve_sparse_lyapunov,
)
from epilab.model import C_STANDARD, C_SUM, G
from epilab.passivity import verify_linear_passivity


@pytest.fixture(scope="module")
def A_um2():
    return operating_equilibrium(-2.0).jacobian


@pytest.fixture(scope="module")
def A_cl_nominal():
    return operating_equilibrium(-0.8).jacobian - np.outer(G, C_STANDARD)


@pytest.fixture(scope="module")
def redesign(A_um2):
    return design_output(A_um2, G, "l1:1,0,-1,0,0,0")


def test_sparse_lyapunov_identity_gives_floor():
    res = solve_sparse_lyapunov(-np.eye(6), eps=1e-6, delta=1e-6)
    assert res.solved
    assert res.objective_value == 0.0
    np.testing.assert_allclose(res.P, 1e-6 * np.eye(6), rtol=1e-3)


def test_sparse_lyapunov_nominal(A_cl_nominal):
    res = solve_sparse_lyapunov(A_cl_nominal, eps=1e-4, delta=1e-6)
    assert res.solved
    off = res.P - np.diag(np.diag(res.P))
    assert np.count_nonzero(off) // 2 <= 2
    assert min(res.feasibility_residuals.values()) >= -FEASIBILITY_TOL
    lam = np.linalg.eigvalsh(-(A_cl_nominal.T @ res.P + res.P @ A_cl_nominal))[0]
    assert lam >= 1e-4 - 1e-7


def test_sparse_lyapunov_objective_matches_conic_solver(A_cl_nominal):
    pytest.importorskip("cvxpy")
    ref, _ = oracles.lyapunov_sdp_cvxpy(A_cl_nominal, 1e-4, 1e-6)
    res = solve_sparse_lyapunov(A_cl_nominal, eps=1e-4, delta=1e-6)
    assert res.objective_value == pytest.approx(ref, abs=1e-5)


def test_sparse_lyapunov_rejects_unstable():
    with pytest.raises(NotHurwitzError):
        solve_sparse_lyapunov(0.1 * np.eye(6))
    with pytest.raises(ValueError):
        solve_sparse_lyapunov(-np.eye(6), eps=0.0)


def test_redesign_output_band(redesign):
    c = redesign.c
    assert redesign.solved
    assert c[0] > 0
    assert -0.32 <= c[2] <= -0.26
    assert np.all(np.abs(c[[1, 3, 4, 5]]) <= 0.02)
    assert c[0] + c[2] > 0


def test_redesign_objective_matches_conic_solver(A_um2, redesign):
    pytest.importorskip("cvxpy")
    ref, _ = oracles.lyapunov_sdp_cvxpy(A_um2, 1e-7, 1e-6, objective="l1", g=G,
                                        target=C_STANDARD)
    assert redesign.objective_value == pytest.approx(ref, abs=1e-5)


def test_redesign_passes_kyp(A_um2, redesign):
    cert = verify_linear_passivity(A_um2, G, redesign.c, redesign.P)
    assert cert.strict
    assert cert.matching_residual == 0.0


def test_zero_loss_passes_kyp(A_um2):
    res = design_output(A_um2, G, "zero")
    assert res.solved and res.objective_value == 0.0
    assert verify_linear_passivity(A_um2, G, res.P @ G, res.P).strict


def _stable_matrices():
    return arrays(float, (6, 6), elements=st.floats(-1, 1)).map(
        lambda M: M - (max(0.0, spectral_abscissa(M)) + 0.2) * np.eye(6))


@settings(max_examples=8)
@given(_stable_matrices())
def test_solved_designs_are_kyp_certificates(A):
    res = design_output(A, G, "l1")
    assert res.solved
    assert verify_linear_passivity(A, G, res.c, res.P).strict


def test_delta_ladder_monotone(A_um2):
    objs = [design_output(A_um2, G, "l1", delta=d).objective_value
            for d in (1e-1, 1e-2, 1e-4, 1e-6)]
    for a, b in zip(objs, objs[1:]):
        assert b <= a + 1e-7


def test_design_is_deterministic(A_um2, redesign):
    again = design_output(A_um2, G, "l1:1,0,-1,0,0,0")
    np.testing.assert_array_equal(again.P, redesign.P)


def test_unsupported_modes(A_um2):
    with pytest.raises(UnsupportedModeError):
        design_output(A_um2, G, "l1", k=1.0)
    with pytest.raises(UnsupportedModeError):
        design_output(A_um2, G, "l0")
    with pytest.raises(NotHurwitzError):
        design_output(find_equilibria(0.0)[0].jacobian, G, "l1")


def test_loss_parsing():
    loss = Loss.parse("l1:1,0,-0.5,0,0,0")
    np.testing.assert_array_equal(loss.target, [1, 0, -0.5, 0, 0, 0])
    assert Loss.parse("zero").target is None


def test_two_by_two_matches_grid_oracle():
    A = np.array([[-1.0, 2.0], [0.0, -3.0]])
    g = np.array([1.0, 1.0])
    target = np.array([1.0, -1.0])
    res = design_output(A, g, Loss("l1", target), delta=1e-3, eps=1e-3)
    ref, _ = oracles.grid_2x2_min(A, g, target, eps=1e-3, delta=1e-3)
    assert res.objective_value == pytest.approx(ref, abs=1e-3)


def test_kyp_feasible_for_summed_output(A_um2):
    res = kyp_feasibility(A_um2, G, C_SUM)
    assert res.status == "solved" and res.objective_value > 0
    assert verify_linear_passivity(A_um2, G, C_SUM, res.P).strict


def test_kyp_infeasible_for_standard_output_open_loop():
    A1 = find_equilibria(0.0)[0].jacobian
    res = kyp_feasibility(A1, G, C_STANDARD)
    assert res.status == "infeasible" and res.P is None
    assert res.objective_value < -1e-6


def test_kyp_identity():
    res = kyp_feasibility(-np.eye(6), G, G)
    assert res.status == "solved"
    assert verify_linear_passivity(-np.eye(6), G, G, np.eye(6)).strict


@settings(max_examples=10)
@given(st.floats(-2, 2), st.floats(0, 2), arrays(float, 4, elements=st.floats(-1, 1)))
def test_obstruction_soundness(c1, shift, rest):
    # any c with c1 + c3 <= 0 admits no P >= 0 with Pg = c (except c = 0)
    c = np.array([c1, rest[0], -c1 - shift, rest[1], rest[2], rest[3]])
    if np.abs(c).max() < 1e-3:
        return
    res = kyp_feasibility(-np.eye(6), G, c)
    assert res.status == "infeasible"
