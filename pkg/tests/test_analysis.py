import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from epilab.analysis import (
    SpectralError, closed_loop_jacobian, find_equilibria, operating_equilibrium,
    spectral_abscissa, stability_sweep, sweep_axes,
)
from epilab.model import C_REDESIGNED, C_STANDARD, C_SUM, FeedbackLaw, G, closed_loop_field

# rounded equilibria of the unforced model as quoted alongside their abscissas
QUOTED_U0 = np.array([
    [-0.75, -1.82, -0.74, 0.0, -0.075, 3.39],
    [-0.75, -1.82, -0.23, 0.11, -0.075, 3.39],
    [-0.75, -1.82, -0.39, 0.0, -0.075, 3.39],
    [0.43, 0.07, -1.28, 0.0, 0.043, 8.12],
])


@pytest.fixture(scope="module")
def unforced():
    return find_equilibria(0.0)


def test_unforced_equilibria_agree_with_independent_root_finder(unforced):
    assert len(unforced) == 4
    for e in unforced:
        ref = oracles.equilibrium(0.0, e.x_star + 1e-3)
        np.testing.assert_allclose(e.x_star, ref, atol=1e-9)
        assert e.residual_norm <= 1e-9
        ref_a = oracles.abscissa(oracles.fd_jacobian(oracles.field, ref))
        assert e.spectral_abscissa == pytest.approx(ref_a, abs=1e-6)


def test_unforced_equilibria_near_quoted_points(unforced):
    for q in QUOTED_U0:
        d = min(np.abs(e.x_star - q).max() for e in unforced)
        assert d <= 0.05


def test_equilibria_sorted_and_distinct(unforced):
    # lexicographic on coordinates rounded to 1e-9, so roundoff cannot reorder
    keys = [tuple(np.round(e.x_star, 9)) for e in unforced]
    assert keys == sorted(keys)
    for i in range(4):
        for j in range(i):
            assert np.linalg.norm(unforced[i].x_star - unforced[j].x_star) > 1e-6


def test_branch_signatures_consistent(unforced):
    for e in unforced:
        assert e.branch_signature == (bool(e.x_star[0] < 0), bool(e.x_star[2] >= -0.25))


def test_no_equilibria_for_huge_input():
    assert find_equilibria(1000.0) == []
    assert operating_equilibrium(1000.0) is None


def test_feedback_reference_convention_leaves_equilibrium_unchanged():
    # with y* = c.x* the feedback term vanishes at x*
    open_loop = operating_equilibrium(-0.8)
    closed = find_equilibria(-0.8, k=1.0, c=C_STANDARD)
    d = min(np.linalg.norm(e.x_star - open_loop.x_star) for e in closed)
    assert d < 1e-9
    match = min(closed, key=lambda e: np.linalg.norm(e.x_star - open_loop.x_star))
    A_cl = open_loop.jacobian - np.outer(G, C_STANDARD)
    assert match.spectral_abscissa == pytest.approx(spectral_abscissa(A_cl), abs=1e-12)


def test_explicit_reference_moves_equilibrium():
    eqs = find_equilibria(-0.8, k=1.0, c=C_STANDARD, y_star=0.3)
    assert eqs
    law = FeedbackLaw(-0.8, 1.0, 0.3)
    for e in eqs:
        assert np.linalg.norm(closed_loop_field(e.x_star, law)) <= 1e-9


def test_nominal_operating_point():
    eq = operating_equilibrium(-0.8)
    ref = oracles.equilibrium(-0.8, [-1.03, -4.33, -1.08, 0, -0.1, 2.27])
    np.testing.assert_allclose(eq.x_star, ref, atol=1e-10)
    a = spectral_abscissa(closed_loop_jacobian(eq, 1.0, C_STANDARD))
    assert a == pytest.approx(oracles.abscissa(oracles.fd_jacobian(
        lambda x: oracles.field(x, -0.8 - x @ C_STANDARD), ref)), abs=1e-6)
    assert a < 0


@given(arrays(float, (4, 4), elements=st.floats(-10, 10)))
def test_abscissa_transpose_invariant(M):
    tol = 1e-8 * (1 + np.abs(M).max())
    assert spectral_abscissa(M) == pytest.approx(spectral_abscissa(M.T), abs=tol)


@given(arrays(float, (3, 3), elements=st.floats(-5, 5)), st.floats(-3, 3))
def test_abscissa_shift(M, s):
    assert spectral_abscissa(M + s * np.eye(3)) == pytest.approx(spectral_abscissa(M) + s, abs=1e-7)


def test_abscissa_errors():
    with pytest.raises(ValueError):
        spectral_abscissa(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        spectral_abscissa(np.array([[np.inf]]))
    assert issubclass(SpectralError, RuntimeError)


def test_sweep_axes_shape():
    u, k = sweep_axes()
    assert len(u) == 71 and len(k) == 81
    assert u[0] == -3.0 and u[-1] == 0.5 and k[-1] == 4.0


@pytest.fixture(scope="module")
def small_sweep():
    u = np.round(np.arange(-2.0, 0.31, 0.1), 10)
    k = np.round(np.arange(0.0, 2.01, 0.25), 10)
    return stability_sweep(u, k, C_STANDARD, threads=1)


def test_sweep_cells_equal_direct_linearization(small_sweep):
    for u_star in (-2.0, -0.8, -0.3):
        eq = operating_equilibrium(u_star)
        for k in (0.0, 1.0, 2.0):
            direct = spectral_abscissa(eq.jacobian - k * np.outer(G, C_STANDARD))
            assert small_sweep.cell(u_star, k) == pytest.approx(direct, abs=1e-12)


def test_sweep_known_cells(small_sweep):
    assert small_sweep.cell(-0.8, 1.0) < 0
    assert small_sweep.cell(0.0, 0.0) == pytest.approx(0.1766, abs=1e-3)
    assert small_sweep.cell(-2.0, 0.0) < 0


def test_sweep_sentinel_where_branch_ends(small_sweep):
    lost = small_sweep.u_star_axis[~small_sweep.found[:, 0]]
    assert lost.size and lost.min() > 0.0
    assert np.all(np.isnan(small_sweep.abscissa[~small_sweep.found]))
    assert not small_sweep.stable_mask[~small_sweep.found].any()


def test_sweep_independent_of_thread_count(small_sweep):
    again = stability_sweep(small_sweep.u_star_axis, small_sweep.k_axis, C_STANDARD, threads=3)
    np.testing.assert_array_equal(again.abscissa, small_sweep.abscissa)
    np.testing.assert_array_equal(again.found, small_sweep.found)


def test_sweep_output_maps_differ(small_sweep):
    u, k = small_sweep.u_star_axis, small_sweep.k_axis
    sums = stability_sweep(u, k, C_SUM, threads=1)
    # k = 0 column does not depend on c
    np.testing.assert_array_equal(sums.abscissa[:, 0], small_sweep.abscissa[:, 0])
    other = stability_sweep(u, k, C_REDESIGNED, threads=1)
    assert other.stable_count() >= small_sweep.stable_count() >= sums.stable_count()


def test_sweep_rejects_empty_axes():
    with pytest.raises(ValueError):
        stability_sweep([], [0.0])
