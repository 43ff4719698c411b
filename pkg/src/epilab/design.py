"""Convex searches over quadratic storage matrices.

All programs are affine in the symmetric 6x6 matrix ``P`` and are solved by
the log-det barrier kernel in :mod:`epilab.sdp`. The decision vector is the
upper triangle of ``P`` (21 entries) followed by any epigraph variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import sdp
from .analysis import spectral_abscissa
from .model import C_STANDARD, G

FEASIBILITY_TOL = 1e-7
DEFAULT_TRACE_MAX = 1e4


class UnsupportedModeError(NotImplementedError):
    """Requested program is outside the convex (k = 0) regime."""


class NotHurwitzError(ValueError):
    """The supplied matrix has an eigenvalue with non-negative real part."""


@dataclass(frozen=True)
class Loss:
    """Objective on the implied output ``Pg``.

    ``kind="l1"`` is ``||Pg - target||_1``; ``kind="zero"`` is pure feasibility.
    """

    kind: str = "l1"
    target: Optional[np.ndarray] = None

    CONVEX = ("l1", "zero")

    def __post_init__(self):
        if self.kind not in self.CONVEX:
            raise UnsupportedModeError(
                f"loss '{self.kind}' is not one of the convex losses {self.CONVEX}")
        if self.kind == "l1":
            tgt = C_STANDARD if self.target is None else self.target
            object.__setattr__(self, "target", np.asarray(tgt, dtype=float).copy())

    @classmethod
    def parse(cls, spec: str) -> "Loss":
        """``"zero"``, ``"l1"`` or ``"l1:1,0,-1,0,0,0"``."""
        kind, _, rest = spec.partition(":")
        kind = kind.strip()
        target = [float(v) for v in rest.split(",")] if rest.strip() else None
        return cls(kind, target)


@dataclass(frozen=True)
class DesignResult:
    P: Optional[np.ndarray]
    c: Optional[np.ndarray]
    objective_value: float
    feasibility_residuals: dict
    iterations: int
    status: str  # "solved", "infeasible" or "failed"
    details: dict = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.status == "solved"


def _check_square(A, n=None):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if n is not None and A.shape[0] != n:
        raise ValueError(f"expected a {n}x{n} matrix, got shape {A.shape}")
    return A


def _require_hurwitz(A):
    a = spectral_abscissa(A)
    if not a < 0:
        raise NotHurwitzError(f"matrix is not Hurwitz (spectral abscissa {a:.6g}); "
                              "no strict Lyapunov matrix exists")
    return a


def _lyapunov_stack(A, basis):
    """Coefficient matrices of ``-(A^T P + P A)`` for each basis element."""
    return -np.einsum("ji,njk->nik", A, basis) - np.einsum("nij,jk->nik", basis, A)


def _pad(stack, extra):
    if extra == 0:
        return stack
    n = stack.shape[1]
    return np.concatenate([stack, np.zeros((extra, n, n))], axis=0)


def _residuals(P, A, delta, eps, g=None, c=None):
    res = {
        "psd": float(np.linalg.eigvalsh(P)[0] - delta),
        "lyapunov": float(np.linalg.eigvalsh(-(A.T @ P + P @ A))[0] - eps),
    }
    if c is not None:
        res["matching"] = -float(np.max(np.abs(P @ g - c)))
    return res


def _base_problem(A, n_extra, delta, eps, trace_max, objective_tail):
    n = A.shape[0]
    basis = sdp.sym_basis(n)
    m = len(basis)
    prob = sdp.LMIProblem(c=np.r_[np.zeros(m), objective_tail])
    eye = np.eye(n)
    prob.add_lmi(-delta * eye, _pad(basis, n_extra))
    prob.add_lmi(-eps * eye, _pad(_lyapunov_stack(A, basis), n_extra))
    trace_row = np.r_[-np.einsum("nii->n", basis), np.zeros(n_extra)]
    prob.add_linear(trace_row[None], [trace_max])
    return prob, basis, m


def _abs_epigraph(prob, m, rows, offsets, first):
    """Constrain t_j >= |rows_j . p + offsets_j| for t stored from index ``first``."""
    n_t = len(rows)
    width = prob.n_vars
    G_ = np.zeros((2 * n_t, width))
    h = np.zeros(2 * n_t)
    for j, (r, o) in enumerate(zip(rows, offsets)):
        G_[2 * j, :m], G_[2 * j, first + j], h[2 * j] = -r, 1.0, -o
        G_[2 * j + 1, :m], G_[2 * j + 1, first + j], h[2 * j + 1] = r, 1.0, o
    prob.add_linear(G_, h)


def _solve(prob, gap_tol=1e-9):
    try:
        return sdp.solve(prob, gap_tol=gap_tol)
    except (sdp.SolverFailure, np.linalg.LinAlgError) as exc:
        return sdp.SolveResult(x=None, status="failed", objective=float("nan"),
                               iterations=0, gap=float("nan"),
                               margins={"error": str(exc)})


def _failed(res, **details):
    return DesignResult(P=None, c=None, objective_value=float("nan"),
                        feasibility_residuals={"phase1": res.phase1_value},
                        iterations=res.iterations, status=res.status, details=details)


def solve_sparse_lyapunov(A_cl, eps: float = 1e-4, delta: float = 1e-6,
                          trace_max: float = DEFAULT_TRACE_MAX,
                          clean_tol: float = 1e-6, trace_weight: float = 1e-6
                          ) -> DesignResult:
    """Minimize the off-diagonal l1 norm of a strict Lyapunov matrix.

    Subject to ``P >= delta I`` and ``A^T P + P A <= -eps I``. The optimum is
    rarely unique, so ``trace_weight * trace(P)`` is added to pick the
    smallest-scale optimizer instead of the barrier's analytic center. After solving,
    off-diagonal entries below ``clean_tol * max|P|`` are zeroed when the
    cleaned matrix still meets every constraint to ``FEASIBILITY_TOL``.
    """
    A = _check_square(A_cl)
    if not (eps > 0 and delta > 0):
        raise ValueError("eps and delta must be positive")
    _require_hurwitz(A)
    n = A.shape[0]
    pairs = sdp.sym_index(n)
    off = [i for i, (a, b) in enumerate(pairs) if a != b]
    # sum_{i != j} |P_ij| = 2 sum_{i < j} t_ij
    prob, basis, m = _base_problem(A, len(off), delta, eps, trace_max,
                                   np.full(len(off), 2.0))
    prob.c[:m] = trace_weight * np.einsum("nii->n", basis)
    rows = [np.eye(m)[i] for i in off]
    _abs_epigraph(prob, m, rows, np.zeros(len(off)), m)
    # the trace term is small, so converge well past its scale
    res = _solve(prob, gap_tol=1e-3 * trace_weight * delta)
    if res.status != "solved":
        return _failed(res)
    P = sdp.unvec(res.x[:m], n)

    cleaned = P.copy()
    small = np.abs(cleaned) <= clean_tol * np.abs(P).max()
    np.fill_diagonal(small, False)
    cleaned[small] = 0.0
    if min(_residuals(cleaned, A, delta, eps).values()) >= -FEASIBILITY_TOL:
        P = cleaned
    resid = _residuals(P, A, delta, eps)
    objective = float(np.abs(P).sum() - np.abs(np.diag(P)).sum())
    status = "solved" if min(resid.values()) >= -FEASIBILITY_TOL else "failed"
    return DesignResult(P=P, c=P @ G, objective_value=objective,
                        feasibility_residuals=resid, iterations=res.iterations,
                        status=status,
                        details={"nonzero_offdiag": int(np.count_nonzero(P) - n)})


def design_output(A, g=G, loss="l1", delta: float = 1e-6, eps: float = 1e-7,
                  k: float = 0.0, trace_max: float = DEFAULT_TRACE_MAX) -> DesignResult:
    """Choose ``P`` (and hence the output ``c = Pg``) minimizing a convex loss of ``Pg``.

    Constraints are ``A^T P + P A <= -eps I`` and ``P >= delta I``. ``loss``
    is a :class:`Loss`, a spec string or ``"zero"``. Only the ``k = 0`` program
    is convex; ``k > 0`` raises :class:`UnsupportedModeError`.
    """
    if k != 0:
        raise UnsupportedModeError(
            "the k > 0 output design has a term quadratic in P and is not convex; "
            "only k = 0 is supported")
    loss = loss if isinstance(loss, Loss) else Loss.parse(loss)
    A = _check_square(A)
    g = np.asarray(g, dtype=float)
    if g.shape != (A.shape[0],):
        raise ValueError("input vector does not match A")
    _require_hurwitz(A)
    n = A.shape[0]

    if loss.kind == "zero":
        prob, basis, m = _base_problem(A, 0, delta, eps, trace_max, np.zeros(0))
    else:
        prob, basis, m = _base_problem(A, n, delta, eps, trace_max, np.ones(n))
        # (Pg)_r = sum_i p_i (E_i g)_r
        Eg = np.einsum("nij,j->ni", basis, g)
        _abs_epigraph(prob, m, list(Eg.T), -loss.target, m)
    res = _solve(prob)
    if res.status != "solved":
        return _failed(res)
    P = sdp.unvec(res.x[:m], n)
    c = P @ g
    objective = 0.0 if loss.kind == "zero" else float(np.abs(c - loss.target).sum())
    resid = _residuals(P, A, delta, eps)
    status = "solved" if min(resid.values()) >= -FEASIBILITY_TOL else "failed"
    return DesignResult(P=P, c=c, objective_value=objective, feasibility_residuals=resid,
                        iterations=res.iterations, status=status,
                        details={"loss": loss.kind})


def kyp_feasibility(A, g=G, c_fixed=C_STANDARD, trace_max: float = DEFAULT_TRACE_MAX,
                    infeasible_tol: float = 1e-6) -> DesignResult:
    """Search ``P >= 0``, ``A^T P + P A <= 0`` with ``Pg = c`` imposed exactly.

    Solves ``max s`` subject to ``P >= sI`` and ``-(A^T P + P A) >= sI`` on the
    affine set ``Pg = c``. The best ``s`` is ``objective_value``; the status is
    "infeasible" when it is below ``-infeasible_tol`` and "failed" when the
    solver itself did not converge.
    """
    A = _check_square(A)
    n = A.shape[0]
    g = np.asarray(g, dtype=float)
    c = np.asarray(c_fixed, dtype=float)
    if g.shape != (n,) or c.shape != (n,):
        raise ValueError("g and c must match the dimension of A")
    basis = sdp.sym_basis(n)
    m = len(basis)
    eye = np.eye(n)
    prob = sdp.LMIProblem(c=np.r_[np.zeros(m), -1.0])
    prob.add_lmi(np.zeros((n, n)), np.concatenate([basis, -eye[None]]))
    prob.add_lmi(np.zeros((n, n)), np.concatenate([_lyapunov_stack(A, basis), -eye[None]]))
    prob.add_linear(np.r_[-np.einsum("nii->n", basis), 0.0][None], [trace_max])
    prob.add_linear(np.r_[np.zeros(m), -1.0][None], [1.0])  # s <= 1 keeps it bounded
    prob.A_eq = np.c_[np.einsum("nij,j->in", basis, g), np.zeros(n)]
    prob.b_eq = c

    try:
        res = _solve(prob)
    except ValueError as exc:  # Pg = c has no symmetric solution
        return DesignResult(P=None, c=c.copy(), objective_value=float("nan"),
                            feasibility_residuals={}, iterations=0, status="infeasible",
                            details={"error": str(exc)})
    if res.status == "failed":
        return _failed(res)
    s_best = float(res.x[-1])
    P = sdp.unvec(res.x[:m], n)
    resid = {
        "psd": float(np.linalg.eigvalsh(P)[0]),
        "dissipation": float(np.linalg.eigvalsh(-(A.T @ P + P @ A))[0]),
        "matching": -float(np.max(np.abs(P @ g - c))),
    }
    status = "solved" if s_best >= -infeasible_tol else "infeasible"
    return DesignResult(P=P if status == "solved" else None, c=c.copy(),
                        objective_value=s_best, feasibility_residuals=resid,
                        iterations=res.iterations, status=status,
                        details={"best_P": P})

