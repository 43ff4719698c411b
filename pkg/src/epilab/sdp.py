"""Log-det barrier interior-point method for small dense LMI problems.

Problems have the form::

    minimize    c @ x
    subject to  F0_k + sum_i x_i F_ik  >= 0   (PSD, one block per k)
                G @ x + h              >= 0   (elementwise)
                A_eq @ x               == b_eq

Equalities are eliminated by a null-space parametrization. A phase-I
problem finds a strictly feasible start when none is supplied. Sizes here
are a few dozen variables and 6x6 blocks, so everything is dense.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space, solve_triangular


class SolverFailure(RuntimeError):
    """Newton centering or the outer loop did not converge."""


@dataclass
class LMIProblem:
    c: np.ndarray
    blocks: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    G: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def add_lmi(self, F0, Fs):
        """Add ``F0 + sum_i x_i Fs[i] >= 0``; ``Fs`` has shape (n_vars, m, m)."""
        F0 = np.asarray(F0, dtype=float)
        Fs = np.asarray(Fs, dtype=float)
        if Fs.shape != (self.n_vars,) + F0.shape:
            raise ValueError(f"coefficient stack has shape {Fs.shape}, "
                             f"expected {(self.n_vars,) + F0.shape}")
        self.blocks.append((F0, Fs))

    def add_linear(self, G, h):
        """Add ``G @ x + h >= 0``."""
        G = np.atleast_2d(np.asarray(G, dtype=float))
        h = np.atleast_1d(np.asarray(h, dtype=float))
        self.G = G if self.G is None else np.vstack([self.G, G])
        self.h = h if self.h is None else np.concatenate([self.h, h])

    def block_values(self, x) -> list:
        return [F0 + np.tensordot(x, Fs, axes=1) for F0, Fs in self.blocks]

    def slacks(self, x) -> np.ndarray:
        if self.G is None:
            return np.empty(0)
        return self.G @ x + self.h

    def margins(self, x) -> dict:
        """Smallest eigenvalue per LMI block and smallest linear slack."""
        out = {f"lmi{k}": float(np.linalg.eigvalsh(0.5 * (F + F.T))[0])
               for k, F in enumerate(self.block_values(x))}
        s = self.slacks(x)
        if s.size:
            out["linear"] = float(s.min())
        if self.A_eq is not None:
            out["equality"] = -float(np.max(np.abs(self.A_eq @ x - self.b_eq)))
        return out


@dataclass
class SolveResult:
    x: Optional[np.ndarray]
    status: str  # "solved", "infeasible" or "failed"
    objective: float
    iterations: int
    gap: float
    phase1_value: float = float("nan")
    margins: dict = field(default_factory=dict)


def _reduce(prob: LMIProblem):
    """Eliminate equalities: x = x0 + N z. Returns (reduced problem, x0, N)."""
    n = prob.n_vars
    if prob.A_eq is None:
        return prob, np.zeros(n), np.eye(n)
    A, b = np.atleast_2d(prob.A_eq), np.atleast_1d(prob.b_eq)
    x0, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.max(np.abs(A @ x0 - b), initial=0.0) > 1e-9 * max(1.0, np.abs(b).max(initial=0.0)):
        raise ValueError("equality constraints are inconsistent")
    N = null_space(A)
    red = LMIProblem(c=N.T @ prob.c)
    for F0, Fs in prob.blocks:
        red.add_lmi(F0 + np.tensordot(x0, Fs, axes=1), np.tensordot(N.T, Fs, axes=1))
    if prob.G is not None:
        red.add_linear(prob.G @ N, prob.G @ x0 + prob.h)
    return red, x0, N


class _Barrier:
    """-sum log det F_k(x) - sum log(Gx + h), with gradient and Hessian."""

    def __init__(self, prob: LMIProblem):
        self.prob = prob
        self.degree = sum(F0.shape[0] for F0, _ in prob.blocks) + (
            0 if prob.G is None else prob.G.shape[0])

    def value(self, x) -> float:
        val = 0.0
        for F in self.prob.block_values(x):
            try:
                L = np.linalg.cholesky(F)
            except np.linalg.LinAlgError:
                return np.inf
            val -= 2.0 * np.sum(np.log(np.diag(L)))
        s = self.prob.slacks(x)
        if s.size:
            if np.any(s <= 0):
                return np.inf
            val -= np.sum(np.log(s))
        return val

    def derivatives(self, x):
        m = len(x)
        grad = np.zeros(m)
        hess = np.zeros((m, m))
        for (_, Fs), F in zip(self.prob.blocks, self.prob.block_values(x)):
            Linv = solve_triangular(np.linalg.cholesky(F), np.eye(F.shape[0]), lower=True)
            S = np.einsum("ab,ibc,dc->iad", Linv, Fs, Linv)  # L^-1 F_i L^-T
            grad -= np.einsum("ijj->i", S)
            flat = S.reshape(m, -1)
            hess += flat @ flat.T
        s = self.prob.slacks(x)
        if s.size:
            Gs = self.prob.G / s[:, None]
            grad -= Gs.sum(axis=0)
            hess += Gs.T @ Gs
        return grad, hess


def _center(prob, barrier, x, t, max_newton=100, tol=1e-10, done=None):
    iters = 0
    for _ in range(max_newton):
        if done is not None and done(x):
            break
        grad, hess = barrier.derivatives(x)
        g = t * prob.c + grad
        scale = np.sqrt(np.maximum(np.diag(hess), 1e-300))
        Hs = hess / np.outer(scale, scale)
        try:
            dx = -np.linalg.solve(Hs, g / scale) / scale
        except np.linalg.LinAlgError:
            dx = -np.linalg.lstsq(Hs, g / scale, rcond=None)[0] / scale
        dec2 = -g @ dx
        iters += 1
        if dec2 / 2.0 <= tol:
            break
        f0 = t * prob.c @ x + barrier.value(x)
        step = 1.0
        while step > 1e-14:
            xn = x + step * dx
            fn = t * prob.c @ xn + barrier.value(xn)
            if np.isfinite(fn) and fn <= f0 - 0.01 * step * dec2:
                break
            step *= 0.5
        else:
            break
        x = xn
    return x, iters


def _barrier_method(prob, x, t0=1.0, mu=10.0, gap_tol=1e-9, max_outer=60, stop=None,
                    done=None):
    barrier = _Barrier(prob)
    t = t0
    total = 0
    for _ in range(max_outer):
        x, n = _center(prob, barrier, x, t, done=done)
        total += n
        gap = barrier.degree / t
        if done is not None and done(x):
            return x, total, gap
        if stop is not None and stop(x, gap):
            return x, total, gap
        if gap < gap_tol * max(1.0, abs(prob.c @ x)):
            return x, total, gap
        t *= mu
    return x, total, barrier.degree / t


def _phase1(prob: LMIProblem, x0, tol):
    """Find a strictly feasible point; returns (x or None, best s, iterations)."""
    m = prob.n_vars
    viol = 0.0
    for F in prob.block_values(x0):
        viol = max(viol, -np.linalg.eigvalsh(0.5 * (F + F.T))[0])
    s = prob.slacks(x0)
    if s.size:
        viol = max(viol, -s.min())
    if viol < 0 or (viol == 0 and _Barrier(prob).value(x0) < np.inf):
        return x0, -viol, 0
    aug = LMIProblem(c=np.r_[np.zeros(m), 1.0])
    for F0, Fs in prob.blocks:
        eye = np.eye(F0.shape[0])[None]
        aug.add_lmi(F0, np.concatenate([Fs, eye], axis=0))
    if prob.G is not None:
        aug.add_linear(np.hstack([prob.G, np.ones((prob.G.shape[0], 1))]), prob.h)
    # s >= -1 and a wide box on x keep every centering problem bounded
    aug.add_linear(np.r_[np.zeros(m), 1.0][None], [1.0])
    box = 1e3 * max(1.0, float(np.max(np.abs(x0), initial=0.0)))
    eye = np.hstack([np.eye(m), np.zeros((m, 1))])
    aug.add_linear(np.vstack([eye, -eye]), np.full(2 * m, box))
    xs = np.r_[x0, viol + 1.0]

    def stop(z, gap):
        return z[-1] - gap > tol

    z, iters, _ = _barrier_method(aug, xs, stop=stop, gap_tol=1e-12,
                                  done=lambda z: z[-1] < -1e-12)
    if z[-1] < 0:
        return z[:m], float(z[-1]), iters
    return None, float(z[-1]), iters


def solve(prob: LMIProblem, x0=None, gap_tol: float = 1e-9,
          infeasible_tol: float = 1e-6) -> SolveResult:
    """Solve an LMI problem; ``x0`` is an optional strictly feasible start."""
    red, xp, N = _reduce(prob)
    z0 = np.zeros(red.n_vars) if x0 is None else np.linalg.lstsq(N, np.asarray(x0) - xp,
                                                                 rcond=None)[0]
    z, s_best, it1 = _phase1(red, z0, infeasible_tol)
    if z is None:
        return SolveResult(x=None, status="infeasible", objective=float("nan"),
                           iterations=it1, gap=float("nan"), phase1_value=s_best)
    try:
        z, it2, gap = _barrier_method(red, z, gap_tol=gap_tol)
    except np.linalg.LinAlgError as exc:
        raise SolverFailure(str(exc)) from exc
    x = xp + N @ z
    return SolveResult(x=x, status="solved", objective=float(prob.c @ x),
                       iterations=it1 + it2, gap=gap, phase1_value=s_best,
                       margins=prob.margins(x))


# -- symmetric-matrix helpers -------------------------------------------------------

def sym_basis(n: int) -> np.ndarray:
    """Basis E_ij (i <= j) of n x n symmetric matrices, shape (n(n+1)/2, n, n)."""
    mats = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            mats.append(E)
    return np.array(mats)


def sym_index(n: int) -> Sequence[Tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i, n)]


def unvec(p, n: int) -> np.ndarray:
    return np.tensordot(p, sym_basis(n), axes=1)
