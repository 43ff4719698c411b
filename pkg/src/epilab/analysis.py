"""Equilibria, linearizations and (u*, k) stability sweeps."""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import (
    C_STANDARD,
    DEFAULT_PARAMS,
    G,
    EpileptorParams,
    _field,
    _jacobian,
    as_output_map,
    as_state,
    branch_signature,
)

ACCEPT_RESIDUAL = 1e-9
MERGE_DISTANCE = 1e-6
ALL_BRANCHES = tuple(itertools.product((True, False), repeat=2))
# the branch carrying the stabilizable operating equilibrium (x1 < 0, x2 < -0.25)
OPERATING_BRANCH = (True, False)


class SpectralError(RuntimeError):
    """Eigenvalue iteration failed to converge."""


@dataclass(frozen=True)
class Equilibrium:
    """A polished fixed point.

    ``jacobian`` is always the open-loop ``df/dx``; ``spectral_abscissa`` is
    that of the linearization actually solved, ``A - k g c^T``.
    """

    x_star: np.ndarray
    u_star: float
    residual_norm: float
    jacobian: np.ndarray
    spectral_abscissa: float
    branch_signature: tuple
    k: float = 0.0
    c: Optional[np.ndarray] = None
    y_star: Optional[float] = None

    @property
    def is_hurwitz(self) -> bool:
        return self.spectral_abscissa < 0


@dataclass(frozen=True)
class SweepGrid:
    u_star_axis: np.ndarray
    k_axis: np.ndarray
    abscissa: np.ndarray  # NaN marks "no equilibrium found", see ``found``
    found: np.ndarray
    c: np.ndarray
    equilibria: tuple = field(default=(), repr=False)

    @property
    def stable_mask(self) -> np.ndarray:
        return self.found & (np.nan_to_num(self.abscissa, nan=np.inf) < 0)

    def stable_count(self) -> int:
        return int(self.stable_mask.sum())

    def cell(self, u_star: float, k: float) -> float:
        i = int(np.argmin(np.abs(self.u_star_axis - u_star)))
        j = int(np.argmin(np.abs(self.k_axis - k)))
        return float(self.abscissa[i, j])


def spectral_abscissa(M) -> float:
    """Largest real part over the eigenvalues of a square matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    try:
        w = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(str(exc)) from exc
    return float(np.max(w.real))


def closed_loop_jacobian(eq: Equilibrium, k: float, c=C_STANDARD) -> np.ndarray:
    return eq.jacobian - k * np.outer(G, as_output_map(c))


def _effective_input(x, u_star, k, c, y_star):
    if y_star is None or k == 0.0:
        return u_star
    return u_star - k * (x @ c - y_star)


def _residual(x, u_star, k, c, y_star, p, branch=None):
    return _field(x, _effective_input(x, u_star, k, c, y_star), p, branch)


def _residual_jacobian(x, k, c, y_star, p, branch=None):
    A = _jacobian(x, p, branch)
    if y_star is None or k == 0.0:
        return A
    return A - k * np.outer(G, c)


def _newton(x, u_star, k, c, y_star, p, branch, tol=1e-13, max_iter=60):
    """Damped Newton on one smooth branch; returns the root or None."""
    x = np.array(x, dtype=float)
    r = _residual(x, u_star, k, c, y_star, p, branch)
    nr = np.linalg.norm(r)
    for _ in range(max_iter):
        if nr <= tol:
            return x
        J = _residual_jacobian(x, k, c, y_star, p, branch)
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        while lam > 1e-4:
            xn = x + lam * dx
            rn = _residual(xn, u_star, k, c, y_star, p, branch)
            nrn = np.linalg.norm(rn)
            if np.isfinite(nrn) and nrn < nr:
                break
            lam *= 0.5
        else:
            return x if nr <= 1e-10 else None
        x, r, nr = xn, rn, nrn
    return x if nr <= 1e-10 else None


def _seed(x1, x2, branch, u_star, p):
    neg1, act2 = branch
    y2 = 6.0 * (x2 + 0.25) if act2 else 0.0
    return np.array([x1, p.y0 - 5.0 * x1 ** 2, x2, y2, 0.1 * x1, 4.0 * (x1 - p.x0)])


def default_seeds(n: int = 7, span: float = 3.0):
    """Deterministic (x1, x2) lattice over [-span, span]^2."""
    axis = np.linspace(-span, span, n)
    return [(a, b) for a in axis for b in axis]


def _make_equilibrium(x, u_star, k, c, y_star, p) -> Optional[Equilibrium]:
    # polish on the branch the point lies in, then accept on the true field
    x = _newton(x, u_star, k, c, y_star, p, branch_signature(x), tol=1e-14, max_iter=8)
    if x is None:
        return None
    res = float(np.linalg.norm(_residual(x, u_star, k, c, y_star, p)))
    if not res <= ACCEPT_RESIDUAL:
        return None
    A = _jacobian(x, p)
    Acl = A - k * np.outer(G, c) if k != 0.0 else A
    return Equilibrium(x_star=x, u_star=float(u_star), residual_norm=res, jacobian=A,
                       spectral_abscissa=spectral_abscissa(Acl),
                       branch_signature=branch_signature(x), k=float(k),
                       c=None if c is None else c.copy(), y_star=y_star)


def find_equilibria(u_star: float, p: EpileptorParams = DEFAULT_PARAMS,
                    seeds: Optional[Sequence] = None, k: float = 0.0, c=None,
                    y_star: Optional[float] = None, branches=ALL_BRANCHES) -> list:
    """All equilibria reachable by branch-pinned Newton from the seed set.

    With ``k > 0`` and ``y_star=None`` the reference is taken self-consistently
    as ``c.x*``, so the feedback term vanishes at every equilibrium and only
    the reported abscissa (of ``A - k g c^T``) changes. Seeds are ``(x1, x2)``
    pairs or full 6-states.
    """
    if not np.isfinite(u_star):
        raise ValueError("u_star must be finite")
    if k < 0:
        raise ValueError("k must be >= 0")
    if c is not None:
        c = as_output_map(c)
    elif k != 0.0:
        c = C_STANDARD.copy()
    seeds = default_seeds() if seeds is None else seeds

    found = []
    for branch in branches:
        for s in seeds:
            s = np.asarray(s, dtype=float)
            x = _seed(s[0], s[1], branch, u_star, p) if s.shape == (2,) else as_state(s)
            with np.errstate(all="ignore"):
                root = _newton(x, u_star, k, c, y_star, p, branch)
            if root is None or branch_signature(root) != branch:
                continue
            if any(np.linalg.norm(root - e.x_star) < MERGE_DISTANCE for e in found):
                continue
            eq = _make_equilibrium(root, u_star, k, c, y_star, p)
            if eq is not None and not any(
                    np.linalg.norm(eq.x_star - e.x_star) < MERGE_DISTANCE for e in found):
                found.append(eq)
    found.sort(key=lambda e: tuple(np.round(e.x_star, 9)))
    return found


def operating_equilibrium(u_star: float, p: EpileptorParams = DEFAULT_PARAMS
                          ) -> Optional[Equilibrium]:
    """Lowest-x2 equilibrium on the (x1 < 0, x2 < -0.25) branch, if any."""
    cands = [e for e in find_equilibria(u_star, p, branches=(OPERATING_BRANCH,))]
    if not cands:
        return None
    return min(cands, key=lambda e: e.x_star[2])


def _continue_branch(u_axis, anchor_idx, anchor: Equilibrium, p, max_jump):
    n = len(u_axis)
    eqs: list = [None] * n
    eqs[anchor_idx] = anchor
    sig = anchor.branch_signature
    det_sign = np.sign(np.linalg.det(anchor.jacobian))

    def accept(x, ref):
        if x is None or branch_signature(x) != sig:
            return False
        if np.sign(np.linalg.det(_jacobian(x, p))) != det_sign:
            return False
        return np.linalg.norm(x - ref) <= max_jump

    for direction in (1, -1):
        last = anchor.x_star
        i = anchor_idx + direction
        while 0 <= i < n:
            u = float(u_axis[i])
            with np.errstate(all="ignore"):
                x = _newton(last, u, 0.0, None, None, p, sig)
            if not accept(x, last):
                # re-acquire from the global seed set, nearest to the last point
                cands = [e.x_star for e in find_equilibria(u, p, branches=(sig,))
                         if accept(e.x_star, last)]
                x = min(cands, key=lambda z: np.linalg.norm(z - last)) if cands else None
            if x is not None:
                eq = _make_equilibrium(x, u, 0.0, None, None, p)
                if eq is not None:
                    eqs[i] = eq
                    last = eq.x_star
            i += direction
    return eqs


def _thread_count(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get("EPILAB_THREADS", "0") or 0)
    return max(1, threads or (os.cpu_count() or 1))


def stability_sweep(u_range, k_range, c=C_STANDARD, p: EpileptorParams = DEFAULT_PARAMS,
                    anchor_u: float = -0.8, max_jump: float = 1.0,
                    threads: Optional[int] = None) -> SweepGrid:
    """Spectral abscissa of ``A - k g c^T`` over a (u*, k) grid.

    The operating equilibrium is continued along u* from the row nearest
    ``anchor_u``; rows where the branch is lost carry NaN and ``found=False``.
    With ``y* = c.x*`` the equilibrium does not depend on k, so each row is
    one continuation step followed by independent eigenvalue cells.
    """
    u_axis = np.asarray(u_range, dtype=float)
    k_axis = np.asarray(k_range, dtype=float)
    if u_axis.size == 0 or k_axis.size == 0:
        raise ValueError("sweep axes must be non-empty")
    c = as_output_map(c)
    anchor_idx = int(np.argmin(np.abs(u_axis - anchor_u)))
    anchor = operating_equilibrium(float(u_axis[anchor_idx]), p)

    abscissa = np.full((u_axis.size, k_axis.size), np.nan)
    found = np.zeros_like(abscissa, dtype=bool)
    if anchor is None:
        return SweepGrid(u_axis, k_axis, abscissa, found, c, tuple([None] * u_axis.size))
    eqs = _continue_branch(u_axis, anchor_idx, anchor, p, max_jump)
    gc = np.outer(G, c)

    def row(i):
        eq = eqs[i]
        if eq is None:
            return i, None
        return i, [spectral_abscissa(eq.jacobian - k * gc) for k in k_axis]

    with ThreadPoolExecutor(max_workers=_thread_count(threads)) as pool:
        for i, vals in pool.map(row, range(u_axis.size)):
            if vals is not None:
                abscissa[i] = vals
                found[i] = True
    return SweepGrid(u_axis, k_axis, abscissa, found, c, tuple(eqs))


def sweep_axes(u_min=-3.0, u_max=0.5, k_min=0.0, k_max=4.0, step=0.05):
    """Inclusive, rounded grid axes."""
    nu = int(round((u_max - u_min) / step)) + 1
    nk = int(round((k_max - k_min) / step)) + 1
    return (np.round(np.linspace(u_min, u_max, nu), 10),
            np.round(np.linspace(k_min, k_max, nk), 10))
