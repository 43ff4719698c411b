"""Linear passivity (KYP) checks, the matching obstruction and sublevel-set
region-of-attraction estimates for quadratic storage functions.

Storage functions are ``V(x~) = scale * x~^T P x~`` with ``x~ = x - x*``.
``scale = 0.5`` is the usual convention for passivity certificates, under
which matching reads ``Pg = c``; ``scale = 1`` is used for Lyapunov functions
whose coefficients are quoted term by term.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .analysis import operating_equilibrium
from .model import C_STANDARD, DEFAULT_PARAMS, G, EpileptorParams, _field, _jacobian, as_output_map

SYMMETRY_TOL = 1e-12
EIG_REL_TOL = 1e-9
DECREASE_EPS = 1e-6


class CertificateError(ValueError):
    """A matrix fails a structural or linear precondition."""


# -- linear checks ----------------------------------------------------------------

def _as_square(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    return M


def _as_symmetric(P):
    P = _as_square(P, "P")
    asym = float(np.max(np.abs(P - P.T), initial=0.0))
    if asym > SYMMETRY_TOL:
        raise CertificateError(f"P is not symmetric (max asymmetry {asym:.3g})")
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class CheckResult:
    value: float
    ok: bool


def check_matching(P, g=G, c=C_STANDARD, tol: float = 1e-9) -> CheckResult:
    """``||Pg - c||_inf`` and whether it is within ``tol``."""
    P = _as_symmetric(P)
    g, c = np.asarray(g, dtype=float), np.asarray(c, dtype=float)
    if g.shape != (P.shape[0],) or c.shape != (P.shape[0],):
        raise ValueError("g and c must match the dimension of P")
    r = float(np.max(np.abs(P @ g - c)))
    return CheckResult(r, r <= tol)


def check_dissipation(P, A, strict: bool = True) -> CheckResult:
    """Margin ``-lambda_max(A^T P + P A)``; non-strict allows ``-1e-9 ||M||``."""
    P = _as_symmetric(P)
    A = _as_square(A, "A")
    if A.shape != P.shape:
        raise ValueError(f"A has shape {A.shape} but P has shape {P.shape}")
    M = A.T @ P + P @ A
    margin = -float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])
    if strict:
        return CheckResult(margin, margin > 0)
    return CheckResult(margin, margin >= -EIG_REL_TOL * np.linalg.norm(M, 2))


@dataclass(frozen=True)
class PassivityCertificate:
    P: np.ndarray
    matching_residual: float
    dissipation_margin: float
    psd_margin: float
    tol: float = 1e-9
    scale: float = 0.5
    degenerate: bool = False

    @property
    def strict(self) -> bool:
        return (self.psd_margin > 0 and self.dissipation_margin > 0
                and self.matching_residual <= self.tol)

    @property
    def valid(self) -> bool:
        """Non-strict validity (eigenvalue tolerance ``1e-9 ||.||``)."""
        norm_p = np.linalg.norm(self.P, 2)
        floor = -EIG_REL_TOL * max(norm_p, 0.0)
        return (self.psd_margin >= floor and self.matching_residual <= self.tol
                and self._dissipation_ok)

    _dissipation_ok: bool = field(default=True, repr=False)

    @property
    def verdict(self) -> str:
        if self.strict:
            return "valid strict"
        if self.valid:
            return "valid non-strict degenerate" if self.degenerate else "valid non-strict"
        return "invalid"


def verify_linear_passivity(A, g, c, P, tol: float = 1e-9) -> PassivityCertificate:
    """Bundle the three KYP conditions ``P >= 0``, ``A^T P + P A <= 0``, ``Pg = c``."""
    P = _as_symmetric(P)
    if P.shape != (6, 6):
        raise ValueError("passivity certificates are 6x6")
    diss = check_dissipation(P, A, strict=False)
    match = check_matching(P, g, c, tol)
    psd = float(np.linalg.eigvalsh(P)[0])
    return PassivityCertificate(P=P.copy(), matching_residual=match.value,
                                dissipation_margin=diss.value, psd_margin=psd, tol=tol,
                                degenerate=bool(np.max(np.abs(P)) <= SYMMETRY_TOL),
                                _dissipation_ok=diss.ok)


@dataclass(frozen=True)
class Obstruction:
    gTc: float

    @property
    def passivatable(self) -> bool:
        return self.gTc > 0

    @property
    def verdict(self) -> str:
        return "passivation-possible" if self.passivatable else "not-passivatable"


def matching_obstruction(c, g=G) -> Obstruction:
    """``g^T c``; with ``P >= 0`` matching forces ``g^T c = g^T P g >= 0``,
    and ``g^T c = 0`` would force ``Pg = 0 = c``."""
    return Obstruction(float(np.asarray(g, dtype=float) @ as_output_map(c)))


# -- closed-loop fields -----------------------------------------------------------

@dataclass(frozen=True)
class ClosedLoop:
    """Field ``f(x) + g (u* - k (c.x - c.x*))`` around an equilibrium ``x*``.

    Callable on absolute states of shape ``(6,)`` or ``(N, 6)``.
    """

    x_star: np.ndarray
    u_star: float
    k: float = 0.0
    c: np.ndarray = field(default_factory=lambda: C_STANDARD.copy())
    p: EpileptorParams = DEFAULT_PARAMS

    @classmethod
    def at(cls, u_star: float, k: float = 0.0, c=C_STANDARD,
           p: EpileptorParams = DEFAULT_PARAMS) -> "ClosedLoop":
        """Use the operating equilibrium at ``u_star`` (independent of ``k``)."""
        eq = operating_equilibrium(u_star, p)
        if eq is None:
            raise CertificateError(f"no operating equilibrium at u* = {u_star}")
        return cls(eq.x_star.copy(), float(u_star), float(k), as_output_map(c).copy(), p)

    def input(self, x):
        return self.u_star - self.k * ((x - self.x_star) @ self.c)

    def __call__(self, x, v=0.0):
        x = np.asarray(x, dtype=float)
        return _field(x, self.input(x) + v, self.p)

    def jacobian(self, x):
        return _jacobian(np.asarray(x, dtype=float), self.p) - self.k * np.outer(G, self.c)

    @property
    def A(self) -> np.ndarray:
        return self.jacobian(self.x_star)


def _fd_jacobian(fn, x, h=1e-7):
    x = np.asarray(x, dtype=float)
    J = np.empty((x.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h * max(1.0, abs(x[i]))
        J[:, i] = (fn(x + e) - fn(x - e)) / (2 * e[i])
    return J


def lyapunov_decrease_margin(x_tilde, P, field_fn: Callable, x_star, scale: float = 1.0,
                             eps: float = DECREASE_EPS):
    """``grad V . xdot + eps ||x~||^2``; negative where V strictly decreases.

    Vectorized over a leading batch axis of ``x_tilde``.
    """
    xt = np.asarray(x_tilde, dtype=float)
    xdot = field_fn(np.asarray(x_star, dtype=float) + xt)
    return 2.0 * scale * np.einsum("...i,ij,...j->...", xt, P, xdot) + eps * np.einsum(
        "...i,...i->...", xt, xt)


def passivity_inequality_margin(x_tilde, u, P, c, field_fn: Callable, x_star,
                                g=G, scale: float = 0.5):
    """``Vdot - u * y~`` along ``x~' = F(x* + x~) + g u`` with ``y~ = c.x~``.

    ``field_fn`` is the closed-loop field without the port input; a
    :class:`ClosedLoop` works directly. Non-positive means the passivity
    inequality holds at this point.
    """
    xt = np.asarray(x_tilde, dtype=float)
    u = np.asarray(u, dtype=float)
    xdot = field_fn(np.asarray(x_star, dtype=float) + xt)
    Px = xt @ P
    vdot = 2.0 * scale * (np.einsum("...i,...i->...", Px, xdot) + u * (Px @ g))
    return vdot - u * (xt @ np.asarray(c, dtype=float))


# -- region of attraction ----------------------------------------------------------

def roa_radius(P, rho: float, scale: float = 1.0) -> float:
    """Largest ball inside ``{scale * x^T P x <= rho}``: ``sqrt(rho / (scale lambda_min))``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    P = _as_symmetric(P)
    lam = float(np.linalg.eigvalsh(P)[0])
    if not lam > EIG_REL_TOL * max(np.linalg.norm(P, 2), 1e-300):
        raise CertificateError(f"P is singular or indefinite (lambda_min = {lam:.3g})")
    return float(np.sqrt(rho / (scale * lam)))


@dataclass(frozen=True)
class RoaOptions:
    n_samples: int = 2 ** 17
    n_restarts: int = 100
    seed: int = 0
    eps: float = DECREASE_EPS
    rel_tol: float = 1e-3
    nested_shells: int = 10
    threads: Optional[int] = None
    max_ascent_iter: int = 200


@dataclass(frozen=True)
class RoaEstimate:
    P: np.ndarray
    rho: float
    radius: float
    status: str  # "falsification-free" or "counterexample-found"
    n_samples: int
    counterexample: Optional[np.ndarray] = None
    scale: float = 1.0
    worst_margin: float = float("nan")  # max of margin / ||x~||^2 seen at this level
    rho_rejected: Optional[float] = None
    rejected_counterexample: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.counterexample is not None) != (self.status == "counterexample-found"):
            raise ValueError("counterexample must be present exactly when one was found")


def _threads(threads):
    if threads is None:
        threads = int(os.environ.get("EPILAB_THREADS", "0") or 0)
    return max(1, threads or (os.cpu_count() or 1))


class _Falsifier:
    """Counterexample search for the decrease condition on ``{V <= rho}``."""

    def __init__(self, P, field_fn, x_star, scale, opts: RoaOptions, jac=None):
        self.P = P
        self.field = field_fn
        self.x_star = np.asarray(x_star, dtype=float)
        self.scale = scale
        self.opts = opts
        self.jac = jac
        self.lam_max = float(np.linalg.eigvalsh(P)[-1])
        self.n_evaluated = 0
        # unit directions and level fractions are fixed once, so every level
        # reuses the same deterministic sample set
        m = int(2 ** np.ceil(np.log2(max(opts.n_samples, 2))))
        pts = qmc.Sobol(d=7, scramble=True, seed=opts.seed).random(m)
        pts = np.clip(pts, 1e-12, 1 - 1e-12)
        d = norm.ppf(pts[:, :6])
        self.dirs = d / np.sqrt(scale * np.einsum("ni,ij,nj->n", d, P, d))[:, None]
        self.frac = pts[:, 6]

    def normalized_margin(self, xt):
        m = lyapunov_decrease_margin(xt, self.P, self.field, self.x_star, self.scale,
                                     self.opts.eps)
        return m / np.einsum("...i,...i->...", xt, xt)

    def _grad(self, xt):
        # gradient of m / |x|^2 with m = 2 s x^T P f(x* + x) + eps |x|^2
        x = self.x_star + xt
        f = self.field(x)
        J = self.jac(x) if self.jac is not None else _fd_jacobian(self.field, x)
        Px = self.P @ xt
        m = 2 * self.scale * Px @ f + self.opts.eps * xt @ xt
        dm = 2 * self.scale * (self.P @ f + J.T @ Px) + 2 * self.opts.eps * xt
        r2 = xt @ xt
        return m / r2, dm / r2 - 2 * m * xt / r2 ** 2

    def sample_level(self, rho_lo, rho_hi):
        """Evaluate the fixed sample set mapped into ``{rho_lo <= V <= rho_hi}``."""
        levels = rho_lo + (rho_hi - rho_lo) * self.frac
        X = self.dirs * np.sqrt(levels)[:, None]
        chunks = np.array_split(np.arange(len(X)), _threads(self.opts.threads))
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            vals = np.concatenate(list(pool.map(
                lambda idx: self.normalized_margin(X[idx]), chunks)))
        self.n_evaluated += len(X)
        return X, vals

    def ascend(self, x0, rho):
        """Maximize the normalized margin over ``{V <= rho, ||x|| >= floor}``."""
        floor = 1e-4 * np.sqrt(rho / (self.scale * self.lam_max))
        cons = [
            {"type": "ineq", "fun": lambda x: rho - self.scale * x @ self.P @ x,
             "jac": lambda x: -2 * self.scale * self.P @ x},
            {"type": "ineq", "fun": lambda x: x @ x - floor ** 2,
             "jac": lambda x: 2 * x},
        ]

        def obj(x):
            with np.errstate(all="ignore"):
                v, gr = self._grad(x)
            if not np.isfinite(v):
                return 1e300, np.zeros_like(x)
            return -v, -gr

        res = minimize(obj, x0, jac=True, method="SLSQP", constraints=cons,
                       options={"maxiter": self.opts.max_ascent_iter, "ftol": 1e-14})
        x = res.x
        # accept only points that satisfy the constraints as evaluated
        if self.scale * x @ self.P @ x > rho * (1 + 1e-12) or x @ x < floor ** 2:
            return x0, float(self.normalized_margin(x0))
        return x, float(self.normalized_margin(x))

    def check(self, rho, shells=1):
        """(worst normalized margin, counterexample or None) at level ``rho``."""
        worst, worst_x = -np.inf, None
        top = []
        for j in range(shells):
            hi = rho * 0.5 ** j
            X, vals = self.sample_level(hi / 2, hi)
            i = int(np.argmax(vals))
            if vals[i] > worst:
                worst, worst_x = float(vals[i]), X[i]
            if worst > 0:
                return worst, worst_x
            order = np.argsort(vals)[::-1][: self.opts.n_restarts]
            top.extend(zip(vals[order], X[order]))
        top.sort(key=lambda t: -t[0])
        for _, x0 in top[: self.opts.n_restarts]:
            x, v = self.ascend(x0, rho)
            if v > worst:
                worst, worst_x = v, x
            if v > 0:
                return v, x
        return worst, None


def _linear_precheck(P, field_fn, x_star, jac, scale):
    A = jac(x_star) if jac is not None else _fd_jacobian(field_fn, x_star)
    lam = float(np.linalg.eigvalsh(P)[0])
    if not lam > 0:
        raise CertificateError(f"P is not positive definite (lambda_min = {lam:.3g})")
    diss = check_dissipation(P, A, strict=True)
    if not diss.ok:
        raise CertificateError(
            "P is not a strict Lyapunov matrix for the linearization "
            f"(-lambda_max(A^T P + P A) = {diss.value:.3g})")


def _resolve_field(field_fn, x_star):
    if x_star is None:
        x_star = getattr(field_fn, "x_star", None)
        if x_star is None:
            raise ValueError("x_star is required for a plain callable field")
    return np.asarray(x_star, dtype=float), getattr(field_fn, "jacobian", None)


def check_level(P, field_fn, rho: float, x_star=None, options: RoaOptions = RoaOptions(),
                scale: float = 1.0) -> RoaEstimate:
    """Falsification search at a single level ``rho``."""
    P = _as_symmetric(P)
    x_star, jac = _resolve_field(field_fn, x_star)
    _linear_precheck(P, field_fn, x_star, jac, scale)
    fals = _Falsifier(P, field_fn, x_star, scale, options, jac)
    worst, cex = fals.check(rho, shells=options.nested_shells)
    return RoaEstimate(P=P, rho=float(rho), radius=roa_radius(P, rho, scale),
                       status="counterexample-found" if cex is not None else "falsification-free",
                       n_samples=fals.n_evaluated, counterexample=cex, scale=scale,
                       worst_margin=worst)


def estimate_roa_level(P, field_fn, x_star=None, options: RoaOptions = RoaOptions(),
                       scale: float = 1.0, rho_start: Optional[float] = None) -> RoaEstimate:
    """Largest level ``rho`` of ``V = scale x~^T P x~`` with no decrease counterexample.

    Each candidate level is probed by quasi-random sampling of the shell
    ``{rho/2 <= V <= rho}`` followed by constrained local ascent of
    ``margin / ||x~||^2`` from the ``n_restarts`` worst samples. A log-scale
    bisection brackets the largest level without counterexamples; the
    accepted level is re-checked on ``nested_shells`` dyadic shells below it.
    The result is falsification-free, not a certificate.
    """
    P = _as_symmetric(P)
    x_star, jac = _resolve_field(field_fn, x_star)
    _linear_precheck(P, field_fn, x_star, jac, scale)
    fals = _Falsifier(P, field_fn, x_star, scale, options, jac)

    rho = rho_start if rho_start is not None else scale * float(np.linalg.eigvalsh(P)[0])
    lo = hi = None
    hi_cex = None
    for _ in range(200):  # bracket
        _, cex = fals.check(rho)
        if cex is None:
            lo = rho
            if hi is not None:
                break
            rho *= 4.0
        else:
            hi, hi_cex = rho, cex
            if lo is not None:
                break
            rho /= 4.0
        if rho > 1e12 or rho < 1e-300:
            break
    if lo is None:
        raise CertificateError("no falsification-free level found")
    while hi is not None and hi / lo > 1 + options.rel_tol:
        mid = np.sqrt(lo * hi)
        _, cex = fals.check(mid)
        if cex is None:
            lo = mid
        else:
            hi, hi_cex = mid, cex
    # final pass down through nested shells; shrink if something turns up
    while True:
        worst, cex = fals.check(lo, shells=options.nested_shells)
        if cex is None:
            break
        hi, hi_cex = lo, cex
        lo = lo / 2.0
    return RoaEstimate(P=P, rho=float(lo), radius=roa_radius(P, lo, scale),
                       status="falsification-free", n_samples=fals.n_evaluated,
                       scale=scale, worst_margin=worst, rho_rejected=hi,
                       rejected_counterexample=hi_cex)
