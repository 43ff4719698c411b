"""Epileptor vector field, output map and analytic Jacobian.

State ordering is ``(x1, y1, x2, y2, zeta, z)``. Every function accepts a
single state of shape ``(6,)`` or a batch of shape ``(N, 6)`` and is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Callable, Optional

import numpy as np

STATE_NAMES = ("x1", "y1", "x2", "y2", "zeta", "z")
N_STATES = 6

# input direction: u enters the x1 and x2 equations only
G = np.array([1.0, 0.0, 1.0, 0.0, 0.0, 0.0])
G.setflags(write=False)

C_STANDARD = np.array([1.0, 0.0, -1.0, 0.0, 0.0, 0.0])
C_SUM = np.array([1.0, 0.0, 1.0, 0.0, 0.0, 0.0])
C_REDESIGNED = np.array([1.0, 0.0, -0.29, 0.0, 0.0, 0.0])
for _c in (C_STANDARD, C_SUM, C_REDESIGNED):
    _c.setflags(write=False)


class DomainError(ValueError):
    """Raised for non-finite or mis-shaped model inputs."""


@dataclass(frozen=True)
class EpileptorParams:
    """Model constants; defaults are the standard Epileptor values."""

    x0: float = -1.6
    y0: float = 1.0
    tau1: float = 1.0
    tau0: float = 2857.0
    tau2: float = 10.0
    I_rest1: float = 3.1
    I_rest2: float = 0.45
    gamma: float = 0.01

    def __post_init__(self):
        for name in ("tau0", "tau1", "tau2", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        for name, val in asdict(self).items():
            if not np.isfinite(val):
                raise ValueError(f"{name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.tau1, self.tau0, self.tau2,
                         self.I_rest1, self.I_rest2, self.gamma])


DEFAULT_PARAMS = EpileptorParams()


@dataclass(frozen=True)
class FeedbackLaw:
    """Output feedback ``u = u_star - phi(y - y_star) + v``.

    ``phi=None`` means the linear law ``phi(y) = k * y``.
    """

    u_star: float = 0.0
    k: float = 0.0
    y_star: float = 0.0
    phi: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not self.k >= 0:
            raise ValueError("feedback gain k must be >= 0")
        if self.phi is not None:
            ys = np.linspace(-5.0, 5.0, 101)
            ys = ys[ys != 0.0]
            if not np.all(ys * np.asarray(self.phi(ys), dtype=float) > 0):
                raise ValueError("phi violates the sector condition y*phi(y) > 0")

    @property
    def is_linear(self) -> bool:
        return self.phi is None

    def feedback(self, y_err):
        if self.phi is None:
            return self.k * y_err
        return self.phi(y_err)

    def input(self, y, v=0.0):
        """Applied input for output value(s) ``y``."""
        return self.u_star - self.feedback(np.asarray(y, dtype=float) - self.y_star) + v


def as_state(x, name: str = "x") -> np.ndarray:
    """Validate and convert to a float array whose last axis has length 6."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != N_STATES:
        raise DomainError(f"{name} must have last dimension {N_STATES}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def as_output_map(c) -> np.ndarray:
    arr = np.asarray(c, dtype=float)
    if arr.shape != (N_STATES,):
        raise DomainError(f"output map must have shape (6,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("output map contains non-finite entries")
    return arr


def f1(x1, x2, z):
    """Fast-subsystem nonlinearity; the x1 >= 0 branch owns the surface."""
    x1 = np.asarray(x1, dtype=float)
    # explicit products: numpy's power takes different code paths for
    # scalars and arrays, which breaks bitwise batch/row agreement
    dz = np.asarray(z, dtype=float) - 4.0
    neg = x1 * x1 * x1 - 3.0 * (x1 * x1)
    pos = (x2 - 0.6 * (dz * dz)) * x1
    out = np.where(x1 < 0, neg, pos)
    return out[()] if out.ndim == 0 else out


def f2(x2):
    x2 = np.asarray(x2, dtype=float)
    out = np.where(x2 >= -0.25, 6.0 * (x2 + 0.25), 0.0)
    return out[()] if out.ndim == 0 else out


def branch_signature(x) -> tuple:
    """``(x1 < 0, x2 >= -0.25)`` for a single state."""
    x = np.asarray(x, dtype=float)
    return bool(x[0] < 0), bool(x[2] >= -0.25)


def _field(x, u, p: EpileptorParams, branch=None):
    # branch=(neg1, act2) pins both piecewise branches; None evaluates the predicates.
    x1, y1, x2, y2, zeta, z = np.moveaxis(x, -1, 0)
    if branch is None:
        f1v = f1(x1, x2, z)
        f2v = f2(x2)
    else:
        neg1, act2 = branch
        f1v = x1 * x1 * x1 - 3.0 * (x1 * x1) if neg1 else (x2 - 0.6 * ((z - 4.0) * (z - 4.0))) * x1
        f2v = 6.0 * (x2 + 0.25) if act2 else 0.0 * x2
    dx = np.empty(np.shape(x))
    dx[..., 0] = y1 - f1v - z + p.I_rest1 + u
    dx[..., 1] = (p.y0 - 5.0 * (x1 * x1) - y1) / p.tau1
    dx[..., 2] = -y2 + x2 - x2 * x2 * x2 + 2.0 * zeta - 0.3 * (z - 3.5) + p.I_rest2 + u
    dx[..., 3] = (-y2 + f2v) / p.tau2
    dx[..., 4] = -p.gamma * (zeta - 0.1 * x1)
    dx[..., 5] = (4.0 * (x1 - p.x0) - z) / p.tau0
    return dx


def vector_field(x, u=0.0, p: EpileptorParams = DEFAULT_PARAMS) -> np.ndarray:
    """Time derivative of the state under scalar (or per-row) input ``u``."""
    x = as_state(x)
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise DomainError("input u contains non-finite entries")
    return _field(x, u, p)


def output(x, c=C_STANDARD):
    return np.asarray(x, dtype=float) @ np.asarray(c, dtype=float)


def _jacobian(x, p: EpileptorParams, branch=None):
    x1, y1, x2, y2, zeta, z = (float(v) for v in x)
    neg1, act2 = branch_signature(x) if branch is None else branch
    J = np.zeros((6, 6))
    if neg1:
        J[0, 0] = -(3.0 * x1 ** 2 - 6.0 * x1)
        J[0, 5] = -1.0
    else:
        J[0, 0] = -(x2 - 0.6 * (z - 4.0) ** 2)
        J[0, 2] = -x1
        J[0, 5] = -1.0 + 1.2 * (z - 4.0) * x1
    J[0, 1] = 1.0
    J[1, 0] = -10.0 * x1 / p.tau1
    J[1, 1] = -1.0 / p.tau1
    J[2, 2] = 1.0 - 3.0 * x2 ** 2
    J[2, 3] = -1.0
    J[2, 4] = 2.0
    J[2, 5] = -0.3
    J[3, 2] = (6.0 if act2 else 0.0) / p.tau2
    J[3, 3] = -1.0 / p.tau2
    J[4, 0] = 0.1 * p.gamma
    J[4, 4] = -p.gamma
    J[5, 0] = 4.0 / p.tau0
    J[5, 5] = -1.0 / p.tau0
    return J


def jacobian(x, p: EpileptorParams = DEFAULT_PARAMS) -> np.ndarray:
    """Analytic Jacobian of the autonomous field at a single state.

    On a switching surface the branch that owns it (x1 >= 0, x2 >= -0.25)
    supplies the one-sided derivative.
    """
    x = as_state(x)
    if x.ndim != 1:
        raise DomainError("jacobian expects a single state")
    return _jacobian(x, p)


def closed_loop_field(x, law: FeedbackLaw, c=C_STANDARD, v=0.0,
                      p: EpileptorParams = DEFAULT_PARAMS) -> np.ndarray:
    """Field under ``u = u_star - phi(c.x - y_star) + v``."""
    x = as_state(x)
    u = law.input(output(x, c), v)
    return vector_field(x, u, p)


def closed_loop_state_jacobian(x, law: FeedbackLaw, c=C_STANDARD,
                               p: EpileptorParams = DEFAULT_PARAMS) -> np.ndarray:
    """Jacobian of :func:`closed_loop_field` (linear ``phi`` only)."""
    if not law.is_linear:
        raise NotImplementedError("closed-loop Jacobian needs a linear feedback law")
    return jacobian(x, p) - law.k * np.outer(G, np.asarray(c, dtype=float))
