"""Trajectory integration and seizure-cycle extraction.

The integrator is a Dormand-Prince 5(4) embedded pair with local error
control. The stepping loop is compiled with numba when the controller is a
constant input or a linear feedback law; custom ``phi`` callables run the
same loop as plain Python.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from numba import njit

from .model import (
    C_STANDARD,
    DEFAULT_PARAMS,
    N_STATES,
    STATE_NAMES,
    EpileptorParams,
    FeedbackLaw,
    _field,
    as_output_map,
    as_state,
    output,
)


class IntegrationError(RuntimeError):
    """Step-size underflow or step budget exhausted."""

    def __init__(self, message, t, state, times=None, states=None):
        super().__init__(message)
        self.t = t
        self.state = state
        # accepted steps up to the failure, for partial exports
        self.times = times
        self.states = states


class BlowUpError(IntegrationError):
    """The state became non-finite."""


@dataclass(frozen=True)
class SolverOptions:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = 1.0
    max_steps: int = 20_000_000
    method: str = "dopri5"

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be strictly positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be > 0")
        if self.method != "dopri5":
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.states) == len(self.inputs) == len(self.outputs) == n):
            raise ValueError("trajectory arrays must have equal length")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        for arr in (self.times, self.states, self.inputs, self.outputs):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.times)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])


@dataclass(frozen=True)
class CycleReport:
    n_seizures: int
    mean_period: float
    ictal_fraction: float
    episodes: tuple = field(default=())
    threshold: float = 0.0


# -- Dormand-Prince 5(4) tableau ------------------------------------------------

_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# 5th order minus embedded 4th order weights
_E1 = 71 / 57600
_E3 = -71 / 16695
_E4 = 71 / 1920
_E5 = -17253 / 339200
_E6 = 22 / 525
_E7 = -1 / 40

# prm layout: model constants (8), u_star, k, y_star, v, c (6)
_PRM_LEN = 18


@njit(cache=True)
def _epileptor_rhs(x, prm, out):
    x1, y1, x2, y2, zeta, z = x[0], x[1], x[2], x[3], x[4], x[5]
    x0, y0, tau1, tau0, tau2, i1, i2, gam = (
        prm[0], prm[1], prm[2], prm[3], prm[4], prm[5], prm[6], prm[7])
    y = 0.0
    for i in range(6):
        y += prm[12 + i] * x[i]
    u = prm[8] - prm[9] * (y - prm[10]) + prm[11]
    if x1 < 0:
        f1 = x1 * x1 * x1 - 3.0 * x1 * x1
    else:
        f1 = (x2 - 0.6 * (z - 4.0) * (z - 4.0)) * x1
    f2 = 6.0 * (x2 + 0.25) if x2 >= -0.25 else 0.0
    out[0] = y1 - f1 - z + i1 + u
    out[1] = (y0 - 5.0 * x1 * x1 - y1) / tau1
    out[2] = -y2 + x2 - x2 * x2 * x2 + 2.0 * zeta - 0.3 * (z - 3.5) + i2 + u
    out[3] = (-y2 + f2) / tau2
    out[4] = -gam * (zeta - 0.1 * x1)
    out[5] = (4.0 * (x1 - x0) - z) / tau0


@njit(cache=True)
def _err_norm(e, y, ynew, rtol, atol):
    acc = 0.0
    n = e.shape[0]
    for i in range(n):
        sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
        acc += (e[i] / sc) ** 2
    return np.sqrt(acc / n)


@njit(cache=True)
def _all_finite(x):
    for i in range(x.shape[0]):
        if not np.isfinite(x[i]):
            return False
    return True


@njit(cache=True)
def _dopri_core(rhs, x0, t0, t1, prm, rtol, atol, max_step, max_steps):
    """Returns (times, states, count, status); status 0 ok, 1 underflow, 2 non-finite, 3 budget."""
    n = x0.shape[0]
    cap = 4096
    ts = np.empty(cap)
    xs = np.empty((cap, n))
    ts[0] = t0
    xs[0] = x0
    count = 1

    k1 = np.empty(n); k2 = np.empty(n); k3 = np.empty(n); k4 = np.empty(n)
    k5 = np.empty(n); k6 = np.empty(n); k7 = np.empty(n)
    tmp = np.empty(n); ynew = np.empty(n); err = np.empty(n)
    y = x0.copy()
    t = t0
    rhs(y, prm, k1)
    if not _all_finite(k1):
        return ts, xs, count, 2

    # initial step (Hairer, Norsett & Wanner II.4)
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (k1[i] / sc) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, max_step, t1 - t0)
    for i in range(n):
        tmp[i] = y[i] + h0 * k1[i]
    rhs(tmp, prm, k2)
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d2 += ((k2[i] - k1[i]) / sc) ** 2
    d2 = np.sqrt(d2 / n) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    h = min(100.0 * h0, h1, max_step, t1 - t0)

    steps = 0
    rejected = False
    while t < t1:
        if steps >= max_steps:
            return ts, xs, count, 3
        hmin = 16.0 * np.finfo(np.float64).eps * max(1.0, abs(t))
        if h < hmin:
            return ts, xs, count, 1
        last = False
        if t + h >= t1:
            h = t1 - t
            last = True
        for i in range(n):
            tmp[i] = y[i] + h * _A21 * k1[i]
        rhs(tmp, prm, k2)
        for i in range(n):
            tmp[i] = y[i] + h * (_A31 * k1[i] + _A32 * k2[i])
        rhs(tmp, prm, k3)
        for i in range(n):
            tmp[i] = y[i] + h * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
        rhs(tmp, prm, k4)
        for i in range(n):
            tmp[i] = y[i] + h * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i] + _A54 * k4[i])
        rhs(tmp, prm, k5)
        for i in range(n):
            tmp[i] = y[i] + h * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i]
                                 + _A64 * k4[i] + _A65 * k5[i])
        rhs(tmp, prm, k6)
        for i in range(n):
            ynew[i] = y[i] + h * (_B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i]
                                  + _B5 * k5[i] + _B6 * k6[i])
        rhs(ynew, prm, k7)
        for i in range(n):
            err[i] = h * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i]
                          + _E5 * k5[i] + _E6 * k6[i] + _E7 * k7[i])
        steps += 1
        if not (_all_finite(ynew) and _all_finite(k7)):
            # a non-finite trial is treated as a rejected step unless h is already tiny
            if h <= 1e3 * hmin:
                return ts, xs, count, 2
            h *= 0.25
            rejected = True
            continue
        enorm = _err_norm(err, y, ynew, rtol, atol)
        if enorm <= 1.0:
            t = t1 if last else t + h
            for i in range(n):
                y[i] = ynew[i]
                k1[i] = k7[i]
            if count == cap:
                cap *= 2
                ts2 = np.empty(cap)
                xs2 = np.empty((cap, n))
                ts2[:count] = ts[:count]
                xs2[:count] = xs[:count]
                ts = ts2
                xs = xs2
            ts[count] = t
            xs[count] = y
            count += 1
            if enorm == 0.0:
                fac = 5.0
            else:
                fac = min(5.0, max(0.2, 0.9 * enorm ** -0.2))
            if rejected:
                fac = min(fac, 1.0)
            h = min(h * fac, max_step)
            rejected = False
        else:
            h *= max(0.2, 0.9 * enorm ** -0.2)
            rejected = True
    return ts, xs, count, 0


def _pack_params(p: EpileptorParams, u_star, k, y_star, v, c) -> np.ndarray:
    prm = np.empty(_PRM_LEN)
    prm[:8] = p.as_array()
    prm[8:12] = (u_star, k, y_star, v)
    prm[12:] = c
    return prm


def integrate(x0, t_span, controller: Union[float, FeedbackLaw] = 0.0, c=C_STANDARD,
              p: EpileptorParams = DEFAULT_PARAMS, opts: SolverOptions = SolverOptions(),
              v: float = 0.0) -> Trajectory:
    """Integrate the Epileptor from ``x0`` over ``t_span``.

    ``controller`` is either a constant input ``u`` or a :class:`FeedbackLaw`
    closed through the output ``c.x``. ``v`` is the exogenous port input.
    Every accepted step is recorded.
    """
    x0 = as_state(x0, "x0")
    if x0.ndim != 1:
        raise ValueError("x0 must be a single state")
    c = as_output_map(c)
    t0, t1 = (float(t) for t in t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")

    if isinstance(controller, FeedbackLaw):
        law = controller
    else:
        u = float(controller)
        if not np.isfinite(u):
            raise ValueError("constant input must be finite")
        law = FeedbackLaw(u_star=u, k=0.0, y_star=0.0)

    args = (x0.copy(), t0, t1)
    tail = (opts.rel_tol, opts.abs_tol, opts.max_step, opts.max_steps)
    if law.is_linear:
        prm = _pack_params(p, law.u_star, law.k, law.y_star, v, c)
        ts, xs, n, status = _dopri_core(_epileptor_rhs, *args, prm, *tail)
    else:
        def rhs(x, _prm, out):
            with np.errstate(all="ignore"):
                out[:] = _field(x, law.input(x @ c, v), p)

        ts, xs, n, status = _dopri_core.py_func(rhs, *args, np.empty(0), *tail)

    ts = ts[:n].copy()
    xs = xs[:n].copy()
    if status == 1:
        raise IntegrationError(f"step size underflow at t={ts[-1]:.6g}", ts[-1], xs[-1], ts, xs)
    if status == 2:
        raise BlowUpError(f"state diverged after t={ts[-1]:.6g}", ts[-1], xs[-1], ts, xs)
    if status == 3:
        raise IntegrationError(f"step budget exhausted at t={ts[-1]:.6g}", ts[-1], xs[-1],
                               ts, xs)

    ys = output(xs, c)
    us = np.broadcast_to(law.input(ys, v), ys.shape).astype(float)
    return Trajectory(times=ts, states=xs, inputs=us, outputs=ys)


def _moving_std(y, w):
    # centered window of w samples; edges use the available part
    n = len(y)
    cs = np.concatenate(([0.0], np.cumsum(y)))
    cs2 = np.concatenate(([0.0], np.cumsum(y * y)))
    idx = np.arange(n)
    lo = np.clip(idx - w // 2, 0, n)
    hi = np.clip(idx + w - w // 2, 0, n)
    cnt = hi - lo
    mean = (cs[hi] - cs[lo]) / cnt
    var = (cs2[hi] - cs2[lo]) / cnt - mean ** 2
    return np.sqrt(np.maximum(var, 0.0))


def _runs(mask):
    """Index pairs [start, stop) of contiguous True runs."""
    m = np.concatenate(([False], mask, [False])).astype(np.int8)
    d = np.diff(m)
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def detect_cycles(traj: Trajectory, window: float = 50.0, factor: float = 3.0,
                  min_std: float = 0.05, t_min: Optional[float] = None,
                  dt: float = 0.25, min_duration: Optional[Union[float, int]] = None,
                  p: EpileptorParams = DEFAULT_PARAMS) -> CycleReport:
    """Locate ictal episodes from the moving standard deviation of the output.

    A sample is ictal when the moving std over ``window`` time units exceeds
    ``factor`` times the baseline (mean std of the quietest decile of
    windows) and also exceeds the absolute floor ``min_std``. Ictal runs
    separated by less than one window are merged. ``t_min`` discards an
    initial transient.
    """
    if traj.duration < p.tau0:
        raise ValueError(
            f"trajectory spans {traj.duration:.6g} time units; need at least tau0={p.tau0:g}")
    grid = np.arange(traj.times[0], traj.times[-1], dt)
    y = np.interp(grid, traj.times, traj.outputs)
    if t_min is not None:
        keep = grid >= t_min
        grid, y = grid[keep], y[keep]
    if len(grid) < 2:
        raise ValueError("nothing left after discarding the transient")
    w = max(2, int(round(window / dt)))
    sd = _moving_std(y, w)
    quiet = np.sort(sd)[: max(1, len(sd) // 10)]
    threshold = max(factor * float(np.mean(quiet)), min_std)
    ictal = sd > threshold

    runs = _runs(ictal)
    merged = []
    for a, b in runs:
        if merged and a - merged[-1][1] < w:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    min_len = 2 * w if min_duration is None else max(1, int(round(min_duration / dt)))
    merged = [(a, b) for a, b in merged if b - a >= min_len]

    episodes = tuple((float(grid[a]), float(grid[b - 1])) for a, b in merged)
    frac = sum(b - a for a, b in merged) / len(grid)
    onsets = [e[0] for e in episodes]
    period = float(np.mean(np.diff(onsets))) if len(onsets) >= 2 else float("nan")
    return CycleReport(n_seizures=len(episodes), mean_period=period,
                       ictal_fraction=float(frac), episodes=episodes, threshold=threshold)


def phase_plane(traj: Trajectory, pair: Sequence) -> np.ndarray:
    """Project states onto two coordinates, given as indices or state names."""
    if len(pair) != 2:
        raise ValueError("pair must name exactly two coordinates")
    idx = []
    for item in pair:
        if isinstance(item, str):
            if item not in STATE_NAMES:
                raise ValueError(f"unknown coordinate {item!r}")
            idx.append(STATE_NAMES.index(item))
        else:
            i = int(item)
            if not 0 <= i < N_STATES:
                raise IndexError(f"coordinate index {item} out of range")
            idx.append(i)
    return traj.states[:, idx].copy()
