"""Direct ODE/DDE solution of the stationary workload ccdf.

For phase-type job sizes the stationary ccdf solves

    fbar'(s) = -lam ((1 - fbar(s)^d) + alpha A h(s)),
    h'(s)    = (1 - fbar(s)^d) 1 + A h(s),

with ``fbar(0) = rho`` and ``h(0) = 0``.  A deterministic offset ``tau``
turns the first equation into ``fbar' = lam (fbar^d - 1)`` on ``[0, tau]``
and delays the ``h`` argument by ``tau`` beyond it; purely deterministic
unit jobs give the scalar delay equation ``fbar' = lam (fbar^d -
fbar(s-1)^d)``.  All systems are integrated with a fixed-step classical
4th-order scheme so delayed lookups land exactly on stored grid points
(half-step stages interpolate linearly between neighbours).
"""

from __future__ import annotations

import logging
import math

import numpy as np
from numba import njit

from .analytic_exp import ModelParams
from .curves import CcdfCurve
from .jobsize import JobSizeLaw, PHRep

__all__ = [
    "solve_ph",
    "solve_det_plus_ph",
    "solve_det",
    "mean_from_curve",
    "mean_tail_estimate",
    "mean_response_from_workload",
]

log = logging.getLogger(__name__)

_STATUS_OK = 0
_STATUS_TAIL = 1
_STATUS_NONMONOTONE = 2
_STATUS_NEGATIVE = 3


@njit(cache=True)
def _ph_rhs(A, w, lam, d, fb, hv, dhv):
    n = A.shape[0]
    q = 1.0 - fb**d
    acc = 0.0
    for j in range(n):
        acc += w[j] * hv[j]
    for i in range(n):
        s = q
        for j in range(n):
            s += A[i, j] * hv[j]
        dhv[i] = s
    return -lam * (q + acc)


@njit(cache=True)
def _kernel_ph(A, w, lam, d, h, out, hv, start, nsteps, stop_eps):
    n = A.shape[0]
    d1 = np.empty(n)
    d2 = np.empty(n)
    d3 = np.empty(n)
    d4 = np.empty(n)
    tmp = np.empty(n)
    i = start
    while i < nsteps:
        fb = out[i]
        f1 = _ph_rhs(A, w, lam, d, fb, hv, d1)
        for j in range(n):
            tmp[j] = hv[j] + 0.5 * h * d1[j]
        f2 = _ph_rhs(A, w, lam, d, fb + 0.5 * h * f1, tmp, d2)
        for j in range(n):
            tmp[j] = hv[j] + 0.5 * h * d2[j]
        f3 = _ph_rhs(A, w, lam, d, fb + 0.5 * h * f2, tmp, d3)
        for j in range(n):
            tmp[j] = hv[j] + h * d3[j]
        f4 = _ph_rhs(A, w, lam, d, fb + h * f3, tmp, d4)
        fb_new = fb + h / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        for j in range(n):
            hv[j] += h / 6.0 * (d1[j] + 2.0 * d2[j] + 2.0 * d3[j] + d4[j])
        if fb_new < 0.0:
            # a tail value can cross zero within one step when the true
            # solution decays faster than the grid resolves; that is the
            # discrete tail bottoming out, not a step-size failure
            if fb <= 1e-6:
                i += 1
                out[i] = 0.0
                return i, _STATUS_TAIL
            if fb_new < -1e-12:
                return i, _STATUS_NEGATIVE
            fb_new = 0.0
        if fb_new > fb + 1e-9:
            return i, _STATUS_NONMONOTONE
        i += 1
        out[i] = fb_new
        if fb_new <= stop_eps:
            return i, _STATUS_TAIL
    return nsteps, _STATUS_OK


@njit(cache=True)
def _kernel_det(lam, d, h, m, out, start, nsteps, stop_eps):
    i = start
    while i < nsteps:
        fb = out[i]
        if i < m:
            f1 = lam * (fb**d - 1.0)
            y = fb + 0.5 * h * f1
            f2 = lam * (y**d - 1.0)
            y = fb + 0.5 * h * f2
            f3 = lam * (y**d - 1.0)
            y = fb + h * f3
            f4 = lam * (y**d - 1.0)
        else:
            z0 = out[i - m] ** d
            z1 = out[i - m + 1] ** d
            zh = 0.5 * (z0 + z1)
            f1 = lam * (fb**d - z0)
            y = fb + 0.5 * h * f1
            f2 = lam * (y**d - zh)
            y = fb + 0.5 * h * f2
            f3 = lam * (y**d - zh)
            y = fb + h * f3
            f4 = lam * (y**d - z1)
        fb_new = fb + h / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        if fb_new < 0.0:
            # a tail value can cross zero within one step when the true
            # solution decays faster than the grid resolves; that is the
            # discrete tail bottoming out, not a step-size failure
            if fb <= 1e-6:
                i += 1
                out[i] = 0.0
                return i, _STATUS_TAIL
            if fb_new < -1e-12:
                return i, _STATUS_NEGATIVE
            fb_new = 0.0
        if fb_new > fb + 1e-9:
            return i, _STATUS_NONMONOTONE
        i += 1
        out[i] = fb_new
        if fb_new <= stop_eps:
            return i, _STATUS_TAIL
    return nsteps, _STATUS_OK


@njit(cache=True)
def _hv_rhs(A, d, fb, hv, dhv):
    n = A.shape[0]
    q = 1.0 - fb**d
    for i in range(n):
        s = q
        for j in range(n):
            s += A[i, j] * hv[j]
        dhv[i] = s


@njit(cache=True)
def _delayed_rhs(w, lam, d, fb, hz):
    acc = 0.0
    for j in range(w.shape[0]):
        acc += w[j] * hz[j]
    return -lam * ((1.0 - fb**d) + acc)


@njit(cache=True)
def _kernel_det_ph(A, w, lam, d, h, mtau, out, hmat, start, nsteps, stop_eps):
    n = A.shape[0]
    dh1 = np.empty(n)
    dh2 = np.empty(n)
    dh3 = np.empty(n)
    dh4 = np.empty(n)
    tmp = np.empty(n)
    hz = np.empty(n)
    i = start
    while i < nsteps:
        fb = out[i]
        hv = hmat[i]
        if i < mtau:
            # before the offset only the drain term acts on fbar
            f1 = lam * (fb**d - 1.0)
            _hv_rhs(A, d, fb, hv, dh1)
            y = fb + 0.5 * h * f1
            for j in range(n):
                tmp[j] = hv[j] + 0.5 * h * dh1[j]
            f2 = lam * (y**d - 1.0)
            _hv_rhs(A, d, y, tmp, dh2)
            y = fb + 0.5 * h * f2
            for j in range(n):
                tmp[j] = hv[j] + 0.5 * h * dh2[j]
            f3 = lam * (y**d - 1.0)
            _hv_rhs(A, d, y, tmp, dh3)
            y = fb + h * f3
            for j in range(n):
                tmp[j] = hv[j] + h * dh3[j]
            f4 = lam * (y**d - 1.0)
            _hv_rhs(A, d, y, tmp, dh4)
        else:
            for j in range(n):
                hz[j] = hmat[i - mtau, j]
            f1 = _delayed_rhs(w, lam, d, fb, hz)
            _hv_rhs(A, d, fb, hv, dh1)
            for j in range(n):
                hz[j] = 0.5 * (hmat[i - mtau, j] + hmat[i - mtau + 1, j])
            y = fb + 0.5 * h * f1
            for j in range(n):
                tmp[j] = hv[j] + 0.5 * h * dh1[j]
            f2 = _delayed_rhs(w, lam, d, y, hz)
            _hv_rhs(A, d, y, tmp, dh2)
            y = fb + 0.5 * h * f2
            for j in range(n):
                tmp[j] = hv[j] + 0.5 * h * dh2[j]
            f3 = _delayed_rhs(w, lam, d, y, hz)
            _hv_rhs(A, d, y, tmp, dh3)
            for j in range(n):
                hz[j] = hmat[i - mtau + 1, j]
            y = fb + h * f3
            for j in range(n):
                tmp[j] = hv[j] + h * dh3[j]
            f4 = _delayed_rhs(w, lam, d, y, hz)
            _hv_rhs(A, d, y, tmp, dh4)
        fb_new = fb + h / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        for j in range(n):
            hmat[i + 1, j] = hv[j] + h / 6.0 * (dh1[j] + 2.0 * dh2[j] + 2.0 * dh3[j] + dh4[j])
        if fb_new < 0.0:
            # a tail value can cross zero within one step when the true
            # solution decays faster than the grid resolves; that is the
            # discrete tail bottoming out, not a step-size failure
            if fb <= 1e-6:
                i += 1
                out[i] = 0.0
                return i, _STATUS_TAIL
            if fb_new < -1e-12:
                return i, _STATUS_NEGATIVE
            fb_new = 0.0
        if fb_new > fb + 1e-9:
            return i, _STATUS_NONMONOTONE
        i += 1
        out[i] = fb_new
        if fb_new <= stop_eps:
            return i, _STATUS_TAIL
    return nsteps, _STATUS_OK


def _raise_status(status: int, i: int, h: float):
    if status == _STATUS_NONMONOTONE:
        raise ValueError(
            f"monotonicity violated beyond 1e-9 at s={i * h:.6g}: reduce h_step"
        )
    if status == _STATUS_NEGATIVE:
        raise ValueError(
            f"ccdf went below -1e-12 at s={i * h:.6g}: reduce h_step"
        )


def _integrate(kernel_step, h, rho, smax, smax_default, stop_eps):
    """Shared driver: allocate, run, truncate; extend while the tail is fat."""
    auto = smax is None
    target = smax_default if auto else smax
    while True:
        nsteps = int(round(target / h))
        out = np.empty(nsteps + 1)
        out[0] = rho
        last, status = kernel_step(out, nsteps, stop_eps if auto else 0.0)
        _raise_status(status, last, h)
        if status == _STATUS_TAIL or not auto:
            return out[: last + 1]
        if target >= smax_default * 64:
            log.warning("tail above %.1e at s=%.3g; returning truncated curve", stop_eps, target)
            return out[: last + 1]
        target *= 2.0


def solve_ph(
    ph: PHRep,
    p: ModelParams,
    h_step: float = 1e-3,
    smax: float | None = None,
    stop_eps: float = 1e-11,
) -> CcdfCurve:
    """Stationary workload ccdf for phase-type jobs, any ``rho < 1``.

    Integrates from ``fbar(0) = rho``, ``h(0) = 0``.  With ``smax=None`` the
    integration runs until the ccdf falls below ``stop_eps`` (the domain is
    doubled as needed); an explicit ``smax`` is honoured exactly.
    """
    rho = p.lam * ph.mean()
    if rho >= 1.0:
        raise ValueError(f"rho = {rho:.6g} >= 1: system unstable")
    if abs(rho - p.rho) > 1e-9 * max(1.0, rho):
        raise ValueError(f"params carry rho={p.rho} but lam * PH mean = {rho}")
    A = np.ascontiguousarray(ph.A)
    w = np.ascontiguousarray(ph.alpha @ ph.A)
    lam, d = p.lam, p.d

    def step(out, nsteps, eps):
        hv = np.zeros(A.shape[0])
        return _kernel_ph(A, w, lam, d, h_step, out, hv, 0, nsteps, eps)

    values = _integrate(step, h_step, rho, smax, 64.0 * ph.mean(), stop_eps)
    return CcdfCurve(h=h_step, values=values)


def solve_det_plus_ph(
    tau: float,
    ph: PHRep,
    p: ModelParams,
    h_step: float = 1e-3,
    smax: float | None = None,
    stop_eps: float = 1e-11,
) -> CcdfCurve:
    """Stationary workload ccdf for deterministic-plus-phase-type jobs.

    ``rho = lam (tau + PH mean)`` and the boundary value is ``fbar(0) = rho``.
    The offset is rounded to a whole number of grid steps; a nonzero
    rounding error is logged.  ``tau = 0`` falls back to :func:`solve_ph`.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    mtau = int(round(tau / h_step))
    rounding = abs(mtau * h_step - tau)
    if rounding > 1e-12 * max(1.0, tau):
        log.info("offset %.6g rounded to %d grid steps (error %.3g)", tau, mtau, rounding)
    if mtau == 0:
        return solve_ph(ph, p, h_step=h_step, smax=smax, stop_eps=stop_eps)
    rho_exact = p.lam * (tau + ph.mean())
    if abs(rho_exact - p.rho) > 1e-9 * max(1.0, rho_exact):
        raise ValueError(f"params carry rho={p.rho} but lam * (tau + PH mean) = {rho_exact}")
    # boundary value consistent with the grid-rounded offset
    rho = p.lam * (mtau * h_step + ph.mean())
    if rho >= 1.0:
        raise ValueError(f"rho = {rho:.6g} >= 1: system unstable")
    A = np.ascontiguousarray(ph.A)
    w = np.ascontiguousarray(ph.alpha @ ph.A)
    lam, d = p.lam, p.d
    mean_g = tau + ph.mean()

    def step(out, nsteps, eps):
        hmat = np.zeros((nsteps + 1, A.shape[0]))
        return _kernel_det_ph(A, w, lam, d, h_step, mtau, out, hmat, 0, nsteps, eps)

    values = _integrate(step, h_step, rho, smax, 64.0 * mean_g, stop_eps)
    return CcdfCurve(h=h_step, values=values)


def solve_det(
    p: ModelParams,
    h_step: float = 1e-3,
    smax: float | None = None,
    stop_eps: float = 1e-11,
) -> CcdfCurve:
    """Stationary workload ccdf for deterministic unit jobs (``fbar(0) = lam``).

    The delay equation kicks in at ``s = 1``; the delay is rounded to a
    whole number of grid steps.
    """
    if abs(p.rho - p.lam) > 1e-12 * max(1.0, p.lam):
        raise ValueError("unit deterministic jobs have rho == lam")
    m = int(round(1.0 / h_step))
    rounding = abs(m * h_step - 1.0)
    if rounding > 1e-12:
        log.info("unit delay rounded to %d grid steps (error %.3g)", m, rounding)
    if m < 1:
        raise ValueError("h_step must not exceed the job size")
    lam, d = p.lam, p.d

    def step(out, nsteps, eps):
        return _kernel_det(lam, d, h_step, m, out, 0, nsteps, eps)

    values = _integrate(step, h_step, p.lam, smax, 64.0, stop_eps)
    return CcdfCurve(h=h_step, values=values)


def mean_from_curve(curve: CcdfCurve) -> float:
    """Trapezoidal integral of the ccdf (the mean of the distribution)."""
    return float(np.trapezoid(curve.values, dx=curve.h))


def mean_tail_estimate(curve: CcdfCurve) -> float:
    """Crude error estimate for :func:`mean_from_curve`: tail value times smax."""
    return float(curve.values[-1] * curve.smax)


def mean_response_from_workload(curve: CcdfCurve, law: JobSizeLaw, d: int) -> float:
    """Mean FCFS response: expected wait ``int fbar^d`` plus the mean job size."""
    wait = float(np.trapezoid(curve.values**d, dx=curve.h))
    return wait + law.mean()
