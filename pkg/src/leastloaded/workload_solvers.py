"""General-distribution workload machinery for the least-loaded-of-d policy.

Contains the workload map on ccdf curves (one application of the stationary
integral equation), the fixed-point solver with Kolmogorov-metric
contraction diagnostics, the response-time convolution, the transient
explicit scheme started from an empty system, and a level-crossing
residual check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import fft as sfft

from .analytic_exp import ModelParams
from .curves import CcdfCurve, kolmogorov_distance
from .jobsize import Deterministic, DetPlusPH, Exponential, HyperExp2, JobSizeLaw, PhaseType

__all__ = [
    "CcdfCurve",
    "kolmogorov_distance",
    "FixedPointReport",
    "selection_density_terms",
    "apply_Td",
    "solve_stationary",
    "response_ccdf",
    "level_crossing_residual",
    "TransientState",
    "TransientResult",
    "empty_transient_state",
    "transient_step",
    "evolve_transient",
]

TAIL_EPS = 1e-10
SMAX_CAP_FACTOR = 200.0


@dataclass
class FixedPointReport:
    """Convergence record of the stationary fixed-point iteration."""

    iterations: int
    final_dk: float
    contraction_estimates: list[float]
    converged: bool
    contraction_modulus: float  # d * rho^d
    unproven_regime: bool  # no contraction guarantee when the modulus >= 1
    a_posteriori_bound: float | None
    grid_h: float
    smax: float
    tolerance: float = field(default=math.inf)

    def __post_init__(self):
        if self.converged and self.final_dk > self.tolerance:
            raise ValueError("converged report with final_dk above tolerance")


def _density_from_ccdf(curve: CcdfCurve) -> np.ndarray:
    """Workload density by central differences of the cdf (one-sided at ends)."""
    fbar, h = curve.values, curve.h
    f = np.empty_like(fbar)
    f[1:-1] = (fbar[:-2] - fbar[2:]) / (2.0 * h)
    f[0] = (fbar[0] - fbar[1]) / h
    f[-1] = (fbar[-2] - fbar[-1]) / h
    return f


def selection_density_terms(curve: CcdfCurve, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Grids of the join density ``f * fbar^(d-1)`` and its integral form.

    The second output is ``(1 - fbar^d)/d``: the probability that a potential
    arrival joins the tagged queue while its workload is at most the grid
    point, which is nondecreasing and tends to ``1/d``.
    """
    if int(d) != d or d < 2:
        raise ValueError("d must be an integer >= 2")
    fbar = curve.values
    f = _density_from_ccdf(curve)
    c_d = f * fbar ** (d - 1)
    cap_d = (1.0 - fbar**d) / d
    return c_d, cap_d


def _trapezoid_convolve(w: np.ndarray, kern: np.ndarray, h: float) -> np.ndarray:
    """Trapezoidal ``int_0^{s_i} w(u) kern(s_i - u) du`` for every grid point."""
    n = w.shape[0]
    m = sfft.next_fast_len(2 * n - 1)
    conv = sfft.irfft(sfft.rfft(w, m) * sfft.rfft(kern, m), m)[:n]
    conv -= 0.5 * (w[0] * kern + w * kern[0])
    conv[0] = 0.0
    return conv * h


def apply_Td(curve: CcdfCurve, law: JobSizeLaw, p: ModelParams, gbar: np.ndarray | None = None) -> CcdfCurve:
    """One application of the stationary workload map to a ccdf curve.

    Returns the curve of ``1 - [(1-rho) + lam * int_0^s (1 - fbar(u)^d)
    (1 - G(s-u)) du]`` on the input grid.  The output is again a valid ccdf
    with value ``rho`` at zero.  ``gbar`` may carry a precomputed job-size
    ccdf on the same grid; a wrong length is rejected.
    """
    fbar = curve.values
    if gbar is None:
        gbar = law.ccdf_grid(curve.h, curve.n)
    elif len(gbar) != curve.n:
        raise ValueError(f"grid mismatch: kernel has {len(gbar)} points, curve {curve.n}")
    w = 1.0 - fbar**p.d
    conv = _trapezoid_convolve(w, gbar, curve.h)
    out = 1.0 - ((1.0 - p.rho) + p.lam * conv)
    # quadrature round-off can leave values a hair outside [0, 1]
    np.clip(out, 0.0, 1.0, out=out)
    np.minimum.accumulate(out, out=out)
    return CcdfCurve(h=curve.h, values=out)


def _check_rho(law: JobSizeLaw, p: ModelParams):
    rho = p.lam * law.mean()
    if rho >= 1.0:
        raise ValueError(f"rho = lam * E[G] = {rho:.6g} >= 1: system unstable")
    if abs(rho - p.rho) > 1e-9 * max(1.0, rho):
        raise ValueError(f"params carry rho={p.rho} but lam*E[G]={rho}")


def solve_stationary(
    law: JobSizeLaw,
    p: ModelParams,
    h: float | None = None,
    tol: float = 1e-8,
    max_iter: int = 500,
    smax: float | None = None,
    tail_eps: float = TAIL_EPS,
) -> tuple[CcdfCurve, FixedPointReport]:
    """Stationary workload ccdf by fixed-point iteration from the empty start.

    Iterates the workload map from ``fbar_0 = (rho, 0, 0, ...)`` until the
    Kolmogorov distance of successive iterates drops below ``tol``.  The grid
    step defaults to ``1e-3 * E[G]``; the truncation point extends (doubling)
    until the tail falls below ``tail_eps``, capped at ``200 * E[G]``.  When
    ``d * rho^d < 1`` the report carries the a-posteriori error bound
    ``dk * c / (1 - c)``; otherwise the iteration runs without a guarantee
    and the report flags the unproven regime.

    Hitting ``max_iter`` returns a non-converged report rather than raising.
    """
    _check_rho(law, p)
    mean_g = law.mean()
    if h is None:
        h = 1e-3 * mean_g
    cap = SMAX_CAP_FACTOR * mean_g
    auto_smax = smax is None
    if auto_smax:
        smax = min(40.0 * mean_g, cap)
    n = int(round(smax / h)) + 1

    values = np.zeros(n)
    values[0] = p.rho
    cur = CcdfCurve(h=h, values=values)
    gbar = law.ccdf_grid(h, n)

    c_mod = p.d * p.rho**p.d
    dks: list[float] = []
    ratios: list[float] = []
    iterations = 0
    converged = False
    while iterations < max_iter:
        nxt = apply_Td(cur, law, p, gbar=gbar)
        dk = kolmogorov_distance(nxt, cur)
        if dks and dks[-1] > 0:
            ratios.append(dk / dks[-1])
        dks.append(dk)
        cur = nxt
        iterations += 1
        if dk < tol:
            if auto_smax and cur.values[-1] > tail_eps and smax < cap:
                smax = min(2.0 * smax, cap)
                n = int(round(smax / h)) + 1
                padded = np.zeros(n)
                padded[: cur.n] = cur.values
                cur = CcdfCurve(h=h, values=padded)
                gbar = law.ccdf_grid(h, n)
                continue
            converged = True
            break

    final_dk = dks[-1] if dks else math.inf
    bound = final_dk * c_mod / (1.0 - c_mod) if c_mod < 1.0 else None
    report = FixedPointReport(
        iterations=iterations,
        final_dk=final_dk,
        contraction_estimates=ratios,
        converged=converged,
        contraction_modulus=c_mod,
        unproven_regime=c_mod >= 1.0,
        a_posteriori_bound=bound,
        grid_h=h,
        smax=smax,
        tolerance=tol,
    )
    return cur, report


def response_ccdf(workload: CcdfCurve, law: JobSizeLaw, d: int) -> CcdfCurve:
    """FCFS response-time ccdf from the stationary workload curve.

    The waiting time of an arriving job has ccdf ``fbar(s)^d`` (the minimum
    of d sampled workloads) and is independent of the job size, so
    ``fbar_R(s) = Gbar(s) + int_0^s fbar(s-u)^d g(u) du``.  Laws with a
    deterministic component are handled by shifting instead of convolving
    against an atom.
    """
    if int(d) != d or d < 1:
        raise ValueError("d must be a positive integer")
    h, n = workload.h, workload.n
    wait = workload.values**d

    if isinstance(law, Deterministic):
        m = int(round(law.c / h))
        if abs(m * h - law.c) > 1e-9 * max(1.0, law.c):
            raise ValueError("deterministic size must sit on the curve grid")
        out = np.ones(n)
        out[m:] = wait[: n - m]
        return CcdfCurve(h=h, values=out)

    if isinstance(law, DetPlusPH):
        inner = response_ccdf(workload, PhaseType(law.ph), d)
        m = int(round(law.tau / h))
        if abs(m * h - law.tau) > 1e-9 * max(1.0, law.tau):
            raise ValueError("deterministic offset must sit on the curve grid")
        out = np.ones(n)
        out[m:] = inner.values[: n - m]
        return CcdfCurve(h=h, values=out)

    gbar = law.ccdf_grid(h, n)
    g = law.pdf_grid(h, n)
    out = gbar + _trapezoid_convolve(wait, g, h)
    np.clip(out, 0.0, 1.0, out=out)
    np.minimum.accumulate(out, out=out)
    return CcdfCurve(h=h, values=out)


def level_crossing_residual(workload: CcdfCurve, law: JobSizeLaw, p: ModelParams) -> float:
    """Max deviation between the density and the up-crossing rate.

    For the stationary curve the density equals
    ``lam*d*(C(0)*Gbar(s) + int_0^s c(u) Gbar(s-u) du)`` where ``C``/``c``
    are the join terms; on a converged curve the residual is of the order
    of the grid step.  The identity only holds almost everywhere: where the
    job-size law has an atom the workload density jumps, so cells straddling
    an atom location are skipped.
    """
    h, n = workload.h, workload.n
    f = _density_from_ccdf(workload)
    c_d, cap_d = selection_density_terms(workload, p.d)
    gbar = law.ccdf_grid(h, n)
    rhs = p.lam * p.d * (cap_d[0] * gbar + _trapezoid_convolve(c_d, gbar, h))
    res = np.abs(f - rhs)
    s = workload.s_grid
    for a in law.ccdf_jumps():
        res[np.abs(s - a) <= 2.0 * h] = 0.0
    return float(res.max())


# --- transient scheme ----------------------------------------------------


@njit(cache=True)
def _transient_loop_expmix(f, h, lam, d, wts, mus, alphas, g, nsteps, snap_steps, snaps):
    """Time loop with the convolution as exact recursive exponential filters.

    ``alphas[k] = exp(-mus[k] * h)``; the recursion reproduces the global
    trapezoidal convolution of the join density with the mixture pdf.
    """
    n = f.shape[0]
    ncomp = wts.shape[0]
    newf = np.empty(n)
    fbar = np.empty(n)
    c_d = np.empty(n)
    comp = np.empty(ncomp)
    ptr = 0
    for step in range(1, nsteps + 1):
        # trapezoidal suffix sums give the ccdf, then the join density
        acc = 0.0
        flast = f[n - 1]
        for i in range(n - 1, -1, -1):
            acc += f[i]
            fb = h * (acc - 0.5 * f[i] - 0.5 * flast)
            if fb < 0.0:
                fb = 0.0
            fbar[i] = fb
            c_d[i] = f[i] * fb ** (d - 1)
        cap0 = (1.0 - fbar[0] ** d) / d
        scale = lam * d * h
        for k in range(ncomp):
            comp[k] = 0.0
        prev_c = c_d[0]
        newf[0] = lam * d * cap0
        for i in range(1, n):
            conv = 0.0
            for k in range(ncomp):
                k0 = wts[k] * mus[k]
                comp[k] = alphas[k] * comp[k] + 0.5 * h * k0 * (c_d[i] + alphas[k] * prev_c)
                conv += comp[k]
            prev_c = c_d[i]
            shifted = f[i + 1] if i + 1 < n else 0.0
            newf[i] = shifted + scale * (conv + cap0 * g[i] - c_d[i])
        for i in range(n):
            f[i] = newf[i]
        if ptr < snap_steps.shape[0] and step == snap_steps[ptr]:
            for i in range(n):
                snaps[ptr, i] = f[i]
            ptr += 1
    return f


@dataclass
class TransientState:
    """State of the transient scheme: density on the grid at one time point.

    ``f[0]`` holds the boundary density just above zero.  The idle mass is
    implied by conservation: the update transports whole cells, so
    ``mass_at_zero + h * sum(f)`` is exactly one at all times.
    """

    t: float
    f: np.ndarray
    h: float

    @property
    def mass_at_zero(self) -> float:
        return 1.0 - self.h * float(self.f.sum())

    def ccdf_values(self) -> np.ndarray:
        # trapezoidal suffix sums of the density
        f, h = self.f, self.h
        suffix = np.cumsum(f[::-1])[::-1]
        return h * (suffix - 0.5 * f - 0.5 * f[-1])

    def ccdf_curve(self) -> CcdfCurve:
        vals = np.clip(self.ccdf_values(), 0.0, 1.0)
        return CcdfCurve(h=self.h, values=np.minimum.accumulate(vals))


@dataclass
class TransientResult:
    snapshots: list[tuple[float, CcdfCurve]]
    final: TransientState
    max_mass_defect: float


def empty_transient_state(h: float, smax: float) -> TransientState:
    """All servers idle: zero density, unit atom at zero."""
    n = int(round(smax / h)) + 1
    return TransientState(t=0.0, f=np.zeros(n), h=h)


def _transient_step_arrays(f, h, lam, d, g, g_hat, fft_len):
    suffix = np.cumsum(f[::-1])[::-1]
    fbar = h * (suffix - 0.5 * f - 0.5 * f[-1])
    fbar0 = fbar[0]
    cap0 = (1.0 - fbar0**d) / d
    c_d = f * np.maximum(fbar, 0.0) ** (d - 1)
    n = f.shape[0]
    conv = sfft.irfft(sfft.rfft(c_d, fft_len) * g_hat, fft_len)[:n]
    conv -= 0.5 * (c_d[0] * g + c_d * g[0])
    conv *= h
    newf = np.empty_like(f)
    newf[0] = lam * d * cap0
    newf[1:-1] = f[2:] + lam * d * h * (conv[1:-1] + cap0 * g[1:-1] - c_d[1:-1])
    newf[-1] = lam * d * h * (conv[-1] + cap0 * g[-1] - c_d[-1])
    return newf


def transient_step(state: TransientState, law: JobSizeLaw, p: ModelParams, dt: float) -> TransientState:
    """One explicit step of the transient scheme.

    The step couples the time step to the grid (``dt == h``): the density
    shifts left by exactly one cell while the arrival terms are added with
    weight ``lam * d * dt``, and the new boundary cell receives the
    join-an-idle-queue rate.
    """
    if abs(dt - state.h) > 1e-12 * state.h:
        raise ValueError("the scheme requires dt == h (time step tied to the grid)")
    n = state.f.shape[0]
    g = law.pdf_grid(state.h, n)
    fft_len = sfft.next_fast_len(2 * n - 1)
    g_hat = sfft.rfft(g, fft_len)
    newf = _transient_step_arrays(state.f, state.h, p.lam, p.d, g, g_hat, fft_len)
    return TransientState(t=state.t + dt, f=newf, h=state.h)


def evolve_transient(
    law: JobSizeLaw,
    p: ModelParams,
    dt: float,
    t_end: float,
    smax: float | None = None,
    record_at: tuple[float, ...] = (),
) -> TransientResult:
    """Run the transient scheme from the empty system up to ``t_end``.

    Snapshots of the workload ccdf are recorded at the requested times (and
    always at ``t_end``).  The grid step equals ``dt``.
    """
    _check_rho(law, p)
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    if smax is None:
        smax = 40.0 * law.mean()
    state = empty_transient_state(dt, smax)
    n = state.f.shape[0]
    g = law.pdf_grid(dt, n)

    nsteps = int(round(t_end / dt))
    stamp_steps = sorted({int(round(t / dt)) for t in record_at} | {nsteps})
    snapshots: list[tuple[float, CcdfCurve]] = []
    if stamp_steps and stamp_steps[0] == 0:
        snapshots.append((0.0, state.ccdf_curve()))
        stamp_steps = stamp_steps[1:]

    mix = _exp_mixture(law)
    if mix is not None:
        wts, mus = mix
        snap_arr = np.array(stamp_steps, dtype=np.int64)
        snaps = np.empty((snap_arr.shape[0], n))
        f = state.f.copy()
        _transient_loop_expmix(
            f, dt, p.lam, p.d, wts, mus, np.exp(-mus * dt), g, nsteps, snap_arr, snaps
        )
        for row, k in enumerate(snap_arr):
            st = TransientState(t=k * dt, f=snaps[row], h=dt)
            snapshots.append((st.t, st.ccdf_curve()))
        state = TransientState(t=nsteps * dt, f=f, h=dt)
    else:
        fft_len = sfft.next_fast_len(2 * n - 1)
        g_hat = sfft.rfft(g, fft_len)
        stamp_set = set(stamp_steps)
        for k in range(1, nsteps + 1):
            newf = _transient_step_arrays(state.f, state.h, p.lam, p.d, g, g_hat, fft_len)
            state = TransientState(t=k * dt, f=newf, h=dt)
            if k in stamp_set:
                snapshots.append((state.t, state.ccdf_curve()))
    # the cell-transport update conserves mass identically; report the
    # float-level defect of the final state as a sanity figure
    max_defect = abs(state.mass_at_zero + dt * float(state.f.sum()) - 1.0)
    return TransientResult(snapshots=snapshots, final=state, max_mass_defect=max_defect)


def _exp_mixture(law: JobSizeLaw) -> tuple[np.ndarray, np.ndarray] | None:
    """(weights, rates) when the pdf is a plain mixture of exponentials."""
    if isinstance(law, Exponential):
        return np.array([1.0]), np.array([law.rate])
    if isinstance(law, HyperExp2):
        return np.array([law.p, 1.0 - law.p]), np.array([law.mu1, law.mu2])
    return None
