"""Closed forms for exponential job sizes (mean 1) under LL(d) and SQ(d).

Workload/response ccdfs and means for the least-loaded-of-d policy, the
shortest-queue-of-d series, the gap and limiting-ratio results comparing
the two, and the replication-with-cancellation-on-completion mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelParams",
    "ll_workload_ccdf_exp",
    "ll_workload_pdf_exp",
    "ll_response_ccdf_exp",
    "ll_response_pdf_exp",
    "ll_mean_workload",
    "ll_mean_workload_closed",
    "mean_workload_tail_bound",
    "ll_mean_response",
    "sq_mean_response_exp",
    "sq_response_ccdf_exp",
    "ratio_limit",
    "ll_sq_gap_series",
    "rr_mean_response",
]


@dataclass(frozen=True)
class ModelParams:
    """Arrival rate per server, number of sampled servers, and load.

    ``rho = lam * E[G]``; for unit-mean job sizes it defaults to ``lam``.
    """

    lam: float
    d: int
    rho: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.rho is None:
            object.__setattr__(self, "rho", self.lam)
        if int(self.d) != self.d or self.d < 2:
            raise ValueError("d must be an integer >= 2")
        object.__setattr__(self, "d", int(self.d))
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"need 0 < rho < 1, got rho={self.rho}")
        if self.lam <= 0:
            raise ValueError("lam must be positive")

    @classmethod
    def for_law(cls, lam: float, d: int, law) -> "ModelParams":
        return cls(lam=lam, d=d, rho=lam * law.mean())


def _require_exp_unit_mean(p: ModelParams):
    if abs(p.rho - p.lam) > 1e-12 * max(1.0, p.lam):
        raise ValueError("closed forms assume exponential jobs with mean 1 (rho == lam)")


def ll_workload_ccdf_exp(p: ModelParams, s):
    """Stationary workload ccdf ``(lam + (lam^(1-d) - lam) e^((d-1)s))^(1/(1-d))``.

    Valid for any non-idling discipline; equals ``lam`` at ``s = 0``.
    Evaluated in log space so large ``s`` underflows cleanly to 0.
    """
    _require_exp_unit_mean(p)
    lam, d = p.lam, p.d
    s = np.asarray(s, dtype=float)
    log_b = math.log(lam) + math.log(math.expm1(-d * math.log(lam)))  # b = lam^(1-d) - lam
    log_val = np.logaddexp(math.log(lam), log_b + (d - 1.0) * s) / (1.0 - d)
    out = np.exp(log_val)
    return out if out.ndim else float(out)


def ll_workload_pdf_exp(p: ModelParams, s):
    """Workload density ``fbar - lam*fbar^d``, the exact derivative of the ccdf."""
    fbar = np.asarray(ll_workload_ccdf_exp(p, s))
    out = fbar - p.lam * fbar**p.d
    return out if out.ndim else float(out)


def ll_response_ccdf_exp(p: ModelParams, s):
    """FCFS response-time ccdf ``(lam^d + (1-lam^d) e^((d-1)s))^(1/(1-d))``."""
    _require_exp_unit_mean(p)
    lam, d = p.lam, p.d
    s = np.asarray(s, dtype=float)
    log_val = np.logaddexp(d * math.log(lam), math.log1p(-lam**d) + (d - 1.0) * s) / (1.0 - d)
    out = np.exp(log_val)
    return out if out.ndim else float(out)


def ll_response_pdf_exp(p: ModelParams, s):
    fbar = np.asarray(ll_response_ccdf_exp(p, s))
    out = fbar - p.lam**p.d * fbar**p.d
    return out if out.ndim else float(out)


def _adaptive_nterms(lam: float, d: int, tail_target: float = 1e-14) -> int:
    # smallest n with lam^(d(n+1))/(1-lam^d) <= tail_target
    loglam = math.log(lam)
    c = 1.0 - lam**d
    n = int(math.ceil(math.log(tail_target * c) / (d * loglam))) if loglam < 0 else 0
    return max(n, 8)


def ll_mean_workload(p: ModelParams, nterms: int | None = None) -> float:
    """Mean workload: series ``sum_n lam^(dn+1)/(1+n(d-1))``.

    ``nterms=None`` picks the truncation so the geometric tail bound
    (:func:`mean_workload_tail_bound`) is below 1e-14.
    """
    _require_exp_unit_mean(p)
    lam, d = p.lam, p.d
    if nterms is None:
        nterms = _adaptive_nterms(lam, d)
    n = np.arange(nterms + 1)
    terms = np.exp((d * n + 1.0) * math.log(lam)) / (1.0 + n * (d - 1.0))
    return float(terms.sum())


def mean_workload_tail_bound(p: ModelParams, nterms: int) -> float:
    """Geometric bound ``lam^(d(nterms+1))/(1-lam^d)`` on the dropped tail."""
    lam, d = p.lam, p.d
    return math.exp(d * (nterms + 1) * math.log(lam)) / (1.0 - lam**d)


def ll_mean_workload_closed(lam: float, d: int) -> float:
    """Logarithmic closed forms, available for d = 2 and d = 3."""
    if d == 2:
        return -math.log1p(-(lam**2)) / lam
    if d == 3:
        return -math.log(math.sqrt(1.0 - lam**3) / (lam**1.5 + 1.0)) / math.sqrt(lam)
    raise ValueError("closed form available for d in {2, 3} only")


def ll_mean_response(p: ModelParams, nterms: int | None = None) -> float:
    """Mean FCFS response time: series ``sum_n lam^(dn)/(1+n(d-1))``.

    Term by term this is the mean-workload series divided by ``lam``
    (Little's law for the unit-rate server).
    """
    _require_exp_unit_mean(p)
    lam, d = p.lam, p.d
    if nterms is None:
        nterms = _adaptive_nterms(lam, d)
    n = np.arange(nterms + 1)
    terms = np.exp(d * n * math.log(lam)) / (1.0 + n * (d - 1.0))
    return float(terms.sum())


def sq_mean_response_exp(p: ModelParams, kmax: int = 80) -> float:
    """SQ(d) mean response ``(1/lam) sum_{k>=1} lam^((d^k-1)/(d-1))``.

    The doubly exponential exponent makes the series exact to machine
    precision long before ``kmax``; terms below 1e-300 end the loop.
    """
    _require_exp_unit_mean(p)
    lam, d = p.lam, p.d
    loglam = math.log(lam)
    acc = 0.0
    for k in range(1, kmax + 1):
        expo = (float(d) ** k - 1.0) / (d - 1.0)
        logterm = expo * loglam
        if logterm < -690.0:
            break
        acc += math.exp(logterm)
    return acc / lam


def sq_response_ccdf_exp(p: ModelParams, s, tail_tol: float = 1e-14):
    """SQ(d) FCFS response ccdf ``sum_n (s^n/n!) e^-s lam^((d^n-1)d/(d-1))``.

    A job joining a queue of length n has an Erlang-(n+1) response; the
    Poisson weights are accumulated until their remaining tail is below
    ``tail_tol``.
    """
    _require_exp_unit_mean(p)
    lam, d = p.lam, p.d
    loglam = math.log(lam)
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    w = np.exp(-s_arr)  # Poisson weight at n = 0
    cum = w.copy()
    out = np.zeros_like(s_arr)
    n = 0
    while True:
        expo = (float(d) ** n - 1.0) * d / (d - 1.0)
        logf = expo * loglam
        factor = math.exp(logf) if logf > -745.0 else 0.0
        out += w * factor
        # the lam-power factor is <= 1 and decreasing, so the neglected tail
        # is bounded by the remaining Poisson mass (or vanishes with factor)
        if factor == 0.0 or np.all(1.0 - cum < tail_tol):
            break
        n += 1
        if n > 100000:
            raise RuntimeError("series did not terminate")
        w = w * s_arr / n
        cum += w
    out = np.clip(out, 0.0, 1.0)
    return out if np.ndim(s) else float(out[0])


def ratio_limit(d: int) -> float:
    """High-load limit ``(d-1)/log(d)`` of the SQ(d)/LL(d) mean-response ratio."""
    if int(d) != d or d < 2:
        raise ValueError("d must be an integer >= 2")
    return (d - 1.0) / math.log(d)


def ll_sq_gap_series(p: ModelParams, kmax: int = 40) -> float:
    """Mean-response gap ``T_sq - T_ll`` as ``(1/lam) sum_k A_k``.

    Each ``A_k`` regroups ``d^k`` consecutive terms of the LL series against
    one SQ term and is strictly positive for ``lam`` in (0,1).
    """
    _require_exp_unit_mean(p)
    lam, d = p.lam, p.d
    loglam = math.log(lam)
    total = 0.0
    for k in range(1, kmax + 1):
        lead_expo = (float(d) ** (k + 1) - 1.0) / (d - 1.0)
        log_lead = lead_expo * loglam
        offset = (float(d) ** (k + 1) - d * d) / (d - 1.0)
        shift = float(d) ** k - d
        a_k = math.exp(log_lead) if log_lead > -745.0 else 0.0
        if a_k == 0.0 and offset * loglam < -745.0:
            break
        inner = 0.0
        nmax = int(round(float(d) ** k))
        for n in range(1, nmax + 1):
            logterm = (n * d + 1.0 + offset) * loglam
            if logterm < -745.0:
                break
            inner += math.exp(logterm) / (1.0 + n * (d - 1.0) + shift)
        total += a_k - inner
    return total / lam


def rr_mean_response(rho: float, d: int, mu: float = 1.0, nterms: int | None = None) -> float:
    """Mean response of d-fold replication with cancellation on completion.

    Series ``(1/mu) sum_n rho^n/(n(d-1)+d)``; tends to ``1/(d mu)`` as the
    load vanishes.
    """
    if int(d) != d or d < 2:
        raise ValueError("d must be an integer >= 2")
    if not 0.0 <= rho < 1.0:
        raise ValueError("need 0 <= rho < 1")
    if mu <= 0:
        raise ValueError("mu must be positive")
    if rho == 0.0:
        return 1.0 / (d * mu)
    if nterms is None:
        nterms = max(16, int(math.ceil(math.log(1e-16 * (1 - rho)) / math.log(rho))))
    n = np.arange(nterms + 1)
    terms = rho**n / (n * (d - 1.0) + d)
    return float(terms.sum()) / mu
