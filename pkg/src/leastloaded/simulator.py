"""Finite-N discrete-event simulation of LL(d) and SQ(d) clusters.

Jobs arrive as a Poisson stream of rate ``lambda * N``; each samples d
server indices uniformly with replacement and joins the one with the least
workload (LL) or the fewest jobs (SQ), ties among distinct servers broken
by a dedicated uniform draw.  Servers are FCFS and work-conserving, so a
job's response time is the chosen server's workload at arrival plus its
own size; server state reduces to the time at which it drains empty.
Under LL an optional deterministic overhead is added to every job size.

The replication protocol simulates up to ``10^7 / N`` time units, discards
jobs arriving in the first 30% and reports Student-t confidence intervals
across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import stats as sstats

from .curves import CcdfCurve
from .jobsize import JobSizeLaw

__all__ = [
    "SimConfig",
    "RunResult",
    "SimSummary",
    "run_once",
    "run_replicated",
    "empirical_response_ccdf",
    "select_min_candidate",
]

_CHUNK = 1 << 20
_SQ_RING_CAP = 256


@dataclass(frozen=True)
class SimConfig:
    """Cluster, policy and measurement parameters for one experiment."""

    N: int
    lam: float
    d: int
    policy: str  # "LL" | "SQ"
    law: JobSizeLaw
    overhead_tau: float = 0.0
    horizon: float | None = None  # default 1e7 / N
    warmup_frac: float = 0.30
    runs: int = 10
    seed: int = 0
    ccdf_h: float | None = None  # default 0.01 * E[G]
    ccdf_smax: float | None = None  # default 40 * E[G]

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.policy not in ("LL", "SQ"):
            raise ValueError("policy must be 'LL' or 'SQ'")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must lie in [0, 1)")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.overhead_tau < 0:
            raise ValueError("overhead_tau must be nonnegative")

    @property
    def horizon_(self) -> float:
        return 1e7 / self.N if self.horizon is None else self.horizon

    @property
    def grid_h(self) -> float:
        return 0.01 * self.law.mean() if self.ccdf_h is None else self.ccdf_h

    @property
    def grid_n(self) -> int:
        smax = 40.0 * self.law.mean() if self.ccdf_smax is None else self.ccdf_smax
        return int(round(smax / self.grid_h)) + 1


@dataclass
class RunResult:
    """Statistics of a single replication."""

    run_index: int
    mean_response: float
    jobs_counted: int
    jobs_admitted: int
    jobs_excluded: int
    exceed_counts: np.ndarray  # exceed_counts[L] = #responses with L grid points below them


@dataclass
class SimSummary:
    """Replication aggregate: mean, 95% CI across runs, pooled empirical ccdf."""

    mean_response: float
    ci_halfwidth: float
    empirical_ccdf: CcdfCurve | None
    jobs_counted: int
    per_run_means: list[float]
    runs: int
    seed: int


@njit(cache=True)
def select_min_candidate(values, candidates, tie_u):
    """Index (into ``candidates``) of the minimum, multiset semantics.

    Duplicate server draws stay duplicates for the minimum; ties among
    distinct servers are broken uniformly with the dedicated draw
    ``tie_u`` in [0, 1).
    """
    d = values.shape[0]
    minv = values[0]
    for k in range(1, d):
        if values[k] < minv:
            minv = values[k]
    tied = np.empty(d, dtype=np.int64)
    ntied = 0
    for k in range(d):
        if values[k] == minv:
            sid = candidates[k]
            dup = False
            for j in range(ntied):
                if candidates[tied[j]] == sid:
                    dup = True
                    break
            if not dup:
                tied[ntied] = k
                ntied += 1
    return tied[int(tie_u * ntied)]


@njit(cache=True)
def _ll_chunk(clear_t, t, horizon, warm_t, tau, interarr, choice_u, sizes, tie_u,
              grid_h, nbins, exceed, stats):
    # stats: [sum_resp, counted, admitted, excluded]
    N = clear_t.shape[0]
    n = interarr.shape[0]
    d = choice_u.shape[1]
    vals = np.empty(d)
    cand = np.empty(d, dtype=np.int64)
    for a in range(n):
        t += interarr[a]
        if t > horizon:
            return t, True
        for k in range(d):
            sid = int(choice_u[a, k] * N)
            if sid >= N:
                sid = N - 1
            cand[k] = sid
            w = clear_t[sid] - t
            vals[k] = w if w > 0.0 else 0.0
        kk = select_min_candidate(vals, cand, tie_u[a])
        m = cand[kk]
        wait = vals[kk]
        size_eff = sizes[a] + tau
        resp = wait + size_eff
        clear_t[m] = t + resp
        stats[2] += 1.0
        if t >= warm_t:
            stats[0] += resp
            stats[1] += 1.0
            x = resp / grid_h
            L = int(math.ceil(x))
            if L > nbins:
                L = nbins
            exceed[L] += 1
        else:
            stats[3] += 1.0
    return t, False


@njit(cache=True)
def _sq_chunk(clear_t, ring, head, qlen, t, horizon, warm_t, interarr, choice_u, sizes, tie_u,
              grid_h, nbins, exceed, stats):
    N = clear_t.shape[0]
    n = interarr.shape[0]
    d = choice_u.shape[1]
    cap = ring.shape[1]
    vals = np.empty(d)
    cand = np.empty(d, dtype=np.int64)
    for a in range(n):
        t += interarr[a]
        if t > horizon:
            return t, True, False
        for k in range(d):
            sid = int(choice_u[a, k] * N)
            if sid >= N:
                sid = N - 1
            cand[k] = sid
            # retire finished jobs before reading the queue length
            while qlen[sid] > 0 and ring[sid, head[sid]] <= t:
                head[sid] = (head[sid] + 1) % cap
                qlen[sid] -= 1
            vals[k] = float(qlen[sid])
        kk = select_min_candidate(vals, cand, tie_u[a])
        m = cand[kk]
        wait = clear_t[m] - t
        if wait < 0.0:
            wait = 0.0
        resp = wait + sizes[a]
        dep = t + resp
        clear_t[m] = dep
        if qlen[m] >= cap:
            return t, False, True
        ring[m, (head[m] + qlen[m]) % cap] = dep
        qlen[m] += 1
        stats[2] += 1.0
        if t >= warm_t:
            stats[0] += resp
            stats[1] += 1.0
            x = resp / grid_h
            L = int(math.ceil(x))
            if L > nbins:
                L = nbins
            exceed[L] += 1
        else:
            stats[3] += 1.0
    return t, False, False


def run_once(cfg: SimConfig, run_index: int = 0) -> RunResult:
    """One replication with the stream derived from (seed, run_index)."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(run_index,)))
    N, d = cfg.N, cfg.d
    horizon = cfg.horizon_
    warm_t = cfg.warmup_frac * horizon
    arr_scale = math.inf if cfg.lam == 0 else 1.0 / (cfg.lam * N)
    grid_h = cfg.grid_h
    nbins = cfg.grid_n

    clear_t = np.zeros(N)
    exceed = np.zeros(nbins + 1, dtype=np.int64)
    stats = np.zeros(4)
    if cfg.policy == "SQ":
        ring = np.zeros((N, _SQ_RING_CAP))
        head = np.zeros(N, dtype=np.int64)
        qlen = np.zeros(N, dtype=np.int64)

    t = 0.0
    done = False
    while not done:
        interarr = rng.exponential(arr_scale, _CHUNK)
        choice_u = rng.random((_CHUNK, d))
        sizes = cfg.law.sample_array(rng, _CHUNK)
        tie_u = rng.random(_CHUNK)
        if cfg.policy == "LL":
            t, done = _ll_chunk(clear_t, t, horizon, warm_t, cfg.overhead_tau,
                                interarr, choice_u, sizes, tie_u, grid_h, nbins, exceed, stats)
        else:
            t, done, overflow = _sq_chunk(clear_t, ring, head, qlen, t, horizon, warm_t,
                                          interarr, choice_u, sizes, tie_u, grid_h, nbins,
                                          exceed, stats)
            if overflow:
                raise RuntimeError(f"a queue exceeded {_SQ_RING_CAP} jobs; the system looks unstable")

    counted = int(stats[1])
    mean = stats[0] / counted if counted else math.nan
    return RunResult(
        run_index=run_index,
        mean_response=mean,
        jobs_counted=counted,
        jobs_admitted=int(stats[2]),
        jobs_excluded=int(stats[3]),
        exceed_counts=exceed,
    )


def run_replicated(cfg: SimConfig) -> SimSummary:
    """Independent replications; pooled ccdf and Student-t 95% CI across runs."""
    results = [run_once(cfg, i) for i in range(cfg.runs)]
    per_run = [r.mean_response for r in results]
    counted = sum(r.jobs_counted for r in results)
    if counted:
        pooled = np.zeros_like(results[0].exceed_counts)
        for r in results:
            pooled += r.exceed_counts
        # responses with more than i grid points below them exceed grid point i
        above = np.cumsum(pooled[::-1])[::-1]
        values = above[1:] / counted
        curve = CcdfCurve(h=cfg.grid_h, values=values)
        mean = float(np.nansum([r.mean_response * r.jobs_counted for r in results]) / counted)
    else:
        curve = None
        mean = math.nan
    finite = [m for m in per_run if not math.isnan(m)]
    if len(finite) >= 2:
        sd = float(np.std(finite, ddof=1))
        tfac = float(sstats.t.ppf(0.975, len(finite) - 1))
        ci = tfac * sd / math.sqrt(len(finite))
    else:
        ci = math.nan
    return SimSummary(
        mean_response=mean,
        ci_halfwidth=ci,
        empirical_ccdf=curve,
        jobs_counted=counted,
        per_run_means=per_run,
        runs=cfg.runs,
        seed=cfg.seed,
    )


def empirical_response_ccdf(samples, grid) -> CcdfCurve:
    """Fraction of samples strictly above each grid point."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("no samples")
    grid = np.asarray(grid, dtype=float)
    steps = np.diff(grid)
    if steps.size == 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise ValueError("grid must be uniform with at least two points")
    ordered = np.sort(samples)
    n_le = np.searchsorted(ordered, grid, side="right")
    values = 1.0 - n_le / samples.size
    return CcdfCurve(h=float(steps[0]), values=values)
