"""Job-size distributions and their phase-type representations.

Every law exposes ``cdf``/``pdf``/``ccdf``/``mean`` plus an exact sampler,
and can be built from a short textual spec such as ``exp(rate=1)`` or
``hexp(scv=20,f=0.5)`` (see :func:`parse_law`).  All laws have no mass at
zero and a finite positive mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

__all__ = [
    "PHRep",
    "JobSizeLaw",
    "Exponential",
    "HyperExp2",
    "ErlangK",
    "Deterministic",
    "PowerLaw",
    "PhaseType",
    "DetPlusPH",
    "HexpFitSpec",
    "fit_hyperexp",
    "as_ph",
    "parse_law",
    "NoPhaseTypeError",
]


class NoPhaseTypeError(ValueError):
    """Raised when a law has no finite phase-type representation."""


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PHRep:
    """Phase-type pair: stochastic initial vector ``alpha`` and subgenerator ``A``.

    ``-A`` must be invertible (absorption is certain), the diagonal of ``A``
    negative, off-diagonal entries nonnegative and row sums <= 0.  The ccdf
    is ``alpha @ expm(A*s) @ 1``.
    """

    alpha: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = alpha.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be {n}x{n} to match alpha, got {A.shape}")
        if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > 1e-12:
            raise ValueError("alpha must be a stochastic vector")
        if np.any(np.diag(A) >= 0):
            raise ValueError("diagonal of A must be strictly negative")
        off = A - np.diag(np.diag(A))
        if np.any(off < 0):
            raise ValueError("off-diagonal entries of A must be nonnegative")
        rowsums = A.sum(axis=1)
        if np.any(rowsums > 1e-12):
            raise ValueError("row sums of A must be <= 0")
        if np.all(np.abs(rowsums) <= 1e-12):
            raise ValueError("A must have at least one strictly negative row sum")
        object.__setattr__(self, "alpha", _freeze(alpha))
        object.__setattr__(self, "A", _freeze(A))
        # absorption must be certain; this also caches the mean
        minusA_inv_one = np.linalg.solve(-A, np.ones(n))
        object.__setattr__(self, "_minusA_inv_one", _freeze(minusA_inv_one))

    @property
    def order(self) -> int:
        return self.alpha.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        return -self.A @ np.ones(self.order)

    def mean(self) -> float:
        return float(self.alpha @ self._minusA_inv_one)

    def ccdf(self, s):
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty_like(s_arr)
        for i, si in enumerate(s_arr.ravel()):
            out.ravel()[i] = float(self.alpha @ expm(self.A * si) @ np.ones(self.order))
        out = np.clip(out, 0.0, 1.0)
        return out if np.ndim(s) else float(out[0])

    def pdf(self, s):
        a = self.exit_rates
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty_like(s_arr)
        for i, si in enumerate(s_arr.ravel()):
            out.ravel()[i] = float(self.alpha @ expm(self.A * si) @ a)
        return out if np.ndim(s) else float(out[0])

    def ccdf_grid(self, h: float, n: int) -> np.ndarray:
        """ccdf at ``0, h, ..., (n-1)h`` via the semigroup step ``expm(A*h)``."""
        E = expm(self.A * h)
        ones = np.ones(self.order)
        v = self.alpha.copy()
        out = np.empty(n)
        for i in range(n):
            out[i] = v @ ones
            v = v @ E
        return np.clip(out, 0.0, 1.0)

    def pdf_grid(self, h: float, n: int) -> np.ndarray:
        E = expm(self.A * h)
        a = self.exit_rates
        v = self.alpha.copy()
        out = np.empty(n)
        for i in range(n):
            out[i] = v @ a
            v = v @ E
        return np.maximum(out, 0.0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Absorption times of ``size`` independent phase walks."""
        n = self.order
        a = self.exit_rates
        rates = -np.diag(self.A)
        # jump kernel rows: phases 0..n-1 then absorption
        P = np.empty((n, n + 1))
        P[:, :n] = (self.A - np.diag(np.diag(self.A))) / rates[:, None]
        P[:, n] = a / rates
        cumP = np.cumsum(P, axis=1)
        alpha_cum = np.cumsum(self.alpha)
        state = np.searchsorted(alpha_cum, rng.random(size), side="right")
        state = np.minimum(state, n - 1)
        total = np.zeros(size)
        active = np.arange(size)
        while active.size:
            st = state[active]
            total[active] += rng.exponential(1.0, active.size) / rates[st]
            u = rng.random(active.size)
            nxt = np.empty(active.size, dtype=np.int64)
            for ph in range(n):
                mask = st == ph
                if np.any(mask):
                    nxt[mask] = np.searchsorted(cumP[ph], u[mask], side="right")
            state[active] = np.minimum(nxt, n)
            active = active[nxt < n]
        return total


class JobSizeLaw:
    """Base class: a positive job-size distribution with ``G(0) = 0``."""

    def ccdf(self, s):
        raise NotImplementedError

    def pdf(self, s):
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def cdf(self, s):
        c = self.ccdf(s)
        return 1.0 - c

    def ccdf_grid(self, h: float, n: int) -> np.ndarray:
        """ccdf on the uniform grid ``0, h, ..., (n-1)h``."""
        return np.asarray(self.ccdf(np.arange(n) * h), dtype=float)

    def pdf_grid(self, h: float, n: int) -> np.ndarray:
        return np.asarray(self.pdf(np.arange(n) * h), dtype=float)

    def ccdf_jumps(self) -> tuple[float, ...]:
        """Locations where the ccdf is discontinuous (atoms of the law)."""
        return ()

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw from the law; scalar when ``size`` is None."""
        out = self.sample_array(rng, 1 if size is None else size)
        return float(out[0]) if size is None else out

    def sample_array(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError


def _check_nonneg(s):
    if np.any(np.asarray(s) < 0):
        raise ValueError("job sizes live on s >= 0")


@dataclass(frozen=True)
class Exponential(JobSizeLaw):
    rate: float = 1.0

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")

    def ccdf(self, s):
        _check_nonneg(s)
        return np.exp(-self.rate * np.asarray(s, dtype=float)) if np.ndim(s) else math.exp(-self.rate * s)

    def pdf(self, s):
        _check_nonneg(s)
        return self.rate * np.exp(-self.rate * np.asarray(s, dtype=float))

    def mean(self) -> float:
        return 1.0 / self.rate

    def sample_array(self, rng, size):
        return rng.exponential(1.0 / self.rate, size)


@dataclass(frozen=True)
class HyperExp2(JobSizeLaw):
    """Two-phase hyperexponential: rate ``mu1`` w.p. ``p``, else ``mu2``."""

    p: float
    mu1: float
    mu2: float

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0,1)")
        if self.mu1 <= 0 or self.mu2 <= 0:
            raise ValueError("rates must be positive")

    def ccdf(self, s):
        _check_nonneg(s)
        s = np.asarray(s, dtype=float)
        out = self.p * np.exp(-self.mu1 * s) + (1.0 - self.p) * np.exp(-self.mu2 * s)
        return out if out.ndim else float(out)

    def pdf(self, s):
        _check_nonneg(s)
        s = np.asarray(s, dtype=float)
        out = self.p * self.mu1 * np.exp(-self.mu1 * s) + (1.0 - self.p) * self.mu2 * np.exp(-self.mu2 * s)
        return out if out.ndim else float(out)

    def mean(self) -> float:
        return self.p / self.mu1 + (1.0 - self.p) / self.mu2

    def scv(self) -> float:
        m1 = self.mean()
        m2 = 2.0 * self.p / self.mu1**2 + 2.0 * (1.0 - self.p) / self.mu2**2
        return m2 / m1**2 - 1.0

    def sample_array(self, rng, size):
        u = rng.random(size)
        e = rng.exponential(1.0, size)
        return e * np.where(u < self.p, 1.0 / self.mu1, 1.0 / self.mu2)


@dataclass(frozen=True)
class ErlangK(JobSizeLaw):
    k: int
    rate: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        object.__setattr__(self, "k", int(self.k))

    def ccdf(self, s):
        _check_nonneg(s)
        s = np.asarray(s, dtype=float)
        x = self.rate * s
        term = np.ones_like(x)
        acc = np.ones_like(x)
        for j in range(1, self.k):
            term = term * x / j
            acc = acc + term
        out = acc * np.exp(-x)
        return out if out.ndim else float(out)

    def pdf(self, s):
        _check_nonneg(s)
        s = np.asarray(s, dtype=float)
        x = self.rate * s
        out = self.rate * x ** (self.k - 1) * np.exp(-x) / math.factorial(self.k - 1)
        return out if out.ndim else float(out)

    def mean(self) -> float:
        return self.k / self.rate

    def sample_array(self, rng, size):
        return rng.gamma(self.k, 1.0 / self.rate, size)


@dataclass(frozen=True)
class Deterministic(JobSizeLaw):
    c: float = 1.0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")

    def ccdf(self, s):
        _check_nonneg(s)
        s = np.asarray(s, dtype=float)
        out = np.where(s < self.c, 1.0, 0.0)
        return out if out.ndim else float(out)

    def pdf(self, s):
        # the unit atom at c carries no density part
        _check_nonneg(s)
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        return out if out.ndim else float(out)

    def mean(self) -> float:
        return self.c

    def ccdf_jumps(self):
        return (self.c,)

    def sample_array(self, rng, size):
        return np.full(size, self.c)


@dataclass(frozen=True)
class PowerLaw(JobSizeLaw):
    """Pareto-type law with ccdf ``(s/smin)^(-beta)`` on ``[smin, inf)``.

    Requires ``beta > 1`` so the mean ``smin*beta/(beta-1)`` is finite; the
    variance is infinite for ``beta <= 2``.
    """

    beta: float = 2.0
    smin: float = 1.0

    def __post_init__(self):
        if self.beta <= 1:
            raise ValueError("beta must exceed 1 for a finite mean")
        if self.smin <= 0:
            raise ValueError("smin must be positive")

    def ccdf(self, s):
        _check_nonneg(s)
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.where(s < self.smin, 1.0, (np.maximum(s, self.smin) / self.smin) ** (-self.beta))
        return out if out.ndim else float(out)

    def pdf(self, s):
        _check_nonneg(s)
        s = np.asarray(s, dtype=float)
        out = np.where(
            s < self.smin,
            0.0,
            self.beta / self.smin * (np.maximum(s, self.smin) / self.smin) ** (-self.beta - 1.0),
        )
        return out if out.ndim else float(out)

    def mean(self) -> float:
        return self.smin * self.beta / (self.beta - 1.0)

    def sample_array(self, rng, size):
        u = 1.0 - rng.random(size)  # in (0, 1]
        return self.smin * u ** (-1.0 / self.beta)


@dataclass(frozen=True, eq=False)
class PhaseType(JobSizeLaw):
    ph: PHRep

    def ccdf(self, s):
        _check_nonneg(s)
        return self.ph.ccdf(s)

    def pdf(self, s):
        _check_nonneg(s)
        return self.ph.pdf(s)

    def ccdf_grid(self, h, n):
        return self.ph.ccdf_grid(h, n)

    def pdf_grid(self, h, n):
        return self.ph.pdf_grid(h, n)

    def mean(self) -> float:
        return self.ph.mean()

    def sample_array(self, rng, size):
        return self.ph.sample(rng, size)


@dataclass(frozen=True, eq=False)
class DetPlusPH(JobSizeLaw):
    """Deterministic offset ``tau`` plus a phase-type remainder.

    ccdf is 1 for ``s <= tau`` and ``alpha @ expm((s-tau)A) @ 1`` beyond.
    """

    tau: float
    ph: PHRep

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")

    def ccdf(self, s):
        _check_nonneg(s)
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.ones_like(s_arr)
        above = s_arr > self.tau
        if np.any(above):
            out[above] = self.ph.ccdf(s_arr[above] - self.tau)
        return out if np.ndim(s) else float(out[0])

    def pdf(self, s):
        _check_nonneg(s)
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros_like(s_arr)
        above = s_arr > self.tau
        if np.any(above):
            out[above] = self.ph.pdf(s_arr[above] - self.tau)
        return out if np.ndim(s) else float(out[0])

    def ccdf_grid(self, h, n):
        m = int(round(self.tau / h))
        if abs(m * h - self.tau) < 1e-9 * max(1.0, self.tau) and m < n:
            # tau on the grid: shift the inner curve, fill ones before it
            out = np.ones(n)
            out[m:] = self.ph.ccdf_grid(h, n - m)
            return out
        return np.asarray(self.ccdf(np.arange(n) * h), dtype=float)

    def pdf_grid(self, h, n):
        m = int(round(self.tau / h))
        if abs(m * h - self.tau) < 1e-9 * max(1.0, self.tau) and m < n:
            out = np.zeros(n)
            out[m:] = self.ph.pdf_grid(h, n - m)
            return out
        return np.asarray(self.pdf(np.arange(n) * h), dtype=float)

    def mean(self) -> float:
        return self.tau + self.ph.mean()

    def sample_array(self, rng, size):
        return self.tau + self.ph.sample(rng, size)


@dataclass(frozen=True)
class HexpFitSpec:
    """Target moments for the two-phase hyperexponential fit.

    ``f`` is the fraction of the offered workload carried by the short
    (type-1) jobs; ``scv`` the squared coefficient of variation.
    """

    scv: float
    f: float
    mean: float = 1.0

    def __post_init__(self):
        if self.scv < 1.0:
            raise ValueError("hyperexponential fit needs scv >= 1")
        if not 0.0 < self.f < 1.0:
            raise ValueError("shape fraction f must lie in (0,1)")
        if self.mean <= 0:
            raise ValueError("mean must be positive")


def fit_hyperexp(spec: HexpFitSpec) -> HyperExp2:
    """Fit a 2-phase hyperexponential matching (mean, scv, workload share f).

    For unit mean the rates are

        mu1 = (scv + 4f - 1 + r) / (2 f (scv+1)),
        mu2 = (scv + 4(1-f) - 1 - r) / (2 (1-f) (scv+1)),

    with ``r = sqrt((scv-1)(scv-1+8 f (1-f)))`` and branch probability
    ``p = mu1 * f``.  Other means are handled by rescaling time.
    """
    scv, f = spec.scv, spec.f
    fbar = 1.0 - f
    root = math.sqrt((scv - 1.0) * (scv - 1.0 + 8.0 * f * fbar))
    mu1 = (scv + (4.0 * f - 1.0) + root) / (2.0 * f * (scv + 1.0))
    mu2 = (scv + (4.0 * fbar - 1.0) - root) / (2.0 * fbar * (scv + 1.0))
    p = mu1 * f
    if mu2 <= 0 or not 0.0 < p < 1.0:
        raise ValueError(f"fit produced invalid parameters (p={p}, mu2={mu2})")
    return HyperExp2(p=p, mu1=mu1 / spec.mean, mu2=mu2 / spec.mean)


def as_ph(law: JobSizeLaw) -> PHRep:
    """Canonical phase-type embedding of a law, when one exists.

    Exponential demands one phase, HyperExp2 two parallel phases, ErlangK a
    series chain; PhaseType returns its own representation.  Laws with an
    atom or a polynomial tail have no finite representation.
    """
    if isinstance(law, Exponential):
        return PHRep(np.array([1.0]), np.array([[-law.rate]]))
    if isinstance(law, HyperExp2):
        return PHRep(np.array([law.p, 1.0 - law.p]), np.diag([-law.mu1, -law.mu2]))
    if isinstance(law, ErlangK):
        k, r = law.k, law.rate
        A = np.diag(np.full(k, -r)) + np.diag(np.full(k - 1, r), 1)
        alpha = np.zeros(k)
        alpha[0] = 1.0
        return PHRep(alpha, A)
    if isinstance(law, PhaseType):
        return law.ph
    raise NoPhaseTypeError(f"{type(law).__name__} has no finite PH representation")


# --- textual law specs --------------------------------------------------

def parse_law(text: str) -> JobSizeLaw:
    """Build a law from a flat spec like ``hexp(scv=20,f=0.5)``.

    Supported: ``exp(rate=)``, ``hexp(scv=,f=[,mean=])`` or
    ``hexp(p=,mu1=,mu2=)``, ``erlang(k=[,rate=])``, ``det(c=)``,
    ``powerlaw(beta=,smin=)``, ``detph(tau=,inner=<spec>)``.
    """
    law, pos = _parse_law_at(text, 0)
    if text[pos:].strip():
        raise ValueError(f"trailing input in law spec: {text[pos:]!r}")
    return law


def _parse_law_at(text: str, pos: int):
    n = len(text)
    while pos < n and text[pos].isspace():
        pos += 1
    start = pos
    while pos < n and (text[pos].isalnum() or text[pos] == "_"):
        pos += 1
    name = text[start:pos].lower()
    if not name:
        raise ValueError(f"expected law name at position {start} in {text!r}")
    kwargs: dict[str, object] = {}
    while pos < n and text[pos].isspace():
        pos += 1
    if pos < n and text[pos] == "(":
        pos += 1
        while True:
            while pos < n and text[pos] in " \t":
                pos += 1
            if pos < n and text[pos] == ")":
                pos += 1
                break
            eq = text.find("=", pos)
            if eq < 0:
                raise ValueError(f"expected key=value in law spec {text!r}")
            key = text[pos:eq].strip().lower()
            pos = eq + 1
            if key == "inner":
                val, pos = _parse_law_at(text, pos)
            else:
                vstart = pos
                while pos < n and text[pos] not in ",)":
                    pos += 1
                try:
                    val = float(text[vstart:pos])
                except ValueError as exc:
                    raise ValueError(f"bad numeric value {text[vstart:pos]!r} for {key}") from exc
            kwargs[key] = val
            while pos < n and text[pos] in " \t":
                pos += 1
            if pos < n and text[pos] == ",":
                pos += 1
            elif pos < n and text[pos] == ")":
                pos += 1
                break
            else:
                raise ValueError(f"unterminated argument list in law spec {text!r}")
    return _build_law(name, kwargs), pos


def _build_law(name: str, kw: dict) -> JobSizeLaw:
    try:
        if name in ("exp", "exponential"):
            law = Exponential(rate=float(kw.pop("rate", 1.0)))
        elif name == "hexp":
            if "scv" in kw:
                spec = HexpFitSpec(
                    scv=float(kw.pop("scv")), f=float(kw.pop("f")), mean=float(kw.pop("mean", 1.0))
                )
                law = fit_hyperexp(spec)
            else:
                law = HyperExp2(p=float(kw.pop("p")), mu1=float(kw.pop("mu1")), mu2=float(kw.pop("mu2")))
        elif name == "erlang":
            k = int(kw.pop("k"))
            law = ErlangK(k=k, rate=float(kw.pop("rate", k)))  # default rate keeps mean 1
        elif name == "det":
            law = Deterministic(c=float(kw.pop("c", 1.0)))
        elif name == "powerlaw":
            law = PowerLaw(beta=float(kw.pop("beta", 2.0)), smin=float(kw.pop("smin", 1.0)))
        elif name == "detph":
            tau = float(kw.pop("tau"))
            inner = kw.pop("inner")
            if not isinstance(inner, JobSizeLaw):
                raise ValueError("detph needs inner=<law spec>")
            law = DetPlusPH(tau=tau, ph=as_ph(inner))
        else:
            raise ValueError(f"unknown job-size law {name!r}")
    except KeyError as exc:
        raise ValueError(f"{name} spec is missing argument {exc}") from exc
    if kw:
        raise ValueError(f"unexpected arguments for {name}: {sorted(kw)}")
    return law
