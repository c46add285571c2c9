import math

import numpy as np
import pytest
from scipy.integrate import quad

from leastloaded.jobsize import (
    Deterministic,
    DetPlusPH,
    ErlangK,
    Exponential,
    HexpFitSpec,
    HyperExp2,
    NoPhaseTypeError,
    PHRep,
    PhaseType,
    PowerLaw,
    as_ph,
    fit_hyperexp,
    parse_law,
)

ALL_SIMPLE_LAWS = [
    Exponential(1.0),
    HyperExp2(p=0.3, mu1=2.0, mu2=0.5),
    ErlangK(3, 3.0),
    Deterministic(1.0),
    PowerLaw(beta=2.0, smin=1.0),
]


def test_fit_collapses_to_exponential_at_scv_one():
    law = fit_hyperexp(HexpFitSpec(scv=1.0, f=0.5))
    assert law.p == pytest.approx(0.5, abs=1e-14)
    assert law.mu1 == pytest.approx(1.0, abs=1e-14)
    assert law.mu2 == pytest.approx(1.0, abs=1e-14)


def test_fit_scv20_moment_oracle():
    # oracle: recompute mean and scv from the fitted branch moments
    law = fit_hyperexp(HexpFitSpec(scv=20.0, f=0.5))
    m1 = law.p / law.mu1 + (1 - law.p) / law.mu2
    m2 = 2 * law.p / law.mu1**2 + 2 * (1 - law.p) / law.mu2**2
    assert m1 == pytest.approx(1.0, abs=1e-12)
    assert m2 / m1**2 - 1.0 == pytest.approx(20.0, abs=1e-9)
    assert 0 < law.p < 1 and law.mu1 > law.mu2 > 0
    # fraction of workload offered by short jobs is f
    assert law.p / law.mu1 == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("scv", [1.0, 2.0, 5.0, 10.0, 20.0])
@pytest.mark.parametrize("f", [0.1, 0.5])
def test_fit_moment_grid(scv, f):
    law = fit_hyperexp(HexpFitSpec(scv=scv, f=f))
    assert law.mean() == pytest.approx(1.0, abs=1e-9)
    assert law.scv() == pytest.approx(scv, abs=1e-9)


def test_fit_rejects_bad_specs():
    with pytest.raises(ValueError):
        HexpFitSpec(scv=0.5, f=0.5)
    with pytest.raises(ValueError):
        HexpFitSpec(scv=4.0, f=0.0)
    with pytest.raises(ValueError):
        HexpFitSpec(scv=4.0, f=1.0)


def test_fit_nonunit_mean_rescales():
    law = fit_hyperexp(HexpFitSpec(scv=4.0, f=0.5, mean=2.5))
    assert law.mean() == pytest.approx(2.5, abs=1e-9)
    assert law.scv() == pytest.approx(4.0, abs=1e-9)


def test_exponential_basics():
    law = Exponential(1.0)
    assert law.cdf(0.0) == 0.0
    assert law.ccdf(0.0) == 1.0
    assert law.mean() == 1.0


def test_powerlaw_paper_tail():
    # ccdf(s) = s^-beta on [1, inf): value 1/9 at s=3 for beta=2
    law = PowerLaw(beta=2.0, smin=1.0)
    assert law.ccdf(3.0) == pytest.approx(1.0 / 9.0, rel=1e-12)
    assert law.mean() == pytest.approx(2.0)
    assert law.ccdf(0.5) == 1.0


def test_erlang_mean():
    assert ErlangK(2, 2.0).mean() == pytest.approx(1.0)


@pytest.mark.parametrize("law", ALL_SIMPLE_LAWS, ids=lambda l: type(l).__name__)
def test_ccdf_shape(law):
    s = np.linspace(0.0, 12.0, 400)
    c = np.asarray(law.ccdf(s))
    assert c[0] == pytest.approx(1.0)
    assert np.all(c >= 0) and np.all(c <= 1)
    assert np.all(np.diff(c) <= 1e-15)
    # cdf + ccdf = 1, cdf(0) = 0
    assert np.allclose(law.cdf(s) + c, 1.0)
    assert law.cdf(0.0) == pytest.approx(0.0)


@pytest.mark.parametrize(
    "law",
    [Exponential(1.0), HyperExp2(p=0.3, mu1=2.0, mu2=0.5), ErlangK(3, 3.0), Deterministic(1.0)],
    ids=lambda l: type(l).__name__,
)
def test_mean_equals_integral_of_ccdf(law):
    val, err = quad(lambda s: float(law.ccdf(s)), 0.0, 60.0, limit=300)
    assert val == pytest.approx(law.mean(), abs=1e-6)


def test_as_ph_exponential():
    ph = as_ph(Exponential(1.0))
    assert ph.alpha.tolist() == [1.0]
    assert ph.A.tolist() == [[-1.0]]


def test_as_ph_symmetric_hexp_is_exponential():
    ph = as_ph(HyperExp2(p=0.5, mu1=1.0, mu2=1.0))
    s = np.arange(0, 101) * 0.1
    assert np.abs(ph.ccdf(s) - np.exp(-s)).max() < 1e-12


def test_as_ph_erlang_mean_matrix_inverse_oracle():
    ph = as_ph(ErlangK(3, 3.0))
    # independent route: alpha (-A)^-1 1 with an explicit inverse
    mean = ph.alpha @ np.linalg.inv(-ph.A) @ np.ones(3)
    assert mean == pytest.approx(1.0, abs=1e-14)
    assert ph.mean() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize(
    "law",
    [Exponential(0.7), HyperExp2(p=0.3, mu1=2.0, mu2=0.5), ErlangK(3, 3.0)],
    ids=lambda l: type(l).__name__,
)
def test_as_ph_roundtrip_ccdf(law):
    ph = as_ph(law)
    s = np.arange(0, 101) * 0.1
    assert np.abs(ph.ccdf(s) - np.asarray(law.ccdf(s))).max() <= 1e-12


def test_as_ph_rejects_atoms_and_heavy_tails():
    with pytest.raises(NoPhaseTypeError, match="no finite PH representation"):
        as_ph(Deterministic(1.0))
    with pytest.raises(NoPhaseTypeError):
        as_ph(PowerLaw(2.0, 1.0))


def test_ph_grid_matches_pointwise():
    ph = as_ph(ErlangK(3, 3.0))
    n, h = 200, 0.05
    grid = ph.ccdf_grid(h, n)
    direct = ph.ccdf(np.arange(n) * h)
    assert np.abs(grid - direct).max() < 1e-12


def test_detph_ccdf_split():
    ph = as_ph(Exponential(2.0))
    law = DetPlusPH(tau=0.5, ph=ph)
    assert law.ccdf(0.3) == 1.0
    assert law.ccdf(0.5) == 1.0
    assert law.ccdf(1.5) == pytest.approx(math.exp(-2.0))
    assert law.mean() == pytest.approx(1.0)


def test_phrep_validation():
    with pytest.raises(ValueError):
        PHRep(np.array([0.5, 0.4]), -np.eye(2))  # alpha not stochastic
    with pytest.raises(ValueError):
        PHRep(np.array([1.0]), np.array([[1.0]]))  # positive diagonal
    with pytest.raises(ValueError):
        PHRep(np.array([0.5, 0.5]), np.array([[-1.0, 1.0], [1.0, -1.0]]))  # no exit


# --- samplers ------------------------------------------------------------


def test_sample_deterministic():
    rng = np.random.default_rng(0)
    law = Deterministic(1.0)
    assert law.sample(rng) == 1.0
    assert np.all(law.sample_array(rng, 10) == 1.0)


def test_sample_exponential_lln():
    rng = np.random.default_rng(42)
    x = Exponential(1.0).sample_array(rng, 10**6)
    assert abs(x.mean() - 1.0) < 0.01


def test_sample_powerlaw_inverse_transform():
    rng = np.random.default_rng(7)
    x = PowerLaw(2.0, 1.0).sample_array(rng, 10**6)
    # empirical ccdf at 2 should be near 2^-2 = 0.25
    emp = np.mean(x > 2.0)
    assert abs(emp - 0.25) < 0.0025
    assert x.min() >= 1.0


def test_sample_hyperexp_moments():
    law = fit_hyperexp(HexpFitSpec(scv=4.0, f=0.5))
    rng = np.random.default_rng(3)
    x = law.sample_array(rng, 10**6)
    assert abs(x.mean() - 1.0) < 0.01


def test_sample_phase_walk_mean():
    ph = as_ph(ErlangK(3, 3.0))
    rng = np.random.default_rng(11)
    x = PhaseType(ph).sample_array(rng, 200_000)
    assert abs(x.mean() - 1.0) < 0.01
    # Erlang-3 scv = 1/3
    assert abs(x.var() / x.mean() ** 2 - 1.0 / 3.0) < 0.01


# --- textual specs -------------------------------------------------------


def test_parse_law_grammar():
    assert parse_law("exp(rate=1)") == Exponential(1.0)
    assert parse_law("det(c=1)") == Deterministic(1.0)
    assert parse_law("erlang(k=2)") == ErlangK(2, 2.0)
    assert parse_law("powerlaw(beta=2,smin=1)") == PowerLaw(2.0, 1.0)
    hx = parse_law("hexp(scv=20,f=0.5)")
    assert isinstance(hx, HyperExp2)
    assert hx.scv() == pytest.approx(20.0, abs=1e-9)
    nested = parse_law("detph(tau=0.05, inner=hexp(scv=4,f=0.5))")
    assert isinstance(nested, DetPlusPH)
    assert nested.tau == 0.05
    assert nested.mean() == pytest.approx(1.05, abs=1e-9)


def test_parse_law_rejects_garbage():
    for bad in ["", "exp(rate=x)", "foo(a=1)", "exp(rate=1) trailing", "exp(rate=1", "hexp(scv=4)"]:
        with pytest.raises(ValueError):
            parse_law(bad)
