import math

import numpy as np
import pytest
from scipy.integrate import quad

from leastloaded.analytic_exp import (
    ModelParams,
    ll_mean_response,
    ll_mean_workload,
    ll_mean_workload_closed,
    ll_response_ccdf_exp,
    ll_response_pdf_exp,
    ll_sq_gap_series,
    ll_workload_ccdf_exp,
    ll_workload_pdf_exp,
    mean_workload_tail_bound,
    ratio_limit,
    rr_mean_response,
    sq_mean_response_exp,
    sq_response_ccdf_exp,
)


def test_model_params_validation():
    p = ModelParams(0.9, 2)
    assert p.rho == 0.9
    with pytest.raises(ValueError):
        ModelParams(1.1, 2)
    with pytest.raises(ValueError):
        ModelParams(0.5, 1)
    with pytest.raises(ValueError):
        ModelParams(0.5, 2, rho=1.0)


def test_workload_ccdf_boundary_value():
    p = ModelParams(0.9, 2)
    assert ll_workload_ccdf_exp(p, 0.0) == pytest.approx(0.9, abs=1e-15)
    s = np.linspace(0, 30, 500)
    v = ll_workload_ccdf_exp(p, s)
    assert np.all(np.diff(v) < 0)


def test_workload_ccdf_large_d_limit():
    # as d grows the curve tends to lam * e^-s
    p = ModelParams(0.9, 50)
    assert abs(ll_workload_ccdf_exp(p, 1.0) - 0.9 * math.exp(-1.0)) <= 1e-3


def test_workload_ccdf_no_overflow_far_tail():
    p = ModelParams(0.9, 2)
    assert ll_workload_ccdf_exp(p, 800.0) == 0.0


def test_response_ccdf_starts_at_one():
    for lam, d in [(0.1, 2), (0.9, 3), (0.99, 5)]:
        assert ll_response_ccdf_exp(ModelParams(lam, d), 0.0) == pytest.approx(1.0, abs=1e-14)


def test_response_ccdf_light_traffic_is_service_only():
    p = ModelParams(1e-9, 2)
    s = np.array([0.5, 1.0, 3.0])
    assert np.abs(ll_response_ccdf_exp(p, s) - np.exp(-s)).max() < 1e-8


def test_response_ccdf_convolution_oracle():
    # independent route: Fbar_R(s) = e^-s + int_0^s Fbar(s-t)^d e^-t dt by quadrature
    p = ModelParams(0.95, 3)
    s = 2.0
    inner, _ = quad(lambda t: ll_workload_ccdf_exp(p, s - t) ** 3 * math.exp(-t), 0.0, s, limit=200)
    oracle = math.exp(-s) + inner
    assert ll_response_ccdf_exp(p, s) == pytest.approx(oracle, abs=1e-5)


def test_mean_workload_series_vs_closed_forms():
    for lam in np.arange(0.1, 0.95, 0.1):
        p2 = ModelParams(lam, 2)
        assert ll_mean_workload(p2) == pytest.approx(ll_mean_workload_closed(lam, 2), abs=1e-10)
        p3 = ModelParams(lam, 3)
        assert ll_mean_workload(p3) == pytest.approx(ll_mean_workload_closed(lam, 3), abs=1e-10)


def test_mean_workload_value_d2():
    # W_2(0.5) = -log(0.75)/0.5
    assert ll_mean_workload(ModelParams(0.5, 2)) == pytest.approx(0.5753641449035618, abs=1e-12)


def test_mean_workload_light_traffic_leading_order():
    p = ModelParams(1e-4, 4)
    assert ll_mean_workload(p) == pytest.approx(1e-4, rel=1e-8)


def test_mean_workload_tail_bound_is_a_bound():
    p = ModelParams(0.9, 2)
    full = ll_mean_workload(p)
    for n in (5, 10, 20):
        truncated = ll_mean_workload(p, nterms=n)
        tail = full - truncated
        assert 0 <= tail <= mean_workload_tail_bound(p, n)


def test_little_identity():
    for lam in (0.1, 0.3, 0.5, 0.7, 0.9, 0.95):
        for d in (2, 3, 4, 5):
            p = ModelParams(lam, d)
            assert ll_mean_workload(p) == pytest.approx(lam * ll_mean_response(p), abs=1e-12)


def test_mean_response_light_traffic():
    assert ll_mean_response(ModelParams(1e-9, 2)) == pytest.approx(1.0, abs=1e-8)


def test_mean_response_value():
    assert ll_mean_response(ModelParams(0.5, 2)) == pytest.approx(1.1507282898071236, abs=1e-10)


def test_sq_mean_direct_series_oracle():
    # (1/lam) * sum lam^(2^k - 1) computed independently with exact exponents
    lam = 0.9
    oracle = sum(lam ** (2**k - 1) for k in range(1, 60)) / lam
    assert sq_mean_response_exp(ModelParams(lam, 2)) == pytest.approx(oracle, rel=1e-14)


def test_sq_mean_light_traffic():
    assert sq_mean_response_exp(ModelParams(1e-9, 2)) == pytest.approx(1.0, abs=1e-8)


def test_sq_dominates_ll_mean():
    p = ModelParams(0.9, 2)
    assert sq_mean_response_exp(p) >= ll_mean_response(p)


def test_sq_response_ccdf_boundary_and_light_traffic():
    p = ModelParams(0.95, 2)
    assert sq_response_ccdf_exp(p, 0.0) == pytest.approx(1.0, abs=1e-14)
    p0 = ModelParams(1e-9, 2)
    s = np.array([0.5, 2.0])
    assert np.abs(sq_response_ccdf_exp(p0, s) - np.exp(-s)).max() < 1e-7


def test_sq_response_dominates_ll_pointwise_and_ratio_monotone():
    p = ModelParams(0.95, 2)
    s = np.arange(0.0, 10.0, 0.01)
    sq = np.asarray(sq_response_ccdf_exp(p, s))
    ll = np.asarray(ll_response_ccdf_exp(p, s))
    assert np.all(sq >= ll - 1e-13)
    ratio = sq / ll
    assert np.all(np.diff(ratio) >= -1e-9)


def test_ratio_limit_values():
    assert ratio_limit(2) == pytest.approx(1.4426950408889634, abs=1e-12)
    assert ratio_limit(3) == pytest.approx(2.0 / math.log(3.0), abs=1e-12)
    assert ratio_limit(64) > 15.0
    with pytest.raises(ValueError):
        ratio_limit(1)


def test_gap_series_cross_check_oracle():
    for lam, d in [(0.5, 2), (0.9, 2), (0.7, 3)]:
        p = ModelParams(lam, d)
        gap = ll_sq_gap_series(p, kmax=30)
        direct = sq_mean_response_exp(p) - ll_mean_response(p)
        assert gap == pytest.approx(direct, abs=1e-10)
        assert gap > 0


def test_gap_terms_positive():
    # every regrouped term is positive across loads
    for lam in np.arange(0.1, 0.95, 0.1):
        loglam = math.log(lam)
        for k in range(1, 12):
            if (2 ** (k + 1) - 1) * loglam < -700:
                break  # below the double-precision floor
            lead = lam ** (2 ** (k + 1) - 1)
            inner = sum(
                math.exp((2 * n + 1 + (2 ** (k + 1) - 4)) * loglam) / (1 + n + (2**k - 2))
                for n in range(1, 2**k + 1)
            )
            assert lead - inner > 0


def test_gap_vanishes_light_traffic():
    assert ll_sq_gap_series(ModelParams(1e-8, 2)) == pytest.approx(0.0, abs=1e-8)


def test_ratio_increasing_in_lambda_below_limit():
    lams = np.arange(0.05, 0.999, 0.05)
    ratios = []
    for lam in lams:
        p = ModelParams(lam, 2)
        ratios.append(sq_mean_response_exp(p) / ll_mean_response(p))
    ratios = np.array(ratios)
    assert np.all(np.diff(ratios) > 0)
    assert np.all(ratios < ratio_limit(2))
    assert np.all(ratios > 1.0)


def test_failure_rate_identity():
    # workload and response curves share the same hazard rate
    for lam, d in [(0.5, 2), (0.9, 2), (0.95, 4)]:
        p = ModelParams(lam, d)
        s = np.linspace(0.0, 10.0, 200)
        hw = np.asarray(ll_workload_pdf_exp(p, s)) / np.asarray(ll_workload_ccdf_exp(p, s))
        hr = np.asarray(ll_response_pdf_exp(p, s)) / np.asarray(ll_response_ccdf_exp(p, s))
        assert np.abs(hw - hr).max() <= 1e-8
        assert np.all(np.diff(hw) > -1e-12)  # increasing failure rate


def test_pdf_matches_numerical_derivative():
    p = ModelParams(0.9, 2)
    s = np.linspace(0.1, 5.0, 50)
    eps = 1e-6
    num = (np.asarray(ll_workload_ccdf_exp(p, s - eps)) - np.asarray(ll_workload_ccdf_exp(p, s + eps))) / (2 * eps)
    assert np.abs(num - np.asarray(ll_workload_pdf_exp(p, s))).max() < 1e-8


def test_rr_mean_response():
    # light traffic: replicas execute independently, mean 1/(d mu)
    assert rr_mean_response(0.0, 2, 1.0) == pytest.approx(0.5)
    assert rr_mean_response(1e-12, 2, 1.0) == pytest.approx(0.5, abs=1e-11)
    # direct series at rho = 0.5: sum rho^n/(n+2) has the closed value (-log(1-r)-r)/r^2
    oracle = (-math.log(0.5) - 0.5) / 0.25
    assert rr_mean_response(0.5, 2, 1.0) == pytest.approx(oracle, abs=1e-12)
    with pytest.raises(ValueError):
        rr_mean_response(0.5, 1, 1.0)
