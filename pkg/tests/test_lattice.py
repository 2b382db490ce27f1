import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from shflab.lattice import (DisorderField, DisorderLaw, DomainError, WalkKernel,
                            difference_pmf, difference_pmf_dp, disorder_value, log_mgf,
                            return_probabilities, return_probability, sigma2_pair)

LAWS = [DisorderLaw.gaussian(), DisorderLaw.rademacher(), DisorderLaw.shifted_exponential(2.0)]


def test_walk_kernels():
    off, p = WalkKernel.simple().steps
    assert len(p) == 4 and np.all(p == 0.25)
    off, p = WalkKernel.lazy(0.3).steps
    assert math.isclose(p.sum(), 1.0, abs_tol=1e-15)
    assert np.abs(off).max() <= 1
    with pytest.raises(DomainError):
        WalkKernel.lazy(1.0)
    with pytest.raises(DomainError):
        WalkKernel("simple", 0.5)


@pytest.mark.parametrize("law, beta, expected", [
    (DisorderLaw.gaussian(), 0.6, 0.18),
    (DisorderLaw.rademacher(), 0.0, 0.0),
    (DisorderLaw.rademacher(), 1.0, 0.433780),
])
def test_log_mgf_examples(law, beta, expected):
    # expected values are quoted to six decimals
    assert log_mgf(law, beta) == pytest.approx(expected, abs=1e-6)


def test_log_mgf_rademacher_by_enumeration():
    for b in (0.1, 1.0, 3.0, 30.0):
        direct = math.log(0.5 * (math.exp(b) + math.exp(-b)))
        assert log_mgf(DisorderLaw.rademacher(), b) == pytest.approx(direct, rel=1e-14)


def test_log_mgf_exponential_by_quadrature():
    law = DisorderLaw.shifted_exponential()
    for b in (0.1, 0.4, 0.8):
        val, _ = integrate.quad(lambda e: math.exp(b * (e - 1) - e), 0, np.inf, epsabs=0,
                                epsrel=1e-13)
        assert log_mgf(law, b) == pytest.approx(math.log(val), rel=1e-10)
    with pytest.raises(DomainError, match="beta >= 1"):
        log_mgf(law, 1.0)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.kind)
def test_law_moments_closed_form(law):
    # the log-mgf Taylor coefficients give mean (first) and variance (second)
    h = 1e-4
    first = (log_mgf(law, h) - log_mgf(law, -h)) / (2 * h)
    second = (log_mgf(law, h) - 2 * log_mgf(law, 0.0) + log_mgf(law, -h)) / h ** 2
    assert abs(first) < 1e-8
    assert second == pytest.approx(1.0, abs=1e-6)
    assert log_mgf(law, 0.0) == 0.0


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.kind)
def test_log_mgf_convex(law):
    b = np.linspace(-0.45, 0.45, 91) if law.kind == "shifted_exponential" else np.linspace(-3, 3, 121)
    lam = np.array([log_mgf(law, x) for x in b])
    assert np.all(np.diff(lam, 2) >= -1e-10)


@pytest.mark.parametrize("law, beta, expected", [
    (DisorderLaw.gaussian(), 0.0, 0.0),
    (DisorderLaw.gaussian(), 1.0, math.e - 1),
    # cosh(1) / cosh(0.5)^2 - 1, evaluated independently and frozen
    (DisorderLaw.rademacher(), 0.5, 0.2135522670),
])
def test_sigma2_pair_examples(law, beta, expected):
    assert sigma2_pair(law, beta) == pytest.approx(expected, abs=5e-7)


def test_sigma2_pair_rademacher_four_points():
    b = 0.5
    lam = log_mgf(DisorderLaw.rademacher(), b)
    # E[w w'] with w = exp(b omega - lam), over the 4 equally likely (omega, omega') pairs
    # on the same site, so omega = omega'
    pair = np.mean([math.exp(2 * b * o - 2 * lam) for o, _ in itertools.product((1, -1), (1, -1))])
    assert sigma2_pair(DisorderLaw.rademacher(), b) == pytest.approx(pair - 1, rel=1e-14)


@given(st.one_of(st.just(0.0), st.floats(1e-6, 0.49)))
@settings(max_examples=50, deadline=None)
def test_sigma2_pair_nonnegative(beta):
    for law in LAWS:
        s = sigma2_pair(law, beta)
        assert s >= 0
        assert (s == 0) == (beta == 0)


def test_disorder_purity(rng):
    f = DisorderField(987654321)
    n = rng.integers(1, 1000, size=1000)
    x = rng.integers(-500, 500, size=(1000, 2))
    first = [disorder_value(f, int(a), b) for a, b in zip(n, x)]
    again = [disorder_value(DisorderField(987654321), int(a), b) for a, b in zip(n, x)]
    assert np.array_equal(np.array(first).view(np.uint64), np.array(again).view(np.uint64))


def test_block_matches_single_sites():
    f = DisorderField(3, law=DisorderLaw.rademacher())
    blk = f.omega_block(7, (-2, 5), (1, 1), (1, -1), (3, 4))
    single = [disorder_value(f, 7, (-2 + i + j, 5 + i - j)) for i in range(3) for j in range(4)]
    assert np.array_equal(blk, single)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.kind)
def test_disorder_moments(law):
    f = DisorderField(2024, law=law)
    w = np.concatenate([f.omega_block(n, (-500, -500), (1, 0), (0, 1), (1000, 100))
                        for n in range(1, 11)])
    assert w.size == 10 ** 6
    assert abs(w.mean()) < 4 / math.sqrt(w.size)
    assert w.var() == pytest.approx(1.0, rel=0.05)


def test_gaussian_disorder_distribution():
    f = DisorderField(11)
    w = f.omega_block(5, (-250, -250), (1, 0), (0, 1), (500, 400))
    assert stats.kstest(w, "norm").statistic < 0.005


def test_distinct_sites_uncorrelated():
    f = DisorderField(5)
    a = f.omega_block(3, (0, 0), (1, 0), (0, 1), (400, 400))
    b = f.omega_block(4, (0, 0), (1, 0), (0, 1), (400, 400))
    c = f.omega_block(3, (1, 0), (1, 0), (0, 1), (400, 400))
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / 400
    assert abs(np.corrcoef(a, c)[0, 1]) < 4 / 400
    g = DisorderField(6).omega_block(3, (0, 0), (1, 0), (0, 1), (400, 400))
    assert abs(np.corrcoef(a, g)[0, 1]) < 4 / 400


def test_disorder_window():
    f = DisorderField(1, time_range=(1, 10), box_radius=5)
    with pytest.raises(IndexError):
        disorder_value(f, 11, (0, 0))
    with pytest.raises(IndexError):
        disorder_value(f, 3, (6, 0))
    with pytest.raises(DomainError):
        DisorderField(-1)


def test_return_probability_examples():
    s = WalkKernel.simple()
    assert return_probability(s, 1) == 0.25
    assert return_probability(s, 2) == pytest.approx(9 / 64, rel=1e-15)
    with pytest.raises(DomainError):
        return_probability(s, 0)


@pytest.mark.parametrize("kernel", [WalkKernel.simple(), WalkKernel.lazy(0.5), WalkKernel.lazy(0.2)],
                         ids=["simple", "lazy0.5", "lazy0.2"])
def test_return_probability_vs_difference_dp(kernel):
    for n in range(1, 7):
        g = difference_pmf_dp(kernel, n)
        R = 2 * n
        assert g.sum() == pytest.approx(1.0, abs=1e-13)
        assert return_probability(kernel, n) == pytest.approx(g[R, R], abs=1e-14)
        if kernel.kind == "simple":
            w1, w2 = np.meshgrid(np.arange(-R, R + 1), np.arange(-R, R + 1), indexing="ij")
            # odd-sum sites are never reached by the difference of two simple walks
            assert np.all(g[(w1 + w2) % 2 == 1] == 0)
        w = np.arange(-R, R + 1)
        np.testing.assert_allclose(difference_pmf(kernel, n, w[:, None], w[None, :]), g,
                                   atol=1e-14)


def test_return_probability_asymptotics():
    q = return_probabilities(WalkKernel.simple(), 10 ** 4)
    ratios = [q[n] * math.pi * n for n in (10, 100, 1000, 10 ** 4)]
    errs = [abs(r - 1) for r in ratios]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-4
