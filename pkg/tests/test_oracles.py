import math

import numpy as np
import pytest

from shflab.lattice import DisorderField, DisorderLaw, WalkKernel, disorder_value, log_mgf, sigma2_pair
from shflab.oracles import (BudgetError, chaos_expand, enumerate_partition, evaluate,
                            flat_moments, second_moment_exact, second_moment_flat,
                            second_moment_pairs)
from shflab.schedule import CouplingSchedule, overlap_sum
from shflab.testfunctions import TestFunction

G, RAD = DisorderLaw.gaussian(), DisorderLaw.rademacher()
S, LZ = WalkKernel.simple(), WalkKernel.lazy()


def test_enumeration_trivial_cases():
    f = DisorderField(3)
    assert enumerate_partition(f, 0.0, 0, 5, (0, 0)) == pytest.approx(1.0, abs=1e-15)
    lam = log_mgf(G, 0.6)
    one = np.mean([math.exp(0.6 * disorder_value(f, 1, s) - lam)
                   for s in ((1, 0), (-1, 0), (0, 1), (0, -1))])
    assert enumerate_partition(f, 0.6, 0, 1, (0, 0)) == pytest.approx(one, rel=1e-15)
    with pytest.raises(BudgetError):
        enumerate_partition(f, 0.6, 0, 7, (0, 0))


def test_chaos_structure():
    ex = chaos_expand(DisorderField(1), 0.7, 0, 3, (0, 0))
    assert ex.coefficient(()) == 1.0
    for sites in ex.terms:
        times = [s[0] for s in sites]
        assert len(set(times)) == len(times)
    # one step: Z = 1 + sum over the 4 neighbours of eta / 4
    one = chaos_expand(DisorderField(1), 0.7, 0, 1, (0, 0))
    assert len(one.terms) == 5
    assert all(c == 0.25 for a, c in one.terms.items() if a)
    with pytest.raises(BudgetError):
        chaos_expand(DisorderField(1), 0.7, 0, 5, (0, 0))


def test_chaos_single_site_identity():
    # point-to-point over two steps: the only disorder sits at time 1
    f = DisorderField(4)
    ex = chaos_expand(f, 0.9, 0, 2, (0, 0), (1, 1))
    lam = log_mgf(G, 0.9)
    eta = {s: math.expm1(0.9 * disorder_value(f, 1, s) - lam) for s in ((1, 0), (0, 1))}
    direct = 2 / 16 + sum(eta.values()) / 16
    assert evaluate(ex, f) == pytest.approx(direct, rel=1e-14)


def test_chaos_beta_zero():
    ex = chaos_expand(DisorderField(2), 0.0, 0, 3, (0, 0))
    assert evaluate(ex, DisorderField(2)) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_chaos_matches_enumeration(seed):
    f = DisorderField(seed, law=RAD if seed % 2 else G)
    for horizon, y in ((3, None), (4, (2, 2)), (3, (1, 0))):
        ex = chaos_expand(f, 0.8, 1, horizon, (0, 0), y)
        ref = enumerate_partition(f, 0.8, 1, 1 + horizon, (0, 0), y)
        assert evaluate(ex, f) == pytest.approx(ref, rel=1e-10)


def test_second_moment_examples():
    assert second_moment_exact(S, G, 0.0, 50) == 1.0
    assert second_moment_exact(S, G, 1.0, 1) == pytest.approx(1.429570, abs=5e-7)
    assert second_moment_exact(S, G, 1.0, 1) == pytest.approx(1 + (math.e - 1) / 4, rel=1e-14)


@pytest.mark.parametrize("kernel", [S, LZ], ids=["simple", "lazy"])
@pytest.mark.parametrize("offset", [(0, 0), (1, 1), (2, 0), (1, 0)])
def test_second_moment_dp_vs_pairs(kernel, offset):
    for N in (1, 2, 3):
        for law, beta in ((G, 0.7), (RAD, 1.1)):
            dp = second_moment_exact(kernel, law, beta, N, offset)
            pairs = second_moment_pairs(kernel, law, beta, N, offset)
            assert dp == pytest.approx(pairs, rel=1e-10)


def test_second_moment_monotone():
    vals_b = [second_moment_exact(S, G, b, 64) for b in (0.0, 0.1, 0.2, 0.3, 0.4)]
    assert vals_b[0] == 1.0 and all(a < b for a, b in zip(vals_b, vals_b[1:]))
    vals_n = [second_moment_exact(S, G, 0.3, n) for n in (1, 2, 4, 16, 64, 256)]
    assert all(a < b for a, b in zip(vals_n, vals_n[1:]))
    assert min(vals_n) >= 1.0


def test_second_moment_first_order():
    for N in (1, 2, 3, 10):
        for beta in (1e-2, 3e-3):
            s2 = sigma2_pair(G, beta)
            rem = second_moment_exact(S, G, beta, N) - 1 - s2 * overlap_sum(S, N)
            assert abs(rem) <= 2 * N ** 2 * s2 ** 2


def test_flat_beta_zero():
    phi = TestFunction.gaussian(var=0.1)
    N = 64
    m = flat_moments(S, G, 0.0, N, phi)
    assert m.second_moment == pytest.approx(m.mean ** 2, rel=1e-13)
    assert m.mean == pytest.approx(phi.integral, rel=1e-3)


@pytest.mark.parametrize("kernel", [S, LZ], ids=["simple", "lazy"])
def test_flat_point_mass(kernel):
    N = 256
    h = 1 / math.sqrt(N)
    point = TestFunction.tabulated([[N]], lo=(-0.5 * h, -0.5 * h), spacing=h)
    sch = CouplingSchedule.critical(0.0, kernel=kernel)
    m = flat_moments(kernel, G, sch, N, point)
    assert m.mean == pytest.approx(1.0, rel=1e-14)
    assert m.second_moment == pytest.approx(second_moment_exact(kernel, G, sch.beta(N), N),
                                            rel=1e-12)


def test_flat_pair_of_points():
    N = 64
    h = 1 / math.sqrt(N)
    # mass N/2 at the lattice points 0 and (2, 0)
    two = TestFunction.tabulated([[N / 2], [0], [N / 2]], lo=(-0.5 * h, -0.5 * h), spacing=h)
    b = 0.4
    m = flat_moments(S, G, b, N, two)
    e0 = second_moment_exact(S, G, b, N)
    e2 = second_moment_exact(S, G, b, N, (2, 0))
    assert m.second_moment == pytest.approx(0.5 * e0 + 0.5 * e2, rel=1e-12)


def test_flat_budget():
    with pytest.raises(BudgetError, match="operations"):
        second_moment_flat(S, G, 0.1, 2 ** 22, TestFunction.box((-2, -2), (2, 2)))
    with pytest.raises(BudgetError):
        second_moment_pairs(S, G, 0.3, 6)
