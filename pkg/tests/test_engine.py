import math
import warnings

import numpy as np
import pytest

from shflab.engine import (NumericError, ParityWarning, RescaledMeasure, TruncationWarning,
                           average_against, chapman_kolmogorov_check, flat_field, log_field,
                           point_to_plane, point_to_plane_field, point_to_point,
                           point_to_point_slice, rescaled_measure, rotated_lost_mass, smeared)
from shflab.lattice import (ConstantField, DisorderField, DisorderLaw, DomainError, WalkKernel,
                            simple_walk_pmf)
from shflab.oracles import enumerate_partition
from shflab.schedule import CouplingSchedule
from shflab.testfunctions import TestFunction

REL = 1e-12


@pytest.mark.parametrize("kernel", [WalkKernel.simple(), WalkKernel.lazy(0.5)], ids=["simple", "lazy"])
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_point_to_plane_vs_enumeration(kernel, seed):
    f = DisorderField(seed)
    for T in (1, 3, 5):
        m, z = 4, (2, -3)
        sl = point_to_plane(f, 0.8, m + T, (m, z), box_radius_factor=None, kernel=kernel)
        ref = enumerate_partition(f, 0.8, m, m + T, z, kernel=kernel)
        assert sl.partition_function == pytest.approx(ref, rel=REL)


@pytest.mark.parametrize("engine", ["rotated", "grid"])
def test_engines_agree(engine):
    f = DisorderField(77, law=DisorderLaw.rademacher())
    sch = CouplingSchedule.critical(0.0, law=DisorderLaw.rademacher())
    a = point_to_plane(f, sch, 40, (0, (0, 0)), box_radius_factor=None, engine=engine)
    b = point_to_plane(f, sch, 40, (0, (0, 0)), box_radius_factor=None, engine="rotated")
    assert a.partition_function == pytest.approx(b.partition_function, rel=REL)


def test_beta_zero_mass_minus_lost():
    f = DisorderField(9)
    for factor in (0.6, 1.0, 2.0, None):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            sl = point_to_plane(f, 0.0, 100, box_radius_factor=factor)
        assert sl.partition_function == pytest.approx(1.0 - sl.lost_mass, abs=1e-13)
    sl = point_to_plane(f, 0.0, 100, kernel=WalkKernel.lazy(), box_radius_factor=1.0)
    assert sl.partition_function == pytest.approx(1.0 - sl.lost_mass, abs=1e-13)


def test_single_step_zero_disorder():
    # one weight exp(0 - lambda(1)) with lambda(1) = 1/2 for the Gaussian law
    sl = point_to_plane(ConstantField(0.0), 1.0, 1, box_radius_factor=None)
    assert sl.partition_function == pytest.approx(0.606531, abs=5e-7)


def test_non_finite_is_reported_with_time():
    with pytest.raises(NumericError, match="time 1"):
        point_to_plane(ConstantField(1e6), 1.0, 5, box_radius_factor=None)


def test_severe_truncation_warns():
    with pytest.warns(TruncationWarning):
        point_to_plane(DisorderField(1), 0.1, 64, box_radius_factor=0.5)


def test_truncation_control():
    f = DisorderField(4)
    for N, kernel in ((256, WalkKernel.simple()), (256, WalkKernel.lazy())):
        d1 = 1.0 - point_to_plane(f, 0.0, N, box_radius_factor=1.5, kernel=kernel).partition_function
        d2 = 1.0 - point_to_plane(f, 0.0, N, box_radius_factor=3.0, kernel=kernel).partition_function
        assert d1 > 0 and d2 < d1 / 10
    lost = [rotated_lost_mass(T, 10) for T in range(1, 200, 7)]
    assert all(a <= b for a, b in zip(lost, lost[1:]))
    by_factor = [point_to_plane(f, 0.0, 256, box_radius_factor=c).lost_mass for c in (1, 2, 3, 4)]
    assert all(a > b for a, b in zip(by_factor, by_factor[1:]))


def test_positivity_of_slices():
    f = DisorderField(8)
    sl = point_to_plane(f, CouplingSchedule.critical(1.0), 128)
    assert sl.support_min() > 0
    fl = point_to_plane_field(f, CouplingSchedule.critical(1.0), 128, 0, ((-5, 5), (-5, 5)))
    assert fl.values.min() > 0


def test_point_to_point_examples():
    f = DisorderField(1)
    assert point_to_point(f, 0.0, 0, 1, (0, 0), (1, 0)) == 0.25
    assert point_to_point(f, 0.0, 0, 2, (0, 0), (0, 0)) == pytest.approx(0.25, rel=1e-15)
    with pytest.warns(ParityWarning):
        assert point_to_point(f, 0.7, 0, 2, (0, 0), (1, 0)) == 0.0


def test_point_to_point_beta_zero_is_transition_probability():
    sl = point_to_point_slice(DisorderField(1), 0.0, 3, 13, (1, 1))
    s1, s2 = sl.sites()
    np.testing.assert_allclose(sl.values, simple_walk_pmf(10, s1 - 1, s2 - 1), atol=1e-15)


@pytest.mark.parametrize("seed", [5, 6])
def test_point_to_point_vs_enumeration(seed):
    f = DisorderField(seed)
    for T, y in ((1, (1, 0)), (3, (0, 1)), (5, (1, -2))):
        val = point_to_point(f, 0.9, 2, 2 + T, (0, 0), y)
        assert val == pytest.approx(enumerate_partition(f, 0.9, 2, 2 + T, (0, 0), y), rel=REL)


def test_chapman_kolmogorov():
    for seed in range(5):
        f = DisorderField(seed)
        assert chapman_kolmogorov_check(f, 0.7, 0, 3, 6, (0, 0), (1, 1)) <= 1e-12
        assert chapman_kolmogorov_check(f, 0.7, 0, 1, 2, (0, 0), (0, 0)) <= 1e-12
    assert chapman_kolmogorov_check(DisorderField(1), 0.0, 0, 2, 4, (0, 0), (0, 2)) == 0.0
    lazy = WalkKernel.lazy()
    assert chapman_kolmogorov_check(DisorderField(3), 0.7, 1, 3, 6, (0, 0), (1, 0),
                                    kernel=lazy) <= 1e-12


def test_rescaled_measure_beta_zero():
    N = 64
    mu = rescaled_measure(DisorderField(1), 0.0, N, 0.0, 0.5, box_radius_factor=None)
    n1, n2 = mu.masses.shape[:2]
    area = n1 * n2 * mu.cell_side ** 2
    assert mu.total == pytest.approx(area, rel=1e-13)
    # phi = 1 on the x-box integrates the full x-marginal
    assert average_against(mu, TestFunction.box()) == pytest.approx(
        area, rel=1e-13)
    # at beta = 0 the y-marginal of one x-cell is a discrete heat kernel of mass |cell|
    assert np.allclose(mu.masses.sum(axis=(2, 3)), mu.cell_side ** 2, rtol=1e-13)


def test_rescaled_measure_mean_is_lebesgue():
    N, reps = 64, 100
    sch = CouplingSchedule.critical(0.0)
    masses = [rescaled_measure(DisorderField(s), sch, N, 0.0, 1.0).masses.sum(axis=(2, 3))
              for s in range(reps)]
    tot = np.array([m.sum() for m in masses])
    area = masses[0].size * (2 / math.sqrt(N)) ** 2
    se = tot.std(ddof=1) / math.sqrt(reps)
    # the x-marginal has mean equal to the box area (up to a 1e-9 truncation loss)
    assert abs(tot.mean() - area) <= 3 * se


def test_rescaled_measure_outside_window():
    f = DisorderField(1, box_radius=20)
    with pytest.raises(DomainError):
        rescaled_measure(f, 0.0, 64, 0.0, 1.0)


def test_average_against_linear():
    f = DisorderField(3)
    sl = flat_field(f, CouplingSchedule.critical(0.0), 64, TestFunction.box(), 1.0)
    full = average_against(sl, TestFunction.box((-0.5, -0.5), (0.5, 0.5)))
    left = average_against(sl, TestFunction.box((-0.5, -0.5), (0.0, 0.5)))
    right = average_against(sl, TestFunction.box((0.0, -0.5), (0.5, 0.5)))
    assert left + right == pytest.approx(full, rel=1e-14)
    twice = average_against(sl, TestFunction.box((-0.5, -0.5), (0.5, 0.5), 2.0))
    assert twice == pytest.approx(2 * full, rel=1e-15)
    with pytest.raises(DomainError):
        average_against(sl, TestFunction.box((-2, -2), (2, 2)))


def test_average_against_beta_zero_area():
    sl = flat_field(DisorderField(3), 0.0, 64, TestFunction.box(), 1.0, box_radius_factor=None)
    area = average_against(sl, TestFunction.box())
    # (1/N) times the number of lattice points of the unit box
    assert area == pytest.approx(64 / 64, rel=1e-13)


def test_point_to_plane_mean_one():
    sch = CouplingSchedule.critical(0.0)
    z = np.array([point_to_plane(DisorderField(s), sch, 64).partition_function
                  for s in range(400)])
    se = z.std(ddof=1) / math.sqrt(z.size)
    assert abs(z.mean() - 1.0) <= 3 * se


def test_log_field():
    f = DisorderField(2)
    zero = point_to_plane_field(f, 0.0, 20, 0, ((-2, 2), (-2, 2)), box_radius_factor=None)
    assert np.all(log_field(zero) == 0.0)
    sl = point_to_plane_field(f, 1.2, 6, 0, ((-2, 2), (-1, 3)), box_radius_factor=None)
    L = log_field(sl)
    np.testing.assert_allclose(np.exp(L), sl.values, rtol=1e-14, atol=0)
    s1, s2 = sl.sites()
    for i in range(sl.shape[0]):
        for j in range(sl.shape[1]):
            ref = enumerate_partition(f, 1.2, 0, 6, (int(s1[i, 0]), int(s2[0, j])))
            assert L[i, j] == pytest.approx(math.log(ref), rel=1e-12, abs=1e-13)


def test_log_field_rejects_zero():
    sl = point_to_point_slice(DisorderField(1), 0.0, 0, 4, (0, 0))
    with pytest.raises(Exception):
        log_field(sl)


def test_smeared_log_matches_log_field():
    phi = TestFunction.gaussian(var=0.05)
    sl = flat_field(DisorderField(5), CouplingSchedule.critical(0.0), 64, phi)
    s1, s2 = sl.sites()
    direct = np.sum(phi(s1 / 8, s2 / 8) * np.log(sl.values)) / 64
    assert smeared(sl, phi, log=True) == pytest.approx(direct, rel=1e-14)
