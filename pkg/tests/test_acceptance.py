"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Criteria 3, 6 and 8 are gated by the run-time budget; they report the
projected cost and fail unless ``SHF_FULL_SCALE=1`` is set.
"""

import time

import pytest
from conftest import ACCEPTANCE, record
from scipy import special

from shflab import continuum as C
from shflab import experiments as ex
from shflab import oracles
from shflab.config import resolve
from shflab.engine import point_to_plane
from shflab.harness import replica_seed
from shflab.lattice import DisorderField, DisorderLaw, WalkKernel

# reports produced here; criterion 10 checks positivity across all of them
REPORTS = []


def _gate_detail(rep):
    b = rep.statistics.get("budget", {})
    if rep.verdicts.get("within_budget") is False:
        return f"not run: projected {b['projected_seconds']:.3g} s > budget {b['budget_seconds']:.3g} s"
    return ""


def test_criterion_01_engine_matches_path_enumeration():
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        law = DisorderLaw.rademacher() if i % 2 else DisorderLaw.gaussian()
        f = DisorderField(replica_seed(1, i), law=law)
        m, z = i % 3, (i % 5 - 2, 1 - i % 4)
        a = point_to_plane(f, 0.8, m + 6, (m, z), box_radius_factor=None).partition_function
        b = oracles.enumerate_partition(f, 0.8, m, m + 6, z)
        worst = max(worst, abs(a - b) / b)
    secs = time.perf_counter() - t0
    ok = worst <= 1e-12 and secs < 10.0
    record(1, "engine vs path enumeration", ok, f"max rel {worst:.2e}, {secs:.1f} s")
    assert worst <= 1e-12
    assert secs < 10.0


def _sites(expansion):
    return {s for term in expansion.terms for s in term}


def test_criterion_02_chaos_expansion_identity():
    t0 = time.perf_counter()
    worst, most = 0.0, 0
    for i in range(50):
        f = DisorderField(replica_seed(2, i), law=DisorderLaw.rademacher() if i % 2 else DisorderLaw.gaussian())
        for horizon, y in ((1, None), (4, (2, 2)), (3, (1, 2))):
            e = oracles.chaos_expand(f, 0.9, 1, horizon, (0, 0), y)
            most = max(most, len(_sites(e)))
            ref = oracles.enumerate_partition(f, 0.9, 1, 1 + horizon, (0, 0), y)
            worst = max(worst, abs(oracles.evaluate(e, f) - ref) / ref)
    secs = time.perf_counter() - t0
    ok = worst <= 1e-10 and most <= 12 and secs < 10.0
    record(2, "chaos expansion identity", ok,
           f"max rel {worst:.2e}, <= {most} sites per window, {secs:.1f} s")
    assert most <= 12
    assert worst <= 1e-10
    assert secs < 10.0


def test_criterion_03_mean_one_at_full_scale():
    cfg = resolve("shf_moments", {}, N=[4096], replicas=10_000, exact_N=[], universality=False)
    rep = ex.test_shf_moments(cfg)
    REPORTS.append(rep)
    record(3, "mean one, N=2^12, 10^4 replicas", rep.passed, _gate_detail(rep))
    assert rep.passed, rep.flags


@pytest.mark.parametrize("N, replicas, seed", [(256, 400, 41), (1024, 80, 42)])
def test_criterion_04_variance_matches_exact_second_moment(N, replicas, seed):
    # smeared field against a Gaussian bump; its exact variance sums the
    # two-point second-moment DP over pairs of starting sites
    cfg = resolve("shf_moments", {}, N=[N], replicas=replicas, seed=seed,
                  exact_N=[], universality=False)
    rep = ex.test_shf_moments(cfg)
    REPORTS.append(rep)
    key = f"N={N}.variance_within_3se"
    row = rep.estimates["ensembles"][0]
    s = row["summary"]
    # the dynamic programme itself against the pair enumeration
    S, G = WalkKernel.simple(), DisorderLaw.gaussian()
    dp_err = max(abs(oracles.second_moment_exact(S, G, 0.6, n) - oracles.second_moment_pairs(S, G, 0.6, n))
                 / oracles.second_moment_pairs(S, G, 0.6, n) for n in (1, 2, 3))
    ok = rep.verdicts[key] and dp_err <= 1e-10
    prev = ACCEPTANCE.get(4)
    detail = (f"N={N}: var {s['variance']:.4f} +- {s['variance_se']:.4f} vs exact "
              f"{row['variance_exact']:.4f}; DP vs pairs {dp_err:.1e}")
    if prev is not None:
        ok = ok and prev[1]
        detail = prev[2] + " | " + detail
    record(4, "MC variance vs exact second moment", ok, detail)
    assert rep.verdicts[key]
    assert dp_err <= 1e-10


def test_criterion_05_continuum_gap_decreases():
    cfg = resolve("shf_moments", {})
    gap = ex.continuum_gap(cfg, [256, 1024, 4096])
    ok = all(b < a for a, b in zip(gap["gap"], gap["gap"][1:]))
    record(5, "lattice to continuum variance gap", ok,
           "gaps " + ", ".join(f"{g:.2e}" for g in gap["gap"]))
    assert ok


def test_criterion_06_phase_transition():
    cfg = resolve("phase_transition", {}, b=[0.5, 1.0, 1.2], N=[256, 4096, 65536], replicas=5000)
    rep = ex.test_phase_transition(cfg)
    REPORTS.append(rep)
    record(6, "phase transition trends", rep.passed, _gate_detail(rep))
    assert rep.passed, rep.flags


def test_criterion_07_scaling_covariance():
    rep = ex.test_scaling_covariance(resolve("scaling_covariance", {}, a=4.0, N=[256, 1024]))
    gaps = [r["relative_gap"] for r in rep.estimates.get("rows", [])]
    record(7, "scaling identity gap, a=4", rep.passed, "gaps " + ", ".join(f"{g:.3f}" for g in gaps))
    assert rep.passed, rep.flags


def test_criterion_08_ew_fluctuations():
    cfg = resolve("ew_fluctuations", {}, b=0.5, N=[256, 4096])
    rep = ex.test_ew_fluctuations(cfg)
    REPORTS.append(rep)
    record(8, "Edwards-Wilkinson fluctuations", rep.passed, _gate_detail(rep))
    assert rep.passed, rep.flags


def test_criterion_09_kernel_numerics():
    volterra = max(abs(C.volterra_G(th, t).value - C.volterra_G(th, t, "tanh_sinh").value)
                   / C.volterra_G(th, t, "tanh_sinh").value
                   for th in (-2.0, 0.0, 2.0) for t in (0.1, 1.0, 10.0))
    ew = max(abs(C.ew_kernel(t, r, "quadrature").value - 0.5 * special.exp1(r * r / (2 * t)))
             / (0.5 * special.exp1(r * r / (2 * t)))
             for t in (0.2, 1.0, 5.0) for r in (0.05, 0.5, 1.0, 3.0))
    semigroup = max(C.heat_semigroup_residual(s, t, x, y) for s, t in ((0.1, 2.0), (0.5, 1.0))
                    for x, y in (((0, 0), (0.3, -0.2)), ((1.0, 0.5), (-0.4, 0.0))))
    pts = ((0.0, 0.0), (1.0, 0.0), (0.0, 0.0), (1.0, 0.0))
    k = C.covariance_kernel(0.0, 1.0, *pts)
    mc, se = C.covariance_kernel_mc(0.0, 1.0, *pts, samples=400_000, seed=3)
    z = abs(k.value - mc) / se
    ok = volterra <= 1e-8 and ew <= 1e-10 and semigroup <= 1e-8 and z <= 3.0
    record(9, "kernel numerics", ok, f"volterra {volterra:.1e}, ew {ew:.1e}, "
           f"semigroup {semigroup:.1e}, covariance {z:.2f} SE")
    assert volterra <= 1e-8
    assert ew <= 1e-10
    assert semigroup <= 1e-8
    assert z <= 3.0


def test_criterion_10_positivity_and_determinism():
    cfg = resolve("shf_moments", {}, observable="point", N=[64], replicas=50, exact_N=[],
                  universality=True)
    a = ex.test_shf_moments(cfg)
    b = ex.test_shf_moments(cfg)
    REPORTS.extend([a, b])
    same = a.body_text() == b.body_text()
    ran = [r for r in REPORTS if "positivity" in r.verdicts]
    positive = all(r.verdicts["positivity"] for r in ran)
    record(10, "positivity and determinism", same and positive,
           f"{len(ran)} ensembles positive={positive}, identical bodies={same}")
    assert same
    assert positive
