"""Verification experiments.  Each takes a resolved configuration and returns a report.

Trend criteria are strict monotonicity statements over the configured grid;
exact-oracle comparisons use the finite-N dynamic programmes of
:mod:`shflab.oracles`.
"""

from __future__ import annotations

import math
from functools import partial

import numpy as np

from . import continuum, oracles
from .config import kernel_of, law_of, phi_of, schedule_of
from .engine import (box_margin, estimate_site_updates, flat_field, lattice_region,
                     point_to_plane, smeared)
from .harness import (budget_check, full_scale, over_budget_report, run_replicas,
                      stream_seed)
from .lattice import DisorderField, DisorderLaw, DomainError, UsageError
from .report import ExperimentReport
from .schedule import CouplingSchedule
from .stats import (ks_critical, ks_normal, quantiles, strictly_decreasing, summarize,
                    two_sample_z, within_se)
from .testfunctions import TestFunction


# ---------------------------------------------------------------------------
# replica functionals (module level so that they pickle)


def _schedule(p):
    return CouplingSchedule(p["regime"], p["value"], kernel_of(p), law_of(p), p["tuning"])


def _point_replica(p, seed):
    """``[Z_N, log Z_N, smallest value on the support, lost mass]``."""
    law = law_of(p)
    sl = point_to_plane(DisorderField(seed, law=law), _schedule(p), p["N"],
                        box_radius_factor=p["box_factor"])
    z = sl.partition_function
    return [z, math.log(z), sl.support_min(), sl.lost_mass]


def _flat_replica(p, seed):
    """``[Z(phi), (1/N) sum phi log Z, smallest value, lost mass]`` at time ``t``."""
    law = law_of(p)
    phi = TestFunction.from_dict(p["phi"])
    sl = flat_field(DisorderField(seed, law=law), _schedule(p), p["N"], phi, p["t"],
                    box_radius_factor=p["box_factor"], kernel=kernel_of(p))
    return [smeared(sl, phi), smeared(sl, phi, log=True), sl.support_min(), sl.lost_mass]


def lattice_mass(phi: TestFunction, N: int) -> float:
    """``(1/N) sum_z phi(z / sqrt N)``: the exact mean of the smeared field."""
    (a1, b1), (a2, b2) = lattice_region(phi, N)
    sq = math.sqrt(N)
    F = phi(np.arange(a1, b1 + 1)[:, None] / sq, np.arange(a2, b2 + 1)[None, :] / sq)
    return math.fsum(F.ravel().tolist()) / N


def _params(cfg, **kw):
    p = {"kernel": cfg["kernel"], "law": cfg["law"], "tuning": cfg.get("tuning", "beta"),
         "box_factor": cfg["box_factor"]}
    p.update(kw)
    return p


def _ensemble(fn, p, seed, cfg, names=("value", "log", "min", "lost")):
    return run_replicas(partial(fn, p), seed, int(cfg["replicas"]), int(cfg.get("threads", 1)),
                        names=names)


def _point_cost(cfg, N):
    kern = kernel_of(cfg)
    rot = kern.kind == "simple"
    R = box_margin(kern, N, cfg["box_factor"], rotated=rot)
    return estimate_site_updates("rotated" if rot else "grid", N, R)


def _flat_cost(cfg, N, t, phi):
    kern = kernel_of(cfg)
    T = int(math.floor(N * t))
    (a1, b1), (a2, b2) = lattice_region(phi, N)
    R = box_margin(kern, T, cfg["box_factor"])
    return estimate_site_updates("grid", T, R, (b1 - a1 + 1, b2 - a2 + 1))


def _gate(name, cfg, updates):
    plan = budget_check(cfg, updates)
    if plan["within_budget"] or full_scale():
        return plan, None
    return plan, over_budget_report(name, cfg, plan)


def _record(rep, key, ens, cfg):
    rep.seeds.setdefault("replica_seeds", {})[key] = ens.seeds
    rep.replicas[key] = {"requested": int(cfg["replicas"]), "completed": int(ens.values.shape[0]),
                         "failed": [list(f) for f in ens.failed]}
    rep.timing[key] = ens.seconds


def _lost_ok(rep, ens, cfg):
    worst = float(ens.column("lost").max()) if ens.values.size else 0.0
    rep.statistics.setdefault("lost_mass", []).append(worst)
    if worst > float(cfg.get("lost_mass_budget", 1e-6)):
        raise DomainError(f"truncation lost mass {worst:.3g} over budget; raise box_factor")


def _positivity(rep, ens):
    ok = bool(ens.values.size == 0 or np.all(ens.column("min") > 0))
    rep.verdicts["positivity"] = rep.verdicts.get("positivity", True) and ok


# ---------------------------------------------------------------------------
# experiments


def test_phase_transition(cfg) -> ExperimentReport:
    """Log-normal limit below the critical coupling, vanishing median above it."""
    name = "phase_transition"
    Ns = [int(n) for n in cfg["N"]]
    bs = [float(b) for b in cfg["b"]]
    plan, rep = _gate(name, cfg, sum(_point_cost(cfg, N) for N in Ns) * len(bs) * cfg["replicas"])
    if rep:
        return rep
    rep = ExperimentReport(name, cfg, seeds={"master": int(cfg["seed"])})
    rep.statistics["budget"] = plan
    for ib, b in enumerate(bs):
        rows = []
        for iN, N in enumerate(Ns):
            p = _params(cfg, regime="subcritical", value=b, N=N)
            ens = _ensemble(_point_replica, p, stream_seed(cfg["seed"], ib, iN), cfg)
            key = f"b={b:g},N={N}"
            _record(rep, key, ens, cfg)
            _lost_ok(rep, ens, cfg)
            _positivity(rep, ens)
            row = {"N": N, "beta": _schedule(p).beta(N), "log_Z": summarize(ens.column("log")),
                   "median_Z": float(np.median(ens.column("value")))}
            if b < 1:
                s2 = continuum.subcritical_sigma2(b)
                row["ks"] = ks_normal(ens.column("log"), -0.5 * s2, s2)
                row["ks_critical_5pct"] = ks_critical(ens.values.shape[0])
                if row["ks_critical_5pct"] > float(cfg.get("ks_resolution", 0.1)):
                    rep.flags.append(f"{key}: too few replicas to resolve KS distances")
            rows.append(row)
        rep.estimates[f"b={b:g}"] = rows
        if b < 1:
            rep.statistics[f"b={b:g}"] = {"sigma2": continuum.subcritical_sigma2(b),
                                          "ks": [r["ks"] for r in rows]}
            rep.verdicts[f"b={b:g}.ks_decreasing"] = strictly_decreasing(r["ks"] for r in rows)
        else:
            rep.statistics[f"b={b:g}"] = {"median": [r["median_Z"] for r in rows]}
            rep.verdicts[f"b={b:g}.median_decreasing"] = strictly_decreasing(
                r["median_Z"] for r in rows)
    return rep


def test_shf_moments(cfg) -> ExperimentReport:
    """Mean one, finite-N exact variance, lattice-to-continuum gap and universality."""
    name = "shf_moments"
    Ns = [int(n) for n in cfg["N"]]
    theta = float(cfg["theta"])
    t = float(cfg.get("t", 1.0))
    phi = phi_of(cfg)
    point = cfg.get("observable", "flat") == "point"
    kern, law = kernel_of(cfg), law_of(cfg)
    reps = int(cfg["replicas"]) * (2 if cfg.get("universality") else 1)
    cost = sum(_point_cost(cfg, N) if point else _flat_cost(cfg, N, t, phi) for N in Ns)
    plan, rep = _gate(name, cfg, cost * reps)
    if rep:
        return rep
    rep = ExperimentReport(name, cfg, seeds={"master": int(cfg["seed"])})
    rep.statistics["budget"] = plan
    target_mean = 1.0 if point else phi.integral
    rows = []
    last = None
    for iN, N in enumerate(Ns):
        sch = schedule_of(cfg, "critical", theta, law)
        if point:
            p = _params(cfg, regime="critical", value=theta, N=N)
            ens = _ensemble(_point_replica, p, stream_seed(cfg["seed"], 0, iN), cfg)
            exact_var = oracles.second_moment_exact(kern, law, sch.beta(N), N) - 1.0
        else:
            p = _params(cfg, regime="critical", value=theta, N=N, t=t, phi=cfg["phi"])
            ens = _ensemble(_flat_replica, p, stream_seed(cfg["seed"], 0, iN), cfg)
            exact_var = oracles.flat_moments(kern, law, sch, N, phi, t).variance
        key = f"N={N}"
        _record(rep, key, ens, cfg)
        _lost_ok(rep, ens, cfg)
        _positivity(rep, ens)
        s = summarize(ens.column("value"))
        rows.append({"N": N, "beta": sch.beta(N), "summary": s, "mean_target": target_mean,
                     "variance_exact": exact_var})
        rep.verdicts[f"N={N}.mean_within_3se"] = within_se(s["mean"], target_mean, s["mean_se"])
        rep.verdicts[f"N={N}.variance_within_3se"] = within_se(s["variance"], exact_var,
                                                               s["variance_se"])
        last = (N, p, s)
    rep.estimates["ensembles"] = rows

    exact_N = [int(n) for n in cfg.get("exact_N", [])]
    if exact_N and not point:
        gap = continuum_gap(cfg, exact_N)
        rep.statistics["continuum_gap"] = gap
        rep.verdicts["continuum_gap_decreasing"] = strictly_decreasing(gap["gap"])

    if cfg.get("universality") and last is not None:
        N, p, s = last
        q = dict(p, law={"kind": "rademacher"})
        fn = _point_replica if point else _flat_replica
        ens = _ensemble(fn, q, stream_seed(cfg["seed"], 1, len(Ns) - 1), cfg)
        _record(rep, f"rademacher,N={N}", ens, cfg)
        _positivity(rep, ens)
        r = summarize(ens.column("value"))
        zm = two_sample_z(s["mean"], s["mean_se"], r["mean"], r["mean_se"])
        zv = two_sample_z(s["variance"], s["variance_se"], r["variance"], r["variance_se"])
        rep.statistics["universality"] = {"N": N, "rademacher": r, "z_mean": zm, "z_variance": zv,
                                          "variance_ratio": s["variance"] / r["variance"]}
        rep.verdicts["universality_mean"] = zm <= 3.0
        rep.verdicts["universality_variance"] = zv <= 3.0
    return rep


def continuum_gap(cfg, Ns) -> dict:
    """``|E[Z_N(phi)^2] - (int phi)^2 - continuum variance|`` from exact second moments."""
    kern, law = kernel_of(cfg), law_of(cfg)
    theta, t = float(cfg["theta"]), float(cfg.get("t", 1.0))
    phi = phi_of(cfg)
    lim = continuum.lattice_flat_variance_limit(kern, theta, t, phi)
    gaps = []
    for N in Ns:
        m = oracles.flat_moments(kern, law, schedule_of(cfg, "critical", theta, law), int(N), phi, t)
        gaps.append(abs(m.second_moment - phi.integral ** 2 - lim.value))
    return {"N": [int(n) for n in Ns], "limit": lim.value,
            "limit_error": lim.abs_error_estimate, "gap": gaps}


def scaling_gap(cfg, N: int) -> dict:
    """Exact second moments on both sides of the diffusive scaling identity at scale ``N``."""
    kern, law = kernel_of(cfg), law_of(cfg)
    theta, a = float(cfg["theta"]), float(cfg["a"])
    phi = phi_of(cfg)
    lhs = oracles.flat_moments(kern, law, schedule_of(cfg, "critical", theta, law), N,
                               phi.rescaled(a), a).second_moment
    rhs = oracles.flat_moments(kern, law, schedule_of(cfg, "critical", theta + math.log(a), law),
                               N, phi, 1.0).second_moment
    return {"N": N, "lhs": lhs, "rhs_scaled": a * a * rhs,
            "relative_gap": abs(lhs - a * a * rhs) / (a * a * rhs)}


def test_scaling_covariance(cfg) -> ExperimentReport:
    """Scaling identity checked on exact second moments (no Monte Carlo)."""
    rep = ExperimentReport("scaling_covariance", cfg)
    Ns = [int(n) for n in cfg["N"]]
    try:
        rows = [scaling_gap(cfg, N) for N in Ns]
    except DomainError as e:
        rep.flags.append(f"schedule outside its domain ({e}); enlarge N")
        rep.verdicts["gap_decreasing"] = False
        return rep
    rep.estimates["rows"] = rows
    rep.statistics["theta_shifted"] = float(cfg["theta"]) + math.log(float(cfg["a"]))
    rep.verdicts["gap_decreasing"] = strictly_decreasing(r["relative_gap"] for r in rows)
    return rep


def test_ew_fluctuations(cfg) -> ExperimentReport:
    """Gaussian fluctuations of the smeared field and of its logarithm below criticality."""
    name = "ew_fluctuations"
    b = float(cfg["b"])
    if not b < 1:
        raise DomainError("Edwards-Wilkinson fluctuations need b < 1")
    Ns = [int(n) for n in cfg["N"]]
    t = float(cfg.get("t", 1.0))
    phi = phi_of(cfg)
    kern, law = kernel_of(cfg), law_of(cfg)
    plan, rep = _gate(name, cfg, sum(_flat_cost(cfg, N, t, phi) for N in Ns) * cfg["replicas"])
    if rep:
        return rep
    rep = ExperimentReport(name, cfg, seeds={"master": int(cfg["seed"])})
    rep.statistics["budget"] = plan
    target = continuum.lattice_ew_variance_limit(kern, b, t, phi)
    rows = []
    for iN, N in enumerate(Ns):
        p = _params(cfg, regime="subcritical", value=b, N=N, t=t, phi=cfg["phi"])
        ens = _ensemble(_flat_replica, p, stream_seed(cfg["seed"], iN), cfg)
        key = f"N={N}"
        _record(rep, key, ens, cfg)
        _lost_ok(rep, ens, cfg)
        _positivity(rep, ens)
        beta = _schedule(p).beta(N)
        mean = lattice_mass(phi, N)
        she = (ens.column("value") - mean) / beta
        kpz = ens.column("log") / beta
        kpz = kpz - np.mean(kpz)
        rows.append({"N": N, "beta": beta, "she": summarize(she), "kpz": summarize(kpz)})
    rep.estimates["rows"] = rows
    first, lastr = rows[0]["she"], rows[-1]["she"]
    var_ratio = lastr["variance"] / target.value
    she_kpz = lastr["variance"] / rows[-1]["kpz"]["variance"]
    rep.statistics.update({"variance_target": target.value,
                           "variance_target_error": target.abs_error_estimate,
                           "variance_ratio": var_ratio, "she_kpz_ratio": she_kpz})
    lo, hi = cfg["variance_band"]
    rlo, rhi = cfg["ratio_band"]
    rep.verdicts["skewness_decreasing"] = abs(lastr["skewness"]) < abs(first["skewness"])
    rep.verdicts["kurtosis_decreasing"] = abs(lastr["excess_kurtosis"]) < abs(first["excess_kurtosis"])
    rep.verdicts["variance_in_band"] = lo <= var_ratio <= hi
    rep.verdicts["she_kpz_ratio_in_band"] = rlo <= she_kpz <= rhi
    return rep


def smallball_scale(theta: float, rho: float, min_cells: int) -> int:
    """Smallest power of two resolving the ball of radius ``exp(rho theta / 2)``."""
    r = math.exp(0.5 * rho * theta)
    N = 16
    while r * math.sqrt(N) < min_cells or 1.0 + theta / math.log(N) <= 0.5:
        N *= 2
    return N


def test_smallball_lognormal(cfg) -> ExperimentReport:
    """Log-normality of the field averaged over shrinking balls as the window parameter drops."""
    name = "smallball_lognormal"
    rho, t = float(cfg["rho"]), float(cfg.get("t", 1.0))
    thetas = [float(x) for x in cfg["theta"]]
    x = tuple(float(v) for v in cfg.get("x", (0.0, 0.0)))
    law = law_of(cfg)
    scales = cfg.get("scales") or [smallball_scale(th, rho, int(cfg["min_cells"])) for th in thetas]
    balls = [TestFunction.ball(x, math.exp(0.5 * rho * th), 1.0) for th in thetas]
    cost = sum(_flat_cost(cfg, N, t, ph) for N, ph in zip(scales, balls))
    plan, rep = _gate(name, cfg, cost * cfg["replicas"])
    if rep:
        return rep
    rep = ExperimentReport(name, cfg, seeds={"master": int(cfg["seed"])})
    rep.statistics["budget"] = plan
    s2 = continuum.smallball_sigma2(rho)
    rows = []
    for i, (th, N, ball) in enumerate(zip(thetas, scales, balls)):
        radius_sites = ball.params[1] * math.sqrt(N)
        if radius_sites < int(cfg["min_cells"]):
            rep.flags.append(f"theta={th:g}: ball under-resolved ({radius_sites:.2f} sites)")
            rep.verdicts[f"theta={th:g}.resolved"] = False
        p = _params(cfg, regime="critical", value=th, N=N, t=t, phi=ball.to_dict())
        ens = _ensemble(_flat_replica, p, stream_seed(cfg["seed"], i), cfg)
        _record(rep, f"theta={th:g}", ens, cfg)
        _lost_ok(rep, ens, cfg)
        _positivity(rep, ens)
        # normalise by the lattice mass of the ball so that the mean is exactly one
        mass = lattice_mass(ball, N)
        logs = np.log(ens.column("value") / mass)
        rows.append({"theta": th, "N": N, "radius_sites": radius_sites, "lattice_mass": mass,
                     "log_mass": summarize(logs), "ks": ks_normal(logs, -0.5 * s2, s2)})
    rep.estimates["rows"] = rows
    rep.statistics["sigma2"] = s2
    rep.verdicts["ks_decreasing"] = strictly_decreasing(r["ks"] for r in rows)
    return rep


def test_local_extinction(cfg) -> ExperimentReport:
    """Median mass of a bounded set decreasing along a growing time grid."""
    name = "local_extinction"
    N, theta = int(cfg["N"]), float(cfg["theta"])
    ts = [float(v) for v in cfg["t"]]
    (a1, b1), (a2, b2) = cfg["A"]
    box = TestFunction.box((a1, a2), (b1, b2), 1.0)
    rep = ExperimentReport(name, cfg, seeds={"master": int(cfg["seed"])})
    # run the longest prefix of the time grid that fits the budget
    done, total = [], 0.0
    for tt in ts:
        total += _flat_cost(cfg, N, tt, box) * cfg["replicas"]
        if not budget_check(cfg, total)["within_budget"] and not full_scale():
            rep.flags.append(f"budget exceeded at t={tt:g}; partial report")
            break
        done.append(tt)
    rep.statistics["budget"] = budget_check(cfg, total)
    rows = []
    for i, tt in enumerate(done):
        p = _params(cfg, regime="critical", value=theta, N=N, t=tt, phi=box.to_dict())
        ens = _ensemble(_flat_replica, p, stream_seed(cfg["seed"], i), cfg)
        _record(rep, f"t={tt:g}", ens, cfg)
        _lost_ok(rep, ens, cfg)
        _positivity(rep, ens)
        v = ens.column("value")
        rows.append({"t": tt, "median": float(np.median(v)), "quantiles": quantiles(v),
                     "summary": summarize(v)})
    rep.estimates["rows"] = rows
    rep.statistics["area"] = box.integral
    rep.verdicts["complete"] = len(done) == len(ts)
    rep.verdicts["median_decreasing"] = len(rows) >= 2 and strictly_decreasing(
        r["median"] for r in rows)
    return rep


EXPERIMENTS = {
    "phase_transition": test_phase_transition,
    "shf_moments": test_shf_moments,
    "scaling_covariance": test_scaling_covariance,
    "ew_fluctuations": test_ew_fluctuations,
    "smallball_lognormal": test_smallball_lognormal,
    "local_extinction": test_local_extinction,
}


def run(name: str, cfg: dict) -> ExperimentReport:
    if name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    return EXPERIMENTS[name](cfg)
