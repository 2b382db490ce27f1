"""Command line interface: ``shflab <subcommand> [options]``.

Subcommands: ``simulate``, ``moments``, ``kernel``, ``test <name>``,
``render <snapshot>``, ``selftest``.  Every subcommand that produces verdicts
writes a JSON report into ``--out`` and exits with 0 only if all verdicts pass.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time

import numpy as np

from . import config as C
from . import continuum, experiments, io, oracles
from .engine import flat_field, point_to_plane, point_to_point
from .harness import EnsembleAborted, replica_seed
from .lattice import DisorderField, DomainError, UsageError, WalkKernel
from .report import ExperimentReport
from .testfunctions import TestFunction


def _cfg(args, experiment):
    user = C.load(args.config) if args.config else {}
    return C.resolve(experiment, user, seed=args.seed, replicas=args.replicas,
                     threads=args.threads)


def _finish(rep: ExperimentReport, args, name) -> int:
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{name}_report.json")
    rep.write(path)
    for line in rep.summary_lines():
        print(line)
    for f in rep.flags:
        print(f"flag: {f}")
    print(f"report: {path}")
    return 0 if rep.passed else 1


# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _cfg(args, "simulate")
    law = C.law_of(cfg)
    sch = C.schedule_of(cfg, cfg["regime"], cfg["value"], law)
    N = int(cfg["N"])
    rep = ExperimentReport("simulate", cfg, seeds={"master": int(cfg["seed"])})
    os.makedirs(args.out, exist_ok=True)
    rows, positive = [], True
    t0 = time.perf_counter()
    for r in range(int(cfg["replicas"])):
        seed = replica_seed(cfg["seed"], r)
        fld = DisorderField(seed, law=law)
        if cfg["mode"] == "endpoint":
            sl = point_to_plane(fld, sch, N, box_radius_factor=cfg["box_factor"])
            vals, time_macro, total = sl.values, 1.0, sl.partition_function
        elif cfg["mode"] == "field":
            phi = C.phi_of(cfg)
            sl = flat_field(fld, sch, N, phi, float(cfg["t"]), box_radius_factor=cfg["box_factor"],
                            kernel=C.kernel_of(cfg))
            vals, time_macro, total = sl.values, float(cfg["t"]), float(sl.values.mean())
        else:
            raise UsageError("mode must be 'endpoint' or 'field'")
        positive &= sl.support_min() > 0
        path = os.path.join(args.out, f"snapshot_{r:04d}.shf")
        io.write_snapshot(path, vals, 1.0 / math.sqrt(N), time_macro, {
            "seed": seed, "master_seed": int(cfg["seed"]), "replica": r,
            "schedule": sch.to_dict(), "beta": sl.beta, "N": N, "mode": cfg["mode"],
            "lattice_lo": [int(v) for v in sl.lo], "lost_mass": sl.lost_mass})
        rows.append({"replica": r, "seed": seed, "snapshot": os.path.basename(path),
                     "shape": list(vals.shape), "total": total, "lost_mass": sl.lost_mass})
    rep.estimates["snapshots"] = rows
    rep.verdicts["positivity"] = bool(positive)
    rep.timing["seconds"] = time.perf_counter() - t0
    return _finish(rep, args, "simulate")


def cmd_moments(args) -> int:
    cfg = _cfg(args, "moments")
    kern, law = C.kernel_of(cfg), C.law_of(cfg)
    sch = C.schedule_of(cfg, cfg["regime"], cfg["value"], law)
    phi = C.phi_of(cfg)
    t = float(cfg["t"])
    rep = ExperimentReport("moments", cfg)
    rows = []
    for N in [int(n) for n in cfg["N"]]:
        beta = sch.beta(N)
        fm = oracles.flat_moments(kern, law, sch, N, phi, t)
        rows.append({"N": N, "beta": beta, "sigma2": fm.sigma2,
                     "point_second_moment": oracles.second_moment_exact(kern, law, beta, N),
                     "flat_mean": fm.mean, "flat_second_moment": fm.second_moment,
                     "flat_variance": fm.variance})
    rep.estimates["rows"] = rows
    if cfg["regime"] == "critical":
        lim = continuum.lattice_flat_variance_limit(kern, float(cfg["value"]), t, phi)
        rep.estimates["continuum_flat_variance"] = {"value": lim.value,
                                                    "abs_error": lim.abs_error_estimate}
    rep.verdicts["finite"] = all(math.isfinite(r["flat_second_moment"]) for r in rows)
    return _finish(rep, args, "moments")


def _kernel_value(name, theta, row, col, method=None):
    """One cell of a kernel table; see :func:`cmd_kernel` for the axes."""
    if name == "heat":
        return continuum.heat_kernel(float(theta), (row, col)), None
    if name == "volterra":
        a = continuum.volterra_G(row, col)
        b = continuum.volterra_G(row, col, "tanh_sinh")
        return a.value, a.agrees(b)
    if name == "volterra_integral":
        a = continuum.volterra_G_integral(row, col)
        b = continuum.volterra_G_integral(row, col, "tanh_sinh")
        return a.value, a.agrees(b)
    if name == "ew":
        a = continuum.ew_kernel(row, col)
        b = continuum.ew_kernel(row, col, "quadrature")
        return a.value, a.singular or abs(a.value - b.value) <= 1e-10 * max(1.0, abs(a.value))
    if name == "additive_she":
        a = continuum.additive_she_kernel(row, col)
        b = continuum.additive_she_kernel(row, col, "quadrature")
        return a.value, a.singular or abs(a.value - b.value) <= 1e-10 * max(1.0, abs(a.value))
    if name == "variance_flat":
        return continuum.variance_flat(theta, row, col).value, None
    raise UsageError(f"unknown kernel {name!r}")


def cmd_kernel(args) -> int:
    """Tabulate a kernel on ``rows x cols`` into an SHF1 file.

    Axes: ``heat`` rows/cols are x1/x2 at time ``theta`` (used as t);
    ``volterra``/``volterra_integral`` rows are theta and cols t;
    ``ew``/``additive_she``/``variance_flat`` rows are t and cols r.
    Singular cells hold +inf.
    """
    cfg = _cfg(args, "kernel")
    name, theta = cfg["name"], float(cfg.get("theta", 0.0))
    rows, cols = [float(v) for v in cfg["rows"]], [float(v) for v in cfg["cols"]]
    table = np.empty((len(rows), len(cols)))
    agree = []
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            table[i, j], ok = _kernel_value(name, theta, r, c)
            if ok is not None:
                agree.append(bool(ok))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"kernel_{name}.shf")
    io.write_snapshot(path, table, 0.0, 0.0, {"kernel": name, "theta": theta,
                                                "rows": rows, "cols": cols})
    rep = ExperimentReport("kernel", cfg)
    rep.estimates["table"] = table.tolist()
    rep.estimates["snapshot"] = os.path.basename(path)
    rep.verdicts["dual_method_agreement"] = all(agree)
    rep.verdicts["no_nan"] = not bool(np.any(np.isnan(table)))
    return _finish(rep, args, "kernel")


def cmd_test(args) -> int:
    name = args.name
    if name not in experiments.EXPERIMENTS:
        print(f"unknown experiment {name!r}; choose from {sorted(experiments.EXPERIMENTS)}",
              file=sys.stderr)
        return 2
    cfg = _cfg(args, name)
    t0 = time.perf_counter()
    rep = experiments.run(name, cfg)
    rep.timing["total_seconds"] = time.perf_counter() - t0
    return _finish(rep, args, name)


def cmd_render(args) -> int:
    out = args.output or os.path.splitext(args.snapshot)[0] + ".pgm"
    rows, cols = io.render_field(args.snapshot, out)
    print(f"wrote {out} ({rows}x{cols})")
    return 0


def selftest_report(seed: int = 1) -> ExperimentReport:
    """Fast consistency battery: engines against brute force and kernels against each other."""
    cfg = {"experiment": "selftest", "seed": int(seed)}
    rep = ExperimentReport("selftest", cfg, seeds={"master": int(seed)})
    errs = []
    for r in range(5):
        fld = DisorderField(replica_seed(seed, r))
        for kern in (WalkKernel.simple(), WalkKernel.lazy(0.5)):
            a = point_to_plane(fld, 0.7, 5, start=(1, (0, 0)), kernel=kern,
                               box_radius_factor=None).partition_function
            b = oracles.enumerate_partition(fld, 0.7, 1, 5, (0, 0), kernel=kern)
            errs.append(abs(a - b) / b)
            a = point_to_point(fld, 0.7, 0, 4, (0, 0), (2, 0), kernel=kern)
            b = oracles.enumerate_partition(fld, 0.7, 0, 4, (0, 0), (2, 0), kernel=kern)
            errs.append(abs(a - b) / b)
        ex = oracles.chaos_expand(fld, 0.9, 0, 3, (0, 0))
        c = oracles.evaluate(ex, fld)
        d = oracles.enumerate_partition(fld, 0.9, 0, 3, (0, 0))
        errs.append(abs(c - d) / d)
    rep.statistics["engine_max_relative_error"] = max(errs)
    rep.verdicts["engine_vs_enumeration"] = max(errs) <= 1e-12
    from .lattice import DisorderLaw
    dp = oracles.second_moment_exact(WalkKernel.simple(), DisorderLaw.gaussian(), 0.8, 3)
    pp = oracles.second_moment_pairs(WalkKernel.simple(), DisorderLaw.gaussian(), 0.8, 3)
    rep.statistics["second_moment_dp_vs_pairs"] = abs(dp - pp) / pp
    rep.verdicts["second_moment_dp"] = abs(dp - pp) <= 1e-10 * pp
    g = [continuum.volterra_G(th, t) for th in (-2.0, 0.0, 2.0) for t in (0.1, 1.0, 10.0)]
    h = [continuum.volterra_G(th, t, "tanh_sinh") for th in (-2.0, 0.0, 2.0) for t in (0.1, 1.0, 10.0)]
    rel = max(abs(a.value - b.value) / b.value for a, b in zip(g, h))
    rep.statistics["volterra_dual_relative"] = rel
    rep.verdicts["volterra_dual"] = rel <= 1e-8
    e = max(abs(continuum.ew_kernel(t, r).value - continuum.ew_kernel(t, r, "quadrature").value)
            for t in (0.5, 1.0, 2.0) for r in (0.1, 0.5, 1.0, 3.0))
    rep.statistics["ew_kernel_max_abs"] = e
    rep.verdicts["ew_kernel"] = e <= 1e-10
    return rep


def cmd_selftest(args) -> int:
    t0 = time.perf_counter()
    rep = selftest_report(args.seed if args.seed is not None else 1)
    rep.timing["seconds"] = time.perf_counter() - t0
    return _finish(rep, args, "selftest")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON configuration file")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--replicas", type=int, help="number of replicas")
    common.add_argument("--out", default="shflab_out", help="output directory")
    common.add_argument("--threads", type=int, help="worker processes")
    p = argparse.ArgumentParser(prog="shflab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run replicas and write SHF1 snapshots"
                   ).set_defaults(fn=cmd_simulate)
    sub.add_parser("moments", parents=[common], help="exact finite-N second moments"
                   ).set_defaults(fn=cmd_moments)
    sub.add_parser("kernel", parents=[common], help="tabulate a continuum kernel"
                   ).set_defaults(fn=cmd_kernel)
    t = sub.add_parser("test", parents=[common], help="run a verification experiment")
    t.add_argument("name", help=", ".join(sorted(experiments.EXPERIMENTS)))
    t.set_defaults(fn=cmd_test)
    r = sub.add_parser("render", parents=[common], help="render a snapshot to plain PGM")
    r.add_argument("snapshot")
    r.add_argument("-o", "--output", help="PGM path (default: next to the snapshot)")
    r.set_defaults(fn=cmd_render)
    sub.add_parser("selftest", parents=[common], help="fast consistency battery"
                   ).set_defaults(fn=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except (ValueError, oracles.BudgetError, EnsembleAborted, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
