"""Replica ensembles: seeding, parallel execution, failure accounting, budget gate."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .engine import NumericError
from .lattice import DomainError
from .report import ExperimentReport
from .stats import summarize

_MASK = (1 << 64) - 1
MAX_FAILURE_FRACTION = 0.01
FULL_SCALE_ENV = "SHF_FULL_SCALE"


def splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def replica_seed(master: int, r: int) -> int:
    """Seed of replica ``r``: ``splitmix64(master XOR r)``."""
    return splitmix64((int(master) ^ int(r)) & _MASK)


def stream_seed(master: int, *labels: int) -> int:
    """Independent master seed for a sub-experiment indexed by ``labels``."""
    s = int(master) & _MASK
    for lab in labels:
        s = splitmix64(s ^ splitmix64(int(lab) & _MASK))
    return s


class EnsembleAborted(RuntimeError):
    """More than 1% of the replicas failed."""


class BudgetExceeded(RuntimeError):
    pass


@dataclass
class Ensemble:
    seeds: list
    values: np.ndarray  # (completed, k), rows ordered by replica index
    failed: list  # (replica index, error text)
    names: tuple
    seconds: float

    def column(self, name):
        return self.values[:, self.names.index(name)]


_FAILURES = (NumericError, DomainError, ArithmeticError, FloatingPointError)


def _call(fn, seed):
    try:
        return True, fn(seed)
    except _FAILURES as e:  # a replica-level numeric failure is recorded, not raised
        return False, f"{type(e).__name__}: {e}"


def run_replicas(fn, master_seed: int, replicas: int, threads: int = 1,
                 names: tuple | None = None) -> Ensemble:
    """Evaluate ``fn(seed) -> sequence of floats`` on ``replicas`` seeds.

    ``fn`` must be picklable when ``threads > 1``.  Results are stored by
    replica index, so completion order never affects the output.
    """
    if replicas < 1:
        raise DomainError("need at least one replica")
    seeds = [replica_seed(master_seed, r) for r in range(replicas)]
    t0 = time.perf_counter()
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_call, [fn] * replicas, seeds,
                                  chunksize=max(1, replicas // (4 * threads))))
    else:
        results = [_call(fn, s) for s in seeds]
    ok_rows, failed = [], []
    for r, (ok, out) in enumerate(results):
        if ok:
            ok_rows.append(np.atleast_1d(np.asarray(out, dtype=float)))
        else:
            failed.append((r, out))
    if len(failed) > MAX_FAILURE_FRACTION * replicas:
        raise EnsembleAborted(f"{len(failed)} of {replicas} replicas failed; first: {failed[0][1]}")
    vals = np.vstack(ok_rows) if ok_rows else np.empty((0, len(names or ())))
    k = vals.shape[1] if vals.ndim == 2 else 0
    return Ensemble(seeds, vals, failed, tuple(names or (f"f{i}" for i in range(k))),
                    time.perf_counter() - t0)


def full_scale() -> bool:
    return os.environ.get(FULL_SCALE_ENV, "") not in ("", "0")


def budget_check(cfg: dict, site_updates: float) -> dict:
    """Projected run time from the number of site updates; see :data:`FULL_SCALE_ENV`."""
    secs = site_updates * float(cfg["ns_per_site_update"]) * 1e-9 / max(1, int(cfg.get("threads", 1)))
    budget = float(cfg["budget_seconds"])
    return {"site_updates": float(site_updates), "projected_seconds": secs,
            "budget_seconds": budget, "within_budget": secs <= budget,
            "forced": full_scale() and secs > budget}


def over_budget_report(name: str, cfg: dict, plan: dict) -> ExperimentReport:
    """Report for an experiment that was not run because it exceeds the budget."""
    rep = ExperimentReport(name, cfg)
    rep.statistics["budget"] = plan
    rep.verdicts["within_budget"] = False
    rep.flags.append(
        f"not run: projected {plan['projected_seconds']:.3g} s exceeds the budget of "
        f"{plan['budget_seconds']:.3g} s; set {FULL_SCALE_ENV}=1 to run anyway")
    return rep


# ---------------------------------------------------------------------------
# generic ensemble


def _point_functional(cfg_items, seed):
    from .config import kernel_of, law_of, phi_of, schedule_of
    from .engine import flat_field, point_to_plane, smeared
    from .lattice import DisorderField
    cfg = dict(cfg_items)
    law = law_of(cfg)
    sch = schedule_of(cfg, cfg["regime"], cfg["value"], law)
    fld = DisorderField(seed, law=law)
    N = int(cfg["N"])
    if cfg.get("functional", "point_to_plane") == "point_to_plane":
        sl = point_to_plane(fld, sch, N, box_radius_factor=cfg["box_factor"])
        return [sl.partition_function, sl.support_min()]
    sl = flat_field(fld, sch, N, phi_of(cfg), float(cfg.get("t", 1.0)),
                    box_radius_factor=cfg["box_factor"], kernel=kernel_of(cfg))
    return [smeared(sl, phi_of(cfg)), sl.support_min()]


def run_ensemble(cfg: dict) -> ExperimentReport:
    """Ensemble of one functional described by ``cfg``.

    Keys: ``regime``/``value`` (schedule), ``N``, ``functional``
    (``point_to_plane`` or ``flat``; the latter smears against ``phi`` at
    macroscopic time ``t``), ``replicas``, ``seed``, ``threads``.
    """
    from functools import partial
    if int(cfg["replicas"]) < 2:
        raise DomainError("an ensemble needs at least two replicas")
    fn = partial(_point_functional, tuple(sorted(cfg.items(), key=lambda kv: kv[0])))
    ens = run_replicas(fn, int(cfg["seed"]), int(cfg["replicas"]), int(cfg.get("threads", 1)),
                       names=("value", "min"))
    rep = ExperimentReport("ensemble", cfg)
    rep.seeds = {"master": int(cfg["seed"]), "replica_seeds": ens.seeds}
    rep.replicas = {"requested": int(cfg["replicas"]), "completed": int(ens.values.shape[0]),
                    "failed": [list(f) for f in ens.failed]}
    rep.estimates["value"] = summarize(ens.column("value"))
    rep.verdicts["positivity"] = bool(np.all(ens.column("min") > 0))
    rep.timing["seconds"] = ens.seconds
    return rep


def sanitize_positive(x) -> float:
    x = float(x)
    if not math.isfinite(x) or x <= 0:
        raise NumericError("non-positive or non-finite partition value")
    return x
