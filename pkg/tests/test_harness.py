import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shflab import experiments as ex
from shflab import harness
from shflab.config import COMMON, resolve
from shflab.engine import NumericError
from shflab.report import ExperimentReport
from shflab.stats import fsum_mean, strictly_decreasing, summarize, within_se


def _ensemble_cfg(**kw):
    cfg = dict(COMMON, regime="critical", value=0.0, N=16, replicas=6, seed=11)
    cfg.update(kw)
    return cfg


# -- seeding -----------------------------------------------------------------


def test_splitmix64_reference_output():
    # first output of the reference generator started from state 0
    assert harness.splitmix64(0) == 0xE220A8397B1DCDAF


def test_replica_seeds_distinct_and_mixed():
    seeds = [harness.replica_seed(7, r) for r in range(10_000)]
    assert len(set(seeds)) == len(seeds)
    assert all(0 <= s < 2 ** 64 for s in seeds)
    assert seeds[5] == harness.splitmix64(7 ^ 5)
    # masters for sub-experiments come from stream_seed, so their replica sets do not collide
    other = {harness.replica_seed(harness.stream_seed(7, 1), r) for r in range(10_000)}
    assert not other & set(seeds)
    bits = np.array([bin(s).count("1") for s in seeds])
    assert abs(bits.mean() - 32) < 0.2


def test_stream_seeds_depend_on_labels():
    a = harness.stream_seed(5, 0, 1)
    assert a != harness.stream_seed(5, 1, 0)
    assert a == harness.stream_seed(5, 0, 1)


# -- execution -----------------------------------------------------------------


def _failing(bad, seed):
    if seed in bad:
        raise NumericError("synthetic overflow")
    return [float(seed % 97), 1.0]


def test_failures_recorded_below_one_percent():
    seeds = [harness.replica_seed(3, r) for r in range(200)]
    ens = harness.run_replicas(lambda s: _failing({seeds[17], seeds[90]}, s), 3, 200,
                               names=("a", "b"))
    assert [f[0] for f in ens.failed] == [17, 90]
    assert ens.values.shape == (198, 2)


def test_failures_above_one_percent_abort():
    seeds = [harness.replica_seed(3, r) for r in range(100)]
    with pytest.raises(harness.EnsembleAborted, match="2 of 100"):
        harness.run_replicas(lambda s: _failing(set(seeds[:2]), s), 3, 100)


def test_programming_errors_propagate():
    def broken(seed):
        raise TypeError("bug")
    with pytest.raises(TypeError):
        harness.run_replicas(broken, 1, 3)


def test_zero_coupling_has_zero_variance():
    rep = harness.run_ensemble(_ensemble_cfg(regime="fixed", value=0.0))
    s = rep.estimates["value"]
    assert s["variance"] == 0.0
    assert s["mean"] == pytest.approx(1.0, abs=1e-9)
    assert rep.passed


def test_thread_count_does_not_change_results():
    one = harness.run_ensemble(_ensemble_cfg(threads=1))
    two = harness.run_ensemble(_ensemble_cfg(threads=2))
    assert one.estimates == two.estimates
    assert one.seeds == two.seeds


def test_identical_config_gives_identical_body():
    a = harness.run_ensemble(_ensemble_cfg())
    b = harness.run_ensemble(_ensemble_cfg())
    assert a.body_text() == b.body_text()
    c = harness.run_ensemble(_ensemble_cfg(seed=12))
    assert c.body_text() != a.body_text()


# -- statistics -----------------------------------------------------------------


def test_standard_error_scales_like_inverse_root(rng):
    for n in (400, 1600, 6400):
        s = summarize(rng.standard_normal(n))
        assert s["mean_se"] == pytest.approx(1 / math.sqrt(n), rel=0.2)
        # Var(s^2) = 2 / n for a unit normal sample
        assert s["variance_se"] == pytest.approx(math.sqrt(2 / n), rel=0.2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50), st.randoms())
def test_mean_is_order_independent(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    assert fsum_mean(xs) == fsum_mean(ys)


def test_trend_and_se_helpers():
    assert strictly_decreasing([3, 2, 1]) and not strictly_decreasing([3, 3, 1])
    assert within_se(1.0, 1.29, 0.1) and not within_se(1.0, 1.31, 0.1)


# -- budget gate ------------------------------------------------------------------


def test_budget_gate_reports_cost(monkeypatch):
    monkeypatch.delenv(harness.FULL_SCALE_ENV, raising=False)
    plan = harness.budget_check({"ns_per_site_update": 10.0, "budget_seconds": 1.0}, 1e9)
    assert plan["projected_seconds"] == pytest.approx(10.0)
    assert not plan["within_budget"] and not plan["forced"]
    rep = harness.over_budget_report("x", {}, plan)
    assert not rep.passed and "SHF_FULL_SCALE" in rep.flags[0]


def test_budget_gate_blocks_default_phase_transition(monkeypatch):
    monkeypatch.delenv(harness.FULL_SCALE_ENV, raising=False)
    cfg = resolve("phase_transition", {}, replicas=5000, N=[256, 4096, 65536])
    rep = ex.test_phase_transition(cfg)
    assert rep.verdicts == {"within_budget": False}
    assert rep.statistics["budget"]["projected_seconds"] > cfg["budget_seconds"]


def test_full_scale_override(monkeypatch):
    monkeypatch.setenv(harness.FULL_SCALE_ENV, "1")
    plan = harness.budget_check({"ns_per_site_update": 10.0, "budget_seconds": 1.0}, 1e9)
    assert plan["forced"]
    cfg = resolve("phase_transition", {}, replicas=4, N=[16, 32], b=[1.2], budget_seconds=0.0)
    rep = ex.test_phase_transition(cfg)
    assert "within_budget" not in rep.verdicts
    assert rep.replicas["b=1.2,N=32"]["completed"] == 4


# -- report -----------------------------------------------------------------------


def test_report_key_order_is_stable():
    rep = ExperimentReport("demo", {"z": 1, "a": 2}, verdicts={"ok": True})
    rep.timing["seconds"] = 1.5
    d = json.loads(rep.to_text())
    assert list(d) == ["experiment", "config_hash", "config", "seeds", "replicas", "estimates",
                       "statistics", "verdicts", "flags", "passed", "timing"]
    # configuration keys keep insertion order; the hash does not depend on it
    assert list(d["config"]) == ["z", "a"]
    assert rep.config_hash == ExperimentReport("demo", {"a": 2, "z": 1}).config_hash


def test_report_cleans_non_finite_and_numpy_values():
    rep = ExperimentReport("demo", {}, estimates={"x": np.float64(np.inf), "y": np.int64(3),
                                                   "z": float("nan")})
    d = json.loads(rep.body_text())
    assert d["estimates"] == {"x": "inf", "y": 3, "z": "nan"}


def test_passed_needs_a_verdict():
    assert not ExperimentReport("demo", {}).passed
    assert not ExperimentReport("demo", {}, verdicts={"a": True, "b": False}).passed
