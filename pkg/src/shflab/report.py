"""Experiment reports: a structured text record with a stable key order."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field


def _clean(x):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if hasattr(x, "item") and not isinstance(x, (str, bytes)):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form of a configuration."""
    blob = json.dumps(_clean(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ExperimentReport:
    """Record of one experiment.

    The body (everything except ``timing``) is a deterministic function of
    the configuration and seed.  ``verdicts`` maps criterion names to bools;
    ``flags`` collects warnings that do not fail the run.
    """

    experiment: str
    config: dict
    seeds: dict = field(default_factory=dict)
    replicas: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)
    statistics: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    @property
    def passed(self) -> bool:
        return bool(self.verdicts) and all(bool(v) for v in self.verdicts.values())

    def body(self) -> dict:
        return _clean({
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "config": self.config,
            "seeds": self.seeds,
            "replicas": self.replicas,
            "estimates": self.estimates,
            "statistics": self.statistics,
            "verdicts": {k: bool(v) for k, v in self.verdicts.items()},
            "flags": list(self.flags),
            "passed": self.passed,
        })

    def body_text(self) -> str:
        return json.dumps(self.body(), indent=2)

    def to_text(self) -> str:
        d = self.body()
        d["timing"] = _clean(self.timing)
        return json.dumps(d, indent=2) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_text())

    def summary_lines(self):
        for k, v in self.verdicts.items():
            yield f"{self.experiment}.{k}: {'PASS' if v else 'FAIL'}"
