"""Shared fixtures and the acceptance summary printed at the end of a run."""

import numpy as np
import pytest

# criterion number -> (label, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def record(number: int, label: str, passed: bool, detail: str = ""):
    ACCEPTANCE[number] = (label, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        label, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {label}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
