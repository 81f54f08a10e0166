from __future__ import annotations

import numpy as np
import pytest

from filippov.integrator import IntegratorConfig

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict = {}


def report(key: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[key] = f"{'PASS' if ok else 'FAIL'}  {key}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split(".")[0]), k)):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture
def cfg() -> IntegratorConfig:
    return IntegratorConfig()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20261018)
