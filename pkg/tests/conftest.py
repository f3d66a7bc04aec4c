from __future__ import annotations

import numpy as np
import pytest

from kfat import scenario


@pytest.fixture(scope="session")
def train0():
    return scenario.training_set(0)


@pytest.fixture(scope="session")
def noise_only_ds():
    return scenario.DatasetConfig.noise_only()


@pytest.fixture(scope="session")
def noise_only_train0(noise_only_ds):
    return scenario.training_set(0, noise_only_ds)


def branin(x):
    x1, x2 = x
    b = 5.1 / (4 * np.pi**2)
    c = 5 / np.pi
    t = 1 / (8 * np.pi)
    return (x2 - b * x1**2 + c * x1 - 6) ** 2 + 10 * (1 - t) * np.cos(x1) + 10


BRANIN_MIN = 0.397887


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion(capsys):
    """Record and print a one-line verdict for an acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        with capsys.disabled():
            print("\n" + line, flush=True)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
