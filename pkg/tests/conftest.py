from __future__ import annotations

import numpy as np
import pytest

from rsvol.grid import SpaceGrid
from rsvol.model import flat_model

SYM = [[-1.0, 1.0], [1.0, -1.0]]


@pytest.fixture(scope="session")
def grid() -> SpaceGrid:
    return SpaceGrid()


@pytest.fixture(scope="session")
def two_regime():
    """Irreducible 2-regime flat-vol model used across modules."""
    return flat_model([0.15, 0.35], b=SYM, rates=0.03)


@pytest.fixture(scope="session")
def decoupled():
    return flat_model([0.2, 0.3], rates=[0.02, 0.04], dividends=[0.0, 0.01])


def random_generator(rng: np.random.Generator, n: int, sparsity: float = 0.5) -> np.ndarray:
    off = rng.exponential(1.0, (n, n)) * (rng.random((n, n)) > sparsity)
    np.fill_diagonal(off, 0.0)
    return off - np.diag(off.sum(axis=0))


# one summary line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"


def pytest_terminal_summary(terminalreporter) -> None:
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
