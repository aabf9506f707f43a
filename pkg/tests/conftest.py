import numpy as np
import pytest

from cellloc.domain import ProviderRecord, TowerObservation, TowerRegistry


def obs(tower, rss, rnc="R1"):
    return TowerObservation(tower, rnc, rss)


def record(t=0, phone="A", active=(("T0", -60.0),), neighbors=()):
    return ProviderRecord(
        "ev", t, phone,
        tuple(obs(a, r) for a, r in active),
        tuple(obs(a, r) for a, r in neighbors),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def registry3():
    return TowerRegistry(("T0", "T1", "T2"))


_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_line(request):
    """Record one PASS/FAIL line, shown again in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def emit(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
