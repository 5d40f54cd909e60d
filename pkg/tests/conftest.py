from __future__ import annotations

import json
from pathlib import Path

import pytest

from rpdi.monitor import PyMonitor
from rpdi.policy import PolicyConfig
from rpdi.tracelab.schema import load_trace

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = FIXTURES / "golden"

try:
    from rpdi._fastmonitor import FastMonitor
except ImportError:  # extension not built
    FastMonitor = None

MONITOR_CLASSES = [PyMonitor] + ([FastMonitor] if FastMonitor is not None else [])


def golden_manifest() -> dict:
    return json.loads((GOLDEN / "manifest.json").read_text(encoding="utf-8"))


def golden_config(**changes) -> PolicyConfig:
    return PolicyConfig(**golden_manifest()["config"]).with_(**changes)


def golden_entries() -> list[dict]:
    return golden_manifest()["traces"]


def golden_trace(entry: dict):
    return load_trace(GOLDEN / entry["file"])


def same_outcome(got, want, tol: float = 1e-9) -> bool:
    """Outcome tuples match: kind and step exactly, rpdi within ``tol``."""
    got, want = list(got), list(want)
    if got[:2] != want[:2] or (got[2] is None) != (want[2] is None):
        return False
    return got[2] is None or abs(got[2] - want[2]) <= tol


@pytest.fixture(params=MONITOR_CLASSES, ids=lambda c: c.__name__)
def monitor_cls(request):
    return request.param


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[str] = []


def report(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
