from collections import defaultdict
from pathlib import Path

import pytest

from predgc.heap import ROOT

DATA = Path(__file__).parent / "data"

_ACCEPTANCE = []


def reachable_oracle(heap):
    """Reachability recomputed from the raw edge list, independent of
    Heap.mark_reachable and its cache."""
    adj = defaultdict(list)
    for parent, child, _ in heap.edges():
        adj[parent].append(child)
    seen, todo = set(), [ROOT]
    while todo:
        node = todo.pop()
        for child in adj[node]:
            if child not in seen:
                seen.add(child)
                todo.append(child)
    return seen


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, title, passed, detail=""):
        _ACCEPTANCE.append((number, title, passed, detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        mark = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{mark}] {number:>2}. {title}" + (f" ({detail})" if detail else ""))
