"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import pytest

CRITERIA = {
    1: "gradient fidelity",
    2: "sampling statistics",
    3: "GGX normalization",
    4: "loss metric axioms",
    5: "mean-colour ablation",
    6: "end-to-end desk training",
    7: "reproducibility",
    8: "conformance constants",
}

_results: dict[int, list[tuple[bool, str]]] = {}


class AcceptanceRecorder:
    def __init__(self, criterion: int):
        self.criterion = criterion

    def check(self, ok, detail: str) -> bool:
        ok = bool(ok)
        _results.setdefault(self.criterion, []).append((ok, detail))
        return ok


@pytest.fixture
def acceptance(request):
    marker = request.node.get_closest_marker("criterion")
    if marker is None:
        raise RuntimeError("acceptance tests need @pytest.mark.criterion(n)")
    return AcceptanceRecorder(marker.args[0])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, name in CRITERIA.items():
        checks = _results.get(n)
        if checks is None:
            tr.write_line(f"[----] {n}. {name}: not run")
            continue
        ok = all(c for c, _ in checks)
        details = "; ".join(d for _, d in checks)
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {name}: {details}")
