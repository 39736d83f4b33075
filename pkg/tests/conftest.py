"""Shared fixtures plus the acceptance-criteria summary section.

Acceptance tests in test_acceptance.py register a one-line result per
criterion; a terminal-summary hook prints those lines after the run so the
pass/fail status of every criterion is visible in plain `pytest -v` output.
"""

import pytest

from heightbins.synth import SceneSpec, generate_corpus

# nodeid -> (criterion number, detail line), filled by test_acceptance.py
ACCEPTANCE_LINES: dict[str, tuple[int, str]] = {}
_OUTCOMES: dict[str, bool] = {}


@pytest.fixture
def record_criterion(request):
    """Register the one-line summary for an acceptance criterion test."""

    def rec(num: int, detail: str) -> None:
        ACCEPTANCE_LINES[request.node.nodeid] = (num, detail)

    return rec


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """24 sparse 16px patches with train/val/test splits; returns manifest path."""
    root = tmp_path_factory.mktemp("corpus16")
    spec = SceneSpec(
        seed=5, size=16, building_count=(1, 3), footprint_size=(3, 6),
        canopy_count=(0, 2), canopy_radius=(1.5, 3.0),
    )
    generate_corpus(root, spec, count=24)
    return root / "manifest.json"


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _OUTCOMES[report.nodeid] = report.passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES and not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    rows = sorted(
        (
            (num, nodeid, detail)
            for nodeid, (num, detail) in ACCEPTANCE_LINES.items()
        ),
    )
    seen = set()
    for num, nodeid, detail in rows:
        status = "PASS" if _OUTCOMES.get(nodeid, False) else "FAIL"
        terminalreporter.write_line(f"criterion {num} {status}: {detail}")
        seen.add(nodeid)
    for nodeid, passed in sorted(_OUTCOMES.items()):
        if nodeid not in seen and not passed:
            terminalreporter.write_line(f"FAIL (no detail recorded): {nodeid}")
