import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from porecrit.cli import main  # noqa: E402

ACCEPTANCE_LINES: list[str] = []
REFERENCE_TIMING: dict[str, float] = {}


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line per acceptance criterion, printed in the terminal summary."""
    def record(number: int, name: str, ok: bool, detail: str = ""):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}"
        if detail:
            line += f" :: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory):
    """Output directory of one default (reference) pipeline run."""
    out = tmp_path_factory.mktemp("reference")
    start = time.perf_counter()
    assert main(["pipeline", "--output-dir", str(out), "-q"]) == 0
    REFERENCE_TIMING["pipeline_seconds"] = time.perf_counter() - start
    return out
