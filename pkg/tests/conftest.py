import os
from pathlib import Path

import pytest

ACCEPTANCE_LINES: list[str] = []


def ml1m_path():
    root = os.environ.get("IRS_DATA_DIR")
    if not root:
        return None
    p = Path(root) / "ml-1m" / "ratings.dat"
    return p if p.exists() else None


@pytest.fixture(scope="session")
def acceptance_log():
    def record(criterion: str, ok, detail: str = ""):
        status = {True: "PASS", False: "FAIL", None: "UNVERIFIED"}[ok]
        ACCEPTANCE_LINES.append(f"[{status}] {criterion}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
