import os
import sys
from pathlib import Path

# single-threaded BLAS so determinism checks compare like with like
os.environ.setdefault("EBSR_NUM_THREADS", "1")

sys.path.insert(0, str(Path(__file__).parent))

import pytest  # noqa: E402

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record one acceptance line, then assert it."""

    def record(criterion: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE[criterion] = (bool(ok), detail)
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {criterion}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: (int(k.rstrip("abcd")), k)):
        ok, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{key:<4} {'PASS' if ok else 'FAIL'}  {detail}")
