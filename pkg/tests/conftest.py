import sys
from pathlib import Path

import pytest

# make the shared oracles importable from every test module
sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record ``(label, passed, detail)`` parts of an acceptance criterion for the summary."""
    def record(number, label, passed, detail=""):
        _ACCEPTANCE.setdefault(number, []).append((label, bool(passed), detail))
        request.node.user_properties.append(("criterion", number))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[number]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        summary = "; ".join(f"{label}: {'ok' if ok else 'FAILED'}{' (' + d + ')' if d else ''}" for label, ok, d in parts)
        terminalreporter.write_line(f"criterion {number}: {verdict} | {summary}")
