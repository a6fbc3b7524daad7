import pytest
from hypothesis import settings

from acoustikey import protocol

# numerical property tests vary widely in per-example cost; wall-clock deadlines only add flakiness
settings.register_profile("default", deadline=None)
settings.load_profile("default")

SESSION_TALLY = {"complete": 0, "unequal": 0}
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(autouse=True, scope="session")
def key_equality_guard():
    """Every session run anywhere in the suite is checked: Complete implies equal keys."""
    original = protocol._Session.run

    def guarded(self):
        out = original(self)
        if out.success:
            SESSION_TALLY["complete"] += 1
            if out.key_alice != out.key_bob:
                SESSION_TALLY["unequal"] += 1
                raise AssertionError(f"session {out.transcript.session_id.hex()} completed with unequal keys")
        return out

    protocol._Session.run = guarded
    yield SESSION_TALLY
    protocol._Session.run = original


@pytest.fixture
def report():
    def emit(criterion: str, passed: bool, detail: str) -> bool:
        line = f"{criterion:<4} {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
    if SESSION_TALLY["complete"]:
        terminalreporter.write_line(f"suite-wide: {SESSION_TALLY['complete']} completed sessions, "
                                    f"{SESSION_TALLY['unequal']} with unequal keys")
