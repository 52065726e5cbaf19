import pytest
import torch

from symface.toyfaces import generate_face

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def face64():
    return generate_face(7, size=64)


@pytest.fixture(scope="session")
def face128():
    return generate_face(7, size=128)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record a one-line verdict for an acceptance criterion, then assert it."""

    def record(number, name, ok, detail=""):
        verdict = "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES.append(f"[{number:>2}] {verdict} {name}" + (f" -- {detail}" if detail else ""))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[1:3])):
            terminalreporter.write_line(line)
