import sys

import pytest

from cqsketch import atomics


@pytest.fixture
def fast_switching():
    """Shrink the interpreter's thread switch interval to force interleavings."""
    old = sys.getswitchinterval()
    sys.setswitchinterval(1e-6)
    yield
    sys.setswitchinterval(old)


@pytest.fixture(params=["descriptor", "lock"])
def dcas_mode(request):
    old = atomics.get_dcas_mode()
    atomics.set_dcas_mode(request.param)
    yield request.param
    atomics.set_dcas_mode(old)


ACCEPTANCE_LINES: list[str] = []


class Criterion:
    """Records one pass/fail/skip line per acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title

    def _line(self, status: str, detail: str) -> None:
        line = f"[{status}] criterion {self.number} ({self.title}): {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    def check(self, ok: bool, detail: str) -> None:
        self._line("PASS" if ok else "FAIL", detail)
        assert ok, detail

    def skip(self, detail: str) -> None:
        self._line("SKIP", detail)
        pytest.skip(detail)


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
