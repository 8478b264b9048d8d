import os

import pytest

from exsample import _backend

BACKENDS = _backend.available()


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def pytest_report_header(config):
    return f"exsample backends: {', '.join(BACKENDS)} (active: {_backend.active()}, EXSAMPLE_BACKEND={os.environ.get('EXSAMPLE_BACKEND', 'auto')})"


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(capsys):
    def emit(label: str, passed: bool, detail: str) -> None:
        line = f"[acceptance] {label}: {'PASS' if passed else 'FAIL'} -- {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
