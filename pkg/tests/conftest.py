import contextlib

import pytest

# criterion number -> (title, passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class _Report:
    def __init__(self):
        self.detail = ""


@pytest.fixture
def criterion():
    """``with criterion(n, title) as rep:`` records PASS unless the block raises."""

    @contextlib.contextmanager
    def record(number, title):
        rep = _Report()
        try:
            yield rep
        except BaseException as exc:
            ACCEPTANCE[number] = (title, False, rep.detail or f"{type(exc).__name__}: {exc}")
            raise
        ACCEPTANCE[number] = (title, True, rep.detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
