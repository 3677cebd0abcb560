import logging

import pytest

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record one acceptance criterion result: ``acceptance(key, passed, detail)``."""

    def record(key: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE[key] = (bool(passed), detail)
        return passed

    return record


@pytest.fixture(autouse=True)
def _quiet_extraction_warnings():
    logging.getLogger("roofkit").setLevel(logging.ERROR)
    yield
    logging.getLogger("roofkit").setLevel(logging.NOTSET)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split()[0])):
        passed, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {key}: {detail}")
