import numpy as np
import pytest

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def record(number: int, title: str, passed: bool, detail: str = ""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:2d}. {title}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
