import pytest
from hypothesis import settings

from grainoftruth.machine import MachineRegistry, assemble

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("repo")

ACCEPTANCE_LINES: dict = {}

DIAGONALIZER = "ORACLE SELF, ε, 1/2\nNOT\nOUT\n"


def record(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.fixture
def acceptance():
    return record


def registry_of(*sources):
    reg = MachineRegistry()
    for src in sources:
        reg.register(assemble(src))
    return reg


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
