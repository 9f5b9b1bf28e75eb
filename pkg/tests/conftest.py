import pytest

from ehaoi.experiments import solve_instance
from ehaoi.model import ModelParams

# the reference operating point used throughout the tests
REFERENCE = ModelParams(lam=0.06, p=0.8, B=2, delta_max=64, M=32)


@pytest.fixture(scope="session")
def reference_instance():
    return solve_instance(REFERENCE)


@pytest.fixture(scope="session")
def small_params():
    return ModelParams(lam=0.2, p=0.7, B=2, delta_max=12, M=6)


@pytest.fixture(scope="session")
def small_instance(small_params):
    return solve_instance(small_params)


# one line per acceptance criterion, echoed at the end of the session
CRITERIA: dict = {}


def report(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
