import sys

import pytest

from mlpenergy.specfiles import load_coefficients, load_hardware


@pytest.fixture(scope="session")
def cpu1():
    return load_hardware("cpu1")


@pytest.fixture(scope="session")
def gpu1():
    return load_hardware("gpu1")


@pytest.fixture(scope="session")
def cpu_coeffs():
    return load_coefficients("cpu-coeffs")[0]


@pytest.fixture(scope="session")
def gpu_coeffs():
    return load_coefficients("gpu-coeffs")[0]


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = sorted(getattr(module, "RESULTS", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
