import os
import warnings

import numpy as np
import pytest
from hypothesis import settings

from dgeap.mesh import assign_diffusivity, build_mesh
from dgeap.substrate import Circle, Substrate

warnings.filterwarnings("ignore", message=".*TBB.*")

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def free_substrate():
    return Substrate(50.0, (), 450.0)


@pytest.fixture
def small_axon_mesh():
    """8x8 mesh on a 4 um square with one disk covering several pixels."""
    sub = Substrate(4.0, (Circle(2.1, 1.9, 1.05),), 450.0)
    return assign_diffusivity(build_mesh(4.0, 8, k0=450.0), sub)


_acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_report():
    """``report(tag, ok, detail)`` prints and records one PASS/FAIL line."""

    def report(tag, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {tag}: {detail}"
        _acceptance_lines.append(line)
        print(line)
        return ok

    def info(text):
        _acceptance_lines.append(f"      {text}")
        print(text)

    report.info = info
    return report


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
