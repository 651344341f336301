import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rotorlattice import GaussianMeasure, LatticeModel, PrecisionStencil, TorusLattice

settings.register_profile("repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))

ACCEPTANCE_LINES: list[str] = []

GENERAL_1D = "0=2; 1=-0.4"
GENERAL_2D = "0,0=2; 1,0=-0.4; 0,1=-0.3"


def make_model(dim=1, side=8, b=1.0, stencil=None):
    st = PrecisionStencil.diagonal(b, dim) if stencil is None else PrecisionStencil.parse(stencil, dim)
    return LatticeModel(TorusLattice(dim, side), st)


def make_measure(dim=1, side=8, b=1.0, stencil=None, r=1.0):
    return GaussianMeasure(make_model(dim, side, b, stencil), r)


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
