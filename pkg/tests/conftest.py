import hypothesis
import numpy as np
import pytest

from rismimo.geometry_channel import (
    AntennaPattern,
    ChannelModelParams,
    build_geometry,
    build_H,
)

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")

PARAMS = ChannelModelParams()
LAMBDA = PARAMS.wavelength

ACCEPTANCE_LINES = []


def omni_H(n_active, n_ris, distance=5 * LAMBDA, spacing=LAMBDA / 2):
    geom = build_geometry(n_active, n_ris, spacing, spacing, distance, LAMBDA)
    return build_H(geom, AntennaPattern.omni(3), AntennaPattern.omni(3), PARAMS).entries


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def H_small():
    return omni_H(4, 16)


@pytest.fixture(scope="session")
def H_default():
    return omni_H(16, 64)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
