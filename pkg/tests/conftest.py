"""Shared fixtures: a few cached runs so the suite stays fast."""
import math
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kwcflow.config import preset_initial
from kwcflow.grid import Grid
from kwcflow.model import Source, default_model, step_bound
from kwcflow.regnorm import RegularizedNorm
from kwcflow.stepper import run

settings.register_profile("kwc", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("kwc")


def default_run(shape=(32,), steps=200, h=None, seed=0, preset="ramp", spec=None,
                sigma=0.1, family="hyperbola", amplitude=math.pi):
    grid = Grid.unit(shape)
    spec = spec or default_model()
    h = 0.9 * step_bound(spec) if h is None else h
    init = preset_initial(grid, preset, amplitude, seed)
    return run(spec, grid, init, h, steps, RegularizedNorm(family, sigma))


@pytest.fixture(scope="session")
def traj_1d():
    return default_run((32,), steps=200)


@pytest.fixture(scope="session")
def traj_2d():
    return default_run((16, 16), steps=100, preset="two-grain")


@pytest.fixture(scope="session")
def traj_source():
    """Nonzero source that switches to its limit at t = 1."""
    spec = default_model(source=Source(((0.0, 0.8), (1.0, 0.2)), math.inf, 0.2))
    return default_run((32,), steps=100, spec=spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
