import math

import numpy as np
import pytest

from qcstoch.model import ModelParams, derive_constants

ACCEPTANCE_LINES = []


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def unit_params():
    return ModelParams(M=1.0, lam=1.0, kT=0.5, sigma=2.0, duration=1.0, dt=0.01)


@pytest.fixture
def unit_consts(unit_params):
    return derive_constants(unit_params)


def pi_params(**kw):
    """Half an oscillator period with Dtilde close to 1."""
    base = dict(M=100.0, lam=1.0, kT=0.004999995, sigma=50.0, duration=math.pi, dt=math.pi / 200)
    base.update(kw)
    return ModelParams(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
