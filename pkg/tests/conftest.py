import math
from pathlib import Path

import numpy as np
import pytest

from searchplan.core import (
    CircularNormal,
    DiscreteDistribution,
    ExponentialDetection,
    ExponentialPerLocation,
    LinearEffort,
    Scenario,
    Uniform1D,
)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def two_cell(p=0.8, x0=1, rate=1.0, offset=0.0, slope=1.0, rates=None):
    det = ExponentialPerLocation(rates) if rates else ExponentialDetection(rate)
    return Scenario(
        DiscreteDistribution({1: p, 2: 1 - p}), det, LinearEffort(slope, offset), true_location=x0
    )


def circular(sigma=1.0, x0=(0.1, 0.0), **kw):
    return Scenario(
        CircularNormal(sigma, **kw), ExponentialDetection(1.0), LinearEffort(math.pi),
        true_location=x0, area={"type": "plane"},
    )


def piecewise_uniform(x0=0.0, offset=0.0, a=-1.0, b=1.0, n_cells=2000):
    return Scenario(
        Uniform1D(a, b, n_cells), ExponentialPerLocation.piecewise([0.0], [1.0, 3.0]),
        LinearEffort(1.0, offset), true_location=x0,
    )


def random_discrete(rng, n_min=2, n_max=4, homogeneous=False):
    """Seeded small scenario: Dirichlet masses, rates in [0.5, 3]."""
    n = int(rng.integers(n_min, n_max + 1))
    m = rng.dirichlet(np.ones(n))
    m = np.maximum(m, 1e-3)
    m /= m.sum()
    masses = {i + 1: float(v) for i, v in enumerate(m)}
    masses[n] = 1.0 - math.fsum(v for k, v in masses.items() if k != n)
    if homogeneous:
        det = ExponentialDetection(float(rng.uniform(0.5, 3.0)))
    else:
        det = ExponentialPerLocation({i + 1: float(rng.uniform(0.5, 3.0)) for i in range(n)})
    return Scenario(DiscreteDistribution(masses), det, LinearEffort(1.0))


@pytest.fixture
def unit_two_cell():
    return two_cell()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
