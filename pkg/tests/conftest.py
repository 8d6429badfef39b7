import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from laplab import hypotheses as hy
from laplab import potentials as pl
from laplab.lattice import build_grid
from laplab.normspace import NormContext

settings.register_profile("laplab", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("laplab")


@pytest.fixture(scope="session")
def grid201():
    return build_grid(1, 20.0, 201)


@pytest.fixture(scope="session")
def compliant201(grid201):
    """inverse_power(1, 1) on [-20, 20] with 201 nodes: report, operators, norms."""
    report, ops = hy.evaluate(pl.inverse_power(1.0, 1.0), grid201)
    return report, ops, NormContext(ops)


@pytest.fixture(scope="session")
def free201(grid201):
    report, ops = hy.evaluate(pl.zero(), grid201, c1=0.0)
    return report, ops, NormContext(ops)


def gaussian(grid, sigma=1.0, x0=0.0):
    pts = grid.points()
    shift = np.zeros(grid.dims)
    shift[0] = x0
    return np.exp(-np.sum((pts - shift) ** 2, axis=1) / (2 * sigma ** 2))
