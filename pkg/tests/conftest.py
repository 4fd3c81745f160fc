import numpy as np
import pytest

from prevalest.core import DiscretePopulation
from prevalest.binormal import BinormalSpec


@pytest.fixture
def binary_toy():
    """X in {a, b} coded 0/1: P[a|1]=0.9, P[a|2]=0.2, p1=0.5."""
    return DiscretePopulation(np.array([[0.9, 0.2], [0.1, 0.8]]), [0.5, 0.5])


@pytest.fixture
def three_class_toy():
    cond = np.array([
        [0.6, 0.2, 0.1],
        [0.3, 0.5, 0.2],
        [0.1, 0.3, 0.7],
    ])
    return DiscretePopulation(cond, [0.5, 0.3, 0.2])


@pytest.fixture
def binormal():
    return BinormalSpec()


def random_population(rng, ell, k=None, alpha=1.0):
    k = k or ell
    cond = rng.dirichlet(np.full(k, alpha), size=ell).T
    p = rng.dirichlet(np.full(ell, 2.0))
    return DiscretePopulation(cond, p)
