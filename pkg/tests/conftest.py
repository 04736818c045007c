import os

import numpy as np
import pytest

from services.chain_service import TransitionMatrix, read_matrix
from services.config_service import ChainConfig, RunConfig

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURES = os.path.join(ROOT, "fixtures")

# printed (I - S)^-1 of the credit-card portfolio, rows/columns S2..S9
EXAMPLE1_FUNDAMENTAL = np.array([
    [1, 0, 0, 0, 0, 0, 0, 0],
    [0.127, 1.187, 0.018, 0.08, 0.166, 0.179, 0.121, 0.148],
    [0.033, 0.004, 1.024, 0.109, 0.127, 0.172, 0.254, 0.519],
    [0.114, 0.006, 0.132, 1.221, 0.216, 0.288, 0.254, 0.215],
    [0.029, 0.002, 0.032, 0.299, 1.192, 0.348, 0.187, 0.274],
    [0.017, 0.001, 0.018, 0.164, 0.048, 1.549, 0.237, 0.472],
    [0.018, 0.001, 0.018, 0.162, 0.053, 0.396, 2.016, 0.656],
    [0.012, 0, 0.007, 0.064, 0.021, 0.21, 0.708, 1.529],
])

EXAMPLE1_T_INF = np.array([
    [0.37, 0.63],
    [0.52, 0.48],
    [0.398, 0.602],
    [0.155, 0.845],
    [0.038, 0.962],
    [0.021, 0.979],
    [0.021, 0.979],
    [0.01, 0.99],
])


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


def random_applicable_entries(rng: np.random.Generator, n_writeoff: int) -> np.ndarray:
    """Dense chain where every past-due row sends at least 25% of its mass to cured or lost"""
    n = n_writeoff + 2
    entries = np.zeros((n, n))
    entries[0, 0] = 1.0
    entries[1, 1] = 1.0
    p = rng.uniform(0.1, 0.9)
    entries[2, :2] = (p, 1.0 - p)
    for row in range(3, n):
        absorbing = rng.uniform(0.25, 0.7)
        entries[row, :2] = absorbing * rng.dirichlet(np.ones(2))
        entries[row, 2:] = (1.0 - absorbing) * rng.dirichlet(np.ones(n - 2))
    return entries / entries.sum(axis=1, keepdims=True)


@pytest.fixture
def chain_cfg() -> ChainConfig:
    return ChainConfig()


@pytest.fixture
def run_cfg() -> RunConfig:
    return RunConfig()


@pytest.fixture(scope="session")
def example1() -> TransitionMatrix:
    return read_matrix(fixture_path("example1_A.csv"), ChainConfig())


@pytest.fixture(scope="session")
def example2() -> TransitionMatrix:
    return read_matrix(fixture_path("example2_A.csv"), ChainConfig())


@pytest.fixture
def random_chain():
    """Factory: random_chain(seed, n_writeoff) -> applicable TransitionMatrix"""
    def build(seed: int, n_writeoff: int = 4) -> TransitionMatrix:
        entries = random_applicable_entries(np.random.default_rng(seed), n_writeoff)
        return TransitionMatrix(entries, ChainConfig(n_writeoff=n_writeoff, npl_threshold=min(3, n_writeoff - 1)))
    return build
