import numpy as np
import pytest

from nhmc.chain_model import ChainSpec, Observable, TransitionSchedule

IID = [[0.5, 0.5], [0.5, 0.5]]
TWO_STATE = [[0.9, 0.1], [0.2, 0.8]]
SWAP = [[0.0, 1.0], [1.0, 0.0]]


def random_stochastic(rng, K, sparsity=0.0):
    """Dirichlet rows; with ``sparsity`` > 0 some entries are zeroed (each row keeps one)."""
    m = rng.dirichlet(np.ones(K), size=K)
    if sparsity:
        mask = rng.random((K, K)) < sparsity
        mask[np.arange(K), rng.integers(0, K, K)] = False
        m = np.where(mask, 0.0, m)
        m /= m.sum(axis=1, keepdims=True)
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture
def iid_spec():
    return ChainSpec([0.5, 0.5], TransitionSchedule.homogeneous(IID))


@pytest.fixture
def two_state_spec():
    return ChainSpec([1.0, 0.0], TransitionSchedule.homogeneous(TWO_STATE))


@pytest.fixture
def indicator():
    return Observable([0.0, 1.0], 1.0)


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
