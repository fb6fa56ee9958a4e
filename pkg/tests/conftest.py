import numpy as np
import pytest
from loguru import logger

from app.models.alphabet import Alphabet, Dataset, DistributionTable


@pytest.fixture(autouse=True)
def silence_logs():
    logger.remove()
    yield
    logger.remove()


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


@pytest.fixture
def binary3():
    return Alphabet.from_sizes((2, 2, 2))


@pytest.fixture
def binary4():
    return Alphabet.from_sizes((2, 2, 2, 2))


@pytest.fixture
def coin():
    return Alphabet.from_sizes((2,))


@pytest.fixture
def random_table():
    def make(alphabet: Alphabet, rng: np.random.Generator, concentration: float = 1.0):
        return DistributionTable(
            alphabet=alphabet, probs=rng.dirichlet(np.full(alphabet.n_states, concentration))
        )

    return make


@pytest.fixture
def random_dataset():
    """Multinomial sample from a random positive table."""

    def make(alphabet: Alphabet, l: int, rng: np.random.Generator):
        probs = rng.dirichlet(np.full(alphabet.n_states, 2.0))
        return Dataset.from_dense(alphabet, rng.multinomial(l, probs))

    return make
