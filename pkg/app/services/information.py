"""State indexing and the information-theoretic functionals (all in nats)."""

from functools import lru_cache
from typing import Sequence, Tuple

import numpy as np
from scipy.special import entr, rel_entr, xlogy

from app.errors import DomainError, InfiniteRiskError
from app.models.alphabet import Alphabet, Dataset, DistributionTable


def encode_state(values: Sequence[int], alphabet: Alphabet) -> int:
    if len(values) != alphabet.n:
        raise DomainError(f"state has {len(values)} components, alphabet has {alphabet.n} variables")
    index = 0
    for value, m, stride, name in zip(values, alphabet.sizes, alphabet.strides, alphabet.names):
        if not 0 <= int(value) < m:
            raise DomainError(f"variable {name}: category {value} outside [0, {m})")
        index += int(value) * stride
    return index


def decode_state(index: int, alphabet: Alphabet) -> Tuple[int, ...]:
    if not 0 <= index < alphabet.n_states:
        raise DomainError(f"state index {index} outside [0, {alphabet.n_states})")
    values = []
    for m in alphabet.sizes:
        index, value = divmod(index, m)
        values.append(value)
    return tuple(values)


@lru_cache(maxsize=32)
def _state_matrix(sizes: Tuple[int, ...]) -> np.ndarray:
    index = np.arange(int(np.prod(sizes)), dtype=np.int64)
    columns = []
    for m in sizes:
        index, value = np.divmod(index, m)
        columns.append(value)
    states = np.stack(columns, axis=1)
    states.setflags(write=False)
    return states


def state_matrix(alphabet: Alphabet) -> np.ndarray:
    """All states of Ω as rows of category indices, in state-index order."""
    return _state_matrix(alphabet.sizes)


def empirical_distribution(d: Dataset) -> DistributionTable:
    counts = d.dense_counts()
    return DistributionTable(alphabet=d.alphabet, probs=counts / counts.sum())


def entropy(p: DistributionTable) -> float:
    return float(entr(p.probs).sum())


def _check_support(p: np.ndarray, q: np.ndarray) -> None:
    uncovered = np.flatnonzero((p > 0) & (q <= 0))
    if uncovered.size:
        raise InfiniteRiskError(
            f"model probability is zero on {uncovered.size} state(s) carrying mass, first index {uncovered[0]}"
        )


def risk(p_true: DistributionTable, p_model: DistributionTable) -> float:
    """Cross-entropy -Σ p_true ln p_model."""
    _check_support(p_true.probs, p_model.probs)
    return float(-xlogy(p_true.probs, p_model.probs).sum())


def empirical_risk(d: Dataset, p_model: DistributionTable) -> float:
    """Negative average log-probability of the sample under the model."""
    states = np.fromiter(d.counts.keys(), dtype=np.int64)
    counts = np.fromiter(d.counts.values(), dtype=np.float64)
    q = p_model.probs[states]
    if np.any(q <= 0):
        raise InfiniteRiskError(
            f"model assigns zero probability to observed state {int(states[np.argmax(q <= 0)])}"
        )
    return float(-(counts @ np.log(q)) / d.l)


def kl_divergence(p: DistributionTable, q: DistributionTable) -> float:
    _check_support(p.probs, q.probs)
    return float(rel_entr(p.probs, q.probs).sum())
