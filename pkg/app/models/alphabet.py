import math
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from app.errors import DomainError, ScaleError

# Desk-scale guard on |Ω|; dense tables of this length are still cheap.
MAX_STATES = 2 ** 24


class Alphabet(BaseModel):
    """Category counts, variable names and value labels of n discrete variables.

    States are indexed little-endian mixed radix:
    index = x_1 + m_1 * (x_2 + m_2 * (x_3 + ...)).
    """

    model_config = ConfigDict(frozen=True)

    sizes: Tuple[int, ...]
    names: Tuple[str, ...]
    value_labels: Tuple[Tuple[str, ...], ...]

    @model_validator(mode="after")
    def _check_shape(self) -> "Alphabet":
        if not self.sizes:
            raise DomainError("an alphabet needs at least one variable")
        if len(self.names) != len(self.sizes):
            raise DomainError(f"{len(self.sizes)} sizes but {len(self.names)} names")
        if len(set(self.names)) != len(self.names):
            raise DomainError("variable names must be distinct")
        if len(self.value_labels) != len(self.sizes):
            raise DomainError("one list of value labels per variable is required")

        total = 1
        for name, m, labels in zip(self.names, self.sizes, self.value_labels):
            if m < 2:
                raise DomainError(f"variable {name} has {m} categories, at least 2 required")
            if len(labels) != m or len(set(labels)) != m:
                raise DomainError(f"variable {name} needs {m} distinct value labels")
            total *= m
            if total > MAX_STATES:
                raise ScaleError(f"|Ω| exceeds the desk-scale guard of {MAX_STATES} states")
        return self

    @classmethod
    def from_sizes(cls, sizes: Sequence[int], names: Optional[Sequence[str]] = None) -> "Alphabet":
        sizes = tuple(int(m) for m in sizes)
        if names is None:
            names = [f"X{i + 1}" for i in range(len(sizes))]
        labels = tuple(tuple(f"v{v}" for v in range(max(m, 0))) for m in sizes)
        return cls(sizes=sizes, names=tuple(names), value_labels=labels)

    @property
    def n(self) -> int:
        return len(self.sizes)

    @property
    def n_states(self) -> int:
        return math.prod(self.sizes)

    @property
    def strides(self) -> Tuple[int, ...]:
        strides, acc = [], 1
        for m in self.sizes:
            strides.append(acc)
            acc *= m
        return tuple(strides)


class DistributionTable(BaseModel):
    """Dense probability vector over Ω in state-index order."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    alphabet: Alphabet
    probs: np.ndarray

    @field_validator("probs", mode="before")
    @classmethod
    def _as_array(cls, value) -> np.ndarray:
        probs = np.array(value, dtype=np.float64).reshape(-1)
        probs.setflags(write=False)
        return probs

    @model_validator(mode="after")
    def _check_distribution(self) -> "DistributionTable":
        if self.probs.shape[0] != self.alphabet.n_states:
            raise DomainError(
                f"table has {self.probs.shape[0]} entries, alphabet has {self.alphabet.n_states} states"
            )
        if not np.all(np.isfinite(self.probs)) or np.any(self.probs < 0):
            raise DomainError("probabilities must be finite and nonnegative")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-10:
            raise DomainError(f"probabilities sum to {total!r}, not 1")
        return self

    @classmethod
    def uniform(cls, alphabet: Alphabet) -> "DistributionTable":
        return cls(alphabet=alphabet, probs=np.full(alphabet.n_states, 1.0 / alphabet.n_states))


class Dataset(BaseModel):
    """Observed counts over Ω, stored sparsely by state index."""

    model_config = ConfigDict(frozen=True)

    alphabet: Alphabet
    counts: Dict[int, int]

    @field_validator("counts", mode="after")
    @classmethod
    def _drop_zeros(cls, counts: Dict[int, int]) -> Dict[int, int]:
        for state, count in counts.items():
            if count < 0:
                raise DomainError(f"negative count {count} for state {state}")
        return {int(s): int(c) for s, c in sorted(counts.items()) if c > 0}

    @model_validator(mode="after")
    def _check_support(self) -> "Dataset":
        if not self.counts:
            raise DomainError("empty dataset: total count must be positive")
        n_states = self.alphabet.n_states
        for state in self.counts:
            if not 0 <= state < n_states:
                raise DomainError(f"state index {state} outside [0, {n_states})")
        return self

    @property
    def l(self) -> int:
        return sum(self.counts.values())

    def dense_counts(self) -> np.ndarray:
        dense = np.zeros(self.alphabet.n_states, dtype=np.int64)
        for state, count in self.counts.items():
            dense[state] = count
        return dense

    @classmethod
    def from_dense(cls, alphabet: Alphabet, counts: Iterable[int]) -> "Dataset":
        dense = counts if isinstance(counts, np.ndarray) else np.asarray(list(counts))
        if dense.shape != (alphabet.n_states,):
            raise DomainError(f"expected {alphabet.n_states} counts, got shape {dense.shape}")
        return cls(alphabet=alphabet, counts={int(s): int(c) for s, c in enumerate(dense) if c})

    @classmethod
    def from_rows(cls, alphabet: Alphabet, rows: Iterable[Sequence[int]]) -> "Dataset":
        """Aggregate observations given as tuples of category indices."""
        strides = alphabet.strides
        counts: Dict[int, int] = {}
        for row in rows:
            if len(row) != alphabet.n:
                raise DomainError(f"observation {tuple(row)} has {len(row)} components, expected {alphabet.n}")
            index = 0
            for value, m, stride, name in zip(row, alphabet.sizes, strides, alphabet.names):
                if not 0 <= value < m:
                    raise DomainError(f"variable {name}: category {value} outside [0, {m})")
                index += value * stride
            counts[index] = counts.get(index, 0) + 1
        return cls(alphabet=alphabet, counts=counts)
