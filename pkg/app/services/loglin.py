"""k-factor log-linear models: feature layout, exact partition function and sampling."""

import math
from functools import lru_cache
from itertools import combinations, product
from typing import Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.special import logsumexp

from app.errors import DomainError, NormalizationError
from app.models.alphabet import Alphabet, Dataset, DistributionTable
from app.models.loglinear import FactorBasis, FactorBlock, LogLinearModel
from app.services.information import state_matrix

SAMPLER_NAME = "numpy.random.PCG64 inverse-cdf v1"


def build_basis(alphabet: Alphabet, k: int) -> FactorBasis:
    if not 1 <= k <= alphabet.n:
        raise DomainError(f"degree k={k} outside [1, {alphabet.n}]")
    blocks, offset = [], 0
    for variables in combinations(range(alphabet.n), k):
        shape = tuple(alphabet.sizes[v] for v in variables)
        blocks.append(FactorBlock(variables=variables, shape=shape, offset=offset))
        offset += math.prod(shape)
    return FactorBasis(alphabet=alphabet, k=k, blocks=tuple(blocks))


@lru_cache(maxsize=32)
def _feature_columns(sizes: Tuple[int, ...], k: int) -> np.ndarray:
    basis = build_basis(Alphabet.from_sizes(sizes), k)
    states = state_matrix(basis.alphabet)
    columns = np.empty((states.shape[0], len(basis.blocks)), dtype=np.int64)
    for b, block in enumerate(basis.blocks):
        within = np.ravel_multi_index(tuple(states[:, v] for v in block.variables), block.shape)
        columns[:, b] = block.offset + within
    columns.setflags(write=False)
    return columns


def feature_columns(basis: FactorBasis) -> np.ndarray:
    """Position of the single active coordinate of c^x in each block, one row per state."""
    return _feature_columns(basis.alphabet.sizes, basis.k)


def feature_vector(x: int, basis: FactorBasis) -> np.ndarray:
    """Dense 0/1 vector c^x with one 1 per block."""
    if not 0 <= x < basis.alphabet.n_states:
        raise DomainError(f"state index {x} outside [0, {basis.alphabet.n_states})")
    vector = np.zeros(basis.dimension, dtype=np.int8)
    vector[feature_columns(basis)[x]] = 1
    return vector


def scores(f: np.ndarray, basis: FactorBasis) -> np.ndarray:
    """<c^x, f> for every state x."""
    return f[feature_columns(basis)].sum(axis=1)


def feature_totals(weights: np.ndarray, basis: FactorBasis) -> np.ndarray:
    """Σ_x weights[x] c^x."""
    columns = feature_columns(basis)
    return np.bincount(
        columns.ravel(), weights=np.repeat(weights, columns.shape[1]), minlength=basis.dimension
    )


def _covering_subset(subset: Tuple[int, ...], n: int, k: int) -> Tuple[int, ...]:
    """Lexicographically first k-subset of range(n) containing `subset`."""
    filler = [v for v in range(n) if v not in subset][: k - len(subset)]
    return tuple(sorted(subset + tuple(filler)))


@lru_cache(maxsize=32)
def _corner_design(sizes: Tuple[int, ...], k: int) -> Tuple[np.ndarray, np.ndarray]:
    basis = build_basis(Alphabet.from_sizes(sizes), k)
    states = state_matrix(basis.alphabet)
    blocks = {block.variables: block for block in basis.blocks}
    design, lift = [], []
    for order in range(1, k + 1):
        for subset in combinations(range(len(sizes)), order):
            block = blocks[_covering_subset(subset, len(sizes), k)]
            cells = np.indices(block.shape).reshape(len(block.shape), -1).T
            positions = [block.variables.index(v) for v in subset]
            for values in product(*(range(1, sizes[v]) for v in subset)):
                design.append(np.all(states[:, list(subset)] == values, axis=1))
                column = np.zeros(basis.dimension)
                column[block.offset + np.flatnonzero(np.all(cells[:, positions] == values, axis=1))] = 1.0
                lift.append(column)
    design_matrix = np.column_stack(design).astype(np.float64)
    lift_matrix = np.column_stack(lift)
    design_matrix.setflags(write=False)
    lift_matrix.setflags(write=False)
    return design_matrix, lift_matrix


def corner_design(basis: FactorBasis) -> Tuple[np.ndarray, np.ndarray]:
    """Identifiable coordinates of the k-factor family.

    Column (S, v) of `design` is the indicator x_S = v over every nonempty S with |S| <= k and
    every v with no zero category, so design @ θ spans the family up to a constant with no gauge
    freedom. `lift` maps θ back to block parameters: scores(lift @ θ) = design @ θ.
    """
    return _corner_design(basis.alphabet.sizes, basis.k)


def log_partition(f: np.ndarray, basis: FactorBasis) -> float:
    return float(logsumexp(scores(np.asarray(f, dtype=np.float64), basis)))


def make_model(basis: FactorBasis, f: Sequence[float], lam: float) -> LogLinearModel:
    f = np.asarray(f, dtype=np.float64)
    return LogLinearModel(basis=basis, f=f, lam=lam, log_z=log_partition(f, basis))


def normalize(model: LogLinearModel) -> LogLinearModel:
    """Fold -ln Z into the first block so that Z(f) = 1."""
    f = np.array(model.f)
    first = model.basis.blocks[0]
    f[first.offset:first.stop] -= model.log_z
    return make_model(model.basis, f, model.lam)


def log_probabilities(model: LogLinearModel) -> np.ndarray:
    return scores(model.f, model.basis) - model.log_z


def _require_normalized(model: LogLinearModel) -> None:
    if not model.normalized:
        raise NormalizationError(f"model is not normalized (ln Z = {model.log_z!r})")


def to_table(model: LogLinearModel) -> DistributionTable:
    _require_normalized(model)
    return DistributionTable(alphabet=model.alphabet, probs=np.exp(log_probabilities(model)))


def min_log_prob(model: LogLinearModel) -> float:
    _require_normalized(model)
    return float(log_probabilities(model).min())


def model_from_table(table: DistributionTable, lam: Optional[float] = None) -> LogLinearModel:
    """Saturated (k = n) model reproducing a strictly positive table."""
    if np.any(table.probs <= 0):
        raise DomainError("saturated model needs a strictly positive table")
    alphabet = table.alphabet
    basis = build_basis(alphabet, alphabet.n)
    f = np.empty(basis.dimension)
    f[feature_columns(basis)[:, 0]] = np.log(table.probs)
    return normalize(make_model(basis, f, float(table.probs.min()) if lam is None else lam))


def model_from_marginals(
    alphabet: Alphabet, marginals: Sequence[Sequence[float]], lam: Optional[float] = None
) -> LogLinearModel:
    """Independence (k = 1) model with the given per-variable marginals."""
    if len(marginals) != alphabet.n:
        raise DomainError(f"expected {alphabet.n} marginals, got {len(marginals)}")
    parts = []
    for name, m, marginal in zip(alphabet.names, alphabet.sizes, marginals):
        marginal = np.asarray(marginal, dtype=np.float64)
        if marginal.shape != (m,) or np.any(marginal <= 0):
            raise DomainError(f"marginal of {name} must be {m} positive probabilities")
        parts.append(np.log(marginal / marginal.sum()))
    if lam is None:
        lam = math.exp(sum(float(part.min()) for part in parts))
    return normalize(make_model(build_basis(alphabet, 1), np.concatenate(parts), lam))


def sample(model: LogLinearModel, count: int, seed: int) -> Dataset:
    """count i.i.d. draws by inverse CDF over the enumerated table."""
    if count <= 0:
        raise DomainError(f"sample count must be positive, got {count}")
    table = to_table(model)
    cdf = np.cumsum(table.probs)
    rng = np.random.Generator(np.random.PCG64(seed))
    draws = np.searchsorted(cdf, rng.random(count) * cdf[-1], side="right")
    draws = np.minimum(draws, table.probs.shape[0] - 1)
    counts = np.bincount(draws, minlength=table.probs.shape[0])
    logger.debug(f"drew {count} samples with {SAMPLER_NAME}, seed={seed}")
    return Dataset.from_dense(model.alphabet, counts)
