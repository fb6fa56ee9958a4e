"""VC-dimension formulas, the guaranteed-risk penalty φ and exact shattering checks."""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.optimize import linprog

from app.config import config
from app.errors import DomainError, InfeasibleFloorError, LogLinError, ScaleError
from app.models.alphabet import Alphabet, DistributionTable
from app.models.selection import PenaltyConfig
from app.services.information import state_matrix
from app.utils.helpers import elementary_symmetric

MAX_SHATTER_POINTS = 20
MAX_SHATTER_H = 12


def h_k(alphabet: Alphabet, k: int) -> int:
    """Sum over all k-subsets j of m_j1 * ... * m_jk."""
    if not 1 <= k <= alphabet.n:
        raise DomainError(f"degree k={k} outside [1, {alphabet.n}]")
    return elementary_symmetric(alphabet.sizes, k)[k]


def product_vc_dim(alphabet: Alphabet) -> int:
    """Exact VC dimension of the product distributions, 1 + Σ m_i - n."""
    return 1 + sum(alphabet.sizes) - alphabet.n


def vc_confidence(h: int, lam: float, eta: float, l: int) -> float:
    """-ln λ * sqrt((h - ln h + ln 16 + ln l - ln η) / l)."""
    capacity = h - math.log(h) + math.log(16) + math.log(l) - math.log(eta)
    return -math.log(lam) * math.sqrt(capacity / l)


def phi(k: int, lam: float, eta: float, l: int, alphabet: Alphabet) -> float:
    if not lam > 0:
        raise DomainError(f"floor must be positive, got {lam!r}")
    if lam * alphabet.n_states > 1 + 1e-12:
        raise InfeasibleFloorError(f"floor {lam!r} exceeds 1/|Ω| = {1 / alphabet.n_states!r}")
    if not 0 < eta < 1:
        raise DomainError(f"confidence eta must lie in (0, 1), got {eta!r}")
    if l < 1:
        raise DomainError(f"sample size must be positive, got {l}")

    value = vc_confidence(h_k(alphabet, k), lam, eta, l)
    if value >= -math.log(lam):
        logger.warning(f"phi={value:.4g} for k={k} exceeds -ln(lambda)={-math.log(lam):.4g}; bound is vacuous")
    return value


def lambda_ladder(cfg: PenaltyConfig, alphabet: Alphabet) -> List[float]:
    return [cfg.ladder_base ** n / alphabet.n_states for n in range(1, cfg.ladder_depth + 1)]


def prior_mass(cfg: PenaltyConfig, k: int, n: int) -> float:
    a, b = cfg.prior_k_ratio, cfg.prior_n_ratio
    return (1 - a) * a ** (k - 1) * (1 - b) * b ** (n - 1)


def prior_cumulative(cfg: PenaltyConfig, k: int, n: int) -> float:
    """ν(A_kn) for A_kn = {1..k} x {1..n}."""
    return (1 - cfg.prior_k_ratio ** k) * (1 - cfg.prior_n_ratio ** n)


def srm_penalty(k: int, n: int, cfg: PenaltyConfig, l: int, alphabet: Alphabet) -> float:
    if not 1 <= n <= cfg.ladder_depth:
        raise DomainError(f"ladder level n={n} outside [1, {cfg.ladder_depth}]")
    if k < 1:
        raise DomainError(f"degree k={k} must be positive")
    lam = lambda_ladder(cfg, alphabet)[n - 1]
    return phi(k, lam, cfg.eta * prior_cumulative(cfg, k, n), l, alphabet)


def product_embedding(state: Sequence[int], alphabet: Alphabet) -> np.ndarray:
    """0/1 vector of length Σ(m_i - 1); category 0 of each variable maps to the block origin."""
    vector = np.zeros(sum(alphabet.sizes) - alphabet.n, dtype=np.int64)
    offset = 0
    for value, m, name in zip(state, alphabet.sizes, alphabet.names):
        if not 0 <= value < m:
            raise DomainError(f"variable {name}: category {value} outside [0, {m})")
        if value:
            vector[offset + value - 1] = 1
        offset += m - 1
    return vector


def product_witness_states(alphabet: Alphabet) -> List[int]:
    """States embedded at the origin and at every unit vector, in embedding order."""
    states = [0]
    for m, stride in zip(alphabet.sizes, alphabet.strides):
        states.extend(value * stride for value in range(1, m))
    return states


def witness_separator(alphabet: Alphabet, labels: Sequence[bool]) -> Tuple[DistributionTable, float]:
    """Product distribution P and threshold a with [ln P(x) >= a] == labels on the witness states."""
    dim = sum(alphabet.sizes) - alphabet.n
    if len(labels) != dim + 1:
        raise DomainError(f"expected {dim + 1} labels, got {len(labels)}")

    signs = np.where(np.asarray(labels[1:], dtype=bool), 1.0, -1.0)
    marginals, offset = [], 0
    for m in alphabet.sizes:
        weights = np.concatenate(([1.0], np.exp(signs[offset:offset + m - 1])))
        marginals.append(weights / weights.sum())
        offset += m - 1

    states = state_matrix(alphabet)
    probs = np.ones(alphabet.n_states)
    for j, marginal in enumerate(marginals):
        probs *= marginal[states[:, j]]
    d = float(sum(math.log(marginal[0]) for marginal in marginals))
    threshold = d - 0.5 if labels[0] else d + 0.5
    return DistributionTable(alphabet=alphabet, probs=probs), threshold


def _augment(points: Sequence[Sequence[float]]) -> np.ndarray:
    matrix = np.asarray([np.atleast_1d(np.asarray(p)) for p in points])
    return np.hstack([matrix, np.ones((matrix.shape[0], 1), dtype=matrix.dtype)])


def _labelings(h: int) -> np.ndarray:
    # A labeling and its complement are separated by negated functionals; fix the first point to +1.
    codes = np.arange(2 ** (h - 1), dtype=np.int64)[:, None]
    bits = (codes >> np.arange(h - 1, dtype=np.int64)) & 1
    return np.hstack([np.ones((codes.shape[0], 1), dtype=np.int64), 2 * bits - 1])


def _perceptron_certificates(points: np.ndarray, labels: np.ndarray, max_epochs: int) -> np.ndarray:
    """Run one integer perceptron per labeling; True where exact separation was reached."""
    weights = np.zeros((labels.shape[0], points.shape[1]), dtype=np.int64)
    separated = np.zeros(labels.shape[0], dtype=bool)
    for _ in range(max_epochs):
        for i, point in enumerate(points):
            wrong = (weights @ point) * labels[:, i] <= 0
            weights[wrong] += labels[wrong, i][:, None] * point
        separated = np.all((weights @ points.T) * labels > 0, axis=1)
        if separated.all():
            break
    return separated


def _lp_separable(points: np.ndarray, labels: np.ndarray) -> bool:
    """Feasibility of y_i (<w, x_i> + b) >= 1 for all i."""
    dim = points.shape[1]
    result = linprog(
        np.zeros(dim),
        A_ub=-(labels[:, None] * points).astype(np.float64),
        b_ub=-np.ones(points.shape[0]),
        bounds=[(None, None)] * dim,
        method="highs",
    )
    if result.status == 0:
        return True
    if result.status == 2:
        return False
    raise LogLinError(f"separability program failed: {result.message}")


def is_shattered(points: Sequence[Sequence[float]], max_epochs: Optional[int] = None) -> bool:
    """Whether affine thresholds x -> [<c^x, f> + b >= 0] realise every labeling of the points."""
    if len(points) == 0:
        return True
    if len(points) > MAX_SHATTER_H:
        raise ScaleError(f"{len(points)} points exceed the labeling guard of {MAX_SHATTER_H}")
    max_epochs = config.shatter_max_epochs if max_epochs is None else max_epochs

    augmented = _augment(points)
    labels = _labelings(augmented.shape[0])
    if np.issubdtype(augmented.dtype, np.integer):
        certified = _perceptron_certificates(augmented, labels, max_epochs)
    else:
        certified = np.zeros(labels.shape[0], dtype=bool)

    for row in np.flatnonzero(~certified):
        if not _lp_separable(augmented, labels[row]):
            return False
    return True


def shatter_dimension(points: Sequence[Sequence[float]], max_h: int) -> int:
    """Size of the largest shattered subset of `points`, capped at `max_h`.

    Sets shattered by affine thresholds are exactly the affinely independent ones, so
    they form a matroid: greedy augmentation in input order reaches the maximum size,
    and every candidate set is still verified labeling by labeling.
    """
    if len(points) > MAX_SHATTER_POINTS or max_h > MAX_SHATTER_H:
        raise ScaleError(
            f"shattering search limited to {MAX_SHATTER_POINTS} points and h <= {MAX_SHATTER_H}"
        )
    if max_h < 0:
        raise DomainError(f"max_h must be nonnegative, got {max_h}")

    chosen: List[Sequence[float]] = []
    for point in points:
        if len(chosen) == max_h:
            break
        if is_shattered(chosen + [point]):
            chosen.append(point)
    logger.debug(f"shattered {len(chosen)} of {len(points)} points")
    return len(chosen)
