"""Classical goodness-of-fit statistics used as baselines next to the SRM choice."""

import math

import numpy as np
from loguru import logger
from scipy.special import gammaincc, xlogy

from app.errors import DomainError
from app.models.alphabet import Alphabet, Dataset, DistributionTable
from app.models.selection import FitResult
from app.utils.helpers import elementary_symmetric


def parameter_count(alphabet: Alphabet, k: int) -> int:
    """Identifiable parameters of the hierarchical family with interactions up to order k."""
    if not 1 <= k <= alphabet.n:
        raise DomainError(f"degree k={k} outside [1, {alphabet.n}]")
    return sum(elementary_symmetric([m - 1 for m in alphabet.sizes], k)[1:])


def degrees_of_freedom(alphabet: Alphabet, k: int) -> int:
    df = alphabet.n_states - 1 - parameter_count(alphabet, k)
    if df < 0:
        logger.warning(f"class k={k} is over-parameterized (df={df}); reporting df=0")
        return 0
    return df


def aic_score(d: Dataset, fit: FitResult, params: int) -> float:
    return fit.r_emp + params / d.l


def bic_score(d: Dataset, fit: FitResult, params: int) -> float:
    return fit.r_emp + params * math.log(d.l) / (2 * d.l)


def _check_model(d: Dataset, p: DistributionTable) -> None:
    if d.alphabet != p.alphabet:
        raise DomainError("dataset and model are defined over different alphabets")
    if np.any(p.probs <= 0):
        raise DomainError("goodness-of-fit statistics need a strictly positive model")


def pearson_x2(d: Dataset, p: DistributionTable) -> float:
    _check_model(d, p)
    expected = d.l * p.probs
    return float((((d.dense_counts() - expected) ** 2) / expected).sum())


def deviance_g2(d: Dataset, p: DistributionTable) -> float:
    _check_model(d, p)
    counts = d.dense_counts().astype(np.float64)
    return float(2 * xlogy(counts, counts / (d.l * p.probs)).sum())


def chi2_p_value(statistic: float, df: int) -> float:
    """Upper tail P(χ²_df >= statistic)."""
    if statistic < 0 or df < 0:
        raise DomainError(f"chi-square tail needs statistic >= 0 and df >= 0, got ({statistic}, {df})")
    if df == 0:
        return 1.0 if statistic == 0 else 0.0
    return float(gammaincc(df / 2, statistic / 2))
