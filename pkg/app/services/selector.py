"""Structural risk minimization over the (k, n) grid, with the classical baselines alongside."""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np
from loguru import logger

from app.config import config
from app.errors import DomainError, LogLinError
from app.models.alphabet import Dataset
from app.models.loglinear import LogLinearModel
from app.models.selection import (
    ClassRecord,
    CoverageReport,
    FitConfig,
    GridPoint,
    PenaltyConfig,
    SelectionReport,
    SrmGrid,
    StepwiseChoice,
)
from app.services import baselines, vc
from app.services.fitter import LogLinearFitter
from app.services.information import risk
from app.services.loglin import SAMPLER_NAME, sample, to_table

STEPWISE_ALPHA = 0.05


class SrmSelector:
    def __init__(
        self,
        penalty_cfg: Optional[PenaltyConfig] = None,
        fit_cfg: Optional[FitConfig] = None,
        max_workers: Optional[int] = None,
    ):
        self.penalty_cfg = penalty_cfg or config.penalty_config()
        self.fitter = LogLinearFitter(fit_cfg)
        self.max_workers = config.srm_workers if max_workers is None else max_workers

    def select(self, d: Dataset, max_k: int) -> SelectionReport:
        if not 1 <= max_k <= d.alphabet.n:
            raise DomainError(f"max_k={max_k} outside [1, {d.alphabet.n}]")
        cfg = self.penalty_cfg
        lambdas = vc.lambda_ladder(cfg, d.alphabet)
        grid = [(k, n) for k in range(1, max_k + 1) for n in range(1, cfg.ladder_depth + 1)]
        logger.info(f"SRM over {len(grid)} classes (max_k={max_k}, depth={cfg.ladder_depth}, l={d.l})")

        records = tuple(self._map(lambda point: self._evaluate(d, point[0], point[1], lambdas), grid))
        candidates = [rec for rec in records if not rec.skipped]

        report = SelectionReport(
            eta=cfg.eta,
            grid=SrmGrid(
                max_k=max_k,
                ladder_depth=cfg.ladder_depth,
                ladder_base=cfg.ladder_base,
                lambdas=tuple(lambdas),
            ),
            records=records,
            winner=_argmin(candidates, lambda rec: rec.guaranteed_risk),
            aic_winner=_argmin(candidates, lambda rec: rec.aic),
            bic_winner=_argmin(candidates, lambda rec: rec.bic),
            stepwise=stepwise_choice(records, cfg.ladder_depth),
        )
        if report.winner is None:
            logger.warning("every grid point was skipped; no winner")
        else:
            logger.info(
                f"SRM winner k={report.winner.k} n={report.winner.n} "
                f"guaranteed_risk={report.winner_record.guaranteed_risk:.6f}"
            )
        return report

    def _map(self, func: Callable, items: List[Tuple[int, int]]) -> Iterable[ClassRecord]:
        if self.max_workers <= 1:
            return map(func, items)
        # executor.map keeps grid order, so the reduction stays deterministic
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            return list(executor.map(func, items))

    def _evaluate(self, d: Dataset, k: int, n: int, lambdas: List[float]) -> ClassRecord:
        alphabet = d.alphabet
        lam = lambdas[n - 1]
        h = vc.h_k(alphabet, k)
        params = baselines.parameter_count(alphabet, k)
        try:
            result = self.fitter.fit(d, k, lam)
            penalty = vc.srm_penalty(k, n, self.penalty_cfg, d.l, alphabet)
            table = to_table(result.model)
            x2 = baselines.pearson_x2(d, table)
            g2 = baselines.deviance_g2(d, table)
        except LogLinError as e:
            logger.warning(f"class k={k} n={n} skipped: {e}")
            return ClassRecord(k=k, n=n, lam=lam, h=h, params=params, skipped_reason=str(e))

        df = baselines.degrees_of_freedom(alphabet, k)
        return ClassRecord(
            k=k,
            n=n,
            lam=lam,
            h=h,
            params=params,
            r_emp=result.r_emp,
            phi=penalty,
            guaranteed_risk=result.r_emp + penalty,
            aic=baselines.aic_score(d, result, params),
            bic=baselines.bic_score(d, result, params),
            x2=x2,
            g2=g2,
            df=df,
            x2_p=baselines.chi2_p_value(x2, df),
            g2_p=baselines.chi2_p_value(g2, df),
            converged=result.converged,
            active_floor_states=result.active_floor_states,
            fit=result,
        )


def _argmin(records: List[ClassRecord], key: Callable[[ClassRecord], float]) -> Optional[GridPoint]:
    """Smallest key; ties go to the smaller k, then the larger floor (smaller n)."""
    if not records:
        return None
    best = min(records, key=lambda rec: (key(rec), rec.k, rec.n))
    return GridPoint(k=best.k, n=best.n)


def stepwise_choice(
    records: Iterable[ClassRecord], ladder_depth: int, alpha: float = STEPWISE_ALPHA
) -> Optional[StepwiseChoice]:
    """Lowest interaction order whose deviance test no longer rejects at level alpha.

    Uses each order's deepest ladder level. A saturated class (df = 0) cannot be
    rejected and is accepted when reached.
    """
    deepest = sorted(
        (rec for rec in records if rec.n == ladder_depth and not rec.skipped), key=lambda rec: rec.k
    )
    for rec in deepest:
        if rec.df == 0 or rec.g2_p >= alpha:
            return StepwiseChoice(k=rec.k, n=rec.n, alpha=alpha)
    return None


def srm_select(
    d: Dataset, max_k: int, cfg: Optional[PenaltyConfig] = None, fit_cfg: Optional[FitConfig] = None
) -> SelectionReport:
    return SrmSelector(cfg, fit_cfg).select(d, max_k)


def bound_coverage(
    true_model: LogLinearModel,
    l: int,
    trials: int,
    k: Optional[int] = None,
    lam: Optional[float] = None,
    eta: float = 0.05,
    seed: int = 0,
    fit_cfg: Optional[FitConfig] = None,
) -> CoverageReport:
    """Resample datasets from a known model and count trials where R > R_emp + φ."""
    if trials < 1:
        raise DomainError(f"trials must be positive, got {trials}")
    alphabet = true_model.alphabet
    k = true_model.k if k is None else k
    lam = true_model.lam if lam is None else lam
    penalty = vc.phi(k, lam, eta, l, alphabet)
    truth = to_table(true_model)
    fitter = LogLinearFitter(fit_cfg)

    violations = 0
    for trial_seed in np.random.SeedSequence(seed).generate_state(trials):
        result = fitter.fit(sample(true_model, l, int(trial_seed)), k, lam)
        if risk(truth, to_table(result.model)) > result.r_emp + penalty:
            violations += 1

    logger.info(f"coverage: {violations}/{trials} violations of R <= R_emp + {penalty:.4f}")
    return CoverageReport(
        trials=trials,
        violations=violations,
        fraction=violations / trials,
        eta=eta,
        phi=penalty,
        k=k,
        lam=lam,
        l=l,
        seed=seed,
        generator=SAMPLER_NAME,
    )
