import math
from contextlib import contextmanager
from typing import Iterator

from fastapi import APIRouter, HTTPException
from loguru import logger
from pydantic import ValidationError

from app.api.models import (
    AlphabetSpec,
    BoundRequest,
    BoundResponse,
    CountsPayload,
    FitRequest,
    FitResponse,
    GoodnessOfFitRequest,
    GoodnessOfFitResponse,
    SelectRequest,
)
from app.config import config
from app.errors import LogLinError, ParseError, http_status_for, unwrap_validation_error
from app.models.alphabet import Alphabet, Dataset, DistributionTable
from app.services import baselines, vc
from app.services.fitter import LogLinearFitter, evaluate_model
from app.services.information import encode_state
from app.services.loglin import min_log_prob, model_from_table, to_table
from app.services.selector import SrmSelector

router = APIRouter(prefix="/api/v1", tags=["loglin-srm"])


@contextmanager
def _as_http_errors() -> Iterator[None]:
    try:
        yield
    except ValidationError as e:
        error = unwrap_validation_error(e)
    except LogLinError as e:
        error = e
    else:
        return
    logger.warning(f"request rejected: {error}")
    raise HTTPException(status_code=http_status_for(error), detail=str(error))


def _alphabet(spec: AlphabetSpec) -> Alphabet:
    return Alphabet.from_sizes(spec.sizes, spec.names)


def _dataset(payload: CountsPayload) -> Dataset:
    alphabet = _alphabet(payload.alphabet)
    counts = {}
    for key, count in payload.counts.items():
        try:
            values = tuple(int(part) for part in key.split(","))
        except ValueError:
            raise ParseError(f"state key {key!r} is not a comma-separated list of category indices")
        state = encode_state(values, alphabet)
        counts[state] = counts.get(state, 0) + count
    return Dataset(alphabet=alphabet, counts=counts)


@router.post("/bound", response_model=BoundResponse)
def bound(request: BoundRequest):
    with _as_http_errors():
        alphabet = _alphabet(request.alphabet)
        value = vc.phi(request.k, request.lam, request.eta, request.l, alphabet)
        trivial = -math.log(request.lam)
        return BoundResponse(
            h_k=vc.h_k(alphabet, request.k),
            product_vc_dim=vc.product_vc_dim(alphabet),
            phi=value,
            trivial_bound=trivial,
            vacuous=value >= trivial,
        )


@router.post("/fit", response_model=FitResponse)
def fit(request: FitRequest):
    with _as_http_errors():
        data = _dataset(request)
        result = LogLinearFitter(config.fit_config(max_iters=request.max_iters)).fit(
            data, request.k, request.lam
        )
        return FitResponse(
            k=request.k,
            lam=request.lam,
            r_emp=result.r_emp,
            min_log_prob=min_log_prob(result.model),
            iterations=result.iterations,
            converged=result.converged,
            active_floor_states=result.active_floor_states,
            probabilities=to_table(result.model).probs.tolist(),
        )


@router.post("/select")
def select(request: SelectRequest) -> dict:
    with _as_http_errors():
        data = _dataset(request)
        penalty_cfg = config.penalty_config(
            eta=request.eta, ladder_base=request.ladder_base, ladder_depth=request.ladder_depth
        )
        report = SrmSelector(penalty_cfg).select(data, request.max_k)
        # dumped here: records hold fitted arrays that have no JSON schema
        return report.model_dump(mode="json", by_alias=True)


@router.post("/test", response_model=GoodnessOfFitResponse)
def goodness_of_fit(request: GoodnessOfFitRequest):
    with _as_http_errors():
        data = _dataset(request)
        table = DistributionTable(alphabet=data.alphabet, probs=request.probabilities)
        scored = evaluate_model(data, model_from_table(table))
        params = baselines.parameter_count(data.alphabet, request.k)
        df = baselines.degrees_of_freedom(data.alphabet, request.k)
        x2 = baselines.pearson_x2(data, table)
        g2 = baselines.deviance_g2(data, table)
        return GoodnessOfFitResponse(
            l=data.l,
            r_emp=scored.r_emp,
            x2=x2,
            g2=g2,
            params=params,
            df=df,
            x2_p=baselines.chi2_p_value(x2, df),
            g2_p=baselines.chi2_p_value(g2, df),
            aic=baselines.aic_score(data, scored, params),
            bic=baselines.bic_score(data, scored, params),
        )
