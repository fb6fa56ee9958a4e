from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class AlphabetSpec(BaseModel):
    sizes: List[int]
    names: Optional[List[str]] = None


class CountsPayload(BaseModel):
    """Observations keyed by comma-joined category indices, e.g. {"0,1,1": 4}."""

    alphabet: AlphabetSpec
    counts: Dict[str, int]


class BoundRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    alphabet: AlphabetSpec
    k: int
    lam: float = Field(alias="lambda")
    eta: float = 0.05
    l: int


class BoundResponse(BaseModel):
    h_k: int
    product_vc_dim: int
    phi: float
    trivial_bound: float
    vacuous: bool


class FitRequest(CountsPayload):
    model_config = ConfigDict(populate_by_name=True)

    k: int
    lam: float = Field(alias="lambda")
    max_iters: Optional[int] = None


class FitResponse(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    k: int
    lam: float = Field(alias="lambda")
    r_emp: float
    min_log_prob: float
    iterations: int
    converged: bool
    active_floor_states: int
    probabilities: List[float]


class SelectRequest(CountsPayload):
    max_k: int
    eta: Optional[float] = None
    ladder_base: Optional[float] = None
    ladder_depth: Optional[int] = None


class GoodnessOfFitRequest(CountsPayload):
    """Scores a model given by its probability table over the same alphabet."""

    probabilities: List[float]
    k: int = Field(description="interaction order used for the parameter count")


class GoodnessOfFitResponse(BaseModel):
    l: int
    r_emp: float
    x2: float
    g2: float
    params: int
    df: int
    x2_p: float
    g2_p: float
    aic: float
    bic: float
