from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.errors import DomainError
from app.models.loglinear import LogLinearModel


class PenaltyConfig(BaseModel):
    """Confidence η, the λ-ladder λ_n = ladder_base^n / |Ω| and a geometric prior on (k, n).

    The prior is ν(k, n) = (1-a) a^(k-1) * (1-b) b^(n-1) with a = prior_k_ratio and
    b = prior_n_ratio; a = b = 1/2 gives 2^-k 2^-n.
    """

    model_config = ConfigDict(frozen=True)

    eta: float = 0.05
    ladder_base: float = 0.5
    ladder_depth: int = 4
    prior_k_ratio: float = 0.5
    prior_n_ratio: float = 0.5

    @model_validator(mode="after")
    def _check_ranges(self) -> "PenaltyConfig":
        for name in ("eta", "ladder_base", "prior_k_ratio", "prior_n_ratio"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise DomainError(f"{name} must lie in (0, 1), got {value!r}")
        if self.ladder_depth < 1:
            raise DomainError(f"ladder_depth must be positive, got {self.ladder_depth}")
        return self


class FitConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    grad_tol: float = 1e-8
    max_iters: int = 100_000
    barrier_weights: Tuple[float, ...] = (1.0, 1e-2, 1e-4, 1e-6)
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    polish: bool = True
    # Newton steps while the identifiable parameter count stays at or below this; 0 disables them
    second_order_max_params: int = 1024
    record_trace: bool = False

    @field_validator("barrier_weights")
    @classmethod
    def _check_schedule(cls, weights: Tuple[float, ...]) -> Tuple[float, ...]:
        if not weights:
            raise DomainError("barrier schedule must not be empty")
        if any(w <= 0 for w in weights):
            raise DomainError("barrier weights must be positive")
        if any(b >= a for a, b in zip(weights, weights[1:])):
            raise DomainError("barrier weights must be strictly decreasing")
        return weights

    @model_validator(mode="after")
    def _check_search(self) -> "FitConfig":
        if not self.grad_tol > 0:
            raise DomainError("grad_tol must be positive")
        if self.max_iters < 1:
            raise DomainError("max_iters must be positive")
        if self.second_order_max_params < 0:
            raise DomainError("second_order_max_params must be nonnegative")
        if not 0 < self.shrink < 1 or not 0 < self.sufficient_decrease < 1:
            raise DomainError("line-search parameters must lie in (0, 1)")
        return self


class FitResult(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    model: LogLinearModel
    r_emp: float
    iterations: int
    converged: bool
    active_floor_states: int
    # accepted objective values, one tuple per optimizer stage
    objective_trace: Tuple[Tuple[float, ...], ...] = ()


class ClassRecord(BaseModel):
    """Evidence for one (k, n) grid point; a skipped point carries only its reason."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, populate_by_name=True)

    k: int
    n: int
    lam: float = Field(alias="lambda")
    h: int
    params: int
    r_emp: Optional[float] = None
    phi: Optional[float] = None
    guaranteed_risk: Optional[float] = None
    aic: Optional[float] = None
    bic: Optional[float] = None
    x2: Optional[float] = None
    g2: Optional[float] = None
    df: Optional[int] = None
    x2_p: Optional[float] = None
    g2_p: Optional[float] = None
    converged: Optional[bool] = None
    active_floor_states: Optional[int] = None
    skipped_reason: Optional[str] = None
    fit: Optional[FitResult] = Field(default=None, exclude=True, repr=False)

    @property
    def skipped(self) -> bool:
        return self.skipped_reason is not None


class GridPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: int
    n: int


class StepwiseChoice(GridPoint):
    alpha: float


class SrmGrid(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_k: int
    ladder_depth: int
    ladder_base: float
    lambdas: Tuple[float, ...]


class SelectionReport(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    eta: float
    grid: SrmGrid
    records: Tuple[ClassRecord, ...]
    winner: Optional[GridPoint] = None
    aic_winner: Optional[GridPoint] = None
    bic_winner: Optional[GridPoint] = None
    stepwise: Optional[StepwiseChoice] = None

    def record(self, k: int, n: int) -> ClassRecord:
        for rec in self.records:
            if rec.k == k and rec.n == n:
                return rec
        raise KeyError((k, n))

    @property
    def winner_record(self) -> Optional[ClassRecord]:
        return self.record(self.winner.k, self.winner.n) if self.winner else None


class CoverageReport(BaseModel):
    """Outcome of resampling datasets from a known model and checking R <= R_emp + φ."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    trials: int
    violations: int
    fraction: float
    eta: float
    phi: float
    k: int
    lam: float = Field(alias="lambda")
    l: int
    seed: int
    generator: str
