import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from app.errors import DomainError, InfeasibleFloorError
from app.models.alphabet import Alphabet

# |ln Z| below this counts as normalized (Z(f) = 1 within 1e-8).
NORMALIZATION_TOL = 1e-8


class FactorBlock(BaseModel):
    """Parameters of one k-subset of variables, laid out row-major over `variables`."""

    model_config = ConfigDict(frozen=True)

    variables: Tuple[int, ...]
    shape: Tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def stop(self) -> int:
        return self.offset + self.size


class FactorBasis(BaseModel):
    """All k-subsets of the variables in lexicographic order, with contiguous offsets."""

    model_config = ConfigDict(frozen=True)

    alphabet: Alphabet
    k: int
    blocks: Tuple[FactorBlock, ...]

    @model_validator(mode="after")
    def _check_layout(self) -> "FactorBasis":
        if not 1 <= self.k <= self.alphabet.n:
            raise DomainError(f"degree k={self.k} outside [1, {self.alphabet.n}]")
        offset = 0
        for block in self.blocks:
            if block.offset != offset or len(block.variables) != self.k:
                raise DomainError(f"block {block.variables} breaks the contiguous k-subset layout")
            offset = block.stop
        return self

    @property
    def dimension(self) -> int:
        return self.blocks[-1].stop if self.blocks else 0


class LogLinearModel(BaseModel):
    """ln P(x) = <c^x, f> - log_z for a k-factor basis, with floor `lam`."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    basis: FactorBasis
    f: np.ndarray
    lam: float
    log_z: float

    @field_validator("f", mode="before")
    @classmethod
    def _as_array(cls, value) -> np.ndarray:
        f = np.array(value, dtype=np.float64).reshape(-1)
        f.setflags(write=False)
        return f

    @model_validator(mode="after")
    def _check_model(self) -> "LogLinearModel":
        if self.f.shape[0] != self.basis.dimension:
            raise DomainError(f"parameter vector has length {self.f.shape[0]}, basis needs {self.basis.dimension}")
        if not np.all(np.isfinite(self.f)):
            raise DomainError("parameters must be finite")
        if not self.lam > 0:
            raise InfeasibleFloorError(f"floor must be positive, got {self.lam!r}")
        if self.lam * self.basis.alphabet.n_states > 1 + 1e-12:
            raise InfeasibleFloorError(
                f"floor {self.lam!r} exceeds 1/|Ω| = {1 / self.basis.alphabet.n_states!r}"
            )
        return self

    @property
    def alphabet(self) -> Alphabet:
        return self.basis.alphabet

    @property
    def k(self) -> int:
        return self.basis.k

    @property
    def normalized(self) -> bool:
        return abs(self.log_z) <= NORMALIZATION_TOL
