import os
from typing import Tuple

from dotenv import load_dotenv

from app.models.selection import FitConfig, PenaltyConfig

load_dotenv()


def _floats(raw: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in raw.split(",") if part.strip())


class Config:
    def __init__(self):
        # Fitting Configuration
        self.fit_grad_tol = float(os.getenv("FIT_GRAD_TOL", "1e-8"))
        self.fit_max_iters = int(os.getenv("FIT_MAX_ITERS", "100000"))
        self.fit_barrier_weights = _floats(os.getenv("FIT_BARRIER_WEIGHTS", "1,1e-2,1e-4,1e-6"))
        self.fit_polish = os.getenv("FIT_POLISH", "true").lower() == "true"
        self.fit_second_order_max_params = int(os.getenv("FIT_SECOND_ORDER_MAX_PARAMS", "1024"))

        # Structural Risk Minimization Configuration
        self.srm_eta = float(os.getenv("SRM_ETA", "0.05"))
        self.srm_ladder_base = float(os.getenv("SRM_LADDER_BASE", "0.5"))
        self.srm_ladder_depth = int(os.getenv("SRM_LADDER_DEPTH", "4"))
        self.srm_prior_k_ratio = float(os.getenv("SRM_PRIOR_K_RATIO", "0.5"))
        self.srm_prior_n_ratio = float(os.getenv("SRM_PRIOR_N_RATIO", "0.5"))
        self.srm_workers = int(os.getenv("SRM_WORKERS", "1"))

        # Shattering Configuration
        self.shatter_max_epochs = int(os.getenv("SHATTER_MAX_EPOCHS", "100"))

        # API Configuration
        self.api_host = os.getenv("API_HOST", "0.0.0.0")
        self.api_port = int(os.getenv("API_PORT", "8080"))
        self.api_debug = os.getenv("API_DEBUG", "false").lower() == "true"

        # General Configuration
        self.log_level = os.getenv("LOG_LEVEL", "INFO")
        self.environment = os.getenv("ENVIRONMENT", "production")

    def fit_config(self, **overrides) -> FitConfig:
        values = dict(
            grad_tol=self.fit_grad_tol,
            max_iters=self.fit_max_iters,
            barrier_weights=self.fit_barrier_weights,
            polish=self.fit_polish,
            second_order_max_params=self.fit_second_order_max_params,
        )
        values.update({key: value for key, value in overrides.items() if value is not None})
        return FitConfig(**values)

    def penalty_config(self, **overrides) -> PenaltyConfig:
        values = dict(
            eta=self.srm_eta,
            ladder_base=self.srm_ladder_base,
            ladder_depth=self.srm_ladder_depth,
            prior_k_ratio=self.srm_prior_k_ratio,
            prior_n_ratio=self.srm_prior_n_ratio,
        )
        values.update({key: value for key, value in overrides.items() if value is not None})
        return PenaltyConfig(**values)


config = Config()
