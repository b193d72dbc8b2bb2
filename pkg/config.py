"""
Configuration for flode runs.

Two layers:
- RUNTIME_CONFIG: process-level knobs read from the environment (.env supported)
- RunConfig: validated JSON run configuration passed to the CLI with --config

Environment:
FLODE_MAX_WORKERS=4      # concurrent replicate jobs
FLODE_LOG_LEVEL=INFO
FLODE_PROGRESS=1         # tqdm progress bars on/off
"""

import json
import math
import os
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from simulate import SimConfig

load_dotenv()

FLODE_VERSION = "0.1.0"


def _default_workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))


def load_runtime_config() -> dict:
    """Read process-level settings from the environment."""
    workers = os.getenv("FLODE_MAX_WORKERS", "").strip()
    return {
        "max_workers": int(workers) if workers else _default_workers(),
        "log_level": os.getenv("FLODE_LOG_LEVEL", "INFO").strip().upper(),
        "progress": os.getenv("FLODE_PROGRESS", "1").strip() not in ("0", "false", "no"),
    }


RUNTIME_CONFIG = load_runtime_config()

Method = Literal["flode", "fhist", "fconc"]


# =============================================================================
# RUN CONFIGURATION
# =============================================================================

class CompareConfig(BaseModel):
    """Simulation-study settings for the compare command"""
    model_config = ConfigDict(extra="forbid")

    n_replicates: int = Field(50, ge=1)
    n_eval: int = Field(1000, ge=1)
    methods: List[Method] = ["flode", "fhist", "fconc"]
    hist_basis_size: int = Field(15, ge=5)
    ridge_weight: Union[float, Literal["auto"]] = "auto"
    ridge_grid: List[float] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0]
    ridge_folds: int = Field(5, ge=2)
    n_boot: int = Field(0, ge=0)  # bootstrap replicates per flode fit for band coverage; 0 disables

    @field_validator("ridge_weight")
    @classmethod
    def _positive_weight(cls, v):
        if v != "auto" and v <= 0:
            raise ValueError("ridge_weight must be positive or 'auto'")
        return v

    @field_validator("ridge_grid")
    @classmethod
    def _positive_grid(cls, v):
        if not v or any(w <= 0 for w in v):
            raise ValueError("ridge_grid must be a non-empty list of positive weights")
        return v

    @field_validator("n_boot")
    @classmethod
    def _boot_count(cls, v):
        if v == 1:
            raise ValueError("n_boot must be 0 (off) or >= 2")
        return v


class RunConfig(BaseModel):
    """Validated run configuration. Unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    K: int = Field(20, ge=5)
    lam: float = Field(0.001, alias="lambda", gt=0.0, le=1.0)
    degree: int = Field(3, ge=1, le=5)
    tol: float = Field(1e-6, gt=0.0)
    max_iter: int = Field(200, ge=1)
    alpha_bounds: Tuple[float, float] = (1e-6, 40.0)
    init_grid_points: int = Field(41, ge=1)
    init_alpha_max: float = Field(20.0, ge=0.0)
    init_strategy: Literal["grid", "random"] = "grid"
    random_effects: bool = True
    mean_step: Literal["profile", "em"] = "profile"
    n_boot: int = Field(200, ge=2)
    cv_folds: int = Field(10, ge=2)
    cv_methods: List[Method] = ["flode", "fhist", "fconc"]
    seed: int = Field(0, ge=0, lt=2**64)
    target_J: int = Field(50, ge=3)
    max_workers: Optional[int] = Field(None, ge=1)
    simulation: SimConfig = Field(default_factory=SimConfig)
    compare: CompareConfig = Field(default_factory=CompareConfig)

    @model_validator(mode="after")
    def _check_ranges(self):
        lo, hi = self.alpha_bounds
        if not (0.0 < lo < hi) or not math.isfinite(hi):
            raise ValueError(f"alpha_bounds must satisfy 0 < lower < upper < inf, got {self.alpha_bounds}")
        if self.K < self.degree + 2:
            raise ValueError(f"K={self.K} too small for degree {self.degree}")
        if self.K > self.target_J:
            raise ValueError(f"K={self.K} exceeds target_J={self.target_J}")
        if self.K > self.simulation.grid_size:
            raise ValueError(f"K={self.K} exceeds simulation.grid_size={self.simulation.grid_size}")
        return self

    @property
    def workers(self) -> int:
        return self.max_workers or RUNTIME_CONFIG["max_workers"]

    def fit_options(self):
        """FitOptions for the EM fitter built from this config"""
        from em_core import FitOptions
        return FitOptions(
            tol=self.tol,
            max_iter=self.max_iter,
            alpha_bounds=tuple(self.alpha_bounds),
            random_effects=self.random_effects,
            init_grid_points=self.init_grid_points,
            init_alpha_max=self.init_alpha_max,
            init_strategy=self.init_strategy,
            init_seed=self.seed,
            mean_step=self.mean_step,
        )

    def dump(self) -> dict:
        return json.loads(self.model_dump_json(by_alias=True))


def load_run_config(path: Optional[Union[str, Path]] = None, seed: Optional[int] = None) -> RunConfig:
    """
    Load and validate a JSON run config.

    Missing path means all defaults. An explicit seed overrides the file.
    Raises pydantic.ValidationError with field-level messages on bad input.
    """
    data = {}
    if path is not None:
        with open(path) as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ValueError(f"Config {path} must hold a JSON object")
    if seed is not None:
        data["seed"] = seed
    return RunConfig.model_validate(data)


# =============================================================================
# PRINT CONFIG (for debugging)
# =============================================================================

def print_config(config: Optional[RunConfig] = None):
    """Print the runtime and run configuration"""
    config = config or RunConfig()
    print("\n" + "=" * 60)
    print(f"📊 FLODE CONFIGURATION (v{FLODE_VERSION})")
    print("=" * 60)
    print(f"   Workers:     {config.workers}")
    print(f"   Log level:   {RUNTIME_CONFIG['log_level']}")
    print(f"   Basis:       K={config.K}, degree={config.degree}, lambda={config.lam}")
    print(f"   EM:          tol={config.tol}, max_iter={config.max_iter}, alpha in {config.alpha_bounds}")
    print(f"   Bootstrap:   n_boot={config.n_boot}")
    print(f"   CV:          {config.cv_folds} folds, methods={config.cv_methods}")
    print("=" * 60 + "\n")


if __name__ == "__main__":
    print_config()
