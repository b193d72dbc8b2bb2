"""
Simulated datasets with flode or functional-historical ground truth.

Each dataset draws forcing functions, initial positions, smooth trial-specific
intercepts (cubic B-splines with `random_effect_df` degrees of freedom) and
white measurement noise from independent streams spawned off one seed, so a
fixed seed reproduces the dataset bitwise.
"""

import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from design import FunctionalDataset, decay_convolve
from metrics import Surface, flode_surface
from quadrature import prefix_trapezoid_weights
from splines import build_basis


# =============================================================================
# CONFIGURATION
# =============================================================================

class BumpSpec(BaseModel):
    """height · exp(-(t - center)² / (2 sd²))"""
    model_config = ConfigDict(extra="forbid")

    height: float
    center: float
    sd: float = Field(gt=0.0)


class CoefficientSpec(BaseModel):
    """Coefficient function as an offset plus a sum of Gaussian bumps"""
    model_config = ConfigDict(extra="forbid")

    offset: float = 0.0
    bumps: List[BumpSpec] = []

    def evaluate(self, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        values = np.full(grid.shape, self.offset)
        for bump in self.bumps:
            values += bump.height * np.exp(-((grid - bump.center) ** 2) / (2.0 * bump.sd ** 2))
        return values


class SurfaceBumpSpec(BaseModel):
    """Gaussian bump surface β(s, t), truncated to s <= t"""
    model_config = ConfigDict(extra="forbid")

    center_s: float = 0.25
    center_t: float = 0.75
    sd: float = Field(0.1, gt=0.0)
    height: float = 5.0

    def evaluate(self, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        s, t = np.meshgrid(grid, grid, indexing="ij")
        bump = self.height * np.exp(-((s - self.center_s) ** 2 + (t - self.center_t) ** 2) / (2.0 * self.sd ** 2))
        return np.where(s <= t, bump, 0.0)


def _default_b0() -> CoefficientSpec:
    return CoefficientSpec(bumps=[BumpSpec(height=2.0, center=0.25, sd=0.1),
                                  BumpSpec(height=-1.5, center=0.7, sd=0.12)])


def _default_b1() -> CoefficientSpec:
    return CoefficientSpec(bumps=[BumpSpec(height=4.0, center=0.3, sd=0.12),
                                  BumpSpec(height=-3.0, center=0.75, sd=0.1)])


class SimConfig(BaseModel):
    """Data-generating settings. Variances, not standard deviations."""
    model_config = ConfigDict(extra="forbid")

    n_trials: int = Field(100, ge=1)
    grid_size: int = Field(50, ge=3)
    alpha: float = Field(4.0, ge=0.0)
    sigma2: float = Field(0.1, ge=0.0)
    sigma2_d: float = Field(50.0, ge=0.0)
    y0_variance: float = Field(5.0, ge=0.0)
    seed: int = Field(0, ge=0, lt=2**64)
    truth_kind: Literal["flode", "fhist"] = "flode"
    random_effect_df: int = Field(10, ge=5)  # cubic B-splines need K >= 5
    forcing_kind: Literal["sine", "step"] = "sine"
    scale_range: Tuple[float, float] = (0.5, 2.0)
    shift_range: Tuple[float, float] = (0.0, math.pi / 2)
    b0: CoefficientSpec = Field(default_factory=_default_b0)
    b1: CoefficientSpec = Field(default_factory=_default_b1)
    fhist_surface: SurfaceBumpSpec = Field(default_factory=SurfaceBumpSpec)

    @model_validator(mode="after")
    def _check(self):
        if self.random_effect_df > self.grid_size:
            raise ValueError("random_effect_df cannot exceed grid_size")
        if self.scale_range[0] > self.scale_range[1] or self.shift_range[0] > self.shift_range[1]:
            raise ValueError("ranges must be given as (low, high)")
        return self

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_size)


# =============================================================================
# TRUTH CONTAINERS
# =============================================================================

@dataclass(frozen=True)
class FlodeTruth:
    """Ground truth behind a flode-generated dataset"""
    alpha: float
    grid: np.ndarray
    coef_fns: np.ndarray  # (P+1) x J: B_0, B_1
    d: np.ndarray  # N x df random-intercept coefficients
    delta: np.ndarray  # N x J
    y0: np.ndarray  # N
    signal: np.ndarray  # N x J noise-free trajectories

    def surface(self, p: int = 1):
        return flode_surface(self.alpha, self.coef_fns[p], self.grid)


@dataclass(frozen=True)
class FhistTruth:
    """Ground truth behind a historical-model dataset"""
    grid: np.ndarray
    surface_values: np.ndarray  # J x J indexed (s, t)
    intercept: np.ndarray  # J
    gamma: np.ndarray  # N x J
    signal: np.ndarray  # N x J

    def surface(self, p: int = 1):
        return Surface(grid=self.grid, values=self.surface_values)


# =============================================================================
# GENERATORS
# =============================================================================

def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed for replicate/role keys"""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1, dtype=np.uint64)[0])


def _streams(seed: int):
    forcing, y0, effects, noise = np.random.SeedSequence(seed).spawn(4)
    return (np.random.default_rng(forcing), np.random.default_rng(y0),
            np.random.default_rng(effects), np.random.default_rng(noise))


def sine_forcings(grid, scales, shifts) -> np.ndarray:
    """x_i(t) = scale_i · sin(πt + shift_i)"""
    grid = np.asarray(grid, dtype=float)
    scales = np.asarray(scales, dtype=float)[:, None]
    shifts = np.asarray(shifts, dtype=float)[:, None]
    return scales * np.sin(np.pi * grid[None, :] + shifts)


def draw_forcing_parameters(N: int, rng: np.random.Generator,
                            scale_range=(0.5, 2.0), shift_range=(0.0, math.pi / 2)):
    """scale_i ~ U(scale_range), shift_i ~ U(shift_range)"""
    scales = rng.uniform(scale_range[0], scale_range[1], size=N)
    shifts = rng.uniform(shift_range[0], shift_range[1], size=N)
    return scales, shifts


def step_forcings(grid, N: int, rng: np.random.Generator, height_range=(0.5, 2.0)) -> np.ndarray:
    """Step functions with random start, end and height per trial"""
    grid = np.asarray(grid, dtype=float)
    starts = rng.uniform(0.0, 0.6, size=N)
    ends = np.minimum(starts + rng.uniform(0.1, 0.4, size=N), 1.0)
    heights = rng.uniform(height_range[0], height_range[1], size=N)
    on = (grid[None, :] >= starts[:, None]) & (grid[None, :] < ends[:, None])
    return heights[:, None] * on


def gen_forcings(N: int, grid, seed: int, scale_range=(0.5, 2.0),
                 shift_range=(0.0, math.pi / 2), kind: str = "sine") -> np.ndarray:
    """N x J forcing curves, deterministic given the seed"""
    rng = np.random.default_rng(seed)
    if kind == "sine":
        scales, shifts = draw_forcing_parameters(N, rng, scale_range, shift_range)
        return sine_forcings(grid, scales, shifts)
    if kind == "step":
        return step_forcings(grid, N, rng, scale_range)
    raise ValueError(f"unknown forcing kind: {kind}")


def _smooth_effects(config: SimConfig, grid: np.ndarray, rng: np.random.Generator):
    basis = build_basis(grid, config.random_effect_df, 3)
    coefs = rng.normal(0.0, math.sqrt(config.sigma2_d), size=(config.n_trials, config.random_effect_df))
    return coefs, basis.evaluate(coefs)


def _forcings_for(config: SimConfig, grid: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return gen_forcings(config.n_trials, grid, int(rng.integers(0, 2**63)),
                        config.scale_range, config.shift_range, config.forcing_kind)


def gen_flode_dataset(config: SimConfig) -> Tuple[FunctionalDataset, FlodeTruth]:
    """
    Trajectories from the integrated model

        y_i(t) = y_i(0)e^{-αt} + ∫_0^t e^{-α(t-s)} {B_0(s) + B_1(s)x_i(s) + δ_i(s)} ds

    with trapezoid integrals on the grid, plus N(0, σ²) noise.
    """
    if config.truth_kind != "flode":
        raise ValueError("gen_flode_dataset requires truth_kind='flode'")
    grid = config.grid
    forcing_rng, y0_rng, effect_rng, noise_rng = _streams(config.seed)

    x = _forcings_for(config, grid, forcing_rng)
    b0, b1 = config.b0.evaluate(grid), config.b1.evaluate(grid)
    y0 = y0_rng.normal(0.0, math.sqrt(config.y0_variance), size=config.n_trials)
    d, delta = _smooth_effects(config, grid, effect_rng)

    drive = b0[None, :] + b1[None, :] * x + delta
    signal = (np.outer(y0, np.exp(-config.alpha * grid))
              + decay_convolve(drive[:, :, None], config.alpha, grid)[:, :, 0])
    noise = noise_rng.normal(0.0, math.sqrt(config.sigma2), size=signal.shape)

    dataset = FunctionalDataset(grid=grid, responses=signal + noise, forcings=x[None],
                                trial_ids=tuple(range(config.n_trials)))
    truth = FlodeTruth(alpha=config.alpha, grid=grid, coef_fns=np.vstack([b0, b1]),
                       d=d, delta=delta, y0=y0, signal=signal)
    return dataset, truth


def historical_integral(surface_values: np.ndarray, forcings: np.ndarray, grid) -> np.ndarray:
    """∫_0^t β(s, t) x_i(s) ds by trapezoid for every trial, N x J"""
    weights = prefix_trapezoid_weights(grid) * np.asarray(surface_values).T  # rows t, columns s
    return np.asarray(forcings) @ weights.T


def gen_fhist_dataset(config: SimConfig) -> Tuple[FunctionalDataset, FhistTruth]:
    """
    Y_i(t) = γ_i(t) + β_0(t) + ∫_0^t β(s, t) x_i(s) ds + ε_i(t)

    with the Gaussian bump surface restricted to s <= t and γ_i drawn like δ_i.
    """
    if config.truth_kind != "fhist":
        raise ValueError("gen_fhist_dataset requires truth_kind='fhist'")
    grid = config.grid
    forcing_rng, _, effect_rng, noise_rng = _streams(config.seed)

    x = _forcings_for(config, grid, forcing_rng)
    surface_values = config.fhist_surface.evaluate(grid)
    intercept = config.b0.evaluate(grid)
    _, gamma = _smooth_effects(config, grid, effect_rng)

    signal = gamma + intercept[None, :] + historical_integral(surface_values, x, grid)
    noise = noise_rng.normal(0.0, math.sqrt(config.sigma2), size=signal.shape)

    dataset = FunctionalDataset(grid=grid, responses=signal + noise, forcings=x[None],
                                trial_ids=tuple(range(config.n_trials)))
    truth = FhistTruth(grid=grid, surface_values=surface_values, intercept=intercept,
                       gamma=gamma, signal=signal)
    return dataset, truth


def generate(config: SimConfig, n_trials: Optional[int] = None, seed: Optional[int] = None):
    """Dispatch on truth_kind, optionally overriding size and seed"""
    updates = {}
    if n_trials is not None:
        updates["n_trials"] = n_trials
    if seed is not None:
        updates["seed"] = seed
    if updates:
        config = config.model_copy(update=updates)
    if config.truth_kind == "flode":
        return gen_flode_dataset(config)
    return gen_fhist_dataset(config)
