"""
Coefficient surfaces, prediction and evaluation metrics.
"""

from dataclasses import dataclass

import numpy as np

from design import build_xstar
from em_core import FlodeParams
from quadrature import double_trapezoid, trapezoid
from splines import BasisSystem


@dataclass(frozen=True)
class Surface:
    """β(s, t) on grid x grid; values[j, l] = β(s_j, t_l)"""
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (grid.size, grid.size):
            raise ValueError(f"surface values must be {grid.size} x {grid.size}, got {values.shape}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def to_long(self):
        """(s, t, value) columns, s varying slowest"""
        s, t = np.meshgrid(self.grid, self.grid, indexing="ij")
        return s.ravel(), t.ravel(), self.values.ravel()


def flode_surface(alpha: float, coef_fn, grid) -> Surface:
    """e^{-α(t-s)} B(s) I(s < t)"""
    grid = np.asarray(grid, dtype=float)
    coef_fn = np.asarray(coef_fn, dtype=float)
    if coef_fn.shape != grid.shape:
        raise ValueError("coefficient function and grid lengths differ")
    lag = grid[None, :] - grid[:, None]  # t - s
    kernel = np.where(lag > 0, np.exp(-alpha * np.clip(lag, 0.0, None)), 0.0)
    return Surface(grid=grid, values=kernel * coef_fn[:, None])


def _same_grid(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or not np.allclose(a, b, rtol=0, atol=1e-12):
        raise ValueError("grid mismatch")


def surface_ise(estimate: Surface, truth: Surface) -> float:
    """∫∫ (truth - estimate)² ds dt"""
    _same_grid(estimate.grid, truth.grid)
    return double_trapezoid(truth.grid, (truth.values - estimate.values) ** 2)


def integrated_error(truth, estimate, grid) -> float:
    """Signed IE = ∫ (B_true - B̂) dt"""
    truth, estimate = np.asarray(truth, dtype=float), np.asarray(estimate, dtype=float)
    return trapezoid(grid, truth - estimate)


def alpha_error(truth: float, estimate: float) -> float:
    return float(truth) - float(estimate)


def integrated_coverage(lower, upper, truth, grid) -> float:
    """∫ I{lower(t) <= truth(t) <= upper(t)} dt"""
    inside = (np.asarray(lower) <= truth) & (np.asarray(truth) <= np.asarray(upper))
    return trapezoid(grid, inside.astype(float)) / (grid[-1] - grid[0])


def predict(params: FlodeParams, basis: BasisSystem, new_forcings, new_initial_positions) -> np.ndarray:
    """
    Ŷ_i = y_i(0) e^{-αt} + x*_i b with random effects at zero.

    new_forcings is P x M x J (M x J accepted when P = 1) on the training grid.
    """
    forcings = np.asarray(new_forcings, dtype=float)
    if forcings.ndim == 2:
        forcings = forcings[None]
    if forcings.ndim != 3 or forcings.shape[2] != basis.J:
        raise ValueError(f"forcings must lie on the training grid of {basis.J} points")
    y0 = np.asarray(new_initial_positions, dtype=float)
    if y0.shape != (forcings.shape[1],):
        raise ValueError("one initial position per new trial is required")
    if forcings.shape[0] * basis.K + basis.K != np.asarray(params.b).size:
        raise ValueError("number of forcings does not match the fitted coefficients")
    xstar = build_xstar(forcings, params.alpha, basis)
    return np.outer(y0, np.exp(-params.alpha * basis.grid)) + xstar @ params.b


def mape(predictions, truths, grid) -> float:
    """(1/n) Σ_i ∫ |Ŷ_i - Y_i| dt"""
    predictions, truths = np.asarray(predictions, dtype=float), np.asarray(truths, dtype=float)
    if predictions.shape != truths.shape:
        raise ValueError("predictions and truths differ in shape")
    return float(np.mean(trapezoid(grid, np.abs(predictions - truths), axis=-1)))
