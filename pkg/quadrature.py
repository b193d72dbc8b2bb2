"""
Trapezoidal integration on discrete grids.

Integrals over [0, t] use grid points s <= t only; there is no sub-grid
interpolation.
"""

import numpy as np
from scipy import integrate


def _check(grid, values, axis: int):
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if grid.ndim != 1:
        raise ValueError("grid must be 1-D")
    if values.ndim == 0 or values.shape[axis] != grid.size:
        raise ValueError(
            f"length mismatch: grid has {grid.size} points, values have shape {values.shape}"
        )
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    return grid, values


def cumulative_trapezoid(grid, values, axis: int = -1) -> np.ndarray:
    """Running trapezoid integral along `axis`; the first entry is 0."""
    grid, values = _check(grid, values, axis)
    if grid.size <= 1:
        return np.zeros_like(values)
    return integrate.cumulative_trapezoid(values, x=grid, axis=axis, initial=0.0)


def trapezoid(grid, values, axis: int = -1):
    """
    Trapezoid integral along `axis`; 0 when there are fewer than 2 points.

    Taken as the last entry of the cumulative pass so the two always agree bitwise.
    """
    grid, values = _check(grid, values, axis)
    if grid.size <= 1:
        out = np.zeros_like(np.take(values, 0, axis=axis)) if values.ndim > 1 else 0.0
        return out
    total = np.take(cumulative_trapezoid(grid, values, axis=axis), -1, axis=axis)
    return float(total) if np.ndim(total) == 0 else total


def trapezoid_weights(grid) -> np.ndarray:
    """Weights w with w @ f == trapezoid(grid, f) up to summation order."""
    grid = np.asarray(grid, dtype=float)
    w = np.zeros(grid.size)
    if grid.size <= 1:
        return w
    h = np.diff(grid)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def prefix_trapezoid_weights(grid) -> np.ndarray:
    """
    Lower-triangular J x J matrix W whose row j holds the trapezoid weights
    over grid[0..j], so (W @ f)[j] integrates f over [t_0, t_j].
    """
    grid = np.asarray(grid, dtype=float)
    J = grid.size
    W = np.zeros((J, J))
    h = np.diff(grid)
    for j in range(1, J):
        W[j, :j] += 0.5 * h[:j]
        W[j, 1:j + 1] += 0.5 * h[:j]
    return W


def double_trapezoid(grid, values) -> float:
    """Integral of a J x J array over grid x grid (inner axis 0, then axis 1)."""
    values = np.asarray(values, dtype=float)
    inner = trapezoid(grid, values, axis=0)
    return trapezoid(grid, inner)
