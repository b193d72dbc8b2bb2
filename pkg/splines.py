"""
B-spline bases and the blended smoothness penalty.

The same basis Θ(t) and penalty P = λI + (1-λ)Δ2ᵀΔ2 are shared by the
fixed-effect coefficient functions and the trial-specific random intercepts.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import LinAlgError, cho_factor

DEFAULT_LAMBDA = 0.001


@dataclass(frozen=True)
class BasisSystem:
    """B-spline basis evaluated on a grid, with its penalty once attached"""
    grid: np.ndarray
    K: int
    degree: int
    knots: np.ndarray
    basis_matrix: np.ndarray  # J x K
    penalty: Optional[np.ndarray] = None  # K x K
    lam: Optional[float] = None

    @property
    def J(self) -> int:
        return len(self.grid)

    def with_penalty(self, lam: float = DEFAULT_LAMBDA) -> "BasisSystem":
        return replace(self, penalty=build_penalty(self.K, lam), lam=lam)

    def evaluate(self, coefs: np.ndarray) -> np.ndarray:
        """Θ(t) @ coefs on the grid; coefs may be (K,) or (..., K)."""
        return np.asarray(coefs) @ self.basis_matrix.T

    def require_penalty(self) -> np.ndarray:
        if self.penalty is None:
            raise ValueError("BasisSystem has no penalty; call with_penalty() first")
        return self.penalty


def validate_grid(grid) -> np.ndarray:
    grid = np.array(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be a 1-D array with at least 2 points")
    if not np.all(np.isfinite(grid)):
        raise ValueError("grid contains non-finite values")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing (unsorted or duplicate points)")
    if grid[0] < 0.0 or grid[-1] > 1.0:
        raise ValueError(f"grid must lie within [0, 1], got [{grid[0]}, {grid[-1]}]")
    return grid


def clamped_knots(lower: float, upper: float, K: int, degree: int) -> np.ndarray:
    """Equally spaced interior knots with (degree+1)-fold boundary knots."""
    n_interior = K - degree - 1
    interior = np.linspace(lower, upper, n_interior + 2)[1:-1]
    return np.concatenate([
        np.full(degree + 1, lower),
        interior,
        np.full(degree + 1, upper),
    ])


def build_basis(grid, K: int, degree: int = 3) -> BasisSystem:
    """
    Evaluate K clamped B-splines of the given degree on the grid.

    Boundary knots sit at the grid ends, so the rows form a partition of unity
    at every grid point.
    """
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    if K < degree + 2:
        raise ValueError(f"K={K} too small for degree {degree} (need K >= {degree + 2})")
    grid = validate_grid(grid)
    if K > grid.size:
        raise ValueError(f"K={K} exceeds the number of grid points J={grid.size}")

    knots = clamped_knots(grid[0], grid[-1], K, degree)
    basis_matrix = BSpline.design_matrix(grid, knots, degree).toarray()
    basis_matrix.setflags(write=False)
    grid.setflags(write=False)
    return BasisSystem(grid=grid, K=K, degree=degree, knots=knots, basis_matrix=basis_matrix)


def difference_matrix(K: int, order: int = 2) -> np.ndarray:
    """(K-order) x K finite difference operator."""
    return np.diff(np.eye(K), n=order, axis=0)


def build_penalty(K: int, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """P = λ·I + (1-λ)·Δ2ᵀΔ2, symmetric positive definite for 0 < λ <= 1."""
    if not (0.0 < lam <= 1.0):
        raise ValueError(f"lambda must lie in (0, 1], got {lam}")
    if K < 3:
        raise ValueError(f"K must be >= 3 for a second-order penalty, got {K}")
    d2 = difference_matrix(K, 2)
    penalty = lam * np.eye(K) + (1.0 - lam) * (d2.T @ d2)
    try:
        cho_factor(penalty)
    except LinAlgError as e:
        raise ValueError(f"penalty not positive definite for lambda={lam}") from e
    penalty.setflags(write=False)
    return penalty


def make_basis_system(grid, K: int = 20, degree: int = 3, lam: float = DEFAULT_LAMBDA) -> BasisSystem:
    """Basis with its blended penalty attached."""
    return build_basis(grid, K, degree).with_penalty(lam)
