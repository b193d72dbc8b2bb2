"""
Transformed design objects for the integrated flode model.

For a buffering parameter α the integrated model is linear in the spline
coefficients:

    Y_i(t) = y0*_i(t, α) + D*(t, α) d_i + x*_i(t, α) b + ε_i(t)

with
    x*_ip(t, α)[k] = ∫_0^t e^{-α(t-s)} x_ip(s) θ_k(s) ds
    D*(t, α)[k]    = ∫_0^t e^{-α(t-s)} θ_k(s) ds
    y0*_i(t, α)    = y_i(0) e^{-αt}

Block p = 0 of x* uses the constant forcing x_i0 ≡ 1 and carries the
population intercept B_0.
"""

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from quadrature import cumulative_trapezoid
from splines import BasisSystem

# Above this value of α·(t_max - t_min) the factored kernel e^{-αt}·e^{αs}
# risks overflow and the per-interval recursion is used instead.
FACTORED_KERNEL_LIMIT = 30.0


@dataclass(frozen=True)
class FunctionalDataset:
    """N trials observed on a shared grid of J times in [0, 1]"""
    grid: np.ndarray  # J
    responses: np.ndarray  # N x J
    forcings: np.ndarray  # P x N x J
    trial_ids: tuple

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        responses = np.asarray(self.responses, dtype=float)
        forcings = np.asarray(self.forcings, dtype=float)
        if forcings.ndim == 2:
            forcings = forcings[None]
        if grid.ndim != 1 or grid.size < 3:
            raise ValueError("dataset grid must be 1-D with J >= 3")
        if np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > 1:
            raise ValueError("dataset grid must be strictly increasing within [0, 1]")
        if responses.ndim != 2 or responses.shape[1] != grid.size or responses.shape[0] < 1:
            raise ValueError(f"responses must be N x {grid.size}, got {responses.shape}")
        if forcings.ndim != 3 or forcings.shape[1:] != responses.shape:
            raise ValueError(f"forcings must be P x {responses.shape}, got {forcings.shape}")
        if not (np.all(np.isfinite(responses)) and np.all(np.isfinite(forcings))):
            raise ValueError("dataset contains missing or non-finite values")
        trial_ids = tuple(self.trial_ids) if self.trial_ids is not None else tuple(range(responses.shape[0]))
        if len(trial_ids) != responses.shape[0]:
            raise ValueError("trial_ids length does not match the number of trials")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "forcings", forcings)
        object.__setattr__(self, "trial_ids", trial_ids)

    @property
    def N(self) -> int:
        return self.responses.shape[0]

    @property
    def J(self) -> int:
        return self.grid.size

    @property
    def P(self) -> int:
        return self.forcings.shape[0]

    @property
    def initial_positions(self) -> np.ndarray:
        """Observed Y_i(0)"""
        return self.responses[:, 0].copy()

    def subset(self, indices: Sequence[int]) -> "FunctionalDataset":
        """Trials at `indices` (repeats allowed, as in bootstrap resampling)."""
        idx = np.asarray(indices, dtype=int)
        return FunctionalDataset(
            grid=self.grid,
            responses=self.responses[idx],
            forcings=self.forcings[:, idx],
            trial_ids=tuple(self.trial_ids[i] for i in idx),
        )


@dataclass(frozen=True)
class DesignBundle:
    """α-dependent designs for every trial"""
    alpha: float
    xstar: np.ndarray  # N x J x K(P+1)
    dstar: np.ndarray  # J x K
    y0star: np.ndarray  # N x J
    decay: np.ndarray  # J, e^{-α t_j}

    @property
    def N(self) -> int:
        return self.xstar.shape[0]

    def with_y0(self, y0: np.ndarray) -> "DesignBundle":
        y0 = np.asarray(y0, dtype=float)
        return replace(self, y0star=np.outer(y0, self.decay))

    def subset(self, indices: Sequence[int], y0: Optional[np.ndarray] = None) -> "DesignBundle":
        idx = np.asarray(indices, dtype=int)
        y0star = self.y0star[idx] if y0 is None else np.outer(y0, self.decay)
        return replace(self, xstar=self.xstar[idx], y0star=y0star)


def decay_convolve(values: np.ndarray, alpha: float, grid: np.ndarray) -> np.ndarray:
    """
    Row j of the result is ∫_0^{t_j} e^{-α(t_j - s)} values(s) ds by trapezoid,
    with the grid along axis -2 of `values` (shape (..., J, K)).
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if alpha * (grid[-1] - grid[0]) <= FACTORED_KERNEL_LIMIT:
        # e^{-α(t-s)} = e^{-α(t-t0)} e^{α(s-t0)}: one cumulative pass for all rows
        shift = grid - grid[0]
        grow = np.exp(alpha * shift)[:, None]
        shrink = np.exp(-alpha * shift)[:, None]
        return shrink * cumulative_trapezoid(grid, grow * values, axis=-2)

    # I_j = e^{-α h_j} I_{j-1} + h_j/2 (e^{-α h_j} f_{j-1} + f_j)
    out = np.zeros_like(values)
    h = np.diff(grid)
    damp = np.exp(-alpha * h)
    for j in range(1, grid.size):
        out[..., j, :] = damp[j - 1] * (
            out[..., j - 1, :] + 0.5 * h[j - 1] * values[..., j - 1, :]
        ) + 0.5 * h[j - 1] * values[..., j, :]
    return out


def _check_alpha(alpha: float):
    if not np.isfinite(alpha) or alpha < 0:
        raise ValueError(f"alpha must be finite and >= 0, got {alpha}")


def build_xstar_block(forcing, alpha: float, basis: BasisSystem) -> np.ndarray:
    """J x K matrix with entry (j, k) = ∫_0^{t_j} e^{-α(t_j-s)} x(s) θ_k(s) ds."""
    _check_alpha(alpha)
    forcing = np.asarray(forcing, dtype=float)
    if forcing.shape != (basis.J,):
        raise ValueError(f"forcing must have length {basis.J}, got shape {forcing.shape}")
    if not np.all(np.isfinite(forcing)):
        raise ValueError("forcing contains non-finite values")
    return decay_convolve(forcing[:, None] * basis.basis_matrix, alpha, basis.grid)


def build_dstar(alpha: float, basis: BasisSystem) -> np.ndarray:
    """Random-intercept design: build_xstar_block with forcing ≡ 1."""
    return build_xstar_block(np.ones(basis.J), alpha, basis)


def build_y0star(y0: float, alpha: float, grid) -> np.ndarray:
    """y0·e^{-α t_j}"""
    _check_alpha(alpha)
    if not np.isfinite(y0):
        raise ValueError(f"y0 must be finite, got {y0}")
    return y0 * np.exp(-alpha * np.asarray(grid, dtype=float))


def build_xstar(forcings: np.ndarray, alpha: float, basis: BasisSystem) -> np.ndarray:
    """
    Stacked fixed-effect designs for all trials, N x J x K(P+1).

    `forcings` is P x N x J; block 0 is the intercept (x ≡ 1).
    """
    _check_alpha(alpha)
    forcings = np.asarray(forcings, dtype=float)
    if forcings.ndim != 3 or forcings.shape[2] != basis.J:
        raise ValueError(f"forcings must be P x N x {basis.J}, got shape {forcings.shape}")
    if not np.all(np.isfinite(forcings)):
        raise ValueError("forcings contain non-finite values")
    P, N, J = forcings.shape
    theta = basis.basis_matrix

    intercept = decay_convolve(theta, alpha, basis.grid)
    weighted = forcings[..., None] * theta[None, None]  # P x N x J x K
    blocks = decay_convolve(weighted, alpha, basis.grid)

    xstar = np.empty((N, J, basis.K * (P + 1)))
    xstar[:, :, :basis.K] = intercept[None]
    for p in range(P):
        xstar[:, :, (p + 1) * basis.K:(p + 2) * basis.K] = blocks[p]
    return xstar


def assemble_bundle(dataset: FunctionalDataset, alpha: float, basis: BasisSystem, y0) -> DesignBundle:
    """All α-dependent designs for the dataset."""
    if not np.isfinite(alpha) or alpha <= 0:
        raise ValueError(f"alpha must be > 0 for a model bundle, got {alpha}")
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (dataset.N,):
        raise ValueError(f"y0 must have length N={dataset.N}, got shape {y0.shape}")
    if not np.all(np.isfinite(y0)):
        raise ValueError("y0 contains non-finite values")
    if basis.J != dataset.J or not np.allclose(basis.grid, dataset.grid, rtol=0, atol=1e-12):
        raise ValueError("basis grid does not match the dataset grid")

    xstar = build_xstar(dataset.forcings, alpha, basis)
    dstar = xstar[0, :, :basis.K].copy()
    decay = np.exp(-alpha * dataset.grid)
    return DesignBundle(
        alpha=float(alpha),
        xstar=xstar,
        dstar=dstar,
        y0star=np.outer(y0, decay),
        decay=decay,
    )
