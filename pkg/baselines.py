"""
Penalized least-squares baselines: functional historical (fhist) and
functional concurrent (fconc) regression, without random intercepts.

    fhist:  Y_i(t) = β_0(t) + Σ_p ∫_0^t β_p(s, t) x_ip(s) ds + ε
    fconc:  Y_i(t) = β_0(t) + Σ_p β_p(t) x_ip(t) + ε
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve

from design import FunctionalDataset
from metrics import Surface, mape
from quadrature import prefix_trapezoid_weights
from splines import DEFAULT_LAMBDA, BasisSystem, build_basis, build_penalty

logger = logging.getLogger("flode.baselines")

DEFAULT_RIDGE_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)


class BaselineError(RuntimeError):
    pass


@dataclass(frozen=True)
class HistFit:
    """Estimated historical surfaces (zero for s > t) and intercept"""
    surfaces: Tuple[Surface, ...]
    intercept_fn: np.ndarray
    ridge_weight: float
    basis: BasisSystem

    @property
    def surface(self) -> Surface:
        return self.surfaces[0]


@dataclass(frozen=True)
class ConcFit:
    """Estimated concurrent coefficient functions (P x J) and intercept"""
    coef_fns: np.ndarray
    intercept_fn: np.ndarray
    ridge_weight: float


def _penalized_solve(X: np.ndarray, y: np.ndarray, penalty: np.ndarray) -> np.ndarray:
    try:
        coef = cho_solve(cho_factor(X.T @ X + penalty, lower=True), X.T @ y)
    except LinAlgError as e:
        raise BaselineError(f"singular normal equations ({e})") from e
    if not np.all(np.isfinite(coef)):
        raise BaselineError("singular normal equations (non-finite solution)")
    return coef


def _as_forcings(new_forcings) -> np.ndarray:
    forcings = np.asarray(new_forcings, dtype=float)
    return forcings[None] if forcings.ndim == 2 else forcings


# =============================================================================
# FUNCTIONAL HISTORICAL REGRESSION
# =============================================================================

def historical_design(forcings: np.ndarray, basis: BasisSystem) -> np.ndarray:
    """
    Rows (i, j) of the tensor-product design, NJ x (K + P·K²).

    The column for coefficient c_km of forcing p is
    θ_m(t_j) · Σ_{l<=j} w_jl θ_k(s_l) x_ip(s_l), with w the prefix trapezoid weights.
    """
    forcings = _as_forcings(forcings)
    P, N, J = forcings.shape
    theta = basis.basis_matrix
    K = basis.K
    W = prefix_trapezoid_weights(basis.grid)

    columns = [np.broadcast_to(theta[None], (N, J, K)).reshape(N * J, K)]
    for p in range(P):
        Z = np.einsum("jl,nl,lk->njk", W, forcings[p], theta)  # N x J x K (s-basis)
        columns.append(np.einsum("njk,jm->njkm", Z, theta).reshape(N * J, K * K))
    return np.hstack(columns)


def historical_penalty(K: int, P: int, ridge_weight: float, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Second-order difference penalties on both margins of each surface"""
    margin = build_penalty(K, lam)
    eye = np.eye(K)
    tensor = np.kron(margin, eye) + np.kron(eye, margin)
    return ridge_weight * block_diag(margin, *([tensor] * P))


def fit_historical(dataset: FunctionalDataset, basis_marginal_size: int = 15,
                   ridge_weight: float = 1.0) -> HistFit:
    """Tensor-product B-spline surface(s) restricted to s <= t, penalized least squares."""
    if ridge_weight <= 0:
        raise ValueError(f"ridge_weight must be positive, got {ridge_weight}")
    basis = build_basis(dataset.grid, basis_marginal_size, 3)
    K, P = basis.K, dataset.P

    X = historical_design(dataset.forcings, basis)
    coef = _penalized_solve(X, dataset.responses.reshape(-1), historical_penalty(K, P, ridge_weight))

    theta = basis.basis_matrix
    mask = dataset.grid[:, None] <= dataset.grid[None, :]
    surfaces = []
    for p in range(P):
        C = coef[K + p * K * K:K + (p + 1) * K * K].reshape(K, K)  # rows: s-basis, columns: t-basis
        surfaces.append(Surface(grid=dataset.grid, values=np.where(mask, theta @ C @ theta.T, 0.0)))
    return HistFit(surfaces=tuple(surfaces), intercept_fn=theta @ coef[:K],
                   ridge_weight=ridge_weight, basis=basis)


def predict_historical(hist_fit: HistFit, new_forcings) -> np.ndarray:
    """β_0(t) + Σ_p ∫_0^t β_p(s, t) x_p(s) ds"""
    forcings = _as_forcings(new_forcings)
    grid = hist_fit.basis.grid
    if forcings.shape[0] != len(hist_fit.surfaces) or forcings.shape[2] != grid.size:
        raise ValueError("new forcings do not match the fitted surfaces or grid")
    W = prefix_trapezoid_weights(grid)
    out = np.broadcast_to(hist_fit.intercept_fn, forcings.shape[1:]).copy()
    for p, surface in enumerate(hist_fit.surfaces):
        out += forcings[p] @ (W * surface.values.T).T
    return out


# =============================================================================
# FUNCTIONAL CONCURRENT REGRESSION
# =============================================================================

def concurrent_design(forcings: np.ndarray, basis: BasisSystem) -> np.ndarray:
    """NJ x K(P+1): [Θ(t_j) | x_i1(t_j)Θ(t_j) | ...]"""
    forcings = _as_forcings(forcings)
    P, N, J = forcings.shape
    theta = basis.basis_matrix
    blocks = [np.broadcast_to(theta[None], (N, J, basis.K))]
    blocks += [forcings[p][..., None] * theta[None] for p in range(P)]
    return np.concatenate(blocks, axis=-1).reshape(N * J, basis.K * (P + 1))


def fit_concurrent(dataset: FunctionalDataset, K: int = 20, ridge_weight: float = 1.0) -> ConcFit:
    if ridge_weight <= 0:
        raise ValueError(f"ridge_weight must be positive, got {ridge_weight}")
    basis = build_basis(dataset.grid, K, 3)
    P = dataset.P
    X = concurrent_design(dataset.forcings, basis)
    penalty = ridge_weight * np.kron(np.eye(P + 1), build_penalty(K))
    coef = _penalized_solve(X, dataset.responses.reshape(-1), penalty)
    fns = basis.evaluate(coef.reshape(P + 1, K))
    return ConcFit(coef_fns=fns[1:], intercept_fn=fns[0], ridge_weight=ridge_weight)


def predict_concurrent(conc_fit: ConcFit, new_forcings) -> np.ndarray:
    forcings = _as_forcings(new_forcings)
    if forcings.shape[0] != conc_fit.coef_fns.shape[0]:
        raise ValueError("new forcings do not match the fitted coefficient functions")
    return conc_fit.intercept_fn[None, :] + np.einsum("pj,pnj->nj", conc_fit.coef_fns, forcings)


# =============================================================================
# SMOOTHING SELECTION
# =============================================================================

def kfold_indices(N: int, folds: int, seed: int):
    """Random partition of range(N) into `folds` test sets"""
    if folds < 2 or folds > N:
        raise ValueError(f"folds must lie in [2, N={N}], got {folds}")
    order = np.random.default_rng(seed).permutation(N)
    return [np.sort(part) for part in np.array_split(order, folds)]


def select_ridge_weight(dataset: FunctionalDataset, fit_fn: Callable, predict_fn: Callable,
                        weights: Sequence[float] = DEFAULT_RIDGE_GRID, folds: int = 5,
                        seed: int = 0, **fit_kwargs) -> float:
    """Ridge weight from `weights` minimizing k-fold CV MAPE"""
    folds = min(folds, dataset.N)
    partitions = kfold_indices(dataset.N, folds, seed)
    best_weight, best_score = None, np.inf
    for weight in weights:
        errors = []
        for test in partitions:
            train = np.setdiff1d(np.arange(dataset.N), test)
            fitted = fit_fn(dataset.subset(train), ridge_weight=weight, **fit_kwargs)
            held = dataset.subset(test)
            errors.append(mape(predict_fn(fitted, held.forcings), held.responses, dataset.grid))
        score = float(np.mean(errors))
        logger.debug(f"ridge_weight={weight:g}: CV MAPE {score:.5f}")
        if score < best_score:
            best_weight, best_score = weight, score
    if best_weight is not None and best_weight in (min(weights), max(weights)) and len(weights) > 1:
        logger.warning(f"⚠️ ridge_weight={best_weight:g} sits at the edge of the grid "
                       f"[{min(weights):g}, {max(weights):g}]; consider widening it")
    return best_weight
