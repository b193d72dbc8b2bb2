"""
EM estimation for the flode model.

Observed-data model on the grid:

    Y_i = y0*_i(α) + D*(α) d_i + x*_i(α) b + ε_i,
    ε_i ~ N(0, σ² I_J),  d_i ~ N(0, σ_d² P⁻¹),  b_p ~ N(0, σ_b² P⁻¹)

E-step: posterior d_i | Y_i ~ N(m_i, C) with C shared across trials.

Two mean steps are available (FitOptions.mean_step):

    "profile"  α by bounded Brent on the generalized least squares criterion
               Σ_i rᵢᵀ W rᵢ + bᵀP_blk b/σ_b², with b and y_i(0) profiled out in
               closed form and W = V⁻¹ frozen at the incumbent α and variances;
               then b, y_i(0) by the same GLS solve at the new α.
    "em"       α by bounded Brent on <εᵀε> with b, y_i(0) and the moments fixed,
               then b and y_i(0) given the posterior moments.

Variances always take their EM updates. Convergence is monitored on the
marginal log-likelihood with d integrated out.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize_scalar

from design import DesignBundle, FunctionalDataset, assemble_bundle, build_xstar
from splines import BasisSystem

logger = logging.getLogger("flode.em")

VARIANCE_FLOOR = 1e-10
ALPHA_FLOOR = 1e-6
INITIAL_VARIANCE = 100.0
MEAN_STEPS = ("profile", "em")


class FlodeNumericalError(RuntimeError):
    """Numerical failure inside one EM sub-step"""

    def __init__(self, step: str, message: str):
        self.step = step
        super().__init__(f"{step}: {message}")


# =============================================================================
# DATA CLASSES
# =============================================================================

@dataclass(frozen=True)
class FlodeParams:
    """Fixed effects Φ = {α, b, y_i(0), σ², σ_d², σ_b²}"""
    alpha: float
    b: np.ndarray  # K(P+1), blocks b_0..b_P
    y0: np.ndarray  # N
    sigma2: float
    sigma2_d: float
    sigma2_b: float

    def blocks(self, K: int) -> np.ndarray:
        """b reshaped to (P+1) x K"""
        return np.asarray(self.b).reshape(-1, K)

    def updated(self, **changes) -> "FlodeParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class PosteriorMoments:
    """Posterior means m_i (N x K) and the shared covariance C (K x K)"""
    m: np.ndarray
    C: np.ndarray

    @classmethod
    def zeros(cls, N: int, K: int) -> "PosteriorMoments":
        return cls(m=np.zeros((N, K)), C=np.zeros((K, K)))

    @property
    def expected_d(self) -> np.ndarray:
        return self.m

    def expected_quadratic(self, A: np.ndarray) -> np.ndarray:
        """<d_iᵀ A d_i> = tr(A C) + m_iᵀ A m_i for every trial"""
        return np.trace(A @ self.C) + np.einsum("nk,kl,nl->n", self.m, A, self.m)


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-6
    max_iter: int = 200
    alpha_bounds: Tuple[float, float] = (ALPHA_FLOOR, 40.0)
    random_effects: bool = True
    init_grid_points: int = 41
    init_alpha_max: float = 20.0
    init_strategy: str = "grid"  # "grid" or "random"
    init_seed: int = 0
    fixed_alpha: Optional[float] = None
    xatol: float = 1e-8
    mean_step: str = "profile"  # "profile" or "em"


@dataclass
class FlodeFit:
    """Result of fit()"""
    params: FlodeParams
    moments: PosteriorMoments
    basis: BasisSystem
    loglik_trace: List[float]
    n_iter: int
    converged: bool
    objective_trace: List[Dict[str, float]] = field(default_factory=list)

    @property
    def alpha(self) -> float:
        return self.params.alpha

    @property
    def P(self) -> int:
        return self.params.blocks(self.basis.K).shape[0] - 1

    def coefficient_functions(self) -> np.ndarray:
        """B̂_0..B̂_P on the grid, (P+1) x J"""
        return self.basis.evaluate(self.params.blocks(self.basis.K))

    def random_intercepts(self) -> np.ndarray:
        """δ̂_i(t) = Θ(t) m_i, N x J"""
        return self.basis.evaluate(self.moments.m)

    def fitted_values(self, dataset: FunctionalDataset, include_random: bool = True) -> np.ndarray:
        """Fitted curves for the training trials."""
        bundle = assemble_bundle(dataset, self.params.alpha, self.basis, self.params.y0)
        fitted = bundle.y0star + bundle.xstar @ self.params.b
        if include_random:
            fitted = fitted + self.moments.m @ bundle.dstar.T
        return fitted


# =============================================================================
# BUILDING BLOCKS
# =============================================================================

def _spd_inverse(matrix: np.ndarray) -> np.ndarray:
    factor = cho_factor(matrix, lower=True)
    inverse = cho_solve(factor, np.eye(matrix.shape[0]))
    return 0.5 * (inverse + inverse.T)


def block_penalty(penalty: np.ndarray, n_blocks: int) -> np.ndarray:
    """One penalty block per coefficient function"""
    return np.kron(np.eye(n_blocks), penalty)


def residuals(dataset: FunctionalDataset, bundle: DesignBundle, params: FlodeParams) -> np.ndarray:
    """Y_i - y0*_i - x*_i b, N x J (random effects not removed)"""
    y0star = np.outer(params.y0, bundle.decay)
    return dataset.responses - y0star - bundle.xstar @ params.b


def expected_rss(dataset: FunctionalDataset, bundle: DesignBundle, params: FlodeParams,
                 moments: PosteriorMoments) -> float:
    """
    <εᵀε> over d ~ N(m, C):
    Σ_i ||Y_i - y0*_i - x*_i b - D* m_i||² + N·tr(D*ᵀD* C)
    """
    dstar = bundle.dstar
    resid = residuals(dataset, bundle, params) - moments.m @ dstar.T
    return float(np.sum(resid ** 2) + dataset.N * np.trace(dstar.T @ dstar @ moments.C))


def penalized_objective(dataset: FunctionalDataset, bundle: DesignBundle, params: FlodeParams,
                        moments: PosteriorMoments, basis: BasisSystem) -> float:
    """<εᵀε> + (σ²/σ_b²) Σ_p b_pᵀ P b_p, the criterion the b step minimizes"""
    blocks = params.blocks(basis.K)
    roughness = float(np.einsum("pk,kl,pl->", blocks, basis.require_penalty(), blocks))
    return expected_rss(dataset, bundle, params, moments) + params.sigma2 / params.sigma2_b * roughness


def brent_minimize(fn: Callable[[float], float], bounds: Tuple[float, float],
                   xatol: float = 1e-8, maxiter: int = 500):
    """
    Bounded Brent minimization of a scalar function.

    Returns (x, fun, success). Non-finite function values are treated as +huge.
    """
    def safe(x):
        value = fn(x)
        return value if np.isfinite(value) else 1e300

    result = minimize_scalar(safe, bounds=bounds, method="bounded",
                             options={"xatol": xatol, "maxiter": maxiter})
    return float(result.x), float(result.fun), bool(result.success)


# =============================================================================
# E-STEP
# =============================================================================

def estep(dataset: FunctionalDataset, bundle: DesignBundle, params: FlodeParams,
          basis: BasisSystem) -> PosteriorMoments:
    """C = (P/σ_d² + D*ᵀD*/σ²)⁻¹,  m_i = C D*ᵀ(Y_i - y0*_i - x*_i b)/σ²"""
    dstar = bundle.dstar
    precision = basis.require_penalty() / params.sigma2_d + dstar.T @ dstar / params.sigma2
    try:
        C = _spd_inverse(precision)
    except LinAlgError as e:
        raise FlodeNumericalError("estep", f"posterior precision not positive definite ({e})") from e
    m = residuals(dataset, bundle, params) @ dstar @ C / params.sigma2
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(C))):
        raise FlodeNumericalError("estep", "non-finite posterior moments")
    return PosteriorMoments(m=m, C=C)


# =============================================================================
# M-STEP
# =============================================================================

def mstep_b(dataset: FunctionalDataset, bundle: DesignBundle, moments: PosteriorMoments,
            params: FlodeParams, basis: BasisSystem) -> np.ndarray:
    """b = (x*ᵀx* + σ²/σ_b² P_blk)⁻¹ x*ᵀ(Y - y0* - D*<d>)"""
    N, J, Q = bundle.xstar.shape
    X = bundle.xstar.reshape(N * J, Q)
    target = (dataset.responses - np.outer(params.y0, bundle.decay)
              - moments.m @ bundle.dstar.T).reshape(-1)
    ridge = block_penalty(basis.require_penalty(), Q // basis.K)
    lhs = X.T @ X + (params.sigma2 / params.sigma2_b) * ridge
    try:
        b = cho_solve(cho_factor(lhs, lower=True), X.T @ target)
    except LinAlgError as e:
        raise FlodeNumericalError("mstep_b", f"penalized normal equations singular ({e})") from e
    if not np.all(np.isfinite(b)):
        raise FlodeNumericalError("mstep_b", "non-finite coefficient solve (ill-conditioned design)")
    return b


def mstep_alpha(dataset: FunctionalDataset, params: FlodeParams, moments: PosteriorMoments,
                basis: BasisSystem, bounds: Tuple[float, float] = (ALPHA_FLOOR, 40.0),
                xatol: float = 1e-8) -> float:
    """
    argmin_α <εᵀε> with b, y_i(0) and the posterior moments held fixed.

    All designs are rebuilt at each candidate α. The incumbent is kept when
    Brent's candidate does not improve on it.
    """
    lo, hi = bounds

    def loss(alpha: float) -> float:
        bundle = assemble_bundle(dataset, alpha, basis, params.y0)
        return expected_rss(dataset, bundle, params, moments)

    incumbent = float(np.clip(params.alpha, lo, hi))
    incumbent_loss = loss(incumbent)
    alpha, value, success = brent_minimize(loss, (lo, hi), xatol=xatol)
    if not success or not np.isfinite(value):
        logger.warning(f"⚠️ alpha line search failed to converge; keeping alpha={incumbent:.4f}")
        return incumbent
    return alpha if value < incumbent_loss else incumbent


def mstep_y0(dataset: FunctionalDataset, bundle: DesignBundle, moments: PosteriorMoments,
             params: FlodeParams) -> np.ndarray:
    """Projection of Y_i - D*<d_i> - x*_i b onto e^{-αt}"""
    partial = dataset.responses - moments.m @ bundle.dstar.T - bundle.xstar @ params.b
    decay = bundle.decay
    return partial @ decay / (decay @ decay)


def mstep_variances(dataset: FunctionalDataset, bundle: DesignBundle, moments: PosteriorMoments,
                    params: FlodeParams, basis: BasisSystem) -> Tuple[float, float, float]:
    """(σ², σ_d², σ_b²), each floored at VARIANCE_FLOOR"""
    penalty = basis.require_penalty()
    N, J, K = dataset.N, dataset.J, basis.K
    blocks = params.blocks(K)

    sigma2 = expected_rss(dataset, bundle, params, moments) / (N * J)
    sigma2_d = float(np.sum(moments.expected_quadratic(penalty))) / (N * K)
    # every block, intercept included, is penalized: denominator (P+1)K
    sigma2_b = float(np.einsum("pk,kl,pl->", blocks, penalty, blocks)) / (blocks.shape[0] * K)
    return (max(sigma2, VARIANCE_FLOOR), max(sigma2_d, VARIANCE_FLOOR), max(sigma2_b, VARIANCE_FLOOR))


def marginal_covariance(dstar: np.ndarray, params: FlodeParams, basis: BasisSystem,
                        random_effects: bool = True) -> np.ndarray:
    """V = σ² I_J + σ_d² D* P⁻¹ D*ᵀ, the covariance of Y_i with d integrated out"""
    cov = params.sigma2 * np.eye(dstar.shape[0])
    if random_effects:
        penalty_inv = _spd_inverse(basis.require_penalty())
        cov = cov + params.sigma2_d * dstar @ penalty_inv @ dstar.T
    return cov


def covariance_factor(dstar: np.ndarray, params: FlodeParams, basis: BasisSystem,
                      random_effects: bool = True, step: str = "marginal_loglik") -> np.ndarray:
    """Lower Cholesky factor L of V (V = L Lᵀ)"""
    try:
        return cho_factor(marginal_covariance(dstar, params, basis, random_effects), lower=True)[0]
    except LinAlgError as e:
        raise FlodeNumericalError(step, f"marginal covariance factorization failed ({e})") from e


def marginal_loglik(dataset: FunctionalDataset, bundle: DesignBundle, params: FlodeParams,
                    basis: BasisSystem, random_effects: bool = True) -> float:
    """Σ_i log N(Y_i; y0*_i + x*_i b, σ_d² D* P⁻¹ D*ᵀ + σ² I_J)"""
    J = dataset.J
    factor = covariance_factor(bundle.dstar, params, basis, random_effects)
    logdet = 2.0 * np.sum(np.log(np.diag(factor)))
    resid = residuals(dataset, bundle, params)
    quad = float(np.sum(resid.T * cho_solve((factor, True), resid.T)))
    return -0.5 * (dataset.N * J * math.log(2.0 * math.pi) + dataset.N * logdet + quad)


# =============================================================================
# PROFILED MEAN STEP
# =============================================================================

@dataclass(frozen=True)
class MeanFit:
    """GLS estimates of b and y_i(0) at one α, and the criterion they attain"""
    alpha: float
    b: np.ndarray
    y0: np.ndarray
    loss: float


def gls_mean(dataset: FunctionalDataset, bundle: DesignBundle, factor: np.ndarray,
             basis: BasisSystem, sigma2_b: float) -> MeanFit:
    """
    Minimize Σ_i ||L⁻¹(Y_i - y_i(0) e^{-αt} - x*_i b)||² + bᵀP_blk b/σ_b² over b and y(0).

    y_i(0) is profiled out per trial by projecting the whitened decay out of the
    whitened design, so only the K(P+1) system for b is solved.
    """
    N, J, Q = bundle.xstar.shape
    xw = solve_triangular(factor, bundle.xstar.transpose(1, 0, 2).reshape(J, N * Q), lower=True)
    xw = xw.reshape(J, N, Q).transpose(1, 0, 2)
    yw = solve_triangular(factor, dataset.responses.T, lower=True).T
    ew = solve_triangular(factor, bundle.decay, lower=True)
    ee = float(ew @ ew)

    xp = xw - ew[None, :, None] * (np.einsum("j,njq->nq", ew, xw) / ee)[:, None, :]
    yp = yw - np.outer(yw @ ew / ee, ew)
    X = xp.reshape(N * J, Q)
    ridge = block_penalty(basis.require_penalty(), Q // basis.K) / sigma2_b
    try:
        b = cho_solve(cho_factor(X.T @ X + ridge, lower=True), X.T @ yp.reshape(-1))
    except LinAlgError as e:
        raise FlodeNumericalError("gls_mean", f"GLS normal equations singular ({e})") from e
    if not np.all(np.isfinite(b)):
        raise FlodeNumericalError("gls_mean", "non-finite coefficient solve (ill-conditioned design)")

    y0 = (yw - xw @ b) @ ew / ee
    loss = float(np.sum((yp - xp @ b) ** 2) + b @ ridge @ b)
    return MeanFit(alpha=bundle.alpha, b=b, y0=y0, loss=loss)


def profile_alpha(dataset: FunctionalDataset, params: FlodeParams, basis: BasisSystem,
                  factor: np.ndarray, bounds: Tuple[float, float] = (ALPHA_FLOOR, 40.0),
                  xatol: float = 1e-8) -> Tuple[MeanFit, MeanFit]:
    """
    argmin_α of the GLS criterion with b and y_i(0) profiled out and W = (L Lᵀ)⁻¹ fixed.

    Returns (incumbent, best). A second Brent pass on a window around the
    incumbent runs when the global pass does not improve on it.
    """
    lo, hi = bounds

    def profile(alpha: float) -> MeanFit:
        bundle = assemble_bundle(dataset, alpha, basis, params.y0)
        return gls_mean(dataset, bundle, factor, basis, params.sigma2_b)

    def loss(alpha: float) -> float:
        return profile(alpha).loss

    incumbent = profile(float(np.clip(params.alpha, lo, hi)))
    windows = [(lo, hi), (max(lo, 0.5 * incumbent.alpha), min(hi, 2.0 * incumbent.alpha + 1.0))]
    for window in windows:
        alpha, value, success = brent_minimize(loss, window, xatol=xatol)
        if success and np.isfinite(value) and value < incumbent.loss:
            return incumbent, profile(alpha)
    return incumbent, incumbent


# =============================================================================
# INITIALIZATION
# =============================================================================

def init_losses(dataset: FunctionalDataset, basis: BasisSystem, alpha_grid: Sequence[float]):
    """
    OLS loss with δ = 0 and y_i(0) = Y_i(0) at each α on the grid.

    Returns (losses, coefficients) with one OLS coefficient vector per α.
    """
    y0 = dataset.initial_positions
    losses, coefs = [], []
    for alpha in alpha_grid:
        xstar = build_xstar(dataset.forcings, float(alpha), basis)
        N, J, Q = xstar.shape
        X = xstar.reshape(N * J, Q)
        target = (dataset.responses - np.outer(y0, np.exp(-alpha * dataset.grid))).reshape(-1)
        b, *_ = np.linalg.lstsq(X, target, rcond=None)
        losses.append(float(np.sum((target - X @ b) ** 2)))
        coefs.append(b)
    return np.asarray(losses), coefs


def init(dataset: FunctionalDataset, basis: BasisSystem, grid_points: int = 41,
         alpha_max: float = 20.0, alpha_grid: Optional[Sequence[float]] = None,
         bounds: Tuple[float, float] = (ALPHA_FLOOR, 40.0), strategy: str = "grid",
         seed: int = 0) -> FlodeParams:
    """
    Starting values: α₀ from a grid search of the δ = 0 OLS loss (or a uniform
    draw on [0, alpha_max] for strategy="random"), y_i(0) = Y_i(0),
    σ_b² = σ_d² = 100, σ² from the OLS residuals at α₀.
    """
    if strategy == "random":
        rng = np.random.default_rng(seed)
        alpha_grid = [float(rng.uniform(0.0, alpha_max))]
    elif strategy != "grid":
        raise ValueError(f"unknown init strategy: {strategy}")
    elif alpha_grid is None:
        alpha_grid = np.linspace(0.0, alpha_max, grid_points)
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    if alpha_grid.size == 0:
        raise ValueError("alpha grid is empty")

    losses, coefs = init_losses(dataset, basis, alpha_grid)
    finite = np.isfinite(losses)
    if not np.any(finite):
        raise FlodeNumericalError("init", "all grid losses are non-finite")
    best = int(np.argmin(np.where(finite, losses, np.inf)))
    alpha0 = float(np.clip(alpha_grid[best], *bounds))
    logger.debug(f"init: alpha0={alpha0:.4f} (grid loss {losses[best]:.6g})")

    return FlodeParams(
        alpha=alpha0,
        b=coefs[best],
        y0=dataset.initial_positions,
        sigma2=max(losses[best] / (dataset.N * dataset.J), VARIANCE_FLOOR),
        sigma2_d=INITIAL_VARIANCE,
        sigma2_b=INITIAL_VARIANCE,
    )


# =============================================================================
# FIT
# =============================================================================

def _profile_mean_step(dataset: FunctionalDataset, bundle: DesignBundle, params: FlodeParams,
                       basis: BasisSystem, options: FitOptions):
    """α, then b and y_i(0) by GLS at the new α"""
    factor = covariance_factor(bundle.dstar, params, basis, options.random_effects, step="gls_mean")
    if options.fixed_alpha is None:
        incumbent, best = profile_alpha(dataset, params, basis, factor, options.alpha_bounds, options.xatol)
    else:
        incumbent = best = gls_mean(dataset, bundle, factor, basis, params.sigma2_b)
    steps = {"start": incumbent.loss, "alpha": best.loss}

    if best.alpha != params.alpha:
        bundle = assemble_bundle(dataset, best.alpha, basis, params.y0)
        factor = covariance_factor(bundle.dstar, params.updated(alpha=best.alpha), basis,
                                   options.random_effects, step="gls_mean")
        best = gls_mean(dataset, bundle, factor, basis, params.sigma2_b)
    params = params.updated(alpha=best.alpha, b=best.b, y0=best.y0)
    return params, bundle.with_y0(params.y0), steps


def _em_mean_step(dataset: FunctionalDataset, bundle: DesignBundle, params: FlodeParams,
                  moments: PosteriorMoments, basis: BasisSystem, options: FitOptions):
    """α, b, y_i(0) in turn, each given the posterior moments"""
    steps = {"start": penalized_objective(dataset, bundle, params, moments, basis)}

    if options.fixed_alpha is None:
        new_alpha = mstep_alpha(dataset, params, moments, basis, options.alpha_bounds, options.xatol)
        if new_alpha != params.alpha:
            params = params.updated(alpha=new_alpha)
            bundle = assemble_bundle(dataset, new_alpha, basis, params.y0)
    steps["alpha"] = penalized_objective(dataset, bundle, params, moments, basis)

    params = params.updated(b=mstep_b(dataset, bundle, moments, params, basis))
    steps["b"] = penalized_objective(dataset, bundle, params, moments, basis)

    params = params.updated(y0=mstep_y0(dataset, bundle, moments, params))
    bundle = bundle.with_y0(params.y0)
    steps["y0"] = penalized_objective(dataset, bundle, params, moments, basis)
    return params, bundle, steps


def fit(dataset: FunctionalDataset, basis: BasisSystem, options: Optional[FitOptions] = None,
        initial: Optional[FlodeParams] = None, bundle: Optional[DesignBundle] = None) -> FlodeFit:
    """
    Iterate the mean step, E-step and variance updates until
    |Δ marginal log-likelihood| < tol or max_iter.

    `initial` warm-starts the parameters; `bundle` supplies precomputed designs
    at the starting α (used with fixed_alpha to skip rebuilding).
    Non-convergence is reported through FlodeFit.converged.

    objective_trace holds, per iteration, the criterion each mean sub-step
    minimizes: the penalized expected RSS <εᵀε> + (σ²/σ_b²)Σ_p b_pᵀPb_p for
    mean_step="em", the frozen-W GLS criterion before and after the α search
    for mean_step="profile". Both are non-increasing within an iteration; the
    log-likelihood itself need not be monotone.
    """
    options = options or FitOptions()
    if options.mean_step not in MEAN_STEPS:
        raise ValueError(f"unknown mean step: {options.mean_step}")
    basis.require_penalty()
    lo, hi = options.alpha_bounds
    fixed = options.fixed_alpha

    if initial is None:
        params = init(
            dataset, basis,
            grid_points=options.init_grid_points,
            alpha_max=options.init_alpha_max,
            alpha_grid=[fixed] if fixed is not None else None,
            bounds=options.alpha_bounds,
            strategy="grid" if fixed is not None else options.init_strategy,
            seed=options.init_seed,
        )
    else:
        params = initial
    alpha = float(fixed) if fixed is not None else float(np.clip(params.alpha, lo, hi))
    params = params.updated(alpha=alpha)

    if bundle is not None and bundle.alpha == alpha:
        bundle = bundle.with_y0(params.y0)
    else:
        bundle = assemble_bundle(dataset, alpha, basis, params.y0)

    moments = PosteriorMoments.zeros(dataset.N, basis.K)
    if not options.random_effects:
        params = params.updated(sigma2_d=VARIANCE_FLOOR)

    ll_prev = marginal_loglik(dataset, bundle, params, basis, options.random_effects)
    trace: List[float] = []
    objective_trace: List[Dict[str, float]] = []
    converged = False

    for iteration in range(1, options.max_iter + 1):
        if options.mean_step == "profile":
            params, bundle, steps = _profile_mean_step(dataset, bundle, params, basis, options)
            if options.random_effects:
                moments = estep(dataset, bundle, params, basis)
        else:
            if options.random_effects:
                moments = estep(dataset, bundle, params, basis)
            params, bundle, steps = _em_mean_step(dataset, bundle, params, moments, basis, options)

        sigma2, sigma2_d, sigma2_b = mstep_variances(dataset, bundle, moments, params, basis)
        if not options.random_effects:
            sigma2_d = VARIANCE_FLOOR
        params = params.updated(sigma2=sigma2, sigma2_d=sigma2_d, sigma2_b=sigma2_b)

        ll = marginal_loglik(dataset, bundle, params, basis, options.random_effects)
        if not np.isfinite(ll):
            raise FlodeNumericalError("marginal_loglik", f"non-finite log-likelihood at iteration {iteration}")
        trace.append(ll)
        objective_trace.append(steps)
        logger.debug(f"iter {iteration}: loglik={ll:.6f} alpha={params.alpha:.5f} sigma2={sigma2:.4g}")

        if abs(ll - ll_prev) < options.tol:
            converged = True
            break
        ll_prev = ll

    if converged:
        logger.info(f"✅ EM converged in {len(trace)} iterations: alpha={params.alpha:.4f}, loglik={trace[-1]:.4f}")
    else:
        logger.warning(f"⚠️ EM stopped after {len(trace)} iterations without converging (tol={options.tol})")

    return FlodeFit(
        params=params,
        moments=moments,
        basis=basis,
        loglik_trace=trace,
        n_iter=len(trace),
        converged=converged,
        objective_trace=objective_trace,
    )


def velocity(fit_result: FlodeFit, dataset: FunctionalDataset) -> np.ndarray:
    """
    Fitted derivative on the velocity scale,
    y'_i(t) = -α ŷ_i(t) + B̂_0(t) + Σ_p B̂_p(t) x_ip(t) + δ̂_i(t).
    """
    coefs = fit_result.coefficient_functions()
    fitted = fit_result.fitted_values(dataset)
    forcing_term = np.einsum("pj,pnj->nj", coefs[1:], dataset.forcings)
    return (-fit_result.alpha * fitted + coefs[0][None] + forcing_term
            + fit_result.random_intercepts())
