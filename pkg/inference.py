"""
Bootstrap pointwise confidence bands for the coefficient functions.

α is held at the full-data estimate across replicates, so the α-dependent
designs are built once and each replicate indexes into them.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from design import FunctionalDataset, assemble_bundle
from em_core import FitOptions, FlodeFit, fit
from parallel_runner import ParallelRunner
from splines import BasisSystem

logger = logging.getLogger("flode.inference")

Z_95 = 1.96
MAX_FAILURE_RATE = 0.10


class BootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class CoefficientBand:
    """Wald-type 95% pointwise band for one coefficient function"""
    grid: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_boot: int

    @classmethod
    def from_replicates(cls, grid, estimate, replicates: np.ndarray) -> "CoefficientBand":
        se = np.std(replicates, axis=0, ddof=1)
        return cls(grid=np.asarray(grid), estimate=estimate, se=se,
                   lower=estimate - Z_95 * se, upper=estimate + Z_95 * se,
                   n_boot=replicates.shape[0])


def resample_indices(N: int, n_boot: int, seed: int) -> np.ndarray:
    """n_boot x N trial indices; replicate r draws from default_rng([seed, r])"""
    return np.vstack([np.random.default_rng([seed, r]).integers(0, N, size=N) for r in range(n_boot)])


def bootstrap_bands(dataset: FunctionalDataset, basis: BasisSystem, fit_result: FlodeFit,
                    n_boot: int = 200, seed: int = 0, options: Optional[FitOptions] = None,
                    max_workers: Optional[int] = None,
                    indices: Optional[np.ndarray] = None) -> List[CoefficientBand]:
    """
    One band per coefficient function B_0..B_P.

    Whole trials are resampled with replacement; each replicate is refit with
    α fixed at fit_result.alpha. `indices` (n_boot x N) overrides the draws.
    """
    if n_boot < 2:
        raise ValueError(f"n_boot must be >= 2, got {n_boot}")
    if not fit_result.converged:
        logger.warning("⚠️ bootstrapping from a fit that did not converge")

    alpha = fit_result.alpha
    base = options or FitOptions()
    replicate_options = FitOptions(
        tol=base.tol,
        max_iter=base.max_iter,
        alpha_bounds=base.alpha_bounds,
        random_effects=base.random_effects,
        fixed_alpha=alpha,
        mean_step=base.mean_step,
    )
    full_bundle = assemble_bundle(dataset, alpha, basis, fit_result.params.y0)
    if indices is None:
        indices = resample_indices(dataset.N, n_boot, seed)
    indices = np.asarray(indices, dtype=int)
    if indices.shape != (n_boot, dataset.N):
        raise ValueError(f"indices must be {n_boot} x {dataset.N}, got {indices.shape}")

    def run_replicate(idx: np.ndarray) -> np.ndarray:
        warm = fit_result.params.updated(y0=fit_result.params.y0[idx])
        replicate = fit(dataset.subset(idx), basis, replicate_options, initial=warm,
                        bundle=full_bundle.subset(idx))
        return replicate.coefficient_functions()

    logger.info(f"🔁 Bootstrapping {n_boot} replicates at fixed alpha={alpha:.4f}")
    results = ParallelRunner(max_workers=max_workers, desc="bootstrap").run(run_replicate, list(indices))

    failed = [r for r in results if not r.success]
    if len(failed) > MAX_FAILURE_RATE * n_boot:
        raise BootstrapError(f"{len(failed)} of {n_boot} bootstrap replicates failed (first: {failed[0].error})")
    if failed:
        logger.warning(f"⚠️ skipped {len(failed)} failed bootstrap replicates")
    curves = np.stack([r.value for r in results if r.success])  # n_ok x (P+1) x J
    if curves.shape[0] < 2:
        raise BootstrapError("fewer than two successful bootstrap replicates")

    estimate = fit_result.coefficient_functions()
    return [CoefficientBand.from_replicates(basis.grid, estimate[p], curves[:, p])
            for p in range(estimate.shape[0])]
