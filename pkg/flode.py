#!/usr/bin/env python3
"""
flode command line.

    python flode.py simulate  --config run.json --out results/
    python flode.py fit       --config run.json --data dataset.csv --out results/
    python flode.py bootstrap --config run.json --data dataset.csv --fit results/fit.json --out results/
    python flode.py surface   --fit results/fit.json --out results/
    python flode.py cv        --config run.json --data dataset.csv --out results/
    python flode.py compare   --config run.json --out results/

All outputs except the compare timings table are deterministic given the config and --seed.
"""

import argparse
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from baselines import (fit_concurrent, fit_historical, kfold_indices, predict_concurrent,
                       predict_historical, select_ridge_weight)
from config import RUNTIME_CONFIG, RunConfig, load_run_config
from data_io import export_dataset, ingest, load_fit, save_fit, write_csv, write_json
from design import FunctionalDataset
from em_core import fit
from inference import bootstrap_bands
from metrics import (alpha_error, flode_surface, integrated_coverage, integrated_error, mape, predict,
                     surface_ise)
from parallel_runner import ParallelRunner
from simulate import FlodeTruth, derive_seed, generate
from splines import make_basis_system

logger = logging.getLogger("flode.cli")

METHODS = ("flode", "fhist", "fconc")


def _out_dir(out: Optional[str]) -> Path:
    path = Path(out or ".").expanduser()
    path.mkdir(parents=True, exist_ok=True)
    return path


def _basis_for(config: RunConfig, dataset: FunctionalDataset):
    return make_basis_system(dataset.grid, config.K, config.degree, config.lam)


def _coefficient_frame(grid, coefs: np.ndarray) -> pd.DataFrame:
    frame = {"t": grid}
    for p in range(coefs.shape[0]):
        frame[f"B{p}"] = coefs[p]
    return pd.DataFrame(frame)


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_simulate(config: RunConfig, out: Optional[str] = None) -> Dict[str, Path]:
    """Simulated dataset CSV plus a JSON file holding the ground truth"""
    out_dir = _out_dir(out)
    sim = config.simulation.model_copy(update={"seed": config.seed})
    dataset, truth = generate(sim)

    if isinstance(truth, FlodeTruth):
        truth_data = {
            "truth_kind": "flode",
            "alpha": truth.alpha,
            "grid": truth.grid.tolist(),
            "coef_fns": {f"B{p}": truth.coef_fns[p].tolist() for p in range(truth.coef_fns.shape[0])},
            "y0": truth.y0.tolist(),
        }
    else:
        truth_data = {
            "truth_kind": "fhist",
            "grid": truth.grid.tolist(),
            "surface": truth.surface_values.tolist(),
            "intercept": truth.intercept.tolist(),
        }

    paths = {
        "dataset": export_dataset(dataset, out_dir / "dataset.csv", "simulate", config.dump()),
        "truth": write_json(truth_data, out_dir / "truth.json", "simulate", config.dump()),
    }
    logger.info(f"✅ Simulated {dataset.N} {sim.truth_kind} trials -> {paths['dataset']}")
    return paths


def cmd_fit(config: RunConfig, data: str, out: Optional[str] = None) -> Dict[str, Path]:
    """EM fit: fit JSON plus coefficient-function CSV"""
    out_dir = _out_dir(out)
    dataset = ingest(data, config.target_J)
    basis = _basis_for(config, dataset)
    result = fit(dataset, basis, config.fit_options())

    paths = {
        "fit": save_fit(result, dataset.trial_ids, out_dir / "fit.json", "fit", config.dump()),
        "coefficients": write_csv(_coefficient_frame(basis.grid, result.coefficient_functions()),
                                  out_dir / "coefficients.csv", "fit", config.dump()),
    }
    logger.info(f"✅ alpha={result.alpha:.4f} after {result.n_iter} iterations (converged={result.converged})")
    return paths


def cmd_bootstrap(config: RunConfig, data: str, fit_path: str, out: Optional[str] = None) -> Dict[str, Path]:
    """Pointwise bootstrap bands, one CSV per coefficient function"""
    out_dir = _out_dir(out)
    dataset = ingest(data, config.target_J)
    fitted = load_fit(fit_path)
    if fitted.params.y0.size != dataset.N:
        raise ValueError(f"fit has {fitted.params.y0.size} trials but the dataset has {dataset.N}")
    bands = bootstrap_bands(dataset, fitted.basis, fitted, n_boot=config.n_boot, seed=config.seed,
                            options=config.fit_options(), max_workers=config.workers)

    paths = {}
    for p, band in enumerate(bands):
        frame = pd.DataFrame({"t": band.grid, "estimate": band.estimate, "se": band.se,
                              "lower": band.lower, "upper": band.upper})
        paths[f"B{p}"] = write_csv(frame, out_dir / f"bands_B{p}.csv", "bootstrap", config.dump())
    return paths


def cmd_surface(fit_path: str, out: Optional[str] = None, config: Optional[RunConfig] = None) -> Dict[str, Path]:
    """Long-format (s, t, value) CSV of each induced flode surface"""
    out_dir = _out_dir(out)
    fitted = load_fit(fit_path)
    coefs = fitted.coefficient_functions()
    meta = config.dump() if config else {"fit": str(fit_path)}
    paths = {}
    for p in range(1, coefs.shape[0]):
        s, t, value = flode_surface(fitted.alpha, coefs[p], fitted.basis.grid).to_long()
        paths[f"B{p}"] = write_csv(pd.DataFrame({"s": s, "t": t, "value": value}),
                                   out_dir / f"surface_B{p}.csv", "surface", meta)
    return paths


def _ridge(config: RunConfig, dataset: FunctionalDataset, method: str, seed: int) -> float:
    weight = config.compare.ridge_weight
    if weight != "auto":
        return float(weight)
    if method == "fhist":
        return select_ridge_weight(dataset, fit_historical, predict_historical, config.compare.ridge_grid,
                                   config.compare.ridge_folds, seed,
                                   basis_marginal_size=config.compare.hist_basis_size)
    return select_ridge_weight(dataset, fit_concurrent, predict_concurrent, config.compare.ridge_grid,
                               config.compare.ridge_folds, seed, K=config.K)


def _fit_and_predict(config: RunConfig, method: str, train: FunctionalDataset, test: FunctionalDataset,
                     seed: int):
    """Fit one method on train; returns (predictions on test, fitted object)"""
    if method == "flode":
        basis = _basis_for(config, train)
        result = fit(train, basis, config.fit_options())
        # held-out trials start from their observed initial position
        return predict(result.params, basis, test.forcings, test.initial_positions), result
    if method == "fhist":
        hist = fit_historical(train, config.compare.hist_basis_size, _ridge(config, train, method, seed))
        return predict_historical(hist, test.forcings), hist
    if method == "fconc":
        conc = fit_concurrent(train, config.K, _ridge(config, train, method, seed))
        return predict_concurrent(conc, test.forcings), conc
    raise ValueError(f"unknown method: {method}")


@dataclass
class FoldJob:
    fold: int
    method: str
    test: np.ndarray


def cmd_cv(config: RunConfig, data: str, methods: Optional[Sequence[str]] = None,
           out: Optional[str] = None) -> Dict[str, Path]:
    """k-fold cross-validated MAPE per method and fold, plus an overall row per method"""
    out_dir = _out_dir(out)
    dataset = ingest(data, config.target_J)
    methods = list(methods or config.cv_methods)
    folds = kfold_indices(dataset.N, min(config.cv_folds, dataset.N), config.seed)
    jobs = [FoldJob(fold=k, method=m, test=test) for m in methods for k, test in enumerate(folds)]

    def run_fold(job: FoldJob):
        train_idx = np.setdiff1d(np.arange(dataset.N), job.test)
        train, test = dataset.subset(train_idx), dataset.subset(job.test)
        predictions, _ = _fit_and_predict(config, job.method, train, test, derive_seed(config.seed, job.fold))
        return mape(predictions, test.responses, dataset.grid)

    results = ParallelRunner(config.workers, desc="cv folds").run(run_fold, jobs)
    failed = [r for r in results if not r.success]
    if failed:
        raise RuntimeError(f"{len(failed)} CV fold fits failed (first: {failed[0].error})")

    rows = [{"method": job.method, "fold": str(job.fold), "n_test": len(job.test), "mape": r.value}
            for job, r in zip(jobs, results)]
    for method in methods:
        fold_rows = [row for row in rows if row["method"] == method]
        # weight folds by test size so the overall row is the trial-level mean
        overall = sum(row["mape"] * row["n_test"] for row in fold_rows) / dataset.N
        rows.append({"method": method, "fold": "all", "n_test": dataset.N, "mape": overall})
        logger.info(f"📊 {method}: CV MAPE {overall:.4f}")

    return {"cv": write_csv(pd.DataFrame(rows), out_dir / "cv_mape.csv", "cv", config.dump())}


def _compare_replicate(config: RunConfig, replicate: int) -> List[dict]:
    sim = config.simulation
    train, truth = generate(sim, seed=derive_seed(config.seed, replicate, 0))
    evaluation, eval_truth = generate(sim, n_trials=config.compare.n_eval,
                                      seed=derive_seed(config.seed, replicate, 1))
    true_surface = truth.surface(1)
    grid = train.grid
    is_flode = isinstance(truth, FlodeTruth)
    alpha_truth = truth.alpha if is_flode else float("nan")

    rows = []
    for method in config.compare.methods:
        start_time = time.time()
        predictions, fitted = _fit_and_predict(config, method, train, evaluation,
                                               derive_seed(config.seed, replicate, 2))
        seconds = time.time() - start_time
        row = {"replicate": replicate, "method": method, "alpha_truth": alpha_truth,
               "alpha_error": float("nan"), "ie_b0": float("nan"), "ie_b1": float("nan"),
               "ise": float("nan"), "mape": mape(predictions, evaluation.responses, grid),
               "coverage_b1": float("nan"), "converged": "", "n_iter": 1, "seconds": seconds}
        if method == "flode":
            row["n_iter"] = fitted.n_iter
            coefs = fitted.coefficient_functions()
            row["ise"] = surface_ise(flode_surface(fitted.alpha, coefs[1], grid), true_surface)
            row["converged"] = str(fitted.converged)
            if is_flode:
                row["alpha_error"] = alpha_error(truth.alpha, fitted.alpha)
                row["ie_b0"] = integrated_error(truth.coef_fns[0], coefs[0], grid)
                row["ie_b1"] = integrated_error(truth.coef_fns[1], coefs[1], grid)
                if config.compare.n_boot:
                    bands = bootstrap_bands(train, fitted.basis, fitted, n_boot=config.compare.n_boot,
                                            seed=derive_seed(config.seed, replicate, 3),
                                            options=config.fit_options(), max_workers=1)
                    row["coverage_b1"] = integrated_coverage(bands[1].lower, bands[1].upper,
                                                             truth.coef_fns[1], grid)
        elif method == "fhist":
            row["ise"] = surface_ise(fitted.surface, true_surface)
        rows.append(row)
    return rows


def cmd_compare(config: RunConfig, out: Optional[str] = None) -> Dict[str, Path]:
    """Simulation study: one row per replicate and method"""
    out_dir = _out_dir(out)
    n = config.compare.n_replicates
    logger.info(f"🧪 Comparing {config.compare.methods} over {n} {config.simulation.truth_kind} replicates")

    results = ParallelRunner(config.workers, desc="compare").run(
        lambda r: _compare_replicate(config, r), list(range(n)))
    failed = [r for r in results if not r.success]
    if failed:
        raise RuntimeError(f"{len(failed)} of {n} replicates failed (first: {failed[0].error})")

    frame = pd.DataFrame([row for r in results for row in r.value])
    for method, group in frame.groupby("method", sort=False):
        logger.info(f"📊 {method}: mean MAPE {group['mape'].mean():.4f}, mean ISE {group['ise'].mean():.4g}, "
                    f"mean fit time {group['seconds'].mean():.2f}s")
        if group["coverage_b1"].notna().any():
            logger.info(f"   {method}: mean B1 band coverage {group['coverage_b1'].mean():.3f}")
    # wall-clock timings go to their own table so the report stays bitwise reproducible
    timings = frame[["replicate", "method", "n_iter", "seconds"]]
    return {"report": write_csv(frame.drop(columns="seconds"), out_dir / "compare_report.csv", "compare",
                                config.dump()),
            "timings": write_csv(timings, out_dir / "compare_timings.csv", "compare", config.dump())}


# =============================================================================
# ENTRY POINT
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flode", description="Functional linear ODE models for trajectory data")
    parser.add_argument("command", choices=["simulate", "fit", "bootstrap", "surface", "cv", "compare"])
    parser.add_argument("--config", help="JSON run configuration (defaults when omitted)")
    parser.add_argument("--data", help="Long-format dataset CSV")
    parser.add_argument("--fit", dest="fit_path", help="Fit JSON written by the fit command")
    parser.add_argument("--out", default=".", help="Output directory")
    parser.add_argument("--seed", type=int, help="Override the config seed (u64)")
    parser.add_argument("--methods", nargs="+", choices=METHODS, help="Methods for cv")
    return parser


def run(args: argparse.Namespace) -> Dict[str, Path]:
    config = load_run_config(args.config, seed=args.seed)

    def need(value, flag):
        if not value:
            raise ValueError(f"{args.command} requires {flag}")
        return value

    if args.command == "simulate":
        return cmd_simulate(config, args.out)
    if args.command == "fit":
        return cmd_fit(config, need(args.data, "--data"), args.out)
    if args.command == "bootstrap":
        return cmd_bootstrap(config, need(args.data, "--data"), need(args.fit_path, "--fit"), args.out)
    if args.command == "surface":
        return cmd_surface(need(args.fit_path, "--fit"), args.out, config)
    if args.command == "cv":
        return cmd_cv(config, need(args.data, "--data"), args.methods, args.out)
    return cmd_compare(config, args.out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, RUNTIME_CONFIG["log_level"], logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        paths = run(args)
    except ValidationError as e:
        logger.error(f"❌ Invalid config:\n{e}")
        return 1
    except Exception as e:
        logger.error(f"❌ {args.command} failed: {e}")
        return 1
    for name, path in paths.items():
        logger.info(f"   {name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
