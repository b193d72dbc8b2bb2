"""
Dataset ingestion and result serialization.

Dataset CSV (long format, one row per observation):
    trial_id,time,y,x1[,x2,...]

Every written output gets a `<name>.meta.json` sidecar recording the command,
software version and run config. Sidecars carry no timestamps, so reruns with
the same inputs are bitwise identical.
"""

import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from config import FLODE_VERSION
from design import FunctionalDataset
from em_core import FlodeFit, FlodeParams, PosteriorMoments
from splines import build_basis

logger = logging.getLogger("flode.io")

REQUIRED_COLUMNS = ("trial_id", "time", "y")
FORCING_PATTERN = re.compile(r"^x(\d+)$")

PathLike = Union[str, Path]


class IngestError(ValueError):
    pass


# =============================================================================
# INGESTION
# =============================================================================

def _forcing_columns(columns: Sequence[str]):
    found = sorted((int(m.group(1)), c) for c in columns if (m := FORCING_PATTERN.match(c)))
    names = [c for _, c in found]
    if not names:
        raise IngestError("CSV needs at least one forcing column named x1, x2, ...")
    expected = [f"x{p}" for p in range(1, len(names) + 1)]
    if names != expected:
        raise IngestError(f"forcing columns must be numbered consecutively from x1, got {names}")
    return names


def ingest(path: PathLike, target_J: int = 50) -> FunctionalDataset:
    """
    Read a long-format CSV and interpolate each trial onto a shared grid.

    Each trial's times are rescaled to [0, 1], then responses and forcings are
    linearly interpolated onto target_J equally spaced points. Trials with
    empty forcing cells are dropped with a warning.
    """
    if target_J < 3:
        raise IngestError(f"target_J must be >= 3, got {target_J}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    raw.columns = [c.strip() for c in raw.columns]
    missing = [c for c in REQUIRED_COLUMNS if c not in raw.columns]
    if missing:
        raise IngestError(f"{path}: missing required columns {missing}")
    forcing_cols = _forcing_columns(raw.columns)
    value_cols = ["time", "y", *forcing_cols]

    # line numbers: header is line 1
    lines = np.arange(len(raw)) + 2
    raw["trial_id"] = raw["trial_id"].str.strip()
    blank = {c: raw[c].str.strip() == "" for c in value_cols}
    numeric = {c: pd.to_numeric(raw[c].where(~blank[c], "nan"), errors="coerce") for c in value_cols}

    bad = raw["trial_id"] == ""
    for c in value_cols:
        unparsable = numeric[c].isna() & ~blank[c]
        bad |= unparsable | ~np.isfinite(numeric[c].fillna(0.0))
    for c in ("time", "y"):
        bad |= blank[c]
    if bad.any():
        shown = ", ".join(str(n) for n in lines[bad.to_numpy()][:10])
        raise IngestError(f"{path}: malformed rows at lines {shown}")

    frame = pd.DataFrame({"trial_id": raw["trial_id"], **numeric, "_line": lines})
    missing_forcing = frame[forcing_cols].isna().any(axis=1)

    grid = np.linspace(0.0, 1.0, target_J)
    ids, responses, forcings = [], [], []
    for trial_id, rows in frame.groupby("trial_id", sort=False):
        if missing_forcing[rows.index].any():
            logger.warning(f"⚠️ dropping trial {trial_id}: missing forcing values")
            continue
        times = rows["time"].to_numpy()
        if len(times) < 3:
            raise IngestError(f"{path}: trial {trial_id} has {len(times)} observations (need >= 3)")
        if np.any(np.diff(times) <= 0):
            line = int(rows["_line"].to_numpy()[1:][np.diff(times) <= 0][0])
            raise IngestError(f"{path}: trial {trial_id} times not strictly increasing (line {line})")
        scaled = (times - times[0]) / (times[-1] - times[0])
        ids.append(trial_id)
        responses.append(np.interp(grid, scaled, rows["y"].to_numpy()))
        forcings.append([np.interp(grid, scaled, rows[c].to_numpy()) for c in forcing_cols])

    if not ids:
        raise IngestError(f"{path}: no usable trials")
    logger.info(f"📥 Ingested {len(ids)} trials x {len(forcing_cols)} forcings onto J={target_J}")
    return FunctionalDataset(
        grid=grid,
        responses=np.vstack(responses),
        forcings=np.transpose(np.asarray(forcings), (1, 0, 2)),
        trial_ids=tuple(ids),
    )


def dataset_frame(dataset: FunctionalDataset) -> pd.DataFrame:
    """Long-format frame of a dataset on its grid"""
    N, J = dataset.N, dataset.J
    columns = {
        "trial_id": np.repeat(np.asarray(dataset.trial_ids, dtype=object), J),
        "time": np.tile(dataset.grid, N),
        "y": dataset.responses.ravel(),
    }
    for p in range(dataset.P):
        columns[f"x{p + 1}"] = dataset.forcings[p].ravel()
    return pd.DataFrame(columns)


# =============================================================================
# OUTPUT
# =============================================================================

def write_sidecar(path: PathLike, command: str, config: Optional[Dict[str, Any]] = None,
                  extra: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    meta = {"command": command, "version": FLODE_VERSION, "file": path.name, "config": config or {}}
    if extra:
        meta.update(extra)
    sidecar = path.with_name(path.name + ".meta.json")
    with open(sidecar, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return sidecar


def write_csv(frame: pd.DataFrame, path: PathLike, command: str,
              config: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    write_sidecar(path, command, config)
    return path


def write_json(data: Dict[str, Any], path: PathLike, command: str,
               config: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
    write_sidecar(path, command, config)
    return path


def export_dataset(dataset: FunctionalDataset, path: PathLike, command: str = "export",
                   config: Optional[Dict[str, Any]] = None) -> Path:
    return write_csv(dataset_frame(dataset), path, command, config)


# =============================================================================
# FIT SERIALIZATION
# =============================================================================

def fit_to_dict(fit_result: FlodeFit, trial_ids: Sequence[Any]) -> Dict[str, Any]:
    params, basis = fit_result.params, fit_result.basis
    blocks = params.blocks(basis.K)
    return {
        "version": FLODE_VERSION,
        "alpha": float(params.alpha),
        "sigma2": float(params.sigma2),
        "sigma2_d": float(params.sigma2_d),
        "sigma2_b": float(params.sigma2_b),
        "b": {f"B{p}": blocks[p].tolist() for p in range(blocks.shape[0])},
        "y0": np.asarray(params.y0).tolist(),
        "trial_ids": [str(t) for t in trial_ids],
        "moments": {"m": fit_result.moments.m.tolist(), "C": fit_result.moments.C.tolist()},
        "basis": {"grid": basis.grid.tolist(), "K": basis.K, "degree": basis.degree, "lambda": basis.lam},
        "loglik_trace": [float(v) for v in fit_result.loglik_trace],
        "n_iter": fit_result.n_iter,
        "converged": bool(fit_result.converged),
    }


def save_fit(fit_result: FlodeFit, trial_ids: Sequence[Any], path: PathLike, command: str = "fit",
             config: Optional[Dict[str, Any]] = None) -> Path:
    return write_json(fit_to_dict(fit_result, trial_ids), path, command, config)


def load_fit(path: PathLike) -> FlodeFit:
    """Rebuild a FlodeFit (basis and penalty included) from its JSON file"""
    with open(path) as f:
        data = json.load(f)
    try:
        spec = data["basis"]
        basis = build_basis(spec["grid"], spec["K"], spec["degree"]).with_penalty(spec["lambda"])
        n_blocks = len(data["b"])
        b = np.concatenate([np.asarray(data["b"][f"B{p}"], dtype=float) for p in range(n_blocks)])
        params = FlodeParams(
            alpha=float(data["alpha"]),
            b=b,
            y0=np.asarray(data["y0"], dtype=float),
            sigma2=float(data["sigma2"]),
            sigma2_d=float(data["sigma2_d"]),
            sigma2_b=float(data["sigma2_b"]),
        )
        moments = PosteriorMoments(m=np.asarray(data["moments"]["m"], dtype=float).reshape(-1, basis.K),
                                   C=np.asarray(data["moments"]["C"], dtype=float))
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"{path}: invalid fit file ({e})") from e
    return FlodeFit(params=params, moments=moments, basis=basis,
                    loglik_trace=list(data.get("loglik_trace", [])),
                    n_iter=int(data.get("n_iter", 0)), converged=bool(data.get("converged", False)))
