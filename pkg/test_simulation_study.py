#!/usr/bin/env python3
"""
Reduced-scale simulation study: α bias, EM convergence, surface and prediction
orderings across flode, fhist and fconc. Thresholds are loose because each
case runs only a few replicates at N = 50.
"""
import numpy as np
import pandas as pd
import pytest

from config import RunConfig
from flode import cmd_compare


def study(tmp_path, alpha=4.0, truth_kind="flode", methods=("flode",), n_replicates=3, seed=11):
    config = RunConfig(
        seed=seed,
        simulation={"n_trials": 50, "alpha": alpha, "truth_kind": truth_kind},
        compare={"n_replicates": n_replicates, "n_eval": 200, "methods": list(methods)},
    )
    paths = cmd_compare(config, out=tmp_path / f"{truth_kind}-{alpha:g}")
    return pd.read_csv(paths["report"])


def by_method(report, column):
    """replicate x method table of one metric"""
    return report.pivot(index="replicate", columns="method", values=column)


@pytest.mark.parametrize("alpha", [0.5, 4.0, 12.0])
def test_alpha_is_recovered_without_bias_and_every_fit_converges(tmp_path, alpha):
    report = study(tmp_path, alpha=alpha)
    assert (report["converged"].astype(str) == "True").all()
    assert (report["n_iter"] <= 200).all()
    assert abs(report["alpha_error"].mean()) < max(0.5, 0.25 * alpha)
    assert abs(report["ie_b0"].mean()) < 1.0
    assert abs(report["ie_b1"].mean()) < 1.0


def test_flode_surface_beats_historical_on_flode_data(tmp_path):
    ise = by_method(study(tmp_path, methods=("flode", "fhist")), "ise")
    assert np.sum(ise["flode"] < ise["fhist"]) >= 2


def test_historical_surface_beats_flode_on_historical_data(tmp_path):
    ise = by_method(study(tmp_path, truth_kind="fhist", methods=("flode", "fhist")), "ise")
    assert np.sum(ise["fhist"] < ise["flode"]) >= 2


def test_flode_predicts_better_than_concurrent_and_the_gap_narrows(tmp_path):
    gaps = {}
    for alpha in (0.5, 4.0, 12.0):
        errors = by_method(study(tmp_path, alpha=alpha, methods=("flode", "fconc"), n_replicates=2), "mape")
        gaps[alpha] = float(errors["fconc"].mean() - errors["flode"].mean())
    assert gaps[0.5] > 0
    assert gaps[4.0] > 0
    assert gaps[12.0] < gaps[0.5]
