#!/usr/bin/env python3
"""
Tests for run configuration loading and validation
"""
import json

import pytest
from pydantic import ValidationError

from config import RUNTIME_CONFIG, RunConfig, load_run_config, load_runtime_config, print_config


def write_config(tmp_path, data):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data))
    return path


def test_defaults():
    config = RunConfig()
    assert config.K == 20
    assert config.lam == 0.001
    assert config.alpha_bounds == (1e-6, 40.0)
    assert config.n_boot == 200
    assert config.cv_folds == 10
    assert config.compare.n_replicates == 50
    assert config.simulation.sigma2_d == 50.0


def test_load_with_alias_and_nested_sections(tmp_path):
    path = write_config(tmp_path, {"K": 12, "lambda": 0.01, "simulation": {"alpha": 0.5, "n_trials": 40},
                                   "compare": {"ridge_weight": 2.0}})
    config = load_run_config(path)
    assert config.K == 12
    assert config.lam == 0.01
    assert config.simulation.alpha == 0.5
    assert config.compare.ridge_weight == 2.0
    assert config.dump()["lambda"] == 0.01


def test_unknown_keys_are_errors(tmp_path):
    with pytest.raises(ValidationError):
        load_run_config(write_config(tmp_path, {"K": 12, "n_bootstrap": 10}))
    with pytest.raises(ValidationError):
        load_run_config(write_config(tmp_path, {"simulation": {"noise": 1.0}}))


def test_field_level_validation(tmp_path):
    with pytest.raises(ValidationError, match="alpha_bounds"):
        RunConfig(alpha_bounds=(5.0, 1.0))
    with pytest.raises(ValidationError):
        RunConfig(K=30, target_J=20)
    with pytest.raises(ValidationError, match="simulation.grid_size"):
        RunConfig(K=25, simulation={"grid_size": 20})
    assert RunConfig(K=20, simulation={"grid_size": 20}).K == 20
    with pytest.raises(ValidationError):
        RunConfig(mean_step="newton")
    with pytest.raises(ValidationError):
        RunConfig(lam=1.5)
    with pytest.raises(ValidationError):
        RunConfig(compare={"ridge_weight": -1.0})
    with pytest.raises(ValueError):
        load_run_config(write_config(tmp_path, [1, 2, 3]))


def test_seed_override(tmp_path):
    path = write_config(tmp_path, {"seed": 3})
    assert load_run_config(path).seed == 3
    assert load_run_config(path, seed=99).seed == 99
    assert load_run_config(seed=7).seed == 7


def test_fit_options_mirror_the_config():
    config = RunConfig(tol=1e-4, max_iter=12, random_effects=False, init_strategy="random", seed=4,
                       mean_step="em")
    options = config.fit_options()
    assert options.tol == 1e-4
    assert options.max_iter == 12
    assert options.random_effects is False
    assert options.init_strategy == "random"
    assert options.init_seed == 4
    assert options.fixed_alpha is None
    assert options.mean_step == "em"
    assert RunConfig().fit_options().mean_step == "profile"


def test_runtime_config_from_environment(monkeypatch):
    monkeypatch.setenv("FLODE_MAX_WORKERS", "3")
    monkeypatch.setenv("FLODE_LOG_LEVEL", "debug")
    monkeypatch.setenv("FLODE_PROGRESS", "0")
    runtime = load_runtime_config()
    assert runtime == {"max_workers": 3, "log_level": "DEBUG", "progress": False}
    assert set(RUNTIME_CONFIG) == {"max_workers", "log_level", "progress"}
    assert RunConfig(max_workers=2).workers == 2


def test_print_config(capsys):
    print_config(RunConfig(K=9))
    assert "K=9" in capsys.readouterr().out
