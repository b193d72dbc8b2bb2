#!/usr/bin/env python3
"""
Tests for coefficient surfaces, prediction and error metrics
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from em_core import FlodeFit, FlodeParams, PosteriorMoments
from metrics import (Surface, alpha_error, flode_surface, integrated_coverage, integrated_error, mape, predict,
                     surface_ise)
from quadrature import trapezoid
from simulate import SimConfig, generate
from splines import make_basis_system


def test_zero_coefficient_gives_zero_surface():
    grid = np.linspace(0, 1, 21)
    assert_array_equal(flode_surface(4.0, np.zeros(21), grid).values, 0.0)


def test_surface_kernel_value():
    grid = np.linspace(0, 1, 11)
    coef = np.zeros(11)
    coef[2] = 1.0  # B(0.2) = 1
    surface = flode_surface(4.0, coef, grid)
    assert surface.values[2, 7] == pytest.approx(np.exp(-2.0), rel=1e-12)
    # s >= t is zero, diagonal included
    assert surface.values[7, 2] == 0.0
    assert surface.values[2, 2] == 0.0


def test_surface_small_alpha_limit():
    grid = np.linspace(0, 1, 15)
    coef = np.random.default_rng(0).normal(size=15)
    values = flode_surface(1e-12, coef, grid).values
    upper = grid[:, None] < grid[None, :]
    assert_allclose(values, np.where(upper, coef[:, None], 0.0), atol=1e-10)


def test_surface_is_linear_in_the_coefficient():
    rng = np.random.default_rng(1)
    grid = np.linspace(0, 1, 12)
    b1, b2 = rng.normal(size=(2, 12))
    combined = flode_surface(3.0, 2.0 * b1 - 0.5 * b2, grid).values
    assert_allclose(combined, 2.0 * flode_surface(3.0, b1, grid).values - 0.5 * flode_surface(3.0, b2, grid).values,
                    atol=1e-14)


def test_surface_ise_examples():
    grid = np.linspace(0, 1, 17)
    rng = np.random.default_rng(2)
    a = Surface(grid=grid, values=rng.normal(size=(17, 17)))
    assert surface_ise(a, a) == 0.0
    shifted = Surface(grid=grid, values=a.values + 0.3)
    assert surface_ise(shifted, a) == pytest.approx(0.09)
    b = Surface(grid=grid, values=rng.normal(size=(17, 17)))
    inner = [trapezoid(grid, (a.values[:, l] - b.values[:, l]) ** 2) for l in range(17)]
    assert surface_ise(a, b) == pytest.approx(trapezoid(grid, np.array(inner)), abs=1e-12)
    assert surface_ise(a, b) == pytest.approx(surface_ise(b, a), abs=1e-14)


def test_surface_grid_mismatch():
    a = Surface(grid=np.linspace(0, 1, 5), values=np.zeros((5, 5)))
    b = Surface(grid=np.linspace(0, 0.9, 5), values=np.zeros((5, 5)))
    with pytest.raises(ValueError):
        surface_ise(a, b)
    with pytest.raises(ValueError):
        Surface(grid=np.linspace(0, 1, 5), values=np.zeros((4, 5)))


def test_surface_long_format():
    grid = np.linspace(0, 1, 3)
    surface = Surface(grid=grid, values=np.arange(9.0).reshape(3, 3))
    s, t, value = surface.to_long()
    assert_allclose(s, np.repeat(grid, 3))
    assert_allclose(t, np.tile(grid, 3))
    assert_allclose(value, np.arange(9.0))


def test_integrated_error_sign_convention():
    grid = np.linspace(0, 1, 30)
    truth = np.sin(grid)
    assert integrated_error(truth, truth, grid) == 0.0
    assert integrated_error(truth, truth + 0.25, grid) == pytest.approx(-0.25)
    estimate = np.cos(grid)
    assert integrated_error(truth, estimate, grid) == pytest.approx(trapezoid(grid, truth - estimate))


def test_alpha_error_examples():
    assert alpha_error(4, 4) == 0.0
    assert alpha_error(4, 3.5) == pytest.approx(0.5)
    assert alpha_error(0.1, 0.3) == pytest.approx(-0.2)


def test_integrated_coverage():
    grid = np.linspace(0, 1, 21)
    truth = np.sin(3 * grid)
    assert integrated_coverage(truth - 1, truth + 1, truth, grid) == pytest.approx(1.0)
    assert integrated_coverage(truth + 1, truth + 2, truth, grid) == 0.0
    half = np.where(grid <= 0.5, truth - 1, truth + 1)
    assert integrated_coverage(half, half + 2, truth, grid) == pytest.approx(0.5, abs=0.05)


def test_mape_examples():
    grid = np.linspace(0, 1, 25)
    rng = np.random.default_rng(3)
    truths = rng.normal(size=(4, 25))
    assert mape(truths, truths, grid) == 0.0
    assert mape(truths + 0.7, truths, grid) == pytest.approx(0.7)
    predictions = rng.normal(size=(4, 25))
    oracle = np.mean([trapezoid(grid, np.abs(predictions[i] - truths[i])) for i in range(4)])
    assert mape(predictions, truths, grid) == pytest.approx(oracle, abs=1e-14)
    with pytest.raises(ValueError):
        mape(predictions[:3], truths, grid)


def test_predict_zero_forcings_is_pure_decay():
    grid = np.linspace(0, 1, 20)
    basis = make_basis_system(grid, K=8)
    b = np.r_[np.zeros(8), np.random.default_rng(4).normal(size=8)]
    params = FlodeParams(alpha=2.0, b=b, y0=np.zeros(1), sigma2=1.0, sigma2_d=1.0, sigma2_b=1.0)
    out = predict(params, basis, np.zeros((2, 20)), [1.5, -0.5])
    assert_allclose(out, np.outer([1.5, -0.5], np.exp(-2.0 * grid)))


def test_predict_training_trial_matches_fixed_effect_fit():
    dataset, truth = generate(SimConfig(n_trials=5, grid_size=30, seed=1))
    basis = make_basis_system(dataset.grid, K=10)
    rng = np.random.default_rng(5)
    params = FlodeParams(alpha=3.0, b=rng.normal(size=20), y0=rng.normal(size=5),
                         sigma2=1.0, sigma2_d=1.0, sigma2_b=1.0)
    fitted = FlodeFit(params=params, moments=PosteriorMoments.zeros(5, 10), basis=basis,
                      loglik_trace=[], n_iter=0, converged=True)
    assert_allclose(predict(params, basis, dataset.forcings, params.y0),
                    fitted.fitted_values(dataset, include_random=False), atol=1e-12)


def test_predict_is_linear_in_y0_and_b():
    grid = np.linspace(0, 1, 20)
    basis = make_basis_system(grid, K=8)
    rng = np.random.default_rng(6)
    forcings = rng.normal(size=(1, 3, 20))
    b1, b2 = rng.normal(size=(2, 16))
    y1, y2 = rng.normal(size=(2, 3))

    def run(b, y0):
        params = FlodeParams(alpha=1.5, b=b, y0=y0, sigma2=1.0, sigma2_d=1.0, sigma2_b=1.0)
        return predict(params, basis, forcings, y0)

    assert_allclose(run(b1 + 2 * b2, y1 + 2 * y2), run(b1, y1) + 2 * run(b2, y2), atol=1e-12)


def test_predict_rejects_mismatched_inputs():
    basis = make_basis_system(np.linspace(0, 1, 20), K=8)
    params = FlodeParams(alpha=1.0, b=np.zeros(16), y0=np.zeros(1), sigma2=1.0, sigma2_d=1.0, sigma2_b=1.0)
    with pytest.raises(ValueError):
        predict(params, basis, np.zeros((2, 19)), [0.0, 0.0])
    with pytest.raises(ValueError):
        predict(params, basis, np.zeros((2, 20)), [0.0])
    with pytest.raises(ValueError):
        predict(params, basis, np.zeros((2, 2, 20)), [0.0, 0.0])
