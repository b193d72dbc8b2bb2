#!/usr/bin/env python3
"""
Tests for B-spline bases and the blended penalty
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from splines import build_basis, build_penalty, clamped_knots, difference_matrix, make_basis_system


def cox_de_boor(i, degree, x, knots):
    """Textbook recursion, 0/0 taken as 0; the last non-empty span is closed on the right."""
    if degree == 0:
        if knots[i] <= x < knots[i + 1]:
            return 1.0
        last = max(j for j in range(len(knots) - 1) if knots[j] < knots[j + 1])
        return 1.0 if (x == knots[-1] and i == last) else 0.0
    left = right = 0.0
    if knots[i + degree] > knots[i]:
        left = (x - knots[i]) / (knots[i + degree] - knots[i]) * cox_de_boor(i, degree - 1, x, knots)
    if knots[i + degree + 1] > knots[i + 1]:
        right = ((knots[i + degree + 1] - x) / (knots[i + degree + 1] - knots[i + 1])
                 * cox_de_boor(i + 1, degree - 1, x, knots))
    return left + right


def test_basis_shape_and_partition_of_unity():
    basis = build_basis(np.linspace(0, 1, 50), K=20, degree=3)
    assert basis.basis_matrix.shape == (50, 20)
    assert basis.J == 50
    assert_allclose(basis.basis_matrix.sum(axis=1), 1.0, atol=1e-10)
    assert np.all(basis.basis_matrix >= 0)


def test_minimal_basis_is_still_a_partition_of_unity():
    grid = np.sort(np.random.default_rng(3).uniform(0, 1, 12))
    basis = build_basis(grid, K=5, degree=3)
    assert_allclose(basis.basis_matrix.sum(axis=1), 1.0, atol=1e-10)


def test_basis_matches_cox_de_boor():
    grid = np.linspace(0, 1, 5)
    K, degree = 5, 3
    basis = build_basis(grid, K, degree)
    knots = clamped_knots(0.0, 1.0, K, degree)
    oracle = np.array([[cox_de_boor(k, degree, x, knots) for k in range(K)] for x in grid])
    assert_allclose(basis.basis_matrix, oracle, atol=1e-12)


def test_basis_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_basis(np.linspace(0, 1, 10), K=4, degree=3)
    with pytest.raises(ValueError):
        build_basis(np.linspace(0, 1, 10), K=11, degree=3)
    with pytest.raises(ValueError):
        build_basis([0.0, 0.5, 0.3, 1.0], K=4, degree=2)
    with pytest.raises(ValueError):
        build_basis([0.0, 0.5, 0.5, 1.0], K=4, degree=2)
    with pytest.raises(ValueError):
        build_basis([0.0, 0.5, 1.5], K=3, degree=1)


def test_basis_arrays_are_read_only():
    basis = build_basis(np.linspace(0, 1, 20), K=8)
    with pytest.raises(ValueError):
        basis.basis_matrix[0, 0] = 2.0


def test_penalty_pure_shrinkage_is_identity():
    assert_allclose(build_penalty(7, lam=1.0), np.eye(7))


def test_penalty_spectrum_and_rank():
    lam = 0.001
    penalty = build_penalty(20, lam)
    assert_allclose(penalty, penalty.T)
    assert np.linalg.eigvalsh(penalty).min() >= lam * (1 - 1e-9)
    assert np.linalg.matrix_rank(penalty - lam * np.eye(20)) == 18


def test_second_differences_annihilate_linear_sequences():
    d2 = difference_matrix(10, 2)
    linear = 3.0 + 0.7 * np.arange(10)
    assert d2.shape == (8, 10)
    assert abs(linear @ d2.T @ d2 @ linear) < 1e-10


def test_penalty_rejects_bad_lambda():
    for lam in (0.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            build_penalty(10, lam)


def test_make_basis_system_attaches_penalty():
    basis = make_basis_system(np.linspace(0, 1, 30), K=10)
    assert basis.require_penalty().shape == (10, 10)
    assert basis.lam == 0.001
    with pytest.raises(ValueError):
        build_basis(np.linspace(0, 1, 30), K=10).require_penalty()


def test_evaluate_uses_the_basis_matrix():
    basis = build_basis(np.linspace(0, 1, 30), K=10)
    coefs = np.random.default_rng(0).normal(size=(3, 10))
    assert_allclose(basis.evaluate(coefs), coefs @ basis.basis_matrix.T)
    # constant coefficients give a constant function
    assert_allclose(basis.evaluate(np.full(10, 2.5)), 2.5, atol=1e-12)
