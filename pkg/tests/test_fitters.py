from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from effdf.errors import InfeasibleSubset, RankDeficient, SubsetTooLarge
from effdf.fitters import (OLS, AxisSubset, BestSubset, BestSubsetPath, Constant, ForwardStepwise,
                           ForwardStepwisePath, PointSet, Ridge, fit_axis_subset, fit_best_subset,
                           fit_forward_stepwise, fit_ols, fit_point_set, fit_ridge)
from effdf.linalg import DesignMatrix

from props import fitter_violations, random_instance

I2 = DesignMatrix.identity(2)


def test_ols_examples(design_50x15, rng):
    np.testing.assert_allclose(fit_ols(I2, [4.0, -2.0]).fitted, [4, -2])
    np.testing.assert_allclose(fit_ols(DesignMatrix(np.ones((2, 1))), [0.0, 4.0]).fitted, [2, 2])
    y = rng.standard_normal(50)
    r = y - fit_ols(design_50x15, y).fitted
    assert np.abs(design_50x15.entries.T @ r).max() < 1e-8


def test_best_subset_picks_larger_coordinate():
    res = fit_best_subset(I2, 1, [3.0, 1.0])
    np.testing.assert_allclose(res.fitted, [3, 0])
    assert res.support == (0,)
    res = fit_best_subset(I2, 1, [1.0, 3.0])
    np.testing.assert_allclose(res.fitted, [0, 3])
    assert res.support == (1,)


def test_best_subset_full_equals_ols(design_50x15, rng):
    y = rng.standard_normal(50)
    np.testing.assert_allclose(fit_best_subset(design_50x15, 15, y).fitted,
                               fit_ols(design_50x15, y).fitted, atol=1e-10)


def test_best_subset_ties_lexicographic():
    assert fit_best_subset(I2, 1, [2.0, 2.0]).support == (0,)
    X = DesignMatrix(np.eye(3))
    assert fit_best_subset(X, 2, [1.0, 1.0, 1.0]).support == (0, 1)


def test_best_subset_skips_rank_deficient():
    X = DesignMatrix(np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]))
    res = fit_best_subset(X, 2, [1.0, 2.0, 3.0])
    assert res.support == (0, 2)


def test_best_subset_errors():
    X = DesignMatrix(np.array([[1.0, 1.0], [2.0, 2.0]]))
    with pytest.raises(InfeasibleSubset):
        fit_best_subset(X, 2, [1.0, 0.0])
    with pytest.raises(SubsetTooLarge):
        fit_best_subset(DesignMatrix(np.ones((30, 26))), 1, np.ones(30))
    with pytest.raises(ValueError):
        fit_best_subset(I2, 3, [1.0, 2.0])


def test_forward_stepwise_examples(design_50x15, rng):
    assert fit_forward_stepwise(I2, 1, [3.0, 1.0]).support == (0,)
    y = rng.standard_normal(50)
    np.testing.assert_allclose(fit_forward_stepwise(design_50x15, 15, y).fitted,
                               fit_ols(design_50x15, y).fitted, atol=1e-10)
    for k in range(16):
        assert fit_forward_stepwise(design_50x15, k, y).rss >= fit_best_subset(design_50x15, k, y).rss - 1e-9


def test_forward_stepwise_rank_deficient():
    X = DesignMatrix(np.array([[1.0, 2.0], [1.0, 2.0]]))
    with pytest.raises(RankDeficient):
        fit_forward_stepwise(X, 2, [1.0, 0.0])


def test_axis_subset_examples():
    np.testing.assert_allclose(fit_axis_subset(1, [3.0, -5.0]).fitted, [0, -5])
    np.testing.assert_allclose(fit_axis_subset(3, [1.0, 2.0, 3.0]).fitted, [1, 2, 3])
    assert fit_axis_subset(1, [-2.0, 2.0]).support == (0,)


def test_axis_subset_matches_best_subset(rng):
    Y = rng.standard_normal((1000, 2))
    for y in Y:
        np.testing.assert_array_equal(fit_axis_subset(1, y).fitted, fit_best_subset(I2, 1, y).fitted)


def test_point_set_examples():
    P = [[-1.0], [1.0]]
    np.testing.assert_allclose(fit_point_set(P, [0.2]).fitted, [1.0])
    res = fit_point_set(P, [0.0])
    np.testing.assert_allclose(res.fitted, [-1.0])
    assert res.support == (0,)
    np.testing.assert_allclose(fit_point_set([[3.0, 4.0]], [9.0, -1.0]).fitted, [3, 4])


def test_point_set_validation():
    with pytest.raises(ValueError):
        PointSet([[1.0], [1.0]])
    with pytest.raises(ValueError):
        PointSet(np.zeros((0, 1)))
    with pytest.raises(ValueError):
        PointSet([[np.inf]])


def test_ridge_examples(design_50x15, rng):
    np.testing.assert_allclose(fit_ridge(I2, 1.0, [2.0, 4.0]).fitted, [1, 2])
    y = rng.standard_normal(50)
    np.testing.assert_allclose(fit_ridge(design_50x15, 0.0, y).fitted, fit_ols(design_50x15, y).fitted,
                               atol=1e-10)
    assert np.linalg.norm(fit_ridge(design_50x15, 1e12, y).fitted) <= 1e-6 * np.linalg.norm(y)
    with pytest.raises(ValueError):
        Ridge(I2, -1.0)


def test_ridge_hat_matrix(rng):
    X = DesignMatrix(rng.standard_normal((6, 3)))
    lam = 0.7
    H = X.entries @ np.linalg.solve(X.entries.T @ X.entries + lam * np.eye(3), X.entries.T)
    np.testing.assert_allclose(Ridge(X, lam).hat_matrix(), H, atol=1e-12)


def test_vectorized_matches_reference(design_50x15, rng):
    Y = rng.standard_normal((30, 50)) * 3
    for fitter, ref in [
        (OLS(design_50x15), lambda y: fit_ols(design_50x15, y)),
        (Ridge(design_50x15, 2.0), lambda y: fit_ridge(design_50x15, 2.0, y)),
        (BestSubset(design_50x15, 3), lambda y: fit_best_subset(design_50x15, 3, y)),
        (ForwardStepwise(design_50x15, 5), lambda y: fit_forward_stepwise(design_50x15, 5, y)),
        (AxisSubset(4), lambda y: fit_axis_subset(4, y)),
    ]:
        np.testing.assert_allclose(fitter.fit_many(Y), np.stack([ref(y).fitted for y in Y]), atol=1e-9)


def test_path_fitters_match_single(design_50x15, rng):
    Y = rng.standard_normal((20, 50))
    ks = (0, 2, 7, 15)
    B = BestSubsetPath(design_50x15, ks).fit_many(Y)
    F = ForwardStepwisePath(design_50x15, ks).fit_many(Y)
    for i, k in enumerate(ks):
        np.testing.assert_allclose(B[i], np.stack([fit_best_subset(design_50x15, k, y).fitted for y in Y]),
                                   atol=1e-9)
        np.testing.assert_allclose(F[i], np.stack([fit_forward_stepwise(design_50x15, k, y).fitted for y in Y]),
                                   atol=1e-9)


def test_regions_label_supports(rng):
    X = DesignMatrix(rng.standard_normal((4, 3)))
    Y = rng.standard_normal((25, 4))
    labels = BestSubset(X, 2).regions_many(Y)
    for y, lab in zip(Y, labels):
        assert lab == sum(1 << j for j in fit_best_subset(X, 2, y).support)
    labels = ForwardStepwise(X, 2).regions_many(Y)
    for y, lab in zip(Y, labels):
        assert lab == sum(1 << j for j in fit_forward_stepwise(X, 2, y).support)


def test_constant_fitter():
    c = Constant([1.0, 2.0])
    np.testing.assert_allclose(c([5.0, 5.0]), [1, 2])
    np.testing.assert_allclose(c.fit_many(np.zeros((3, 2))), [[1, 2]] * 3)


@settings(max_examples=300, deadline=None, derandomize=True,
          suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_fitter_invariants_random(seed):
    X, y, points = random_instance(np.random.default_rng(seed))
    assert fitter_violations(X, y, points) == []
