from __future__ import annotations

import math

import numpy as np
import pytest

from effdf import oracles
from effdf.engine import DataModel, estimate_df
from effdf.errors import DimensionTooLarge, NotLinear
from effdf.fitters import OLS, AxisSubset, BestSubset, ForwardStepwise, PointSet, Ridge
from effdf.linalg import DesignMatrix

I2 = DesignMatrix.identity(2)


def test_hermite_rule_weights_and_exactness():
    rule = oracles.gauss_hermite_rule(5)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-12)
    # E[Z^(2m)] = (2m - 1)!!
    moments = {0: 1, 2: 1, 4: 3, 6: 15, 8: 105}
    for d in range(10):
        exact = moments.get(d, 0)
        assert rule.expect(lambda x: x ** d) == pytest.approx(exact, abs=1e-10)


def test_trace_linear(design_50x15):
    assert oracles.df_trace_linear(OLS(design_50x15)) == 15
    assert oracles.df_trace_linear(Ridge(design_50x15, 0.0)) == 15
    assert oracles.df_trace_linear(Ridge(I2, 1.0)) == pytest.approx(1.0)
    with pytest.raises(NotLinear):
        oracles.df_trace_linear(AxisSubset(1))


def test_trace_matches_hat_matrix(rng):
    X = DesignMatrix(rng.standard_normal((7, 3)))
    for lam in (0.1, 1.0, 10.0):
        assert oracles.df_trace_linear(Ridge(X, lam)) == pytest.approx(np.trace(Ridge(X, lam).hat_matrix()))


def test_quadrature_identity():
    for mu, sigma in [((0.0, 0.0), 1.0), ((3.0, -2.0), 0.3)]:
        r = oracles.df_quadrature(DataModel(mu, sigma), OLS(I2))
        assert r.value == pytest.approx(2.0, abs=1e-8)
        assert r.converged


@pytest.mark.parametrize("fitter", [
    OLS(DesignMatrix(np.array([[1.0], [2.0]]))),
    Ridge(I2, 1.0),
    Ridge(DesignMatrix(np.array([[1.0, 0.5], [-0.3, 2.0]])), 0.8),
])
def test_quadrature_matches_trace(fitter):
    r = oracles.df_quadrature(DataModel((0.7, -1.1), 1.3), fitter)
    assert r.value == pytest.approx(oracles.df_trace_linear(fitter), abs=1e-6)


def test_quadrature_three_dimensions():
    X = DesignMatrix(np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]]))
    r = oracles.df_quadrature(DataModel((0.1, 0.2, 0.3)), Ridge(X, 0.5), nodes_per_dim=16)
    assert r.value == pytest.approx(oracles.df_trace_linear(Ridge(X, 0.5)), abs=1e-8)
    with pytest.raises(DimensionTooLarge):
        oracles.df_quadrature(DataModel(np.zeros(4)), OLS(DesignMatrix.identity(4)))


@pytest.mark.parametrize("sigma", [1.0, 0.5, 0.1])
def test_two_point_closed_form(sigma):
    r = oracles.df_quadrature(DataModel((0.0,), sigma), PointSet([[-1.0], [1.0]]))
    assert r.value * sigma == pytest.approx(math.sqrt(2 / math.pi), abs=1e-6)
    assert r.value == pytest.approx(oracles.df_two_point_closed_form(sigma), rel=1e-10)


def test_axis_origin_closed_form():
    r = oracles.df_quadrature(DataModel((0.0, 0.0)), AxisSubset(1))
    assert r.value == pytest.approx(1 + 2 / math.pi, abs=1e-10)
    assert oracles.df_heatmap_reference((0.0, 0.0)) == pytest.approx(oracles.df_axis_origin_closed_form(),
                                                                      abs=1e-10)


@pytest.mark.parametrize("mu", [(0.0, 5.0), (5.0, 5.0), (0.3, -1.2), (-2.5, 4.0), (1.0, 1.0)])
def test_quadrature_matches_line_integral(mu):
    r = oracles.df_quadrature(DataModel(mu), AxisSubset(1))
    assert r.converged
    assert r.value == pytest.approx(oracles.df_axis_line_integral(mu), abs=1e-7)


def test_heatmap_reference_values():
    assert 1.0 <= oracles.df_heatmap_reference((0.0, 5.0)) <= 1.2
    assert oracles.df_heatmap_reference((5.0, 5.0)) > 2
    with pytest.raises(ValueError):
        oracles.df_heatmap_reference((0.0, 0.0, 0.0))


def test_richardson_discrepancy_small_for_subset_fitters(rng):
    X = DesignMatrix(rng.standard_normal((2, 2)))
    for fitter in [AxisSubset(1), BestSubset(X, 1), ForwardStepwise(X, 1),
                   PointSet([[0.0, 1.0], [1.0, 0.0], [-1.0, -1.0]])]:
        r = oracles.df_quadrature(DataModel((0.4, -0.2)), fitter)
        assert r.converged, (fitter, r)


def test_hermite_is_poor_at_jumps():
    # Tensor Gauss-Hermite converges slowly on a discontinuous fit, which is
    # why the adaptive route is the default.
    model = DataModel((0.3,))
    P = PointSet([[-1.0], [1.0]])
    exact = oracles.df_quadrature(model, P).value
    herm = oracles.df_quadrature(model, P, 64, method="hermite")
    assert abs(herm.value - exact) > 1e-6


def test_scaling_limit():
    assert oracles.df_scaling_limit() == pytest.approx(0.5641895835477563, rel=1e-15)
    assert oracles.expected_max_two_normals_quadrature() == pytest.approx(1 / math.sqrt(math.pi), abs=1e-10)


def test_scaling_limit_monte_carlo():
    rng = np.random.default_rng(17)
    m = rng.standard_normal((1_000_000, 2)).max(axis=1)
    se = m.std(ddof=1) / math.sqrt(m.size)
    assert abs(m.mean() - oracles.df_scaling_limit()) < 4 * se


def test_quadrature_rejects_non_gaussian():
    with pytest.raises(ValueError):
        oracles.df_quadrature(DataModel((0.0,), noise="laplace"), PointSet([[1.0]]))


def test_monte_carlo_matches_quadrature_axis():
    model = DataModel((0.0, 0.0))
    est = estimate_df(model, AxisSubset(1), 200_000, seed=12)
    assert est.z(oracles.df_quadrature(model, AxisSubset(1)).value) < 4


@pytest.mark.parametrize("fitter, mu", [
    (AxisSubset(1), (0.3, -1.2)),
    (PointSet([[-1.0], [1.0]]), (0.2,)),
    (Ridge(I2, 1.0), (1.0, 2.0)),
])
def test_discrepancy_does_not_grow_with_nodes(fitter, mu):
    model = DataModel(mu)
    d64 = oracles.df_quadrature(model, fitter, 64).discrepancy
    d128 = oracles.df_quadrature(model, fitter, 128).discrepancy
    assert d128 <= max(d64, 1e-12)
