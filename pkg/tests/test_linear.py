import datetime as dt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seaglide.errors import FeatureMismatch, RankDeficient, SingularSystem
from seaglide.evalglide import insample_value
from seaglide.features import MODEL_SPECS, FeatureRow, build_training_set
from seaglide.linear import forecast_linear, ols_fit, ridge_fit
from seaglide.synthetic import synthetic_archive


def gd_ridge(X, y, w, lam, prior, iters=200_000):
    """Plain gradient descent on sum w (y - Xb)^2 + lam ||b - prior||^2."""
    b = np.zeros(X.shape[1])
    H = 2 * (X.T * w) @ X + 2 * lam * np.eye(X.shape[1])
    step = 1.0 / np.linalg.eigvalsh(H)[-1]
    for _ in range(iters):
        g = -2 * (X.T * w) @ (y - X @ b) + 2 * lam * (b - prior)
        if np.abs(g).max() < 1e-11:
            break
        b -= step * g
    return b


def test_ols_exact_fit():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(30), rng.normal(size=(30, 3))])
    fit = ols_fit(X, X @ np.array([1.0, -2.0, 0.5, 3.0]))
    assert np.abs(fit.residuals).max() <= 1e-10


def test_ols_intercept_only_is_mean():
    y = np.array([3.0, 4.0, 8.0, 1.0])
    assert ols_fit(np.ones((4, 1)), y).coefficients[0] == pytest.approx(4.0, abs=1e-14)


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 5))
    y = rng.normal(size=40)
    ref = np.linalg.solve(X.T @ X, X.T @ y)
    np.testing.assert_allclose(ols_fit(X, y).coefficients, ref, atol=1e-8)


@given(st.integers(0, 10_000))
def test_ols_residuals_orthogonal(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(25), rng.normal(size=(25, 4))])
    y = rng.normal(5, 2, 25)
    fit = ols_fit(X, y)
    assert np.abs(X.T @ fit.residuals).max() <= 1e-8
    np.testing.assert_array_equal(fit.residuals, y - fit.fitted)


def test_ols_rank_deficient():
    X = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(RankDeficient):
        ols_fit(X, np.arange(10.0))
    with pytest.raises(RankDeficient):
        ols_fit(np.ones((2, 3)), np.ones(2))


def test_ridge_lambda_zero_is_ols():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 4))
    y = rng.normal(size=30)
    np.testing.assert_allclose(ridge_fit(X, y, np.ones(30), 0.0, None),
                               ols_fit(X, y).coefficients, atol=1e-10)


def test_ridge_huge_lambda_returns_prior():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 4))
    prior = np.array([1.0, -1.0, 2.0, 0.5])
    b = ridge_fit(X, rng.normal(size=30), np.ones(30), 1e12, prior)
    assert np.abs(b - prior).max() <= 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_ridge_matches_gradient_descent(seed):
    rng = np.random.default_rng(100 + seed)
    n, p = rng.integers(6, 15), rng.integers(1, 4)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p))])
    y = rng.normal(size=n)
    w = rng.choice([0.0625, 0.25, 1.0], size=n)
    prior = rng.normal(size=p + 1)
    np.testing.assert_allclose(ridge_fit(X, y, w, 1.0, prior), gd_ridge(X, y, w, 1.0, prior),
                               atol=1e-6)


def test_ridge_zero_residual_fixed_point():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(20, 3))
    b = ols_fit(X, X @ np.array([0.3, 1.7, -2.2])).coefficients
    y = X @ b
    assert np.array_equal(ridge_fit(X, y, np.ones(20), 0.0, b), b)
    assert np.array_equal(ridge_fit(X, y, np.ones(20), 1.0, b), b)


def test_ridge_argument_checks():
    X = np.ones((4, 1))
    with pytest.raises(ValueError):
        ridge_fit(X, np.ones(4), np.zeros(4), 1.0, None)
    with pytest.raises(ValueError):
        ridge_fit(X, np.ones(4), -np.ones(4), 1.0, None)
    with pytest.raises(ValueError):
        ridge_fit(X, np.ones(4), np.ones(4), -1.0, None)


def test_ridge_singular_only_without_penalty():
    X = np.column_stack([np.ones(6), np.ones(6)])
    y = np.arange(6.0)
    with pytest.raises(SingularSystem):
        ridge_fit(X, y, np.ones(6), 0.0, None)
    assert np.isfinite(ridge_fit(X, y, np.ones(6), 1.0, None)).all()


# -- forecast_linear --------------------------------------------------------------

def test_trend_forecast_extrapolates(archive):
    ds = build_training_set(archive, MODEL_SPECS["LinearTrend"], 9, 30, range(1990, 2010))
    t = ds.X[:, 1]
    ds.y = 10 - 0.1 * t
    got = forecast_linear(MODEL_SPECS["LinearTrend"], ds, FeatureRow(("c", "Time"), [1.0, t[-1] + 1]))
    assert got == pytest.approx(10 - 0.1 * (t[-1] + 1), abs=1e-10)


def test_feature_mismatch(archive):
    ds = build_training_set(archive, MODEL_SPECS["LinearTrend"], 9, 30, range(1990, 2010))
    with pytest.raises(FeatureMismatch):
        forecast_linear(MODEL_SPECS["LinearTrend"], ds, FeatureRow(("c", "SIE_Today"), [1.0, 5.0]))


def test_felr_horizon_zero_is_exact(archive):
    assert insample_value("FELR", archive, 9, 0) < 1e-8
    assert insample_value("FELR", archive, 11, 0) < 1e-8


@given(st.floats(0.1, 10), st.floats(-2000, 2000))
def test_time_encoding_is_irrelevant(archive, a, b):
    ds = build_training_set(archive, MODEL_SPECS["FELR"], 9, 40, range(1985, 2015))
    x_new = ds.X[-1] + np.array([0, 1, 0, 0, 0])
    base = float(x_new @ ols_fit(ds.X, ds.y).coefficients)
    X2 = ds.X.copy()
    X2[:, 1] = a * X2[:, 1] + b
    x2 = x_new.copy()
    x2[1] = a * x2[1] + b
    assert float(x2 @ ols_fit(X2, ds.y).coefficients) == pytest.approx(base, abs=1e-8)


def test_felr_beats_trend_across_archives():
    wins = 0
    for seed in range(10):
        arc = synthetic_archive(seed)
        wins += insample_value("FELR", arc, 9, 10) < insample_value("LinearTrend", arc, 9, 10)
    assert wins >= 9
