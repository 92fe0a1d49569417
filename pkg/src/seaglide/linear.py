"""Least squares and weighted ridge solvers; the linear forecasters."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import FeatureMismatch, RankDeficient, SingularSystem
from .features import Dataset, FeatureRow, ModelSpec

RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class LinearFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray


def ols_fit(X, y) -> LinearFit:
    """Least squares via a thin QR factorization.

    Raises ``RankDeficient`` when a diagonal entry of R falls below
    ``RANK_RTOL`` times the largest one.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < p:
        raise RankDeficient(f"{n} rows for {p} columns")
    q, r = np.linalg.qr(X)
    d = np.abs(np.diag(r))
    if d.min() <= RANK_RTOL * d.max():
        raise RankDeficient("design matrix is (numerically) rank deficient")
    beta = solve_triangular(r, q.T @ y)
    fitted = X @ beta
    return LinearFit(beta, y - fitted, fitted)


def ridge_fit(X, y, weights, lam: float, beta_prior) -> np.ndarray:
    """Minimize ``sum w (y - X b)^2 + lam * ||b - beta_prior||^2``.

    Closed form: ``(X'WX + lam I) b = X'Wy + lam beta_prior``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    prior = np.zeros(X.shape[1]) if beta_prior is None else np.asarray(beta_prior, dtype=float)
    if (w < 0).any() or not w.any():
        raise ValueError("weights must be non-negative and not all zero")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if np.array_equal(X @ prior, y):
        # zero loss and zero penalty: the prior is the minimizer
        return prior.copy()
    Xw = X * w[:, None]
    p = X.shape[1]
    # correctly rounded sums: results independent of BLAS summation order
    A = np.empty((p, p))
    for i in range(p):
        for j in range(i, p):
            A[i, j] = A[j, i] = math.fsum(Xw[:, i] * X[:, j])
    b = np.array([math.fsum(Xw[:, i] * y) for i in range(p)])
    if lam > 0:
        A = A + lam * np.eye(p)
        b = b + lam * prior
    else:
        ev = np.linalg.eigvalsh(A)
        if ev[0] <= RANK_RTOL * max(ev[-1], 0.0):
            raise SingularSystem("weighted design is rank deficient and lambda = 0")
    return np.linalg.solve(A, b)


def forecast_linear(spec: ModelSpec, train: Dataset, x_new: FeatureRow) -> float:
    """Fit OLS on ``train`` and evaluate at ``x_new``."""
    if tuple(x_new.names) != tuple(train.x_names):
        raise FeatureMismatch(f"row features {x_new.names} != training {train.x_names}")
    fit = ols_fit(train.X, train.y)
    return float(x_new.values @ fit.coefficients)
