"""Exact dense Gaussian-process reference implementation.

Everything here is O(n^3) and deliberately naive: full covariance
matrices, Cholesky factorizations, no approximation. It exists to
validate the multi-resolution pipeline on problems small enough to
afford it and to generate synthetic data, so clarity beats speed
throughout. A hard size cap keeps it from being misused at scale.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular

from .errors import CapExceededError
from .geo import as_point_set
from .kernels import HyperParams, PriorSpec, cov_matrix

SIZE_CAP = 2000

_LOG_2PI = float(np.log(2.0 * np.pi))


def _check_cap(n: int, what: str):
    if n > SIZE_CAP:
        raise CapExceededError(
            f"{what} has {n} points; the dense reference path is capped at "
            f"{SIZE_CAP} to prevent accidental O(n^3) blowups"
        )


class DenseGP:
    """Dense covariance workspace for one hyperparameter value.

    Builds the full process covariance (with the stabilizing ridge on
    coincident coordinates) and caches its Cholesky factor.
    """

    def __init__(self, points, psi: HyperParams):
        self.points = as_point_set(points)
        _check_cap(len(self.points), "DenseGP point set")
        self.psi = psi
        self.cov = cov_matrix(self.points, self.points, psi)

    def chol(self):
        if not hasattr(self, "_chol"):
            self._chol = cholesky(self.cov, lower=True)
        return self._chol


def simulate(points, X, beta, psi: HyperParams, seed: int) -> np.ndarray:
    """Draw y = X beta + w + noise from the exact model.

    The field w is drawn from the dense covariance; the noise is iid with
    standard deviation psi.zeta. Deterministic for a fixed seed.
    """
    pts = as_point_set(points)
    X = np.asarray(X, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    _check_cap(len(pts), "simulation point set")
    if X.shape != (len(pts), len(beta)):
        raise ValueError(f"X shape {X.shape} does not match points/beta")
    gp = DenseGP(pts, psi)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(len(pts))
    eps = rng.standard_normal(len(pts))
    return X @ beta + gp.chol() @ z + psi.zeta * eps


def dense_evidence(y, X, points, psi: HyperParams, priors: PriorSpec) -> float:
    """log p(y | psi) with the fixed effects integrated out.

    Marginal covariance: beta_prior_var * X X' + process covariance +
    zeta^2 I. Returns the exact log density of y under the corresponding
    zero-mean Gaussian.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    pts = as_point_set(points)
    n = len(pts)
    _check_cap(n, "evidence point set")
    gp = DenseGP(pts, psi)
    cov = (
        priors.beta_prior_var * (X @ X.T)
        + gp.cov
        + (psi.zeta ** 2) * np.eye(n)
    )
    c, low = cho_factor(cov, lower=True)
    alpha = cho_solve((c, low), y)
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    return -0.5 * (float(y @ alpha) + logdet + n * _LOG_2PI)


def dense_predict(y, X, points, pred_X, pred_points, psi: HyperParams, priors: PriorSpec):
    """Exact predictive mean and variance at new locations, beta marginalized.

    Treats the fixed effects as part of the Gaussian prior, so the joint
    of (y, y_pred) is zero-mean with covariance built from beta_prior_var,
    the process covariance, and the noise. Predictions are for new noisy
    observations: the predictive variance includes zeta^2.
    Returns (mean, var) arrays over the prediction points.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    pred_X = np.asarray(pred_X, dtype=np.float64)
    pts = as_point_set(points)
    ppts = as_point_set(pred_points)
    n, m = len(pts), len(ppts)
    _check_cap(n + m, "prediction joint point set")
    if pred_X.shape[1] != X.shape[1]:
        raise ValueError("training and prediction covariates disagree on p")
    zeta2 = psi.zeta ** 2
    bv = priors.beta_prior_var

    k_oo = cov_matrix(pts, pts, psi) + bv * (X @ X.T) + zeta2 * np.eye(n)
    k_po = cov_matrix(ppts, pts, psi) + bv * (pred_X @ X.T)
    k_pp = cov_matrix(ppts, ppts, psi) + bv * (pred_X @ pred_X.T) + zeta2 * np.eye(m)

    c, low = cho_factor(k_oo, lower=True)
    mean = k_po @ cho_solve((c, low), y)
    half = solve_triangular(c, k_po.T, lower=low)
    var = np.diag(k_pp) - np.sum(half * half, axis=0)
    return mean, var
