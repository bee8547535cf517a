"""MAP hyperparameter estimation and experiment-design sampling.

Hyperparameters are optimized in log space with independent Gaussian priors.
The objective is the negative log marginal likelihood plus the negative log
prior (quadratic part), minimized by multistart gradient descent with Armijo
backtracking.  Starts are drawn from the prior, so results are deterministic
for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .gp import (GPModel, build_model, kernel_derivative_np, kernel_value_np,
                 scale_training_data)

_ARMIJO_C = 1e-4
_ARMIJO_SHRINK = 0.5
_GRAD_TOL = 1e-6
_MAX_ITER = 200
_PENALTY = 1e10


@dataclass(frozen=True)
class PriorSpec:
    """Independent Gaussian prior on each log-hyperparameter."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.variances) <= 0.0):
            raise ValueError("prior variances must be positive")

    @staticmethod
    def default(D: int) -> "PriorSpec":
        # weakly informative; keeps the noise level from collapsing
        means = np.concatenate([np.zeros(D + 1), [math.log(1e-2)]])
        variances = np.concatenate([np.full(D + 1, 4.0), [1.0]])
        return PriorSpec(means, variances)


def neg_log_posterior(log_theta, X, y, nu: str, prior: PriorSpec):
    """Value and analytic gradient of the negative log posterior.

    A non-PD covariance at the queried point returns a large finite penalty
    with zero gradient so line searches retreat into the feasible region.
    """
    log_theta = np.asarray(log_theta, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    N, D = X.shape
    if np.any(np.abs(log_theta) > 40.0):  # exp would overflow / degenerate
        return _PENALTY, np.zeros_like(log_theta)
    lambdas = np.exp(log_theta[:D])
    sigma_f2 = math.exp(2.0 * log_theta[D])
    sigma_n2 = math.exp(2.0 * log_theta[D + 1])

    diff = X[:, None, :] - X[None, :, :]
    sq = diff * diff                      # (N, N, D)
    d = np.einsum("ijk,k->ij", sq, lambdas**2)
    K0 = kernel_value_np(nu, d)
    K = sigma_f2 * K0
    K[np.diag_indices_from(K)] += sigma_n2

    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        return _PENALTY, np.zeros_like(log_theta)
    alpha = solve_triangular(L.T, solve_triangular(L, y, lower=True), lower=False)

    value = (0.5 * float(y @ alpha)
             + float(np.sum(np.log(np.diag(L))))
             + 0.5 * N * math.log(2.0 * math.pi))
    resid = log_theta - prior.means
    value += 0.5 * float(np.sum(resid**2 / prior.variances))

    # trace identities: dNLML/dtheta = 0.5 tr((K^-1 - aa^T) dK/dtheta)
    A = cho_solve((L, True), np.eye(N)) - np.outer(alpha, alpha)
    kp = sigma_f2 * kernel_derivative_np(nu, d)
    grad = np.empty_like(log_theta)
    for j in range(D):
        dK = kp * (2.0 * lambdas[j] ** 2) * sq[:, :, j]
        grad[j] = 0.5 * float(np.sum(A * dK))
    grad[D] = 0.5 * float(np.sum(A * (2.0 * sigma_f2 * K0)))
    grad[D + 1] = 0.5 * float(np.trace(A)) * 2.0 * sigma_n2
    grad += resid / prior.variances
    return value, grad


def _descend(fun, x0: np.ndarray):
    """Gradient descent with Armijo backtracking; returns (value, point)."""
    x = np.array(x0, dtype=float)
    value, grad = fun(x)
    for _ in range(_MAX_ITER):
        gnorm2 = float(grad @ grad)
        if math.sqrt(gnorm2) <= _GRAD_TOL:
            break
        step = 1.0
        accepted = False
        for _ in range(40):
            cand = x - step * grad
            v_new, g_new = fun(cand)
            if v_new <= value - _ARMIJO_C * step * gnorm2:
                x, value, grad = cand, v_new, g_new
                accepted = True
                break
            step *= _ARMIJO_SHRINK
        if not accepted:
            break
    return value, x


def map_train(X_raw, y_raw, nu: str, input_bounds, prior: PriorSpec | None = None,
              restarts: int = 10, seed: int = 0) -> GPModel:
    """Multistart MAP estimate; returns the best model (deterministic per seed)."""
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    Xs, ys, _, _ = scale_training_data(X_raw, y_raw, input_bounds)
    D = Xs.shape[1]
    if prior is None:
        prior = PriorSpec.default(D)

    rng = np.random.default_rng(seed)
    sd = np.sqrt(np.asarray(prior.variances, dtype=float))
    starts = rng.normal(prior.means, sd, size=(restarts, D + 2))

    fun = lambda lt: neg_log_posterior(lt, Xs, ys, nu, prior)
    best_value, best_theta = math.inf, None
    for x0 in starts:
        value, theta = _descend(fun, x0)
        if value < best_value:
            best_value, best_theta = value, theta
    if best_theta is None or not math.isfinite(best_value):
        raise RuntimeError("MAP training failed from every start")
    return build_model(nu, best_theta, X_raw, y_raw, input_bounds)


def lhs_sample(D: int, n: int, bounds, seed: int = 0) -> np.ndarray:
    """Latin hypercube design, one point per axis stratum, midpoint placement."""
    if n < 1:
        raise ValueError("sample count must be >= 1")
    bounds = np.asarray(bounds, dtype=float)
    rng = np.random.default_rng(seed)
    unit = np.empty((n, D))
    for j in range(D):
        unit[:, j] = (rng.permutation(n) + 0.5) / n
    return bounds[:, 0] + unit * (bounds[:, 1] - bounds[:, 0])
