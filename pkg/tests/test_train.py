import math

import numpy as np
import pytest

from gpglobal import gp as gpmod
from gpglobal.train import PriorSpec, lhs_sample, map_train, neg_log_posterior

from helpers import fd_gradient


def test_prior_validation():
    with pytest.raises(ValueError):
        PriorSpec(np.zeros(3), np.array([1.0, 0.0, 1.0]))


def test_gradient_matches_finite_differences(rng):
    for _ in range(5):
        D = int(rng.integers(1, 3))
        X = rng.uniform(0, 1, (5, D))
        y = rng.normal(0, 1, 5)
        prior = PriorSpec.default(D)
        lt = rng.uniform(-1, 1, D + 2)
        value, grad = neg_log_posterior(lt, X, y, "5/2", prior)
        fd = fd_gradient(lambda t: neg_log_posterior(t, X, y, "5/2", prior)[0], lt, h=1e-5)
        assert np.allclose(grad, fd, rtol=1e-4, atol=1e-6)


def test_prior_gradient_zero_at_mean(rng):
    D = 1
    X = rng.uniform(0, 1, (4, 1))
    y = rng.normal(0, 1, 4)
    mu = np.array([0.1, -0.2, 0.3])
    prior_tight = PriorSpec(mu, np.full(3, 1e-10))
    # with an overwhelming prior the gradient at the prior mean is dominated
    # by the likelihood only; compare the prior term directly instead
    prior = PriorSpec(mu, np.ones(3))
    v1, g1 = neg_log_posterior(mu, X, y, "inf", prior)
    like = neg_log_posterior(mu, X, y, "inf", PriorSpec(mu, np.full(3, 1e12)))
    # prior contribution's gradient at the mean is zero
    assert np.allclose(g1 - like[1], 0.0, atol=1e-6)


def test_doubling_prior_variance_halves_quadratic(rng):
    D = 1
    X = rng.uniform(0, 1, (4, 1))
    y = rng.normal(0, 1, 4)
    mu = np.zeros(3)
    lt = np.array([0.5, -0.5, -1.0])
    v1, _ = neg_log_posterior(lt, X, y, "inf", PriorSpec(mu, np.ones(3)))
    v2, _ = neg_log_posterior(lt, X, y, "inf", PriorSpec(mu, 2.0 * np.ones(3)))
    vinf, _ = neg_log_posterior(lt, X, y, "inf", PriorSpec(mu, np.full(3, 1e15)))
    assert (v1 - vinf) == pytest.approx(2.0 * (v2 - vinf), rel=1e-9)


def test_penalty_on_non_pd(rng):
    X = np.array([[0.3], [0.3]])
    y = np.array([0.0, 1.0])
    lt = np.array([0.0, 0.0, -80.0])  # zero noise with duplicate points
    value, grad = neg_log_posterior(lt, X, y, "inf", PriorSpec.default(1))
    assert value == 1e10 and np.all(grad == 0.0)


def test_map_train_synthetic_recovery():
    """Data generated from a known GP: hyperparameters recovered within
    +-0.5 in log space (10 restarts, fixed seed).  The domain spans many
    correlation lengths so the output scale is identifiable, and a flat
    prior keeps the check about the likelihood rather than shrinkage."""
    rng = np.random.default_rng(7)
    N, width = 40, 10.0
    lam_true, sf_true, sn_true = 2.0, 1.0, 0.1
    X = rng.uniform(0, width, (N, 1))
    d = (X[:, None, 0] - X[None, :, 0]) ** 2 * lam_true**2
    K = sf_true**2 * np.exp(-0.5 * d) + sn_true**2 * np.eye(N)
    y = np.linalg.cholesky(K) @ rng.normal(0, 1, N)
    bounds = np.array([[0.0, width]])
    prior = PriorSpec(np.zeros(3), np.full(3, 25.0))
    model = map_train(X, y, "inf", bounds, prior=prior, restarts=10, seed=0)
    ystd = float(np.std(y))
    # truth mapped into the scaled training space
    target = np.array([math.log(lam_true * width), math.log(sf_true / ystd),
                       math.log(sn_true / ystd)])
    assert np.all(np.abs(model.log_theta - target) <= 0.5), (model.log_theta, target)


def test_map_train_beats_every_start():
    rng = np.random.default_rng(7)
    X = rng.uniform(0, 1, (12, 2))
    y = rng.normal(0, 1, 12)
    bounds = np.column_stack([np.zeros(2), np.ones(2)])
    prior = PriorSpec.default(2)
    model = map_train(X, y, "3/2", bounds, restarts=6, seed=3)
    Xs, ys, _, _ = gpmod.scale_training_data(X, y, bounds)
    best, _ = neg_log_posterior(model.log_theta, Xs, ys, "3/2", prior)
    starts = np.random.default_rng(3).normal(
        prior.means, np.sqrt(prior.variances), size=(6, 4))
    for s in starts:
        v, _ = neg_log_posterior(s, Xs, ys, "3/2", prior)
        assert best <= v + 1e-12


def test_map_train_noiseless_pair_interpolates():
    X = np.array([[0.2], [0.8]])
    y = np.array([1.0, -1.0])
    model = map_train(X, y, "inf", np.array([[0.0, 1.0]]), restarts=3, seed=1)
    for xi, yi in zip(X, y):
        assert gpmod.predict_mean(model, xi) == pytest.approx(yi, abs=0.05)


def test_map_train_deterministic():
    rng = np.random.default_rng(11)
    X = rng.uniform(0, 1, (10, 1))
    y = rng.normal(0, 1, 10)
    b = np.array([[0.0, 1.0]])
    m1 = map_train(X, y, "5/2", b, restarts=1, seed=5)
    m2 = map_train(X, y, "5/2", b, restarts=1, seed=5)
    assert np.array_equal(m1.log_theta, m2.log_theta)


def test_descent_monotone_along_accepted_steps(rng):
    from gpglobal.train import _descend

    X = rng.uniform(0, 1, (8, 1))
    y = rng.normal(0, 1, 8)
    prior = PriorSpec.default(1)
    values = []

    def tracker(lt):
        v, g = neg_log_posterior(lt, X, y, "inf", prior)
        return v, g

    # record the accepted iterates by wrapping
    accepted = []
    orig = tracker

    v, x = _descend(tracker, np.zeros(3))
    assert v <= tracker(np.zeros(3))[0] + 1e-12


def test_lhs_properties():
    pts = lhs_sample(1, 2, np.array([[0.0, 1.0]]), seed=0)
    assert sorted(pts[:, 0].tolist()) == [0.25, 0.75]
    pts = lhs_sample(3, 17, np.array([[0.0, 1.0]] * 3), seed=4)
    for j in range(3):
        strata = np.floor(np.sort(pts[:, j]) * 17).astype(int)
        assert np.array_equal(strata, np.arange(17))
    again = lhs_sample(3, 17, np.array([[0.0, 1.0]] * 3), seed=4)
    assert np.array_equal(pts, again)
    scaled = lhs_sample(1, 4, np.array([[2.0, 6.0]]), seed=9)
    assert np.all(scaled >= 2.0) and np.all(scaled <= 6.0)
