"""Shared oracles and fuzz utilities for the test suite."""

import math

import numpy as np

from gpglobal import gp as gpmod
from gpglobal.interval import Interval
from gpglobal.train import lhs_sample


def random_interval(rng, lo=-5.0, hi=5.0, min_width=1e-3, max_width=4.0):
    a = rng.uniform(lo, hi - min_width)
    b = a + rng.uniform(min_width, max_width)
    return Interval(a, min(b, hi))


def random_model(rng, D=None, N=None, nu=None):
    """Small random trained GP with moderate hyperparameters."""
    D = D or int(rng.integers(1, 4))
    N = N or int(rng.integers(3, 30))
    nu = nu or rng.choice(["1/2", "3/2", "5/2", "inf"])
    bounds = np.column_stack([np.zeros(D), np.ones(D)])
    X = rng.uniform(0.0, 1.0, (N, D))
    y = rng.normal(0.0, 1.0, N)
    log_theta = np.concatenate([rng.uniform(-0.5, 1.5, D), [0.0], [math.log(0.05)]])
    return gpmod.build_model(str(nu), log_theta, X, y, bounds)


def random_box_in(bounds, rng, min_width=0.02, max_frac=0.5):
    """Random sub-box of the given (D, 2) bounds."""
    bounds = np.asarray(bounds, dtype=float)
    out = []
    for lo, hi in bounds:
        w = (hi - lo) * rng.uniform(min_width, max_frac)
        a = rng.uniform(lo, hi - w)
        out.append(Interval(a, a + w))
    return out


def sample_in_box(box, rng):
    return np.array([rng.uniform(iv.lo, iv.hi) for iv in box])


def fd_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def grid_min_2d(fn_many, bounds, resolution=500):
    """Exhaustive grid oracle: (min value, argmin) of a batched function."""
    gx = np.linspace(bounds[0][0], bounds[0][1], resolution)
    gy = np.linspace(bounds[1][0], bounds[1][1], resolution)
    G = np.stack(np.meshgrid(gx, gy), -1).reshape(-1, 2)
    vals = fn_many(G)
    i = int(np.argmin(vals))
    return float(vals[i]), G[i]


def peaks_dataset(N, seed, nu="5/2", restarts=3):
    from gpglobal.cli import PEAKS_BOUNDS, peaks
    from gpglobal.train import map_train

    X = lhs_sample(2, N, PEAKS_BOUNDS, seed=seed)
    y = np.array([peaks(*row) for row in X])
    return map_train(X, y, nu, PEAKS_BOUNDS, restarts=restarts, seed=seed + 7)
