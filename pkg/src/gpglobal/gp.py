"""Trained Gaussian process model: exact posterior mean/variance and their
McCormick relaxations, plus a JSON document format for persistence.

Inputs are scaled to the unit box from declared bounds and outputs are
standardized (zero mean, unit variance); all hyperparameters live in the
scaled space.  The predictive variance excludes the noise term.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from . import envelopes as env
from . import mccormick as mc
from .interval import Interval
from .mccormick import Relaxation


@dataclass(frozen=True)
class GPModel:
    nu: str
    D: int
    N: int
    log_theta: np.ndarray          # [log lam_1..lam_D, log sigma_f, log sigma_n]
    X_scaled: np.ndarray           # (N, D) training inputs in the unit box
    y_scaled: np.ndarray           # (N,) standardized outputs
    L: np.ndarray                  # lower Cholesky factor of K + sigma_n^2 I
    alpha: np.ndarray              # (K + sigma_n^2 I)^{-1} y_scaled
    input_bounds: np.ndarray       # (D, 2) raw-unit bounds
    output_mean: float
    output_std: float

    @property
    def lambdas(self) -> np.ndarray:
        return np.exp(self.log_theta[: self.D])

    @property
    def sigma_f2(self) -> float:
        return math.exp(2.0 * self.log_theta[self.D])

    @property
    def sigma_n2(self) -> float:
        return math.exp(2.0 * self.log_theta[self.D + 1])

    def scale_input(self, x: np.ndarray) -> np.ndarray:
        b = self.input_bounds
        return (np.asarray(x, dtype=float) - b[:, 0]) / (b[:, 1] - b[:, 0])


def kernel_value_np(nu: str, d: np.ndarray) -> np.ndarray:
    d = np.maximum(d, 0.0)
    if nu == "inf":
        return np.exp(-0.5 * d)
    s = np.sqrt(d)
    if nu == "1/2":
        return np.exp(-s)
    if nu == "3/2":
        t = math.sqrt(3.0) * s
        return (1.0 + t) * np.exp(-t)
    if nu == "5/2":
        t = math.sqrt(5.0) * s
        return (1.0 + t + (5.0 / 3.0) * d) * np.exp(-t)
    raise ValueError(f"unknown kernel order {nu!r}")


def kernel_derivative_np(nu: str, d: np.ndarray) -> np.ndarray:
    """dk/dd elementwise; the nu=1/2 singularity at d=0 maps to 0 because it
    only ever multiplies squared-difference factors that vanish there."""
    d = np.maximum(d, 0.0)
    if nu == "inf":
        return -0.5 * np.exp(-0.5 * d)
    if nu == "3/2":
        return -1.5 * np.exp(-np.sqrt(3.0 * d))
    if nu == "5/2":
        t = np.sqrt(5.0 * d)
        return -(5.0 / 6.0) * (1.0 + t) * np.exp(-t)
    if nu == "1/2":
        s = np.sqrt(d)
        out = np.zeros_like(s)
        pos = s > 0.0
        out[pos] = -np.exp(-s[pos]) / (2.0 * s[pos])
        return out
    raise ValueError(f"unknown kernel order {nu!r}")


def scale_training_data(X_raw, y_raw, input_bounds):
    """Unit-box input scaling and output standardization used everywhere."""
    X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
    y_raw = np.asarray(y_raw, dtype=float).ravel()
    b = np.asarray(input_bounds, dtype=float)
    if b.shape != (X_raw.shape[1], 2) or np.any(b[:, 1] <= b[:, 0]):
        raise ValueError("input bounds must be a (D, 2) array with hi > lo")
    Xs = (X_raw - b[:, 0]) / (b[:, 1] - b[:, 0])
    y_mean = float(np.mean(y_raw))
    y_std = float(np.std(y_raw))
    if y_std < 1e-12:
        y_std = 1.0
    return Xs, (y_raw - y_mean) / y_std, y_mean, y_std


def _pairwise_sqdist(X: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return np.einsum("ijk,k->ij", diff * diff, lambdas**2)


def build_model(nu, log_theta, X_raw, y_raw, input_bounds) -> GPModel:
    """Assemble the trained model: scaled data, covariance Cholesky factor
    (with escalating jitter), and the precomputed weight vector."""
    if nu not in env.KERNEL_ORDERS:
        raise ValueError(f"unknown kernel order {nu!r}")
    Xs, ys, y_mean, y_std = scale_training_data(X_raw, y_raw, input_bounds)
    N, D = Xs.shape
    if N < 1:
        raise ValueError("at least one training point required")
    log_theta = np.asarray(log_theta, dtype=float).ravel()
    if log_theta.shape[0] != D + 2:
        raise ValueError(f"log_theta must have length D+2={D + 2}")

    lambdas = np.exp(log_theta[:D])
    sigma_f2 = math.exp(2.0 * log_theta[D])
    sigma_n2 = math.exp(2.0 * log_theta[D + 1])
    d = _pairwise_sqdist(Xs, lambdas)
    if N > 1 and sigma_n2 <= 1e-14 * sigma_f2:
        off = d + np.diag(np.full(N, np.inf))
        if np.min(off) == 0.0:
            # duplicated inputs with (near-)zero noise: K is singular by
            # construction, which jitter must not paper over
            raise RuntimeError("covariance matrix not PD")
    K = sigma_f2 * kernel_value_np(nu, d)
    K[np.diag_indices_from(K)] += sigma_n2

    jitter = 0.0
    L = None
    while True:
        try:
            L = cholesky(K + jitter * np.eye(N), lower=True)
            break
        except np.linalg.LinAlgError:
            jitter = 1e-10 * sigma_f2 if jitter == 0.0 else jitter * 10.0
            if jitter > 1e-4 * sigma_f2:
                raise RuntimeError("covariance matrix not PD")

    alpha = solve_triangular(L.T, solve_triangular(L, ys, lower=True), lower=False)
    return GPModel(nu=nu, D=D, N=N, log_theta=log_theta, X_scaled=Xs,
                   y_scaled=ys, L=L, alpha=alpha,
                   input_bounds=np.asarray(input_bounds, dtype=float),
                   output_mean=y_mean, output_std=y_std)


def _check_in_bounds(m: GPModel, x: np.ndarray):
    b = m.input_bounds
    if np.any(x < b[:, 0] - 1e-12) or np.any(x > b[:, 1] + 1e-12):
        warnings.warn("query point outside the model's declared input bounds "
                      "(extrapolating)", stacklevel=3)


def _cross_sqdist(m: GPModel, X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - m.X_scaled[None, :, :]
    return np.einsum("ijk,k->ij", diff * diff, m.lambdas**2)


def predict_mean(m: GPModel, x) -> float:
    return float(predict_mean_many(m, np.asarray(x, dtype=float)[None, :])[0])


def predict_variance(m: GPModel, x) -> float:
    return float(predict_variance_many(m, np.asarray(x, dtype=float)[None, :])[0])


def predict_mean_many(m: GPModel, X_raw: np.ndarray) -> np.ndarray:
    X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
    for row in X_raw[:1]:
        _check_in_bounds(m, row)
    Xs = (X_raw - m.input_bounds[:, 0]) / (m.input_bounds[:, 1] - m.input_bounds[:, 0])
    k = m.sigma_f2 * kernel_value_np(m.nu, _cross_sqdist(m, Xs))
    return (k @ m.alpha) * m.output_std + m.output_mean


def predict_variance_many(m: GPModel, X_raw: np.ndarray) -> np.ndarray:
    X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
    Xs = (X_raw - m.input_bounds[:, 0]) / (m.input_bounds[:, 1] - m.input_bounds[:, 0])
    k = m.sigma_f2 * kernel_value_np(m.nu, _cross_sqdist(m, Xs))
    v = solve_triangular(m.L, k.T, lower=True)
    var = np.maximum(m.sigma_f2 - np.sum(v * v, axis=0), 0.0)
    return var * m.output_std**2


# ---------------------------------------------------------------------------
# relaxation propagation


def _scaled_input_relaxations(m: GPModel, inputs: list[Relaxation]) -> list[Relaxation]:
    out = []
    for j, r in enumerate(inputs):
        lo, hi = m.input_bounds[j]
        w = hi - lo
        out.append(mc.affine(r, alpha=1.0 / w, gamma=-lo / w))
    return out


def _generic_kernel_relax(nu: str, d: Relaxation) -> Relaxation:
    """Standard McCormick decomposition of the kernel (no custom envelope)."""
    if nu == "inf":
        e = mc.affine(d, alpha=-0.5)
        return mc.compose(e, env.exp_envelope(e.range))
    s = mc.compose(d, env.sqrt_envelope(d.range))
    if nu == "1/2":
        e = mc.affine(s, alpha=-1.0)
        return mc.compose(e, env.exp_envelope(e.range))
    if nu == "3/2":
        r3 = math.sqrt(3.0)
        poly = mc.affine(s, alpha=r3, gamma=1.0)
        e = mc.affine(s, alpha=-r3)
        return mc.product(poly, mc.compose(e, env.exp_envelope(e.range)))
    if nu == "5/2":
        r5 = math.sqrt(5.0)
        poly = mc.affine(s, d, alpha=r5, beta=5.0 / 3.0, gamma=1.0)
        e = mc.affine(s, alpha=-r5)
        return mc.product(poly, mc.compose(e, env.exp_envelope(e.range)))
    raise ValueError(f"unknown kernel order {nu!r}")


def kernel_relaxations(m: GPModel, inputs: list[Relaxation],
                       use_envelopes: bool = True) -> list[Relaxation]:
    """Relaxations of sigma_f^2 * k(d(x, x_i)) for every training point.

    The weighted squared distance is assembled from exact univariate squares,
    so its interval bounds are exact; the kernel is applied by composition.
    """
    xs = _scaled_input_relaxations(m, inputs)
    if use_envelopes and all(r.cv == r.cc and np.array_equal(r.cv_sub, r.cc_sub)
                             for r in xs):
        return _kernel_relaxations_exact(m, xs)
    lam2 = m.lambdas**2
    sf2 = m.sigma_f2
    out = []
    for i in range(m.N):
        d = None
        for j in range(m.D):
            t = mc.affine(xs[j], gamma=-float(m.X_scaled[i, j]))
            sq = mc.compose(t, env.sqr_envelope(t.range))
            d = mc.affine(sq, alpha=float(lam2[j])) if d is None \
                else mc.affine(d, sq, 1.0, float(lam2[j]))
        if use_envelopes:
            k = mc.compose(d, env.kernel_envelope(m.nu, d.range))
        else:
            k = _generic_kernel_relax(m.nu, d)
        out.append(mc.affine(k, alpha=sf2))
    return out


def _kernel_relaxations_exact(m: GPModel, xs: list[Relaxation]) -> list[Relaxation]:
    """Vectorized kernel relaxations for exact inner relaxations (plain
    variables): equivalent to composing per training point, one numpy pass.

    The mid rule always selects the concave distance bound for the kernel's
    convex side (argmin at the distance maximum) and the convex bound for
    the secant side, so the branch logic collapses.
    """
    n = xs[0].n
    xs_val = np.array([r.cv for r in xs])
    xs_lo = np.array([r.range.lo for r in xs])
    xs_hi = np.array([r.range.hi for r in xs])
    xs_sub = np.stack([r.cv_sub for r in xs])          # (D, n)

    t_val = xs_val[None, :] - m.X_scaled               # (N, D)
    t_lo = xs_lo[None, :] - m.X_scaled
    t_hi = xs_hi[None, :] - m.X_scaled

    sq_cv = t_val * t_val
    sq_cc = t_val * (t_lo + t_hi) - t_lo * t_hi        # secant of the square
    sq_lo = np.where(t_lo > 0.0, t_lo * t_lo,
                     np.where(t_hi < 0.0, t_hi * t_hi, 0.0))
    sq_hi = np.maximum(t_lo * t_lo, t_hi * t_hi)

    lam2 = m.lambdas**2
    d_cv = sq_cv @ lam2
    d_cc = sq_cc @ lam2
    d_lo = sq_lo @ lam2
    d_hi = sq_hi @ lam2
    d_cv_sub = (lam2[None, :] * 2.0 * t_val) @ xs_sub  # (N, n)
    d_cc_sub = (lam2[None, :] * (t_lo + t_hi)) @ xs_sub

    sf2 = m.sigma_f2
    k_lo = sf2 * kernel_value_np(m.nu, d_hi)
    k_hi = sf2 * kernel_value_np(m.nu, d_lo)
    k_cv = sf2 * kernel_value_np(m.nu, d_cc)
    k_cv_slope = sf2 * kernel_derivative_np(m.nu, d_cc)
    if m.nu == "1/2":
        flat = (d_cc <= 1e-12) & (d_lo <= 1e-12)
        k_cv = np.where(flat, k_lo, k_cv)
        k_cv_slope = np.where(flat, 0.0, k_cv_slope)
    width = d_hi - d_lo
    sec_slope = np.where(width > 0.0, (k_lo - k_hi) / np.where(width > 0.0, width, 1.0), 0.0)
    k_cc = k_hi + sec_slope * (d_cv - d_lo)

    k_cv_sub = k_cv_slope[:, None] * d_cc_sub
    k_cc_sub = sec_slope[:, None] * d_cv_sub
    out = []
    for i in range(m.N):
        out.append(Relaxation(Interval(float(k_lo[i]), float(k_hi[i])),
                              float(k_cv[i]), float(k_cc[i]),
                              k_cv_sub[i], k_cc_sub[i]))
    return out


def relax_mean(m: GPModel, inputs: list[Relaxation],
               use_envelopes: bool = True,
               k_rels: list[Relaxation] | None = None) -> Relaxation:
    if k_rels is None:
        k_rels = kernel_relaxations(m, inputs, use_envelopes)
    coefs = m.output_std * m.alpha
    pos = np.maximum(coefs, 0.0)
    neg = np.minimum(coefs, 0.0)
    k_cv = np.array([r.cv for r in k_rels])
    k_cc = np.array([r.cc for r in k_rels])
    k_lo = np.array([r.range.lo for r in k_rels])
    k_hi = np.array([r.range.hi for r in k_rels])
    cv = float(pos @ k_cv + neg @ k_cc) + m.output_mean
    cc = float(pos @ k_cc + neg @ k_cv) + m.output_mean
    rng = Interval(float(pos @ k_lo + neg @ k_hi) + m.output_mean,
                   float(pos @ k_hi + neg @ k_lo) + m.output_mean)
    k_cv_sub = np.stack([r.cv_sub for r in k_rels])
    k_cc_sub = np.stack([r.cc_sub for r in k_rels])
    cv_sub = pos @ k_cv_sub + neg @ k_cc_sub
    cc_sub = pos @ k_cc_sub + neg @ k_cv_sub
    return Relaxation(rng, cv, cc, cv_sub, cc_sub)


def relax_variance(m: GPModel, inputs: list[Relaxation],
                   use_envelopes: bool = True,
                   k_rels: list[Relaxation] | None = None) -> Relaxation:
    """Variance through the Cholesky forward-substitution recurrence; this
    needs N bilinear products instead of the N^2 of the explicit quadratic
    form.  The final range is clamped at zero before unscaling."""
    if k_rels is None:
        k_rels = kernel_relaxations(m, inputs, use_envelopes)
    n = inputs[0].n
    L = m.L
    sf = math.sqrt(m.sigma_f2)
    v: list[Relaxation] = []
    for j in range(m.N):
        acc = k_rels[j]
        for l in range(j):
            acc = mc.affine(acc, v[l], 1.0, -float(L[j, l]))
        vj = mc.affine(acc, alpha=1.0 / float(L[j, j]))
        # |v_j| <= sigma_f holds for every input (the posterior variance is
        # nonnegative); without it the interval recurrence explodes when the
        # factor is ill-conditioned
        lo2 = max(vj.range.lo, -sf)
        hi2 = min(vj.range.hi, sf)
        if lo2 > hi2:
            lo2 = hi2 = 0.5 * (lo2 + hi2)
        v.append(mc.cut(Relaxation(Interval(lo2, hi2), vj.cv, vj.cc,
                                   vj.cv_sub, vj.cc_sub)))

    var = mc.constant(m.sigma_f2, n)
    for vj in v:
        var = mc.affine(var, mc.product(vj, vj), 1.0, -1.0)
    clamped = Interval(min(max(var.range.lo, 0.0), m.sigma_f2),
                       min(max(var.range.hi, 0.0), m.sigma_f2))
    var = mc.cut(Relaxation(clamped, var.cv, var.cc, var.cv_sub, var.cc_sub))
    return mc.affine(var, alpha=m.output_std**2)


def relax_posterior(m: GPModel, box: list[Interval], point) -> tuple[Relaxation, Relaxation]:
    """Mean and variance relaxations over a raw-unit box at one point."""
    point = np.asarray(point, dtype=float)
    n = m.D
    inputs = [mc.variable(j, box[j], float(point[j]), n) for j in range(n)]
    k_rels = kernel_relaxations(m, inputs)
    return (relax_mean(m, inputs, k_rels=k_rels),
            relax_variance(m, inputs, k_rels=k_rels))


# ---------------------------------------------------------------------------
# persistence

_FIELDS = ("nu", "D", "N", "log_theta", "X_scaled", "y_scaled", "L", "alpha",
           "input_bounds", "output_mean", "output_std")


def _fmt(x) -> str:
    if isinstance(x, bool):
        raise TypeError("unexpected bool in model document")
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    raise TypeError(f"cannot serialize {type(x)}")


def model_to_document(m: GPModel) -> dict:
    return {
        "nu": m.nu,
        "D": m.D,
        "N": m.N,
        "log_theta": m.log_theta.tolist(),
        "X_scaled": m.X_scaled.tolist(),
        "y_scaled": m.y_scaled.tolist(),
        "L": m.L.tolist(),
        "alpha": m.alpha.tolist(),
        "input_bounds": m.input_bounds.tolist(),
        "output_mean": m.output_mean,
        "output_std": m.output_std,
    }


def model_to_json(m: GPModel) -> str:
    """JSON text with floats at 17 significant digits (lossless round-trip)."""
    doc = model_to_document(m)
    parts = [f'{json.dumps(key)}: {_fmt(doc[key])}' for key in _FIELDS]
    return "{" + ", ".join(parts) + "}"


def model_from_document(doc: dict) -> GPModel:
    for key in _FIELDS:
        if key not in doc:
            raise ValueError(f'model document missing field "{key}"')
    nu = doc["nu"]
    if nu not in env.KERNEL_ORDERS:
        raise ValueError(f'field "nu": unknown kernel order {nu!r}')
    D, N = int(doc["D"]), int(doc["N"])
    if N < 1:
        raise ValueError('field "N": at least one training point required')

    def arr(key, shape):
        a = np.asarray(doc[key], dtype=float)
        if a.shape != shape:
            raise ValueError(f'field "{key}": expected shape {shape}, got {a.shape}')
        return a

    m = GPModel(
        nu=nu, D=D, N=N,
        log_theta=arr("log_theta", (D + 2,)),
        X_scaled=arr("X_scaled", (N, D)),
        y_scaled=arr("y_scaled", (N,)),
        L=arr("L", (N, N)),
        alpha=arr("alpha", (N,)),
        input_bounds=arr("input_bounds", (D, 2)),
        output_mean=float(doc["output_mean"]),
        output_std=float(doc["output_std"]),
    )
    if np.any(np.diag(m.L) <= 0.0):
        raise ValueError('field "L": diagonal must be strictly positive')
    return m


def model_from_json(text: str) -> GPModel:
    return model_from_document(json.loads(text))


def save_model(m: GPModel, path: str):
    with open(path, "w") as fh:
        fh.write(model_to_json(m) + "\n")


def load_model(path: str) -> GPModel:
    with open(path) as fh:
        return model_from_json(fh.read())
