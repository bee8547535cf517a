import json
import math

import numpy as np
import pytest

from gpglobal import gp as gpmod
from gpglobal.interval import Interval

from helpers import random_box_in, random_model, sample_in_box


def _unit_bounds(D):
    return np.column_stack([np.zeros(D), np.ones(D)])


def test_build_single_point():
    m = gpmod.build_model("inf", [0.0, 0.0, math.log(0.5)],
                          [[0.25]], [3.0], _unit_bounds(1))
    # K = sigma_f^2 + sigma_n^2 on the scaled outputs
    sf2, sn2 = m.sigma_f2, m.sigma_n2
    assert m.L[0, 0] == pytest.approx(math.sqrt(sf2 + sn2))
    assert m.alpha[0] == pytest.approx(m.y_scaled[0] / (sf2 + sn2))


def test_duplicate_points_not_pd():
    X = [[0.3], [0.3]]
    y = [1.0, 2.0]
    with pytest.raises(RuntimeError, match="covariance matrix not PD"):
        gpmod.build_model("inf", [0.0, 0.0, -60.0], X, y, _unit_bounds(1))


def test_interpolation_and_far_field(rng):
    X = rng.uniform(0, 1, (8, 2))
    y = rng.normal(0, 1, 8)
    m = gpmod.build_model("5/2", [1.0, 1.0, 0.0, -60.0], X, y, _unit_bounds(2))
    for i in range(8):
        assert gpmod.predict_mean(m, X[i]) == pytest.approx(y[i], abs=1e-5)
        assert gpmod.predict_variance(m, X[i]) == pytest.approx(0.0, abs=1e-6)
    with pytest.warns(UserWarning):
        far = gpmod.predict_mean(m, np.array([60.0, -60.0]))
    assert far == pytest.approx(float(np.mean(y)), abs=1e-8)
    with np.errstate(all="ignore"):
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vfar = gpmod.predict_variance(m, np.array([60.0, -60.0]))
    assert vfar == pytest.approx(m.sigma_f2 * m.output_std**2, rel=1e-8)


def test_single_point_variance_formula():
    # N=1: var = sigma_f^2 - k(d)^2/(sigma_f^2 + sigma_n^2), scaled back
    m = gpmod.build_model("3/2", [0.3, 0.1, math.log(0.2)],
                          [[0.4]], [1.0], _unit_bounds(1))
    x = np.array([0.7])
    d = m.lambdas[0] ** 2 * (0.7 - 0.4) ** 2
    k = m.sigma_f2 * gpmod.kernel_value_np("3/2", np.array([d]))[0]
    expected = (m.sigma_f2 - k**2 / (m.sigma_f2 + m.sigma_n2)) * m.output_std**2
    assert gpmod.predict_variance(m, x) == pytest.approx(expected, rel=1e-12)


def test_oracle_equivalence_dense_inverse(rng):
    for _ in range(10):
        m = random_model(rng, N=int(rng.integers(2, 20)))
        Xs = m.X_scaled
        K = m.sigma_f2 * gpmod.kernel_value_np(
            m.nu, ((Xs[:, None, :] - Xs[None, :, :]) ** 2 * m.lambdas**2).sum(-1))
        K += m.sigma_n2 * np.eye(m.N)
        Kinv = np.linalg.inv(K)
        for _ in range(5):
            x = rng.uniform(0.05, 0.95, m.D)
            d = (((x - Xs) ** 2) * m.lambdas**2).sum(-1)
            kvec = m.sigma_f2 * gpmod.kernel_value_np(m.nu, d)
            mean_o = float(kvec @ Kinv @ m.y_scaled) * m.output_std + m.output_mean
            var_o = max(float(m.sigma_f2 - kvec @ Kinv @ kvec), 0.0) * m.output_std**2
            assert gpmod.predict_mean(m, x) == pytest.approx(mean_o, rel=1e-8, abs=1e-10)
            assert gpmod.predict_variance(m, x) == pytest.approx(var_o, rel=1e-8, abs=1e-8)


def test_relax_posterior_validity_fuzz(rng):
    """mean.cv <= mean <= mean.cc (and likewise variance) on 50 boxes x 50
    points for random small models."""
    for _ in range(6):
        m = random_model(rng, D=int(rng.integers(1, 4)), N=int(rng.integers(3, 31)))
        for _ in range(9):
            box = random_box_in(m.input_bounds, rng)
            for _ in range(50):
                x = sample_in_box(box, rng)
                mean_r, var_r = gpmod.relax_posterior(m, box, x)
                mean = gpmod.predict_mean(m, x)
                var = gpmod.predict_variance(m, x)
                assert mean_r.cv - 1e-8 <= mean <= mean_r.cc + 1e-8
                assert var_r.cv - 1e-8 <= var <= var_r.cc + 1e-8
                assert var_r.range.lo >= 0.0


def test_relax_posterior_degenerate_box(rng):
    m = random_model(rng, D=2, N=10)
    x = np.array([0.4, 0.6])
    box = [Interval.point(v) for v in x]
    mean_r, var_r = gpmod.relax_posterior(m, box, x)
    assert mean_r.cv == pytest.approx(gpmod.predict_mean(m, x), abs=1e-9)
    assert mean_r.cc == pytest.approx(gpmod.predict_mean(m, x), abs=1e-9)
    assert var_r.cv == pytest.approx(gpmod.predict_variance(m, x), abs=1e-8)


def test_relax_mean_exact_at_kernel_minimum_corner(rng):
    """All kernel terms are simultaneously exact at a box corner maximizing
    every distance, so the mean relaxation collapses there."""
    m = random_model(rng, D=2, N=8)
    # box in a corner of the domain so x=(1,1) maximizes distance to all data
    scaled = m.X_scaled
    assert np.all(scaled <= 1.0)
    box = [Interval(0.0, 1.0), Interval(0.0, 1.0)]
    # push training inputs into the lower-left quadrant
    X = m.X_scaled * 0.4
    y = m.y_scaled
    m2 = gpmod.build_model(m.nu, m.log_theta, X, y, _unit_bounds(2))
    corner = np.array([1.0, 1.0])
    mean_r, _ = gpmod.relax_posterior(m2, box, corner)
    mean = gpmod.predict_mean(m2, corner)
    assert mean_r.cv == pytest.approx(mean, abs=1e-9)
    assert mean_r.cc == pytest.approx(mean, abs=1e-9)


def test_distance_range_exact_at_corners(rng):
    """The propagated distance range endpoints are attained at box corners."""
    from gpglobal import mccormick as mc
    from gpglobal import envelopes as env

    for _ in range(20):
        D = int(rng.integers(1, 4))
        m = random_model(rng, D=D, N=5)
        box = random_box_in(m.input_bounds, rng)
        inputs = [mc.variable(j, box[j], box[j].mid, D) for j in range(D)]
        xs = gpmod._scaled_input_relaxations(m, inputs)
        lam2 = m.lambdas**2
        i = int(rng.integers(m.N))
        d = None
        for j in range(D):
            t = mc.affine(xs[j], gamma=-float(m.X_scaled[i, j]))
            sq = mc.compose(t, env.sqr_envelope(t.range))
            d = mc.affine(sq, alpha=float(lam2[j])) if d is None else \
                mc.affine(d, sq, 1.0, float(lam2[j]))
        corners = np.stack(np.meshgrid(*[[iv.lo, iv.hi] for iv in box]), -1).reshape(-1, D)
        xt_raw = m.X_scaled[i] * (m.input_bounds[:, 1] - m.input_bounds[:, 0]) + m.input_bounds[:, 0]
        dvals = []
        for corner in corners:
            xs_c = (corner - m.input_bounds[:, 0]) / (m.input_bounds[:, 1] - m.input_bounds[:, 0])
            dvals.append(float(lam2 @ (xs_c - m.X_scaled[i]) ** 2))
        # the maximum is attained at a corner; the minimum at the clamped
        # projection of the training point onto the box
        clamp_raw = np.array([iv.clamp(xr) for iv, xr in zip(box, xt_raw)])
        xs_c = (clamp_raw - m.input_bounds[:, 0]) / (m.input_bounds[:, 1] - m.input_bounds[:, 0])
        lo_attained = float(lam2 @ (xs_c - m.X_scaled[i]) ** 2)
        assert d.range.hi == pytest.approx(max(dvals), rel=1e-12)
        assert d.range.lo == pytest.approx(lo_attained, abs=1e-12)


# ---------------------------------------------------------------------------
# persistence


def test_model_roundtrip_bitwise(rng):
    m = random_model(rng, D=2, N=7)
    text = gpmod.model_to_json(m)
    m2 = gpmod.model_from_json(text)
    for field in ("log_theta", "X_scaled", "y_scaled", "L", "alpha", "input_bounds"):
        assert np.array_equal(getattr(m, field), getattr(m2, field)), field
    assert m.output_mean == m2.output_mean and m.output_std == m2.output_std
    # rebuilding from the document reproduces the factorization bit-identically
    assert gpmod.model_to_json(m2) == text


def test_model_missing_field():
    doc = json.loads(gpmod.model_to_json(random_model(np.random.default_rng(3))))
    doc.pop("nu")
    with pytest.raises(ValueError, match='"nu"'):
        gpmod.model_from_document(doc)


def test_model_rejects_empty():
    doc = json.loads(gpmod.model_to_json(random_model(np.random.default_rng(3))))
    doc["N"] = 0
    doc["X_scaled"] = []
    with pytest.raises(ValueError, match='"N"'):
        gpmod.model_from_document(doc)
