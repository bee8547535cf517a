import math

import numpy as np
import pytest

from gpglobal import envelopes as env
from gpglobal import gp as gpmod
from gpglobal import problem as prob
from gpglobal.envelopes import AcquisitionSpec
from gpglobal.interval import Interval

from helpers import random_box_in, random_model, sample_in_box


def test_build_rs_mean(rng):
    m = random_model(rng, D=2, N=10)
    p = prob.build_rs_mean(m, "min")
    assert p.n_vars == 2
    assert len(p.equalities) == 0 and len(p.inequalities) == 0
    x = sample_in_box(p.box, rng)
    obj, _, _ = p.eval_point(x)
    assert obj == pytest.approx(gpmod.predict_mean(m, x))
    pmax = prob.build_rs_mean(m, "max")
    omax, _, _ = pmax.eval_point(x)
    assert omax == pytest.approx(-obj)


def test_build_fs_counts_and_consistency(rng):
    m = random_model(rng, D=2, N=10)
    p = prob.build_fs_mean(m, "min")
    assert p.n_vars == 26
    assert len(p.equalities) == 24
    xf = sample_in_box(p.box[:2], rng)
    full = p.lift(xf)
    obj, _, eq = p.eval_point(full)
    assert np.max(np.abs(eq)) <= 1e-8
    assert obj == pytest.approx(gpmod.predict_mean(m, xf))
    # kernel-variable bounds live inside [0, sigma_f^2]
    sf2 = m.sigma_f2
    for iv in p.box[4:14]:
        assert iv.lo >= -1e-12 and iv.hi <= sf2 + 1e-12


def test_chance_constraint_build(rng):
    obj_m = random_model(rng, D=2, N=8)
    con_m = random_model(rng, D=2, N=8)
    p = prob.build_chance_constrained(obj_m, con_m, c=1.0, z=1.96)
    x = sample_in_box(p.box, rng)
    obj, ineq, _ = p.eval_point(x)
    assert obj == pytest.approx(-gpmod.predict_mean(obj_m, x))
    expected = (gpmod.predict_mean(con_m, x)
                + 1.96 * math.sqrt(gpmod.predict_variance(con_m, x)) - 1.0)
    assert ineq[0] == pytest.approx(expected, abs=1e-9)
    # z = 0 degenerates to a mean constraint
    p0 = prob.build_chance_constrained(obj_m, con_m, c=1.0, z=0.0)
    _, ineq0, _ = p0.eval_point(x)
    assert ineq0[0] == pytest.approx(gpmod.predict_mean(con_m, x) - 1.0)
    # constraint at a training point of a noiseless constraint model
    X = rng.uniform(0, 1, (6, 2))
    y = rng.normal(0, 1, 6)
    noiseless = gpmod.build_model("5/2", [0.5, 0.5, 0.0, -60.0], X, y,
                                  np.column_stack([np.zeros(2), np.ones(2)]))
    p2 = prob.build_chance_constrained(noiseless, noiseless, c=0.0, z=1.96)
    _, ineq2, _ = p2.eval_point(X[0])
    assert ineq2[0] == pytest.approx(y[0], abs=1e-4)  # variance term vanishes
    with pytest.raises(ValueError, match="bounds"):
        bad = random_model(rng, D=3, N=5)
        prob.build_chance_constrained(obj_m, bad, c=1.0)


def test_acquisition_builds(rng):
    X = rng.uniform(0, 1, (6, 2))
    y = rng.normal(0, 1, 6)
    m = gpmod.build_model("5/2", [0.5, 0.5, 0.0, -60.0], X, y,
                          np.column_stack([np.zeros(2), np.ones(2)]))
    f_min = float(np.min(y))
    i_best = int(np.argmin(y))
    i_worse = int(np.argmax(y))

    pei = prob.build_acquisition(m, AcquisitionSpec("EI", f_min=f_min))
    obj, _, _ = pei.eval_point(X[i_worse])
    assert obj == pytest.approx(0.0, abs=1e-7)  # -EI at a worse training input

    # PI at the incumbent best: exactly 0 when the variance collapses to an
    # exact zero (the sigma=0 case of the definition); with the tiny positive
    # residual the factorization leaves, the DAG must match the definition
    ppi = prob.build_acquisition(m, AcquisitionSpec("PI", f_min=f_min))
    obj, _, _ = ppi.eval_point(X[i_best])
    mu_b = gpmod.predict_mean(m, X[i_best])
    sg_b = math.sqrt(gpmod.predict_variance(m, X[i_best]))
    assert obj == pytest.approx(-env.probability_of_improvement(mu_b, sg_b, f_min), abs=1e-12)
    if sg_b == 0.0:
        assert obj == 0.0
    assert env.probability_of_improvement(f_min, 0.0, f_min) == 0.0

    plcb = prob.build_acquisition(m, AcquisitionSpec("LCB", kappa=2.0))
    x = sample_in_box(plcb.box, rng)
    obj, _, _ = plcb.eval_point(x)
    expected = (gpmod.predict_mean(m, x)
                - 2.0 * math.sqrt(gpmod.predict_variance(m, x)))
    assert obj == pytest.approx(expected, abs=1e-9)


def test_eval_point_reports_infeasibility_not_error(rng):
    obj_m = random_model(rng, D=2, N=8)
    p = prob.build_chance_constrained(obj_m, obj_m, c=-1e6, z=1.96)
    x = sample_in_box(p.box, rng)
    _, ineq, _ = p.eval_point(x)
    assert ineq[0] > 0.0


def test_dag_eval_matches_reference_interpreter(rng):
    """Random expression DAGs against a straight-line reference evaluation."""
    ops = ("add", "mul", "neg", "sqr", "exp", "pdf", "cdf")
    for _ in range(1000):
        x = rng.uniform(-1.0, 1.0, 2)
        nodes = [prob.var(0), prob.var(1), prob.const(float(rng.normal()))]
        vals = [x[0], x[1], nodes[2].value]
        for _ in range(int(rng.integers(1, 8))):
            op = ops[int(rng.integers(len(ops)))]
            i = int(rng.integers(len(nodes)))
            j = int(rng.integers(len(nodes)))
            if op == "add":
                nodes.append(nodes[i] + nodes[j])
                vals.append(vals[i] + vals[j])
            elif op == "mul":
                nodes.append(nodes[i] * nodes[j])
                vals.append(vals[i] * vals[j])
            elif op == "neg":
                nodes.append(-nodes[i])
                vals.append(-vals[i])
            elif op == "sqr":
                nodes.append(prob.sqr(nodes[i]))
                vals.append(vals[i] ** 2)
            elif op == "exp":
                if abs(vals[i]) > 20:
                    continue
                nodes.append(prob.exp(nodes[i]))
                vals.append(math.exp(vals[i]))
            elif op == "pdf":
                nodes.append(prob.pdf(nodes[i]))
                vals.append(env.gauss_pdf(vals[i]))
            elif op == "cdf":
                nodes.append(prob.cdf(nodes[i]))
                vals.append(env.gauss_cdf(vals[i]))
        got = prob.evaluate(nodes[-1], x)
        assert got == pytest.approx(vals[-1], rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("use_env", [True, False])
def test_relax_box_validity(use_env, rng):
    m = random_model(rng, D=2, N=8)
    p = prob.build_rs_mean(m, "min")
    for _ in range(20):
        box = random_box_in(m.input_bounds, rng)
        ref = sample_in_box(box, rng)
        obj, _, _ = p.relax_box(box, ref, use_envelopes=use_env)
        for _ in range(100):
            x = sample_in_box(box, rng)
            val, _, _ = p.eval_point(x)
            lin = obj.cv + float(obj.cv_sub @ (x - ref))
            assert lin <= val + 1e-8
        val_ref, _, _ = p.eval_point(ref)
        assert obj.cv - 1e-8 <= val_ref <= obj.cc + 1e-8


def test_envelopes_never_looser(rng):
    """Turning the derived envelopes off never tightens the relaxation on
    kernel-heavy objectives (paired comparison at identical points)."""
    for nu in ("3/2", "5/2", "1/2", "inf"):
        m = random_model(rng, D=2, N=10, nu=nu)
        p = prob.build_rs_mean(m, "min")
        for _ in range(25):
            box = random_box_in(m.input_bounds, rng)
            x = sample_in_box(box, rng)
            with_env, _, _ = p.relax_box(box, x, use_envelopes=True)
            without, _, _ = p.relax_box(box, x, use_envelopes=False)
            assert without.cv <= with_env.cv + 1e-9, (nu, box, x)
            assert without.cc >= with_env.cc - 1e-9, (nu, box, x)


def test_relax_degenerate_box_collapses(rng):
    m = random_model(rng, D=2, N=8)
    p = prob.build_rs_mean(m, "min")
    x = sample_in_box(p.box, rng)
    box = [Interval.point(v) for v in x]
    obj, _, _ = p.relax_box(box, x)
    val, _, _ = p.eval_point(x)
    assert obj.cv == pytest.approx(val, abs=1e-9)
    assert obj.cc == pytest.approx(val, abs=1e-9)


def test_fs_relaxation_validity(rng):
    m = random_model(rng, D=2, N=6)
    p = prob.build_fs_mean(m, "min")
    for _ in range(10):
        # evaluate on consistent (lifted) points inside a shrunken x-box
        xf = sample_in_box(p.box[:2], rng)
        full = p.lift(xf)
        box = [Interval(iv.lo, iv.hi) for iv in p.box]
        obj, ineq, eq = p.relax_box(box, np.array([iv.mid for iv in box]))
        val, _, _ = p.eval_point(full)
        # every equality relaxation must admit the feasible point
        for h, hval in zip(eq, [0.0] * len(eq)):
            assert h.range.lo <= 1e-7 and h.range.hi >= -1e-7


def test_acquisition_relaxations_valid(rng):
    X = rng.uniform(0, 1, (7, 2))
    y = rng.normal(0, 1, 7)
    m = gpmod.build_model("5/2", [0.5, 0.5, 0.0, math.log(0.05)], X, y,
                          np.column_stack([np.zeros(2), np.ones(2)]))
    f_min = float(np.min(y))
    for spec in (AcquisitionSpec("EI", f_min=f_min),
                 AcquisitionSpec("PI", f_min=f_min),
                 AcquisitionSpec("LCB", kappa=1.5)):
        p = prob.build_acquisition(m, spec)
        for _ in range(15):
            box = random_box_in(m.input_bounds, rng)
            ref = sample_in_box(box, rng)
            obj, _, _ = p.relax_box(box, ref)
            for _ in range(30):
                x = sample_in_box(box, rng)
                val, _, _ = p.eval_point(x)
                assert obj.cv + float(obj.cv_sub @ (x - ref)) <= val + 1e-7, (spec.kind, box)
            val_ref, _, _ = p.eval_point(ref)
            assert obj.cv - 1e-7 <= val_ref <= obj.cc + 1e-7, spec.kind
