"""Expression DAG over box-bounded variables and the problem builders.

Reduced-space problems expose only the degrees of freedom; full-space
problems add the scaled inputs, the covariance vector, the triangular-solve
intermediates, and the mean/variance slots as variables with explicit
equality constraints.  Relaxation of a problem propagates McCormick objects
through the DAG, with a toggle that swaps the derived special-function
envelopes for standard McCormick compositions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from . import envelopes as env
from . import gp as gpmod
from . import mccormick as mc
from .interval import Interval, sqr_image
from .mccormick import Relaxation

_DOMAIN_SLACK = 1e-8


@dataclass(frozen=True, eq=False)
class Expr:
    op: str
    children: tuple = ()
    index: int = -1
    value: float = 0.0
    nu: str = ""
    f_min: float = 0.0
    kappa: float = 0.0
    model: object = None

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return const(float(x))


def var(i: int) -> Expr:
    return Expr("var", index=i)


def const(v: float) -> Expr:
    return Expr("const", value=float(v))


def add(a: Expr, b: Expr) -> Expr:
    return Expr("add", (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    return Expr("mul", (a, b))


def div(a: Expr, b: Expr) -> Expr:
    return Expr("div", (a, b))


def neg(a: Expr) -> Expr:
    return Expr("neg", (a,))


def sqr(a: Expr) -> Expr:
    return Expr("sqr", (a,))


def sqrt(a: Expr) -> Expr:
    return Expr("sqrt", (a,))


def exp(a: Expr) -> Expr:
    return Expr("exp", (a,))


def kernel(nu: str, a: Expr) -> Expr:
    return Expr("kernel", (a,), nu=nu)


def pdf(a: Expr) -> Expr:
    return Expr("pdf", (a,))


def cdf(a: Expr) -> Expr:
    return Expr("cdf", (a,))


def ei(mu: Expr, sigma: Expr, f_min: float) -> Expr:
    return Expr("ei", (mu, sigma), f_min=float(f_min))


def pi(mu: Expr, sigma: Expr, f_min: float) -> Expr:
    return Expr("pi", (mu, sigma), f_min=float(f_min))


def lcb(mu: Expr, sigma: Expr, kappa: float) -> Expr:
    return Expr("lcb", (mu, sigma), kappa=float(kappa))


def gp_mean(model, inputs) -> Expr:
    return Expr("gp_mean", tuple(inputs), model=model)


def gp_var(model, inputs) -> Expr:
    return Expr("gp_var", tuple(inputs), model=model)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(expr: Expr, x: np.ndarray, memo: dict | None = None) -> float:
    if memo is None:
        memo = {}
    key = id(expr)
    if key in memo:
        return memo[key]
    op = expr.op
    ch = expr.children
    if op == "var":
        out = float(x[expr.index])
    elif op == "const":
        out = expr.value
    elif op == "add":
        out = evaluate(ch[0], x, memo) + evaluate(ch[1], x, memo)
    elif op == "mul":
        out = evaluate(ch[0], x, memo) * evaluate(ch[1], x, memo)
    elif op == "div":
        den = evaluate(ch[1], x, memo)
        if den == 0.0:
            raise ZeroDivisionError("expression division by zero")
        out = evaluate(ch[0], x, memo) / den
    elif op == "neg":
        out = -evaluate(ch[0], x, memo)
    elif op == "sqr":
        v = evaluate(ch[0], x, memo)
        out = v * v
    elif op == "sqrt":
        v = evaluate(ch[0], x, memo)
        if v < -_DOMAIN_SLACK:
            raise ValueError(f"sqrt of negative value {v}")
        out = math.sqrt(max(v, 0.0))
    elif op == "exp":
        out = math.exp(evaluate(ch[0], x, memo))
    elif op == "kernel":
        v = evaluate(ch[0], x, memo)
        if v < -_DOMAIN_SLACK:
            raise ValueError(f"kernel at negative squared distance {v}")
        out = env.kernel_value(expr.nu, max(v, 0.0))
    elif op == "pdf":
        out = env.gauss_pdf(evaluate(ch[0], x, memo))
    elif op == "cdf":
        out = env.gauss_cdf(evaluate(ch[0], x, memo))
    elif op in ("ei", "pi"):
        mu = evaluate(ch[0], x, memo)
        sg = evaluate(ch[1], x, memo)
        if sg < -_DOMAIN_SLACK:
            raise ValueError(f"negative sigma {sg}")
        fn = env.expected_improvement if op == "ei" else env.probability_of_improvement
        out = fn(mu, max(sg, 0.0), expr.f_min)
    elif op == "lcb":
        out = evaluate(ch[0], x, memo) - expr.kappa * evaluate(ch[1], x, memo)
    elif op == "gp_mean":
        pt = np.array([evaluate(c, x, memo) for c in ch])
        out = gpmod.predict_mean(expr.model, pt)
    elif op == "gp_var":
        pt = np.array([evaluate(c, x, memo) for c in ch])
        out = gpmod.predict_variance(expr.model, pt)
    else:
        raise ValueError(f"unknown expression op {op!r}")
    memo[key] = out
    return out


# ---------------------------------------------------------------------------
# relaxation


def _nonneg_rel(r: Relaxation) -> Relaxation:
    rng = Interval(max(r.range.lo, 0.0), max(r.range.hi, 0.0))
    return mc.cut(Relaxation(rng, r.cv, r.cc, r.cv_sub, r.cc_sub))


def _reciprocal(r: Relaxation) -> Relaxation:
    rng = r.range
    if rng.lo > 0.0:
        return mc.compose(r, env.reciprocal_envelope(rng))
    if rng.hi < 0.0:
        flipped = mc.affine(r, alpha=-1.0)
        out = mc.compose(flipped, env.reciprocal_envelope(flipped.range))
        return mc.affine(out, alpha=-1.0)
    raise ZeroDivisionError("relaxation of division by interval containing zero")


def _generic_pdf(r: Relaxation) -> Relaxation:
    q = mc.compose(r, env.sqr_envelope(r.range))
    e = mc.affine(q, alpha=-0.5)
    ex = mc.compose(e, env.exp_envelope(e.range))
    return mc.affine(ex, alpha=1.0 / math.sqrt(2.0 * math.pi))


def _interval_const(rng: Interval, n: int) -> Relaxation:
    z = np.zeros(n)
    return Relaxation(rng, rng.lo, rng.hi, z, z.copy())


def _generic_ei(mu_rel: Relaxation, sigma_rel: Relaxation, f_min: float) -> Relaxation:
    """Algebraic decomposition of EI without the derived envelope; falls back
    to exact interval constants when sigma's range touches zero."""
    s_rng = sigma_rel.range
    rng = env.ei_range(mu_rel.range, Interval(max(s_rng.lo, 0.0), max(s_rng.hi, 0.0)), f_min)
    if s_rng.lo <= 1e-9:
        return _interval_const(rng, mu_rel.n)
    num = mc.affine(mu_rel, alpha=-1.0, gamma=f_min)
    z = mc.product(num, _reciprocal(sigma_rel))
    cdf_const = _interval_const(Interval(env.gauss_cdf(z.range.lo),
                                         env.gauss_cdf(z.range.hi)), mu_rel.n)
    term1 = mc.product(num, cdf_const)
    term2 = mc.product(sigma_rel, _generic_pdf(z))
    out = mc.affine(term1, term2, 1.0, 1.0)
    tight = Interval(max(out.range.lo, rng.lo), min(out.range.hi, rng.hi))
    if tight.lo > tight.hi:
        tight = rng
    return mc.cut(Relaxation(tight, out.cv, out.cc, out.cv_sub, out.cc_sub))


def relax(expr: Expr, boxes, point, n: int, use_envelopes: bool = True,
          memo: dict | None = None) -> Relaxation:
    if memo is None:
        memo = {}
    key = id(expr)
    if key in memo:
        return memo[key]
    op = expr.op
    ch = expr.children

    def rec(e):
        return relax(e, boxes, point, n, use_envelopes, memo)

    if op == "var":
        out = mc.variable(expr.index, boxes[expr.index], float(point[expr.index]), n)
    elif op == "const":
        out = mc.constant(expr.value, n)
    elif op == "add":
        out = mc.affine(rec(ch[0]), rec(ch[1]), 1.0, 1.0)
    elif op == "mul":
        a, b = rec(ch[0]), rec(ch[1])
        if ch[0].op == "const":
            out = mc.affine(b, alpha=ch[0].value)
        elif ch[1].op == "const":
            out = mc.affine(a, alpha=ch[1].value)
        else:
            out = mc.product(a, b)
    elif op == "div":
        out = mc.product(rec(ch[0]), _reciprocal(rec(ch[1])))
    elif op == "neg":
        out = mc.affine(rec(ch[0]), alpha=-1.0)
    elif op == "sqr":
        a = rec(ch[0])
        out = mc.compose(a, env.sqr_envelope(a.range))
    elif op == "sqrt":
        a = rec(ch[0])
        if a.range.lo < -_DOMAIN_SLACK:
            raise ValueError(f"sqrt over a box with negative values: {a.range}")
        a = _nonneg_rel(a)
        out = mc.compose(a, env.sqrt_envelope(a.range))
    elif op == "exp":
        a = rec(ch[0])
        out = mc.compose(a, env.exp_envelope(a.range))
    elif op == "kernel":
        a = _nonneg_rel(rec(ch[0]))
        if use_envelopes:
            out = mc.compose(a, env.kernel_envelope(expr.nu, a.range))
        else:
            out = gpmod._generic_kernel_relax(expr.nu, a)
    elif op == "pdf":
        a = rec(ch[0])
        if use_envelopes:
            out = mc.compose(a, env.pdf_envelope(a.range))
        else:
            out = _generic_pdf(a)
    elif op == "cdf":
        a = rec(ch[0])
        if use_envelopes:
            out = mc.compose(a, env.cdf_envelope(a.range))
        else:
            out = _interval_const(Interval(env.gauss_cdf(a.range.lo),
                                           env.gauss_cdf(a.range.hi)), n)
    elif op == "ei":
        mu_rel, sg_rel = rec(ch[0]), _nonneg_rel(rec(ch[1]))
        if use_envelopes:
            out = env.ei_compose(mu_rel, sg_rel, expr.f_min)
        else:
            out = _generic_ei(mu_rel, sg_rel, expr.f_min)
    elif op == "pi":
        mu_rel, sg_rel = rec(ch[0]), _nonneg_rel(rec(ch[1]))
        if use_envelopes:
            out, _ = env.pi_compose(mu_rel, sg_rel, expr.f_min)
        else:
            out = _interval_const(env.pi_range(mu_rel.range, sg_rel.range, expr.f_min), n)
    elif op == "lcb":
        out = env.lcb_relax(rec(ch[0]), rec(ch[1]), expr.kappa)
    elif op in ("gp_mean", "gp_var"):
        inputs = [rec(c) for c in ch]
        cache_key = ("gp_k", id(expr.model), tuple(id(c) for c in ch))
        if cache_key in memo:
            k_rels = memo[cache_key]
        else:
            k_rels = gpmod.kernel_relaxations(expr.model, inputs, use_envelopes)
            memo[cache_key] = k_rels
        if op == "gp_mean":
            out = gpmod.relax_mean(expr.model, inputs, k_rels=k_rels)
        else:
            out = gpmod.relax_variance(expr.model, inputs, k_rels=k_rels)
    else:
        raise ValueError(f"unknown expression op {op!r}")
    memo[key] = out
    return out


# ---------------------------------------------------------------------------
# problems


@dataclass
class Problem:
    n_vars: int
    box: tuple
    objective: Expr
    inequalities: tuple = ()
    equalities: tuple = ()
    formulation_tag: str = "RS"
    # full-space problems can lift a degrees-of-freedom vector to a feasible
    # full vector by forward evaluation; free_dims indexes those degrees
    free_dims: tuple | None = None
    lift: Callable | None = None
    # dimensions eligible for branching (None: all); variables that enter
    # the DAG only linearly have exact relaxations, so splitting them can
    # never tighten a node
    branch_dims: tuple | None = None

    def eval_point(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n_vars:
            raise ValueError(f"expected {self.n_vars} variables, got {x.shape[0]}")
        memo: dict = {}
        obj = evaluate(self.objective, x, memo)
        ineq = np.array([evaluate(g, x, memo) for g in self.inequalities])
        eq = np.array([evaluate(h, x, memo) for h in self.equalities])
        return obj, ineq, eq

    def relax_box(self, box, point, use_envelopes: bool = True):
        memo: dict = {}
        obj = relax(self.objective, box, point, self.n_vars, use_envelopes, memo)
        ineq = [relax(g, box, point, self.n_vars, use_envelopes, memo)
                for g in self.inequalities]
        eq = [relax(h, box, point, self.n_vars, use_envelopes, memo)
              for h in self.equalities]
        return obj, ineq, eq


def eval_point(p: Problem, x):
    return p.eval_point(x)


def relax_box(p: Problem, box, point, use_envelopes: bool = True):
    return p.relax_box(box, point, use_envelopes)


def _model_box(m) -> tuple:
    return tuple(Interval(float(lo), float(hi)) for lo, hi in m.input_bounds)


def build_rs_mean(m, sense: str = "min") -> Problem:
    """Minimize (or maximize) the posterior mean over the input box."""
    inputs = [var(j) for j in range(m.D)]
    obj = gp_mean(m, inputs)
    if sense == "max":
        obj = neg(obj)
    elif sense != "min":
        raise ValueError(f"unknown sense {sense!r}")
    return Problem(m.D, _model_box(m), obj, formulation_tag="RS")


def _fs_intermediate_bounds(m):
    """One interval-propagation pass for the full-space intermediates,
    intersected with the analytic bounds |v_j| <= sigma_f and k in
    [0, sigma_f^2] (the naive triangular-solve recurrence explodes with N)."""
    sf2 = m.sigma_f2
    sf = math.sqrt(sf2)
    d_boxes = []
    for i in range(m.N):
        d = Interval.point(0.0)
        for j in range(m.D):
            t = Interval(-float(m.X_scaled[i, j]), 1.0 - float(m.X_scaled[i, j]))
            d = d + sqr_image(t).scale(float(m.lambdas[j] ** 2))
        d_boxes.append(d)
    k_boxes = [Interval(sf2 * env.kernel_value(m.nu, d.hi),
                        sf2 * env.kernel_value(m.nu, d.lo)) for d in d_boxes]

    v_boxes = []
    for j in range(m.N):
        acc = k_boxes[j]
        for l in range(j):
            acc = acc - v_boxes[l].scale(float(m.L[j, l]))
        iv = acc.scale(1.0 / float(m.L[j, j]))
        v_boxes.append(Interval(max(iv.lo, -sf), min(iv.hi, sf)))

    mean_iv = Interval.point(0.0)
    for i, kb in enumerate(k_boxes):
        mean_iv = mean_iv + kb.scale(float(m.alpha[i]))
    mean_iv = mean_iv.scale(m.output_std) + Interval.point(m.output_mean)
    var_iv = Interval(-1e-9, sf2 * m.output_std**2 + 1e-9)
    return k_boxes, v_boxes, mean_iv, var_iv


def build_fs_mean(m, sense: str = "min") -> Problem:
    """Full-space equivalent of the mean problem: D+2N+2 equalities over
    2D+2N+2 variables (x, x_scaled, k, v, mean, variance)."""
    D, N = m.D, m.N
    ix = list(range(D))
    ixs = list(range(D, 2 * D))
    ik = list(range(2 * D, 2 * D + N))
    iv_ = list(range(2 * D + N, 2 * D + 2 * N))
    imean = 2 * D + 2 * N
    ivar = imean + 1
    n_vars = 2 * D + 2 * N + 2

    k_boxes, v_boxes, mean_iv, var_iv = _fs_intermediate_bounds(m)
    box = list(_model_box(m))
    box += [Interval(0.0, 1.0)] * D
    box += k_boxes + v_boxes + [mean_iv, var_iv]

    eqs = []
    for j in range(D):
        lo, hi = m.input_bounds[j]
        eqs.append(var(ixs[j]) * (hi - lo) + const(lo) - var(ix[j]))
    lam2 = m.lambdas**2
    sf2 = m.sigma_f2
    for i in range(N):
        d = None
        for j in range(D):
            term = const(float(lam2[j])) * sqr(var(ixs[j]) - const(float(m.X_scaled[i, j])))
            d = term if d is None else d + term
        eqs.append(var(ik[i]) - const(sf2) * kernel(m.nu, d))
    for j in range(N):
        acc = const(float(m.L[j, j])) * var(iv_[j]) - var(ik[j])
        for l in range(j):
            acc = acc + const(float(m.L[j, l])) * var(iv_[l])
        eqs.append(acc)
    mean_acc = None
    for i in range(N):
        term = const(float(m.alpha[i])) * var(ik[i])
        mean_acc = term if mean_acc is None else mean_acc + term
    eqs.append(var(imean) - (const(m.output_std) * mean_acc + const(m.output_mean)))
    var_acc = const(sf2)
    for j in range(N):
        var_acc = var_acc - sqr(var(iv_[j]))
    eqs.append(var(ivar) - const(m.output_std**2) * var_acc)

    obj = var(imean) if sense == "min" else neg(var(imean))
    if sense not in ("min", "max"):
        raise ValueError(f"unknown sense {sense!r}")

    def lift(x_free):
        x_free = np.asarray(x_free, dtype=float)
        xs = (x_free - m.input_bounds[:, 0]) / (m.input_bounds[:, 1] - m.input_bounds[:, 0])
        diff = xs[None, :] - m.X_scaled
        d = np.einsum("ij,j->i", diff * diff, m.lambdas**2)
        k = sf2 * gpmod.kernel_value_np(m.nu, d)
        v = solve_triangular(m.L, k, lower=True)
        mean = m.output_std * float(k @ m.alpha) + m.output_mean
        variance = m.output_std**2 * (sf2 - float(v @ v))
        return np.concatenate([x_free, xs, k, v, [mean, variance]])

    return Problem(n_vars, tuple(box), obj, equalities=tuple(eqs),
                   formulation_tag="FS", free_dims=tuple(ix), lift=lift,
                   branch_dims=tuple(ixs))


def build_chance_constrained(obj_model, con_model, c: float, z: float = 1.96) -> Problem:
    """Maximize the objective-model mean subject to
    mean + z*sqrt(variance) <= c on the constraint model."""
    if obj_model.D != con_model.D or not np.allclose(obj_model.input_bounds,
                                                     con_model.input_bounds):
        raise ValueError("objective and constraint models must share input bounds")
    inputs = [var(j) for j in range(obj_model.D)]
    obj = neg(gp_mean(obj_model, inputs))
    con = gp_mean(con_model, inputs) + const(z) * sqrt(gp_var(con_model, inputs)) - const(c)
    return Problem(obj_model.D, _model_box(obj_model), obj,
                   inequalities=(con,), formulation_tag="RS")


def build_acquisition(m, spec: env.AcquisitionSpec) -> Problem:
    """Minimize -EI, -PI, or +LCB of the posterior over the input box."""
    inputs = [var(j) for j in range(m.D)]
    mu = gp_mean(m, inputs)
    sigma = sqrt(gp_var(m, inputs))
    if spec.kind == "EI":
        obj = neg(ei(mu, sigma, spec.f_min))
    elif spec.kind == "PI":
        obj = neg(pi(mu, sigma, spec.f_min))
    else:
        obj = lcb(mu, sigma, spec.kappa)
    return Problem(m.D, _model_box(m), obj, formulation_tag="RS")
