"""Point-evaluated McCormick relaxations with subgradient propagation.

A Relaxation carries, for one scalar expression over a fixed box in n
independent variables: an enclosing interval, convex under- and concave
over-estimator values at the evaluation point, and a sub/supergradient of
each.  Propagation rules: linear combination, bilinear product, and
composition with a univariate envelope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .interval import Interval


@dataclass
class Relaxation:
    range: Interval
    cv: float
    cc: float
    cv_sub: np.ndarray
    cc_sub: np.ndarray

    @property
    def n(self) -> int:
        return self.cv_sub.shape[0]

    def exact_value(self) -> float:
        """Collapsed value when cv == cc (seeds and degenerate propagation)."""
        return self.cv


def variable(i: int, box_i: Interval, point_i: float, n: int) -> Relaxation:
    """Seed relaxation of the i-th independent variable at point_i."""
    if not (0 <= i < n):
        raise ValueError(f"variable index {i} out of range for n={n}")
    if not box_i.contains(point_i):
        raise ValueError(f"point {point_i} outside box [{box_i.lo}, {box_i.hi}]")
    e = np.zeros(n)
    e[i] = 1.0
    return Relaxation(box_i, point_i, point_i, e, e.copy())


def constant(value: float, n: int) -> Relaxation:
    z = np.zeros(n)
    return Relaxation(Interval.point(value), value, value, z, z.copy())


def affine(a: Relaxation, b: Relaxation | None = None,
           alpha: float = 1.0, beta: float = 0.0, gamma: float = 0.0) -> Relaxation:
    """alpha*a + beta*b + gamma.  Negative coefficients swap cv/cc roles."""
    if alpha >= 0.0:
        cv, cc = alpha * a.cv, alpha * a.cc
        cv_sub, cc_sub = alpha * a.cv_sub, alpha * a.cc_sub
    else:
        cv, cc = alpha * a.cc, alpha * a.cv
        cv_sub, cc_sub = alpha * a.cc_sub, alpha * a.cv_sub
    rng = a.range.scale(alpha)
    if b is not None:
        if b.n != a.n:
            raise ValueError("incompatible subgradient dimensions")
        if beta >= 0.0:
            cv, cc = cv + beta * b.cv, cc + beta * b.cc
            cv_sub = cv_sub + beta * b.cv_sub
            cc_sub = cc_sub + beta * b.cc_sub
        else:
            cv, cc = cv + beta * b.cc, cc + beta * b.cv
            cv_sub = cv_sub + beta * b.cc_sub
            cc_sub = cc_sub + beta * b.cv_sub
        rng = rng + b.range.scale(beta)
    return Relaxation(rng + gamma, cv + gamma, cc + gamma, cv_sub, cc_sub)


def _pick_cv(r: Relaxation, coef: float):
    """coef * r underestimated: value and subgradient of the active side."""
    if coef >= 0.0:
        return coef * r.cv, coef * r.cv_sub
    return coef * r.cc, coef * r.cc_sub


def _pick_cc(r: Relaxation, coef: float):
    if coef >= 0.0:
        return coef * r.cc, coef * r.cc_sub
    return coef * r.cv, coef * r.cv_sub


def product(a: Relaxation, b: Relaxation) -> Relaxation:
    """Bilinear McCormick rule.

    cv is the max of the two corner-anchored underestimators, cc the min of
    the two overestimators; subgradients follow the active selection.
    """
    if a.n != b.n:
        raise ValueError("incompatible subgradient dimensions")
    al, au = a.range.lo, a.range.hi
    bl, bu = b.range.lo, b.range.hi

    # underestimators: bl*a + al*b - al*bl  and  bu*a + au*b - au*bu
    v1a, s1a = _pick_cv(a, bl)
    v1b, s1b = _pick_cv(b, al)
    u1, u1_sub = v1a + v1b - al * bl, s1a + s1b
    v2a, s2a = _pick_cv(a, bu)
    v2b, s2b = _pick_cv(b, au)
    u2, u2_sub = v2a + v2b - au * bu, s2a + s2b
    if u1 >= u2:
        cv, cv_sub = u1, u1_sub
    else:
        cv, cv_sub = u2, u2_sub

    # overestimators: bl*a + au*b - au*bl  and  bu*a + al*b - al*bu
    w1a, t1a = _pick_cc(a, bl)
    w1b, t1b = _pick_cc(b, au)
    o1, o1_sub = w1a + w1b - au * bl, t1a + t1b
    w2a, t2a = _pick_cc(a, bu)
    w2b, t2b = _pick_cc(b, al)
    o2, o2_sub = w2a + w2b - al * bu, t2a + t2b
    if o1 <= o2:
        cc, cc_sub = o1, o1_sub
    else:
        cc, cc_sub = o2, o2_sub

    return cut(Relaxation(a.range * b.range, cv, cc, cv_sub, cc_sub))


def mid(lo: float, hi: float, target: float):
    """Median of {lo, hi, target} for lo <= hi, tagged with the active branch."""
    if target <= lo:
        return lo, "lo"
    if target >= hi:
        return hi, "hi"
    return target, "target"


def compose(inner: Relaxation, env) -> Relaxation:
    """Univariate McCormick composition with an envelope built on inner.range.

    cv = env.cv at mid(inner.cv, inner.cc, argmin of env.cv); the subgradient
    chains through whichever inner bound the mid selected (zero if the
    envelope's own extremum is active).  cc mirrors with argmax.
    """
    lo, hi = inner.cv, inner.cc
    if lo > hi:  # numerical crossover; order for the mid rule
        lo, hi = hi, lo

    zcv, branch = mid(lo, hi, env.cv_argmin)
    val_cv, slope_cv = env.cv(zcv)
    if branch == "lo":
        cv_sub = slope_cv * inner.cv_sub
    elif branch == "hi":
        cv_sub = slope_cv * inner.cc_sub
    else:
        cv_sub = np.zeros(inner.n)

    zcc, branch = mid(lo, hi, env.cc_argmax)
    val_cc, slope_cc = env.cc(zcc)
    if branch == "lo":
        cc_sub = slope_cc * inner.cv_sub
    elif branch == "hi":
        cc_sub = slope_cc * inner.cc_sub
    else:
        cc_sub = np.zeros(inner.n)

    return cut(Relaxation(env.range, val_cv, val_cc, cv_sub, cc_sub))


def cut(r: Relaxation) -> Relaxation:
    """Clip relaxation values to the enclosing interval (zero slope if active)."""
    cv, cv_sub = r.cv, r.cv_sub
    cc, cc_sub = r.cc, r.cc_sub
    if cv < r.range.lo:
        cv, cv_sub = r.range.lo, np.zeros(r.n)
    if cc > r.range.hi:
        cc, cc_sub = r.range.hi, np.zeros(r.n)
    return Relaxation(r.range, cv, cc, cv_sub, cc_sub)
