"""Tight relaxations and envelopes of the special functions in this toolkit:
Matern-family covariance kernels, the Gaussian PDF and CDF, and the
acquisition functions (expected improvement, probability of improvement,
lower confidence bound).

Every univariate builder returns a UnivariateEnvelope bound to one box; the
cv/cc callables return (value, slope) pairs so McCormick composition can
chain subgradients through the active branch.  Tangent points of the
piecewise constructions are located with a safeguarded Newton iteration and
a golden-section fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import mccormick as mc
from .interval import Interval
from .mccormick import Relaxation

SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)

KERNEL_ORDERS = ("1/2", "3/2", "5/2", "inf")


class EnvelopeRootFindError(RuntimeError):
    """Raised when neither Newton nor golden-section locates a tangency root."""


# ---------------------------------------------------------------------------
# scalar special functions


def gauss_pdf(x: float) -> float:
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


def gauss_pdf_prime(x: float) -> float:
    return -x * gauss_pdf(x)


def gauss_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / SQRT2))


def _erf_prime(x: float) -> float:
    return _TWO_OVER_SQRT_PI * math.exp(-x * x)


def kernel_value(nu: str, d: float) -> float:
    """Covariance as a function of the weighted squared distance d >= 0."""
    if d < 0.0:
        raise ValueError(f"negative squared distance: {d}")
    if nu == "inf":
        return math.exp(-0.5 * d)
    s = math.sqrt(d)
    if nu == "1/2":
        return math.exp(-s)
    if nu == "3/2":
        t = math.sqrt(3.0) * s
        return (1.0 + t) * math.exp(-t)
    if nu == "5/2":
        t = math.sqrt(5.0) * s
        return (1.0 + t + (5.0 / 3.0) * d) * math.exp(-t)
    raise ValueError(f"unknown kernel order {nu!r}")


def kernel_derivative(nu: str, d: float) -> float:
    """dk/dd.  Finite at d=0 for nu in {3/2, 5/2, inf}; unbounded for 1/2."""
    if nu == "inf":
        return -0.5 * math.exp(-0.5 * d)
    if nu == "3/2":
        return -1.5 * math.exp(-math.sqrt(3.0 * d))
    if nu == "5/2":
        t = math.sqrt(5.0 * d)
        return -(5.0 / 6.0) * (1.0 + t) * math.exp(-t)
    if nu == "1/2":
        s = math.sqrt(d)
        if s == 0.0:
            return -math.inf
        return -math.exp(-s) / (2.0 * s)
    raise ValueError(f"unknown kernel order {nu!r}")


# ---------------------------------------------------------------------------
# envelope container and generic pieces


@dataclass
class UnivariateEnvelope:
    """Convex/concave envelope pair of a univariate function on one box."""

    fn: Callable[[float], float]
    cv: Callable[[float], tuple]
    cc: Callable[[float], tuple]
    range: Interval
    cv_argmin: float
    cc_argmax: float
    domain: Interval


def secant(f_at_lo: float, f_at_hi: float, box: Interval, x: float) -> float:
    """Affine interpolation between the box endpoint values."""
    if box.width <= 0.0:
        return f_at_lo
    s = (f_at_hi - f_at_lo) / box.width
    return f_at_lo + s * (x - box.lo)


def _chord(x0: float, y0: float, x1: float, y1: float):
    """(value, slope) callable of the chord through two points."""
    if x1 - x0 <= 0.0:
        return lambda x: (y0, 0.0)
    s = (y1 - y0) / (x1 - x0)
    return lambda x: (y0 + s * (x - x0), s)


def _pw2(t: float, left, right):
    return lambda x: left(x) if x <= t else right(x)


def _pw3(t1: float, t2: float, left, middle, right):
    def ev(x):
        if x <= t1:
            return left(x)
        if x >= t2:
            return right(x)
        return middle(x)
    return ev


def newton_1d(g, bracket: Interval, start: float) -> float:
    """Root of g (returning (value, derivative)) inside bracket.

    Newton, 100 iterations, |g| tolerance 1e-9; golden-section search on |g|
    as the backup when Newton stalls or escapes the bracket.
    """
    lo, hi = bracket.lo, bracket.hi
    x = min(max(start, lo), hi)
    for _ in range(100):
        v, dv = g(x)
        if abs(v) <= 1e-9:
            return min(max(x, lo), hi)
        if dv == 0.0:
            break
        x_next = x - v / dv
        if not (lo <= x_next <= hi):
            break
        x = x_next

    # golden-section backup
    inv_phi = 0.5 * (math.sqrt(5.0) - 1.0)
    a, b = lo, hi
    ga, gb = g(a)[0], g(b)[0]
    if abs(ga) <= 1e-9:
        return a
    if abs(gb) <= 1e-9:
        return b
    if (ga > 0.0) != (gb > 0.0):
        # sign change: probe at the golden point but always keep the
        # sign-changing subinterval (plateaus would defeat plain |g| search);
        # bracket convergence then pins the root even where g is steep
        for _ in range(300):
            if b - a <= 1e-14 * max(1.0, abs(a), abs(b)):
                return 0.5 * (a + b)
            c = b - inv_phi * (b - a)
            gc = g(c)[0]
            if abs(gc) <= 1e-9:
                return c
            if (gc > 0.0) == (ga > 0.0):
                a, ga = c, gc
            else:
                b, gb = c, gc
        return 0.5 * (a + b)
    else:
        # tangency-type root: plain golden section on |g|
        c = b - inv_phi * (b - a)
        d = a + inv_phi * (b - a)
        fc = abs(g(c)[0])
        fd = abs(g(d)[0])
        for _ in range(300):
            if b - a <= 1e-13 * max(1.0, abs(a), abs(b)):
                break
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - inv_phi * (b - a)
                fc = abs(g(c)[0])
            else:
                a, c, fc = c, d, fd
                d = a + inv_phi * (b - a)
                fd = abs(g(d)[0])
        x = 0.5 * (a + b)
        if abs(g(x)[0]) <= 1e-7:
            return x
    raise EnvelopeRootFindError(
        f"envelope root-find failure on [{bracket.lo}, {bracket.hi}]")


def _tangent_point(f, fp, fpp, anchor: float, bracket: Interval):
    """Point t in bracket where the chord from (anchor, f(anchor)) is tangent.

    Solves f'(t)(t - anchor) = f(t) - f(anchor).  Returns None when the
    equation has no sign change over the bracket (the construction then
    degenerates to a secant or an endpoint tangent, decided by the caller).
    """
    fa = f(anchor)

    def g(t):
        return fp(t) * (t - anchor) - (f(t) - fa), fpp(t) * (t - anchor)

    if bracket.width <= 0.0:
        return None
    glo = g(bracket.lo)[0]
    ghi = g(bracket.hi)[0]
    if glo == 0.0:
        return bracket.lo
    if ghi == 0.0:
        return bracket.hi
    if (glo > 0.0) == (ghi > 0.0):
        return None
    return newton_1d(g, bracket, bracket.mid)


def _tangent_or(f, fp, fpp, anchor: float, bracket: Interval, default: float) -> float:
    t = _tangent_point(f, fp, fpp, anchor, bracket)
    return default if t is None else t


# ---------------------------------------------------------------------------
# elementary envelopes (standard intrinsics used by generic propagation)


def exp_envelope(box: Interval) -> UnivariateEnvelope:
    f_lo, f_hi = math.exp(box.lo), math.exp(box.hi)
    return UnivariateEnvelope(
        fn=math.exp,
        cv=lambda x: (math.exp(x), math.exp(x)),
        cc=_chord(box.lo, f_lo, box.hi, f_hi),
        range=Interval(f_lo, f_hi),
        cv_argmin=box.lo,
        cc_argmax=box.hi,
        domain=box,
    )


def sqr_envelope(box: Interval) -> UnivariateEnvelope:
    from .interval import sqr_image

    f_lo, f_hi = box.lo * box.lo, box.hi * box.hi
    sec = _chord(box.lo, f_lo, box.hi, f_hi)
    return UnivariateEnvelope(
        fn=lambda x: x * x,
        cv=lambda x: (x * x, 2.0 * x),
        cc=sec,
        range=sqr_image(box),
        cv_argmin=box.clamp(0.0),
        cc_argmax=box.hi if box.lo + box.hi >= 0.0 else box.lo,
        domain=box,
    )


def sqrt_envelope(box: Interval) -> UnivariateEnvelope:
    """Concave sqrt: cv is the secant; the cc tangent slope near zero is
    capped using the anchor max(box.lo, 1e-12) (no finite supergradient
    exists at 0, so the tangent at the anchor is used below it)."""
    if box.lo < -1e-12:
        raise ValueError(f"sqrt domain violation: lo={box.lo}")
    lo = max(box.lo, 0.0)
    f_lo, f_hi = math.sqrt(lo), math.sqrt(box.hi)
    anchor = max(lo, 1e-12)
    ra = math.sqrt(anchor)

    def cc(x):
        if x <= anchor:
            return ra + (x - anchor) * 0.5 / ra, 0.5 / ra
        return math.sqrt(x), 0.5 / math.sqrt(x)

    return UnivariateEnvelope(
        fn=math.sqrt,
        cv=_chord(lo, f_lo, box.hi, f_hi),
        cc=cc,
        range=Interval(f_lo, f_hi),
        cv_argmin=lo,
        cc_argmax=box.hi,
        domain=box,
    )


def reciprocal_envelope(box: Interval) -> UnivariateEnvelope:
    if box.lo <= 0.0:
        raise ValueError(f"reciprocal envelope needs a strictly positive box, got lo={box.lo}")
    f_lo, f_hi = 1.0 / box.lo, 1.0 / box.hi
    return UnivariateEnvelope(
        fn=lambda x: 1.0 / x,
        cv=lambda x: (1.0 / x, -1.0 / (x * x)),
        cc=_chord(box.lo, f_lo, box.hi, f_hi),
        range=Interval(f_hi, f_lo),
        cv_argmin=box.hi,
        cc_argmax=box.lo,
        domain=box,
    )


# ---------------------------------------------------------------------------
# covariance kernels


def kernel_envelope(nu: str, d_box: Interval) -> UnivariateEnvelope:
    """All four kernels are convex and decreasing in d: the function is its
    own convex envelope, the secant the concave one, and interval bounds are
    exact by monotonicity."""
    if d_box.lo < 0.0:
        raise ValueError(f"negative squared distance box: lo={d_box.lo}")
    k_lo = kernel_value(nu, d_box.lo)
    k_hi = kernel_value(nu, d_box.hi)
    half_at_zero = nu == "1/2" and d_box.lo <= 1e-12

    def cv(d):
        if half_at_zero and d <= 1e-12:
            # no finite-slope support line at d=0; tightest constant instead
            return k_hi, 0.0
        return kernel_value(nu, d), kernel_derivative(nu, d)

    return UnivariateEnvelope(
        fn=lambda d: kernel_value(nu, d),
        cv=cv,
        cc=_chord(d_box.lo, k_lo, d_box.hi, k_hi),
        range=Interval(k_hi, k_lo),
        cv_argmin=d_box.hi,
        cc_argmax=d_box.lo,
        domain=d_box,
    )


# ---------------------------------------------------------------------------
# Gaussian PDF

def _pdf_pp(x: float) -> float:
    return (x * x - 1.0) * gauss_pdf(x)


def pdf_envelope(box: Interval) -> UnivariateEnvelope:
    """Envelope of the Gaussian density on a compact box.

    The density is convex outside [-1, 1] and concave inside, so each side
    dispatches on the endpoint positions relative to the inflection points;
    tangent points come from the chord-tangency equation.  The symmetric
    straddling box (lo + hi = 0) short-circuits to the secant, which is the
    exact convex envelope there and avoids a degenerate Newton solve.
    """
    L, U = box.lo, box.hi
    f, fp, fpp = gauss_pdf, gauss_pdf_prime, _pdf_pp
    fL, fU = f(L), f(U)
    sec = _chord(L, fL, U, fU)
    f_pair = lambda x: (f(x), fp(x))

    # convex underestimator
    if U <= -1.0 or L >= 1.0:
        cv = f_pair
    elif L >= -1.0 and U <= 1.0:
        cv = sec
    elif L <= -1.0 and U <= 1.0:
        t = _tangent_point(f, fp, fpp, U, Interval(L, -1.0))
        cv = sec if t is None else _pw2(t, f_pair, _chord(t, f(t), U, fU))
    elif L >= -1.0:
        t = _tangent_point(f, fp, fpp, L, Interval(1.0, U))
        cv = sec if t is None else _pw2(t, _chord(L, fL, t, f(t)), f_pair)
    else:
        if abs(L + U) <= 1e-12:
            cv = sec  # symmetric box: horizontal secant is the envelope
        elif L + U > 0.0:
            t = _tangent_point(f, fp, fpp, L, Interval(1.0, U))
            cv = sec if t is None else _pw2(t, _chord(L, fL, t, f(t)), f_pair)
        else:
            t = _tangent_point(f, fp, fpp, U, Interval(L, -1.0))
            cv = sec if t is None else _pw2(t, f_pair, _chord(t, f(t), U, fU))

    # concave overestimator
    if U <= -1.0 or L >= 1.0:
        cc = sec
    elif L >= -1.0 and U <= 1.0:
        cc = f_pair
    elif L <= -1.0 and U <= 1.0:
        t = _tangent_or(f, fp, fpp, L, Interval(-1.0, 0.0), -1.0)
        t = min(t, U)
        cc = sec if t >= U else _pw2(t, _chord(L, fL, t, f(t)), f_pair)
    elif L >= -1.0:
        t = _tangent_or(f, fp, fpp, U, Interval(0.0, 1.0), 1.0)
        t = max(t, L)
        cc = sec if t <= L else _pw2(t, f_pair, _chord(t, f(t), U, fU))
    else:
        t2 = _tangent_or(f, fp, fpp, L, Interval(-1.0, 0.0), -1.0)
        t4 = _tangent_or(f, fp, fpp, U, Interval(0.0, 1.0), 1.0)
        cc = _pw3(t2, t4, _chord(L, fL, t2, f(t2)), f_pair, _chord(t4, f(t4), U, fU))

    peak = box.clamp(0.0)
    return UnivariateEnvelope(
        fn=f,
        cv=cv,
        cc=cc,
        range=Interval(min(fL, fU), f(peak)),
        cv_argmin=L if fL <= fU else U,
        cc_argmax=peak,
        domain=box,
    )


# ---------------------------------------------------------------------------
# error function and Gaussian CDF (single inflection at zero)


def _sigmoid_envelope(f, fp, fpp, box: Interval) -> UnivariateEnvelope:
    """Envelope of an increasing function convex on x<=0 and concave on x>=0."""
    L, U = box.lo, box.hi
    fL, fU = f(L), f(U)
    sec = _chord(L, fL, U, fU)
    f_pair = lambda x: (f(x), fp(x))

    if U <= 0.0:
        cv, cc = f_pair, sec
    elif L >= 0.0:
        cv, cc = sec, f_pair
    else:
        t = _tangent_point(f, fp, fpp, U, Interval(L, 0.0))
        cv = sec if t is None else _pw2(t, f_pair, _chord(t, f(t), U, fU))
        t = _tangent_point(f, fp, fpp, L, Interval(0.0, U))
        cc = sec if t is None else _pw2(t, _chord(L, fL, t, f(t)), f_pair)

    return UnivariateEnvelope(
        fn=f,
        cv=cv,
        cc=cc,
        range=Interval(fL, fU),
        cv_argmin=L,
        cc_argmax=U,
        domain=box,
    )


def erf_envelope(box: Interval) -> UnivariateEnvelope:
    return _sigmoid_envelope(
        math.erf, _erf_prime, lambda x: -2.0 * x * _erf_prime(x), box)


def cdf_envelope(box: Interval) -> UnivariateEnvelope:
    """Envelope of the standard normal CDF; the affine rescaling of the erf
    construction (same inflection-at-zero shape)."""
    return _sigmoid_envelope(gauss_cdf, gauss_pdf, gauss_pdf_prime, box)


# ---------------------------------------------------------------------------
# acquisition functions: values


@dataclass
class AcquisitionSpec:
    """Which acquisition to optimize, with its scalar parameters."""

    kind: str  # "EI" | "PI" | "LCB"
    f_min: float = math.nan
    kappa: float = math.nan

    def __post_init__(self):
        if self.kind not in ("EI", "PI", "LCB"):
            raise ValueError(f"unknown acquisition kind {self.kind!r}")
        if self.kind in ("EI", "PI") and not math.isfinite(self.f_min):
            raise ValueError(f"{self.kind} requires a finite target value")
        if self.kind == "LCB" and not (math.isfinite(self.kappa) and self.kappa >= 0.0):
            raise ValueError("LCB requires kappa >= 0")


def expected_improvement(mu: float, sigma: float, f_min: float) -> float:
    if sigma < 0.0:
        raise ValueError(f"negative sigma: {sigma}")
    if sigma == 0.0:
        return max(f_min - mu, 0.0)
    z = (f_min - mu) / sigma
    return (f_min - mu) * gauss_cdf(z) + sigma * gauss_pdf(z)


def ei_gradient(mu: float, sigma: float, f_min: float):
    """(d/dmu, d/dsigma) of EI; a subgradient at sigma=0 boundary points."""
    if sigma <= 0.0:
        if mu < f_min:
            return -1.0, 0.0
        if mu > f_min:
            return 0.0, 0.0
        return -0.5, gauss_pdf(0.0)
    z = (f_min - mu) / sigma
    return -gauss_cdf(z), gauss_pdf(z)


def probability_of_improvement(mu: float, sigma: float, f_min: float) -> float:
    if sigma < 0.0:
        raise ValueError(f"negative sigma: {sigma}")
    if sigma == 0.0:
        return 0.0 if f_min <= mu else 1.0
    return gauss_cdf((f_min - mu) / sigma)


def _pi_sigma_prime(c: float, s: float) -> float:
    """d/dsigma of Phi(c/sigma) with the zero limit at sigma=0."""
    if s <= 0.0:
        return 0.0
    z = c / s
    return -gauss_pdf(z) * c / (s * s)


def _pi_sigma_pp(c: float, s: float) -> float:
    if s <= 0.0:
        return 0.0
    z = c / s
    return gauss_pdf(z) * z * (2.0 - z * z) / (s * s)


# ---------------------------------------------------------------------------
# EI relaxation (EI is jointly convex and componentwise monotone)


@dataclass
class BivariateRelaxation:
    """Relaxation of an acquisition over a (mu, sigma) box at one point."""

    cv: float
    cc: float
    cv_sub: np.ndarray
    cc_sub: np.ndarray
    range: Interval
    regime: str


def _vertex_planes(mu_box: Interval, s_box: Interval, corners, concave: bool):
    """Two affine interpolants of the four corner values.

    corners = (f00, f10, f01, f11) with the first index along mu.  For a
    componentwise convex function the concave vertex envelope is the min of
    the two planes split along the diagonal whose triangle interpolants
    overestimate the opposite corner (mirrored for the convex envelope of a
    componentwise concave function).  Ties use the lower-left/upper-right
    diagonal.  Each plane is (const, g_mu, g_sigma) anchored at the origin.
    """
    f00, f10, f01, f11 = corners
    wm, ws = mu_box.width, s_box.width
    if wm <= 0.0 and ws <= 0.0:
        return [(f00, 0.0, 0.0)]
    if wm <= 0.0:
        gs = (f01 - f00) / ws
        return [(f00 - gs * s_box.lo, 0.0, gs)]
    if ws <= 0.0:
        gm = (f10 - f00) / wm
        return [(f00 - gm * mu_box.lo, gm, 0.0)]

    delta = f00 + f11 - f01 - f10
    main_diag = (delta >= 0.0) if concave else (delta <= 0.0)
    planes = []
    if main_diag:
        # triangles (00,10,11) and (00,01,11)
        for gm, gs in (((f10 - f00) / wm, (f11 - f10) / ws),
                       ((f11 - f01) / wm, (f01 - f00) / ws)):
            planes.append((f00 - gm * mu_box.lo - gs * s_box.lo, gm, gs))
    else:
        # triangles (00,10,01) and (10,11,01)
        gm, gs = (f10 - f00) / wm, (f01 - f00) / ws
        planes.append((f00 - gm * mu_box.lo - gs * s_box.lo, gm, gs))
        gm, gs = (f11 - f01) / wm, (f11 - f10) / ws
        planes.append((f11 - gm * mu_box.hi - gs * s_box.hi, gm, gs))
    return planes


def _plane_under(plane, mu_rel: Relaxation, sigma_rel: Relaxation):
    """Convex composition of an affine plane (coefficient-sign selection)."""
    const, gm, gs = plane
    val = const
    sub = np.zeros(mu_rel.n)
    for g, r in ((gm, mu_rel), (gs, sigma_rel)):
        if g >= 0.0:
            val += g * r.cv
            sub = sub + g * r.cv_sub
        else:
            val += g * r.cc
            sub = sub + g * r.cc_sub
    return val, sub


def _plane_over(plane, mu_rel: Relaxation, sigma_rel: Relaxation):
    const, gm, gs = plane
    val = const
    sub = np.zeros(mu_rel.n)
    for g, r in ((gm, mu_rel), (gs, sigma_rel)):
        if g >= 0.0:
            val += g * r.cc
            sub = sub + g * r.cc_sub
        else:
            val += g * r.cv
            sub = sub + g * r.cv_sub
    return val, sub


def _compose_cv_piece(inner: Relaxation, piece, argmin: float):
    """Univariate convex composition of one envelope side (mid rule)."""
    lo, hi = inner.cv, inner.cc
    if lo > hi:
        lo, hi = hi, lo
    z, branch = mc.mid(lo, hi, argmin)
    val, slope = piece(z)
    if branch == "lo":
        sub = slope * inner.cv_sub
    elif branch == "hi":
        sub = slope * inner.cc_sub
    else:
        sub = np.zeros(inner.n)
    return val, sub


def _compose_cc_piece(inner: Relaxation, piece, argmax: float):
    lo, hi = inner.cv, inner.cc
    if lo > hi:
        lo, hi = hi, lo
    z, branch = mc.mid(lo, hi, argmax)
    val, slope = piece(z)
    if branch == "lo":
        sub = slope * inner.cv_sub
    elif branch == "hi":
        sub = slope * inner.cc_sub
    else:
        sub = np.zeros(inner.n)
    return val, sub


def _nonneg(box: Interval) -> Interval:
    return Interval(max(box.lo, 0.0), max(box.hi, 0.0))


def ei_range(mu_box: Interval, s_box: Interval, f_min: float) -> Interval:
    """Exact interval bounds: EI decreases in mu and increases in sigma."""
    return Interval(expected_improvement(mu_box.hi, s_box.lo, f_min),
                    expected_improvement(mu_box.lo, s_box.hi, f_min))


def ei_compose(mu_rel: Relaxation, sigma_rel: Relaxation, f_min: float) -> Relaxation:
    """Relaxation of EI(mu(x), sigma(x)) from inner relaxations.

    EI is its own convex envelope; componentwise monotonicity selects the
    inner bound to evaluate at (multivariate composition, monotone special
    case).  The concave side composes the two-plane vertex envelope.
    """
    mu_box = mu_rel.range
    s_box = _nonneg(sigma_rel.range)
    rng = ei_range(mu_box, s_box, f_min)

    zm, bm = mc.mid(*sorted((mu_rel.cv, mu_rel.cc)), mu_box.hi)
    zs, bs = mc.mid(*sorted((sigma_rel.cv, sigma_rel.cc)), s_box.lo)
    zs = max(zs, 0.0)
    gm, gs = ei_gradient(zm, zs, f_min)
    cv = expected_improvement(zm, zs, f_min)
    cv_sub = np.zeros(mu_rel.n)
    if bm == "lo":
        cv_sub = cv_sub + gm * mu_rel.cv_sub
    elif bm == "hi":
        cv_sub = cv_sub + gm * mu_rel.cc_sub
    if bs == "lo":
        cv_sub = cv_sub + gs * sigma_rel.cv_sub
    elif bs == "hi":
        cv_sub = cv_sub + gs * sigma_rel.cc_sub

    corners = (expected_improvement(mu_box.lo, s_box.lo, f_min),
               expected_improvement(mu_box.hi, s_box.lo, f_min),
               expected_improvement(mu_box.lo, s_box.hi, f_min),
               expected_improvement(mu_box.hi, s_box.hi, f_min))
    planes = _vertex_planes(mu_box, s_box, corners, concave=True)
    cc = math.inf
    cc_sub = np.zeros(mu_rel.n)
    for plane in planes:
        v, s = _plane_over(plane, mu_rel, sigma_rel)
        if v < cc:
            cc, cc_sub = v, s
    return mc.cut(Relaxation(rng, cv, cc, cv_sub, cc_sub))


def ei_relax(mu_box: Interval, s_box: Interval, point, f_min: float) -> BivariateRelaxation:
    """Point-evaluated EI relaxation over a (mu, sigma) box."""
    mu_hat, s_hat = point
    mu_rel = mc.variable(0, mu_box, mu_hat, 2)
    s_rel = mc.variable(1, s_box, s_hat, 2)
    out = ei_compose(mu_rel, s_rel, f_min)
    return BivariateRelaxation(out.cv, out.cc, out.cv_sub, out.cc_sub,
                               out.range, "componentwise")


# ---------------------------------------------------------------------------
# PI relaxation


def pi_range(mu_box: Interval, s_box: Interval, f_min: float) -> Interval:
    """Exact bounds from monotonicity: decreasing in mu; in sigma decreasing
    for mu < f_min and increasing for mu >= f_min (closure at sigma=0)."""
    if mu_box.lo >= f_min:
        hi = probability_of_improvement(mu_box.lo, s_box.hi, f_min)
    else:
        hi = 1.0 if s_box.lo == 0.0 else probability_of_improvement(mu_box.lo, s_box.lo, f_min)
    if mu_box.hi >= f_min:
        lo = probability_of_improvement(mu_box.hi, s_box.lo, f_min)
    else:
        lo = probability_of_improvement(mu_box.hi, s_box.hi, f_min)
    return Interval(lo, hi)


def _pi_sigma_facet(mu_fixed: float, s_box: Interval, f_min: float) -> UnivariateEnvelope:
    """Envelope of sigma -> PI(mu_fixed, sigma); one inflection at |c|/sqrt(2)."""
    c = f_min - mu_fixed
    f = lambda s: probability_of_improvement(mu_fixed, s, f_min)
    fp = lambda s: _pi_sigma_prime(c, s)
    fpp = lambda s: _pi_sigma_pp(c, s)
    lo, hi = s_box.lo, s_box.hi
    f_lo, f_hi = f(lo), f(hi)
    sec = _chord(lo, f_lo, hi, f_hi)
    f_pair = lambda s: (f(s), fp(s))

    if c == 0.0:
        # constant 0.5 for sigma > 0 with the closed 0 value at sigma = 0
        if lo > 0.0 or hi <= 0.0:
            val = f_lo
            const = lambda s: (val, 0.0)
            return UnivariateEnvelope(f, const, const, Interval(val, val),
                                      lo, hi, s_box)
        return UnivariateEnvelope(
            fn=f,
            cv=_chord(0.0, 0.0, hi, 0.5),
            cc=lambda s: (0.5, 0.0),
            range=Interval(0.0, 0.5),
            cv_argmin=lo,
            cc_argmax=hi,
            domain=s_box,
        )

    s_star = abs(c) / SQRT2
    if c > 0.0:
        # decreasing; concave below the inflection, convex above
        rng = Interval(f_hi, 1.0 if lo == 0.0 else f_lo)
        if lo >= s_star:
            cv, cc = f_pair, sec
        elif hi <= s_star:
            cv, cc = sec, f_pair
        else:
            t = _tangent_point(f, fp, fpp, lo, Interval(s_star, hi))
            cv = sec if t is None else _pw2(t, _chord(lo, f_lo, t, f(t)), f_pair)
            t = _tangent_point(f, fp, fpp, hi, Interval(lo, s_star))
            cc = sec if t is None else _pw2(t, f_pair, _chord(t, f(t), hi, f_hi))
        return UnivariateEnvelope(f, cv, cc, rng, hi, lo, s_box)

    # c < 0: increasing; convex below the inflection, concave above
    rng = Interval(f_lo, f_hi)
    if hi <= s_star:
        cv, cc = f_pair, sec
    elif lo >= s_star:
        cv, cc = sec, f_pair
    else:
        t = _tangent_point(f, fp, fpp, hi, Interval(lo, s_star))
        cv = sec if t is None else _pw2(t, f_pair, _chord(t, f(t), hi, f_hi))
        t = _tangent_point(f, fp, fpp, lo, Interval(s_star, hi))
        cc = sec if t is None else _pw2(t, _chord(lo, f_lo, t, f(t)), f_pair)
    return UnivariateEnvelope(f, cv, cc, rng, lo, hi, s_box)


def _pi_mu_facet_cv(sigma_fixed: float, mu_box: Interval, f_min: float):
    """(piece, argmin) of the convex envelope of mu -> PI(mu, sigma_fixed)
    on a box with mu >= f_min everywhere (facet is convex there)."""
    f = lambda m: probability_of_improvement(m, sigma_fixed, f_min)
    if sigma_fixed <= 0.0:
        return (lambda m: (0.0, 0.0)), mu_box.hi
    fp = lambda m: -gauss_pdf((f_min - m) / sigma_fixed) / sigma_fixed
    return (lambda m: (f(m), fp(m))), mu_box.hi


def _pi_mu_facet_cc_secant(sigma_fixed: float, mu_box: Interval, f_min: float):
    """(piece, argmax) of the concave envelope (secant) of a convex mu-facet."""
    f = lambda m: probability_of_improvement(m, sigma_fixed, f_min)
    return _chord(mu_box.lo, f(mu_box.lo), mu_box.hi, f(mu_box.hi)), mu_box.lo


def _pi_ftilde_env(mu_box: Interval, s_box: Interval, f_min: float):
    """Convex envelope of the monotone underestimator used on straddling
    boxes: PI at the sigma lower bound for mu >= f_min, continued affinely
    through PI(mu_lo, sigma_hi) below f_min.  Returns (fn, cv_piece, argmin,
    lo_value_at_mu_hi, hi_value_at_mu_lo)."""
    sL, sU = s_box.lo, s_box.hi
    p0 = probability_of_improvement(f_min, sL, f_min)
    p_lu = probability_of_improvement(mu_box.lo, sU, f_min)
    slope_aff = (p0 - p_lu) / (f_min - mu_box.lo)

    f_right = lambda m: probability_of_improvement(m, sL, f_min)
    if sL > 0.0:
        fp_right = lambda m: -gauss_pdf((f_min - m) / sL) / sL
        right_slope_at_kink = -gauss_pdf(0.0) / sL
    else:
        fp_right = lambda m: 0.0
        right_slope_at_kink = 0.0

    def ftilde(m):
        if m >= f_min:
            return f_right(m)
        return p0 + slope_aff * (m - f_min)

    left_pair = lambda m: (p0 + slope_aff * (m - f_min), slope_aff)
    right_pair = lambda m: (f_right(m), fp_right(m))

    if slope_aff <= right_slope_at_kink + 1e-15:
        cv = _pw2(f_min, left_pair, right_pair)  # ftilde already convex
    else:
        # concave kink at f_min: chord from the left endpoint tangent to the
        # convex right branch, else the full secant of ftilde
        fpp_right = lambda m: _pdf_mu_pp(m, sL, f_min)
        anchor_val = p_lu

        def g(t):
            val = fp_right(t) * (t - mu_box.lo) - (f_right(t) - anchor_val)
            return val, fpp_right(t) * (t - mu_box.lo)

        bracket = Interval(f_min, mu_box.hi)
        glo, ghi = g(bracket.lo)[0], g(bracket.hi)[0]
        if bracket.width > 0.0 and (glo > 0.0) != (ghi > 0.0):
            t = newton_1d(g, bracket, bracket.mid)
            cv = _pw2(t, _chord(mu_box.lo, anchor_val, t, f_right(t)), right_pair)
        else:
            cv = _chord(mu_box.lo, anchor_val, mu_box.hi, f_right(mu_box.hi))
    return ftilde, cv, mu_box.hi


def _pdf_mu_pp(m: float, s: float, f_min: float) -> float:
    """Second derivative of mu -> PI(mu, s) for s > 0."""
    z = (f_min - m) / s
    return -z * gauss_pdf(z) / (s * s)


def _pi_gtilde_cc(mu_box: Interval, s_box: Interval, f_min: float):
    """Concave mirror of the ftilde construction via reflection about f_min."""
    refl = Interval(2.0 * f_min - mu_box.hi, 2.0 * f_min - mu_box.lo)
    _, cv_piece, _ = _pi_ftilde_env(refl, s_box, f_min)

    def cc(m):
        v, s = cv_piece(2.0 * f_min - m)
        return 1.0 - v, s

    return cc, mu_box.lo


def pi_compose(mu_rel: Relaxation, sigma_rel: Relaxation, f_min: float):
    """Relaxation of PI(mu(x), sigma(x)); returns (Relaxation, regime tag).

    Dispatch over the componentwise curvature regions: plain McCormick
    composition through (f_min - mu)/sigma and the CDF where it is tight
    (the central band |mu - f_min| <= sqrt(2) sigma), two-plane vertex
    envelopes where PI is componentwise convex/concave, facet envelopes
    plus monotonicity on single-sign boxes, and the affine-continued facet
    construction on boxes straddling f_min.
    """
    n = mu_rel.n
    mu_box = mu_rel.range
    s_box = _nonneg(sigma_rel.range)
    rng = pi_range(mu_box, s_box, f_min)

    if s_box.hi <= 0.0:
        # degenerate sigma: PI is a step in mu; enclose both one-sided limits
        z = np.zeros(n)
        if mu_box.hi < f_min:
            return mc.cut(Relaxation(Interval(1.0, 1.0), 1.0, 1.0, z, z.copy())), "general"
        if mu_box.lo >= f_min:
            return mc.cut(Relaxation(Interval(0.0, 0.0), 0.0, 0.0, z, z.copy())), "general"
        return Relaxation(Interval(0.0, 1.0), 0.0, 1.0, z, z.copy()), "general"

    if mu_box.width <= 0.0 and s_box.width <= 0.0:
        v = probability_of_improvement(mu_box.lo, s_box.lo, f_min)
        z = np.zeros(n)
        return Relaxation(rng, v, v, z, z.copy()), "general"

    m_span = max(abs(mu_box.lo - f_min), abs(mu_box.hi - f_min))
    if s_box.lo > 0.0 and m_span <= SQRT2 * s_box.lo:
        # central band: McCormick through the rational inner and the CDF
        num = mc.affine(mu_rel, alpha=-1.0, gamma=f_min)
        rec = mc.compose(sigma_rel, reciprocal_envelope(s_box))
        inner = mc.product(num, rec)
        out = mc.compose(inner, cdf_envelope(inner.range))
        tight = _intersect(out.range, rng)
        return mc.cut(Relaxation(tight, out.cv, out.cc, out.cv_sub, out.cc_sub)), "mccormick-i1i2"

    in_i4 = mu_box.lo >= f_min + SQRT2 * s_box.hi
    in_i3 = mu_box.hi <= f_min - SQRT2 * s_box.hi

    corners = (probability_of_improvement(mu_box.lo, s_box.lo, f_min),
               probability_of_improvement(mu_box.hi, s_box.lo, f_min),
               probability_of_improvement(mu_box.lo, s_box.hi, f_min),
               probability_of_improvement(mu_box.hi, s_box.hi, f_min))

    if in_i4:
        cv, cv_sub = _pi_cv_above(mu_rel, sigma_rel, mu_box, s_box, f_min)
        cc, cc_sub = _pi_min_planes(_vertex_planes(mu_box, s_box, corners, concave=True),
                                    mu_rel, sigma_rel)
        regime = "componentwise"
    elif in_i3:
        cv, cv_sub = _pi_max_planes(_vertex_planes(mu_box, s_box, corners, concave=False),
                                    mu_rel, sigma_rel)
        cc, cc_sub = _pi_cc_below(mu_rel, sigma_rel, mu_box, s_box, f_min)
        regime = "componentwise"
    elif mu_box.lo >= f_min:
        cv, cv_sub = _pi_cv_above(mu_rel, sigma_rel, mu_box, s_box, f_min)
        cc, cc_sub = _pi_cc_above(mu_rel, sigma_rel, mu_box, s_box, f_min)
        regime = "facet-monotone"
    elif mu_box.hi <= f_min:
        cv, cv_sub = _pi_cv_below(mu_rel, sigma_rel, mu_box, s_box, f_min)
        cc, cc_sub = _pi_cc_below(mu_rel, sigma_rel, mu_box, s_box, f_min)
        regime = "facet-monotone"
    else:
        _, ft_cv, ft_argmin = _pi_ftilde_env(mu_box, s_box, f_min)
        sf = _pi_sigma_facet(mu_box.hi, s_box, f_min)
        v1, s1 = _compose_cv_piece(mu_rel, ft_cv, ft_argmin)
        v2, s2 = _compose_cv_piece(sigma_rel, sf.cv, sf.cv_argmin)
        cv, cv_sub = (v1, s1) if v1 >= v2 else (v2, s2)

        gt_cc, gt_argmax = _pi_gtilde_cc(mu_box, s_box, f_min)
        sf_lo = _pi_sigma_facet(mu_box.lo, s_box, f_min)
        w1, t1 = _compose_cc_piece(mu_rel, gt_cc, gt_argmax)
        w2, t2 = _compose_cc_piece(sigma_rel, sf_lo.cc, sf_lo.cc_argmax)
        cc, cc_sub = (w1, t1) if w1 <= w2 else (w2, t2)
        regime = "general"

    return mc.cut(Relaxation(rng, cv, cc, cv_sub, cc_sub)), regime


def _pi_min_planes(planes, mu_rel, sigma_rel):
    best, best_sub = math.inf, None
    for plane in planes:
        v, s = _plane_over(plane, mu_rel, sigma_rel)
        if v < best:
            best, best_sub = v, s
    return best, best_sub


def _pi_max_planes(planes, mu_rel, sigma_rel):
    best, best_sub = -math.inf, None
    for plane in planes:
        v, s = _plane_under(plane, mu_rel, sigma_rel)
        if v > best:
            best, best_sub = v, s
    return best, best_sub


def _pi_cv_above(mu_rel, sigma_rel, mu_box, s_box, f_min):
    """cv on boxes with mu >= f_min: max of the two facet envelopes."""
    mu_piece, mu_argmin = _pi_mu_facet_cv(s_box.lo, mu_box, f_min)
    sf = _pi_sigma_facet(mu_box.hi, s_box, f_min)
    v1, s1 = _compose_cv_piece(mu_rel, mu_piece, mu_argmin)
    v2, s2 = _compose_cv_piece(sigma_rel, sf.cv, sf.cv_argmin)
    return (v1, s1) if v1 >= v2 else (v2, s2)


def _pi_cc_above(mu_rel, sigma_rel, mu_box, s_box, f_min):
    mu_piece, mu_argmax = _pi_mu_facet_cc_secant(s_box.hi, mu_box, f_min)
    sf = _pi_sigma_facet(mu_box.lo, s_box, f_min)
    w1, t1 = _compose_cc_piece(mu_rel, mu_piece, mu_argmax)
    w2, t2 = _compose_cc_piece(sigma_rel, sf.cc, sf.cc_argmax)
    return (w1, t1) if w1 <= w2 else (w2, t2)


def _pi_cv_below(mu_rel, sigma_rel, mu_box, s_box, f_min):
    """cv on boxes with mu <= f_min: secant of the concave mu-facet at the
    sigma upper bound, against the sigma facet at the mu upper bound."""
    f = lambda m: probability_of_improvement(m, s_box.hi, f_min)
    sec = _chord(mu_box.lo, f(mu_box.lo), mu_box.hi, f(mu_box.hi))
    sf = _pi_sigma_facet(mu_box.hi, s_box, f_min)
    v1, s1 = _compose_cv_piece(mu_rel, sec, mu_box.hi)
    v2, s2 = _compose_cv_piece(sigma_rel, sf.cv, sf.cv_argmin)
    return (v1, s1) if v1 >= v2 else (v2, s2)


def _pi_cc_below(mu_rel, sigma_rel, mu_box, s_box, f_min):
    if s_box.lo <= 0.0:
        # PI(., 0) is not an overestimator at the mu = f_min boundary; the
        # trivial bound is the only safe mu-facet for sigma_lo = 0
        mu_piece, mu_argmax = (lambda m: (1.0, 0.0)), mu_box.lo
    else:
        f = lambda m: probability_of_improvement(m, s_box.lo, f_min)
        fp = lambda m: -gauss_pdf((f_min - m) / s_box.lo) / s_box.lo
        mu_piece, mu_argmax = (lambda m: (f(m), fp(m))), mu_box.lo
    sf = _pi_sigma_facet(mu_box.lo, s_box, f_min)
    w1, t1 = _compose_cc_piece(mu_rel, mu_piece, mu_argmax)
    w2, t2 = _compose_cc_piece(sigma_rel, sf.cc, sf.cc_argmax)
    return (w1, t1) if w1 <= w2 else (w2, t2)


def _intersect(a: Interval, b: Interval) -> Interval:
    lo, hi = max(a.lo, b.lo), min(a.hi, b.hi)
    if lo > hi:  # numerical sliver: collapse
        m = 0.5 * (lo + hi)
        return Interval(m, m)
    return Interval(lo, hi)


def pi_relax(mu_box: Interval, s_box: Interval, point, f_min: float) -> BivariateRelaxation:
    """Point-evaluated PI relaxation over a (mu, sigma) box."""
    mu_hat, s_hat = point
    mu_rel = mc.variable(0, mu_box, mu_hat, 2)
    s_rel = mc.variable(1, s_box, s_hat, 2)
    out, regime = pi_compose(mu_rel, s_rel, f_min)
    return BivariateRelaxation(out.cv, out.cc, out.cv_sub, out.cc_sub,
                               out.range, regime)


def lcb_relax(mu_rel: Relaxation, sigma_rel: Relaxation, kappa: float) -> Relaxation:
    """mu - kappa*sigma is linear, so the McCormick relaxation is exact."""
    return mc.affine(mu_rel, sigma_rel, 1.0, -kappa, 0.0)
