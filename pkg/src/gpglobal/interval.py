"""Closed-interval arithmetic: the bound currency for all relaxation propagation.

Natural interval extensions only; no outward rounding.  The solver tolerances
(1e-3 optimality, 1e-6 feasibility) dominate floating-point rounding error, so
plain float endpoint arithmetic is a deliberate soundness/simplicity tradeoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable


@dataclass(frozen=True)
class Interval:
    """Closed real interval [lo, hi] with finite endpoints, lo <= hi.

    Degenerate intervals (lo == hi) are legal everywhere.
    """

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError(f"interval endpoints must be finite: [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise ValueError(f"empty interval: lo={self.lo} > hi={self.hi}")

    @staticmethod
    def point(x: float) -> "Interval":
        return Interval(x, x)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def clamp(self, x: float) -> float:
        return min(max(x, self.lo), self.hi)

    def expand(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def __add__(self, other):
        other = _as_interval(other)
        return Interval(self.lo + other.lo, self.hi + other.hi)

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_interval(other)
        return Interval(self.lo - other.hi, self.hi - other.lo)

    def __rsub__(self, other):
        return _as_interval(other) - self

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other):
        other = _as_interval(other)
        p = (self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi)
        return Interval(min(p), max(p))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_interval(other)
        if other.lo <= 0.0 <= other.hi:
            raise ZeroDivisionError("interval division by zero")
        return self * Interval(1.0 / other.hi, 1.0 / other.lo)

    def __rtruediv__(self, other):
        return _as_interval(other) / self

    def scale(self, a: float) -> "Interval":
        if a >= 0.0:
            return Interval(a * self.lo, a * self.hi)
        return Interval(a * self.hi, a * self.lo)


def _as_interval(x) -> Interval:
    if isinstance(x, Interval):
        return x
    return Interval(float(x), float(x))


def arith(a: Interval, b: Interval, op: str) -> Interval:
    """Dispatch entry for the four exact binary extensions."""
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    raise ValueError(f"unknown interval op {op!r}")


def monotone_image(f: Callable[[float], float], iv: Interval, *, increasing: bool) -> Interval:
    """Exact image interval of a monotone function: [f(lo), f(hi)] or reversed."""
    if increasing:
        return Interval(f(iv.lo), f(iv.hi))
    return Interval(f(iv.hi), f(iv.lo))


def exp_image(iv: Interval) -> Interval:
    return monotone_image(math.exp, iv, increasing=True)


def sqrt_image(iv: Interval) -> Interval:
    if iv.lo < 0.0:
        raise ValueError(f"sqrt domain violation: lo={iv.lo} < 0")
    return monotone_image(math.sqrt, iv, increasing=True)


def sqr_image(iv: Interval) -> Interval:
    """Exact image of x**2 (monotone only piecewise, so handled by sign)."""
    if iv.lo >= 0.0:
        return Interval(iv.lo * iv.lo, iv.hi * iv.hi)
    if iv.hi <= 0.0:
        return Interval(iv.hi * iv.hi, iv.lo * iv.lo)
    return Interval(0.0, max(iv.lo * iv.lo, iv.hi * iv.hi))
