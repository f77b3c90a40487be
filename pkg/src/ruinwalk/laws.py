"""Parametric increment laws with closed-form transforms and exponential tilts.

Four families are supported: point mass, Gaussian, shifted exponential and
two-point.  Each law knows its moment generating function phi(a) = E e^{a xi},
its transform domain, its raw moments up to order three, and how to tilt
itself in closed form.  Tilting by ``a`` reweights the density by
e^{a xi} / phi(a); all four families are closed under this operation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class TransformDomainError(ValueError):
    """Transform argument outside the law's domain of finiteness."""


@dataclass(frozen=True)
class PointMass:
    value: float

    @property
    def domain(self):
        return (-math.inf, math.inf)

    def mgf(self, a: float) -> float:
        return math.exp(a * self.value)

    def moment(self, k: int) -> float:
        return self.value ** k

    def tilt(self, a: float) -> "PointMass":
        return self

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.full(n, self.value)

    def lattice_support(self):
        return ((self.value, 1.0),)


@dataclass(frozen=True)
class Gaussian:
    mean: float
    sd: float

    def __post_init__(self):
        if self.sd < 0:
            raise ValueError(f"sd must be >= 0, got {self.sd}")

    @property
    def domain(self):
        return (-math.inf, math.inf)

    def mgf(self, a: float) -> float:
        return math.exp(a * self.mean + 0.5 * a * a * self.sd ** 2)

    def moment(self, k: int) -> float:
        m, s2 = self.mean, self.sd ** 2
        if k == 1:
            return m
        if k == 2:
            return m * m + s2
        if k == 3:
            return m ** 3 + 3 * m * s2
        raise ValueError(f"moment order {k} not supported")

    def tilt(self, a: float) -> "Gaussian":
        return Gaussian(self.mean + a * self.sd ** 2, self.sd)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(self.mean, self.sd, size=n)

    def lattice_support(self):
        return None


@dataclass(frozen=True)
class ShiftedExponential:
    """xi = shift + E where E ~ Exp(rate)."""

    rate: float
    shift: float = 0.0

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError(f"rate must be > 0, got {self.rate}")

    @property
    def domain(self):
        return (-math.inf, self.rate)

    def mgf(self, a: float) -> float:
        if a >= self.rate:
            raise TransformDomainError(
                f"transform argument {a} outside domain (-inf, {self.rate})")
        return math.exp(a * self.shift) * self.rate / (self.rate - a)

    def moment(self, k: int) -> float:
        # raw moments of shift + Exp(rate)
        r, s = self.rate, self.shift
        e1, e2, e3 = 1 / r, 2 / r ** 2, 6 / r ** 3
        if k == 1:
            return s + e1
        if k == 2:
            return s * s + 2 * s * e1 + e2
        if k == 3:
            return s ** 3 + 3 * s * s * e1 + 3 * s * e2 + e3
        raise ValueError(f"moment order {k} not supported")

    def tilt(self, a: float) -> "ShiftedExponential":
        if a >= self.rate:
            raise TransformDomainError(
                f"tilt {a} outside domain (-inf, {self.rate})")
        return ShiftedExponential(self.rate - a, self.shift)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.shift + rng.standard_exponential(n) / self.rate

    def lattice_support(self):
        return None


@dataclass(frozen=True)
class TwoPoint:
    v1: float
    p1: float
    v2: float

    def __post_init__(self):
        if not 0.0 <= self.p1 <= 1.0:
            raise ValueError(f"p1 must be in [0, 1], got {self.p1}")

    @property
    def domain(self):
        return (-math.inf, math.inf)

    def mgf(self, a: float) -> float:
        return self.p1 * math.exp(a * self.v1) + (1 - self.p1) * math.exp(a * self.v2)

    def moment(self, k: int) -> float:
        return self.p1 * self.v1 ** k + (1 - self.p1) * self.v2 ** k

    def tilt(self, a: float) -> "TwoPoint":
        w1 = self.p1 * math.exp(a * self.v1)
        w2 = (1 - self.p1) * math.exp(a * self.v2)
        return TwoPoint(self.v1, w1 / (w1 + w2), self.v2)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.where(rng.random(n) < self.p1, self.v1, self.v2)

    def lattice_support(self):
        return ((self.v1, self.p1), (self.v2, 1 - self.p1))


Law = PointMass | Gaussian | ShiftedExponential | TwoPoint


def law_mean(law: Law) -> float:
    return law.moment(1)


def law_variance(law: Law) -> float:
    m1 = law.moment(1)
    return law.moment(2) - m1 * m1


def check_domain(law: Law, a: float, where: str = "") -> None:
    lo, hi = law.domain
    if not lo < a < hi:
        suffix = f" ({where})" if where else ""
        raise TransformDomainError(
            f"transform argument {a} outside domain ({lo}, {hi}){suffix}")


def lattice_span(values) -> float:
    """Greatest common lattice span of a set of real values.

    Values are rationalized with denominator up to 10^3; raises if any value
    is not representable on such a lattice.
    """
    fracs = []
    for v in values:
        f = Fraction(v).limit_denominator(10 ** 3)
        if abs(float(f) - v) > 1e-9 * max(1.0, abs(v)):
            raise ValueError(f"value {v} is not lattice-representable")
        fracs.append(f)
    fracs = [f for f in fracs if f != 0]
    if not fracs:
        return 1.0
    g = fracs[0]
    for f in fracs[1:]:
        g = Fraction(math.gcd(g.numerator * f.denominator, f.numerator * g.denominator),
                     g.denominator * f.denominator)
    return float(abs(g))
