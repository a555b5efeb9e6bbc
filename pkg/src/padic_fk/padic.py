"""Finite-precision arithmetic on Q_p, the standard additive character and
Haar measures of balls and lattices.

A nonzero element is stored as ``p**valuation * unit`` where ``unit`` is an
integer in ``[0, p**precision)`` prime to ``p``.  ``precision`` counts the
known base-p digits (relative precision).  Zero is exact.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Sequence, Union

import numpy as np

DEFAULT_PRECISION = 32

Number = Union["PadicNumber", int, Fraction]


class PadicError(ValueError):
    """Raised for domain errors (inverting zero, mismatched primes)."""


def valuation_int(n: int, p: int) -> int:
    """p-adic valuation of a nonzero integer."""
    if n == 0:
        raise PadicError("valuation of 0 is infinite")
    v = 0
    while n % p == 0:
        n //= p
        v += 1
    return v


def _check_prime(p: int) -> None:
    if p < 2 or any(p % d == 0 for d in range(2, math.isqrt(p) + 1)):
        raise PadicError(f"{p} is not a prime")


@dataclass(frozen=True, eq=False)
class PadicNumber:
    p: int
    valuation: int | None
    unit: int = 0
    precision: int = DEFAULT_PRECISION

    def __post_init__(self):
        if self.valuation is None:
            if self.unit != 0:
                raise PadicError("zero must have unit 0")
            return
        if self.precision < 1:
            raise PadicError("precision must be >= 1")
        if not 0 < self.unit < self.p ** self.precision or self.unit % self.p == 0:
            raise PadicError(f"unit {self.unit} is not a p-adic unit mod p^{self.precision}")

    # -- construction -------------------------------------------------
    @classmethod
    def zero(cls, p: int) -> "PadicNumber":
        return cls(p, None, 0)

    @classmethod
    def from_rational(cls, value, p: int, precision: int = DEFAULT_PRECISION) -> "PadicNumber":
        """Embed an integer or rational (``Fraction`` or ``"a/b"``) into Q_p."""
        q = Fraction(value)
        if q == 0:
            return cls.zero(p)
        num, den = q.numerator, q.denominator
        v = 0
        while num % p == 0:
            num //= p
            v += 1
        while den % p == 0:
            den //= p
            v -= 1
        mod = p ** precision
        return cls(p, v, num * pow(den, -1, mod) % mod, precision)

    @classmethod
    def from_digits(cls, p: int, valuation: int, digits: Sequence[int]) -> "PadicNumber":
        if not digits or digits[0] == 0:
            raise PadicError("leading digit must be nonzero")
        unit = sum(d * p ** i for i, d in enumerate(digits))
        return cls(p, valuation, unit, len(digits))

    def _coerce(self, other: Number) -> "PadicNumber":
        if isinstance(other, PadicNumber):
            if other.p != self.p:
                raise PadicError(f"mismatched primes {self.p} and {other.p}")
            return other
        return PadicNumber.from_rational(other, self.p, self.precision)

    # -- queries ------------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return self.valuation is None

    @property
    def digits(self) -> tuple[int, ...]:
        """Base-p digits d_0..d_{L-1} with x = p^v * sum d_i p^i."""
        out, u = [], self.unit
        for _ in range(self.precision if not self.is_zero else 0):
            u, d = divmod(u, self.p)
            out.append(d)
        return tuple(out)

    @property
    def absolute_precision(self) -> float:
        return math.inf if self.is_zero else self.valuation + self.precision

    def norm(self) -> Fraction:
        """|x| = p^(-v), |0| = 0."""
        if self.is_zero:
            return Fraction(0)
        return Fraction(self.p) ** (-self.valuation)

    def frac(self) -> Fraction:
        """Fractional part {x}_p in [0, 1), exact."""
        if self.is_zero or self.valuation >= 0:
            return Fraction(0)
        k = -self.valuation
        return Fraction(self.unit % self.p ** k, self.p ** k)

    def to_fraction(self) -> Fraction:
        """The rational with the same (truncated) digit expansion."""
        if self.is_zero:
            return Fraction(0)
        return self.unit * Fraction(self.p) ** self.valuation

    # -- arithmetic ---------------------------------------------------
    def __neg__(self) -> "PadicNumber":
        if self.is_zero:
            return self
        mod = self.p ** self.precision
        return PadicNumber(self.p, self.valuation, (-self.unit) % mod, self.precision)

    def __add__(self, other: Number) -> "PadicNumber":
        y = self._coerce(other)
        if self.is_zero:
            return y
        if y.is_zero:
            return self
        v = min(self.valuation, y.valuation)
        absprec = min(self.absolute_precision, y.absolute_precision)
        rel = absprec - v
        mod = self.p ** rel
        u = (self.unit * self.p ** (self.valuation - v) + y.unit * self.p ** (y.valuation - v)) % mod
        if u == 0:
            return PadicNumber.zero(self.p)
        w = valuation_int(u, self.p)
        prec = min(rel - w, self.precision, y.precision)
        return PadicNumber(self.p, v + w, (u // self.p ** w) % self.p ** prec, prec)

    __radd__ = __add__

    def __sub__(self, other: Number) -> "PadicNumber":
        return self + (-self._coerce(other))

    def __rsub__(self, other: Number) -> "PadicNumber":
        return self._coerce(other) - self

    def __mul__(self, other: Number) -> "PadicNumber":
        y = self._coerce(other)
        if self.is_zero or y.is_zero:
            return PadicNumber.zero(self.p)
        prec = min(self.precision, y.precision)
        return PadicNumber(self.p, self.valuation + y.valuation,
                           self.unit * y.unit % self.p ** prec, prec)

    __rmul__ = __mul__

    def inverse(self) -> "PadicNumber":
        if self.is_zero:
            raise ZeroDivisionError("inverse of zero in Q_p")
        mod = self.p ** self.precision
        return PadicNumber(self.p, -self.valuation, pow(self.unit, -1, mod), self.precision)

    def __truediv__(self, other: Number) -> "PadicNumber":
        return self * self._coerce(other).inverse()

    def __rtruediv__(self, other: Number) -> "PadicNumber":
        return self._coerce(other) * self.inverse()

    def __pow__(self, k: int) -> "PadicNumber":
        if k < 0:
            return self.inverse() ** (-k)
        out = PadicNumber.from_rational(1, self.p, self.precision)
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other) -> bool:
        """Equality at the common precision of both operands."""
        if not isinstance(other, (PadicNumber, int, Fraction)):
            return NotImplemented
        return (self - other).is_zero

    __hash__ = None

    def __repr__(self) -> str:
        if self.is_zero:
            return f"PadicNumber(p={self.p}, 0)"
        return f"PadicNumber(p={self.p}, v={self.valuation}, digits={self.digits[:8]}{'...' if self.precision > 8 else ''})"


def padic_arith(x: PadicNumber, y: PadicNumber | None, op: str) -> PadicNumber:
    """Dispatch ``add``, ``sub``, ``mul`` or ``inv`` (y ignored for inv)."""
    if op == "inv":
        return x.inverse()
    if y is None:
        raise PadicError(f"operation {op!r} needs two operands")
    if x.p != y.p:
        raise PadicError(f"mismatched primes {x.p} and {y.p}")
    if op == "add":
        return x + y
    if op == "sub":
        return x - y
    if op == "mul":
        return x * y
    raise PadicError(f"unknown operation {op!r}")


def padic_norm_frac(x: PadicNumber) -> tuple[Fraction, Fraction]:
    return x.norm(), x.frac()


@dataclass(frozen=True)
class Character:
    """chi(x) = exp(2 pi i {p^delta x}_p); trivial exactly on {|x| <= p^delta}."""

    p: int
    conductor: int = 0

    def phase(self, x: PadicNumber) -> Fraction:
        """Phase of chi(x) as an exact rational in [0, 1)."""
        if x.is_zero:
            return Fraction(0)
        return PadicNumber(x.p, x.valuation + self.conductor, x.unit, x.precision).frac()

    def __call__(self, x: PadicNumber) -> complex:
        return cmath.exp(2j * math.pi * float(self.phase(x)))


def character_eval(chi: Character, x: PadicNumber) -> complex:
    return chi(x)


def character_ball_integral(chi: Character, m: int) -> Fraction:
    """Closed form of the integral of chi over {|x| <= p^m} against d_0 x."""
    if m >= chi.conductor + 1:
        return Fraction(0)
    return Fraction(chi.p) ** m


def character_ball_integral_bruteforce(chi: Character, m: int, extra: int = 0) -> complex:
    """Sum chi over the cosets of the ball {|x| <= p^m} modulo p^K Z_p.

    ``K = max(-delta, -m) + extra``; chi is constant on those cosets.  The
    phases are grouped exactly and summed in 30-digit arithmetic before the
    final rounding to a double.
    """
    import mpmath

    p = chi.p
    K = max(-chi.conductor, -m) + extra
    count = p ** (K + m)
    cell = Fraction(p) ** (-K)
    # x_j = j p^{-m}, so p^delta x_j = j / p^h with h = m - delta
    h = m - chi.conductor
    phases: dict[Fraction, int] = {}
    if h <= 0:
        phases[Fraction(0)] = count
    else:
        mod = p ** h
        residues = np.bincount((np.arange(count, dtype=np.int64) % mod), minlength=mod)
        for r, c in enumerate(residues.tolist()):
            if c:
                phases[Fraction(r, mod)] = c
    with mpmath.workdps(30):
        re = mpmath.fsum(c * mpmath.cospi(2 * mpmath.mpf(ph.numerator) / ph.denominator)
                         for ph, c in phases.items())
        im = mpmath.fsum(c * mpmath.sinpi(2 * mpmath.mpf(ph.numerator) / ph.denominator)
                         for ph, c in phases.items())
        w = mpmath.mpf(cell.numerator) / cell.denominator
        return complex(float(re * w), float(im * w))


@dataclass(frozen=True)
class BallSpec:
    """The ball {x in Q_p^n : max_i p^{gamma_i} |x_i| <= p^m}.

    ``weights`` holds the exponents gamma_i of the norm constants c_i = p^gamma_i
    (all zero for the standard max-norm).
    """

    p: int
    m: int
    n: int = 1
    weights: tuple[int, ...] | None = None

    @property
    def gammas(self) -> tuple[int, ...]:
        return self.weights if self.weights is not None else (0,) * self.n

    def coordinate_exponents(self) -> tuple[int, ...]:
        """Per-coordinate radius exponents: the ball is prod {|x_i| <= p^{m - gamma_i}}."""
        return tuple(self.m - g for g in self.gammas)


def ball_measure(spec: BallSpec, normalization: str = "standard", delta: int = 0) -> Fraction | float:
    """Haar measure of a ball.

    ``standard`` uses d_0 x (measure 1 on Z_p per coordinate).  ``self-dual``
    multiplies by p^{-n delta / 2}; the result is a float when n*delta is odd.
    """
    base = Fraction(spec.p) ** sum(spec.coordinate_exponents())
    if normalization == "standard":
        return base
    if normalization != "self-dual":
        raise ValueError(f"unknown normalization {normalization!r}")
    e = spec.n * delta
    if e % 2 == 0:
        return base * Fraction(spec.p) ** (-(e // 2))
    return float(base) * spec.p ** (-e / 2)


def dual_lattice(L: BallSpec) -> tuple[BallSpec, BallSpec]:
    """The certified sandwich {|xi| <= 1/u} c L* c {|xi| < p/u} for u = p^m.

    Both bounds are balls of the dual norm (weights negated).  Norm values
    are powers of p, so ``|xi| < p/u`` is the same ball as ``|xi| <= 1/u``
    and the sandwich pins L* exactly.
    """
    dual_w = tuple(-g for g in L.gammas) if L.weights is not None else None
    inner = BallSpec(L.p, -L.m, L.n, dual_w)
    outer = BallSpec(L.p, -L.m, L.n, dual_w)
    return inner, outer


@dataclass(frozen=True)
class SandwichReport:
    cosets: int
    in_dual: int
    inner_violations: int
    outer_violations: int
    exact_mismatches: int

    @property
    def ok(self) -> bool:
        return self.inner_violations == 0 and self.outer_violations == 0


def _vp_array(a: np.ndarray, p: int, cap: int) -> np.ndarray:
    """Valuations of an integer array, zeros mapped to ``cap``."""
    v = np.zeros(a.shape, dtype=np.int64)
    a = a.copy()
    live = a != 0
    v[~live] = cap
    while live.any():
        div = live & (a % p == 0)
        if not div.any():
            break
        v[div] += 1
        a[div] //= p
        live = div
    return np.minimum(v, cap)


def verify_dual_sandwich(L: BallSpec, above: int = 2, below: int = 1) -> SandwichReport:
    """Exhaustively test lattice duality on a finite quotient.

    xi ranges over the cosets of {dual norm <= p^{-m+above}} modulo
    {dual norm <= p^{-m-below}}; x ranges over L modulo the sublattice that
    pairs integrally with the whole xi window.  ``xi`` is declared in L* when
    chi(x xi) = 1 for every x coset, and its dual norm is recomputed from its
    digits.  Violations of either inclusion are counted.
    """
    p, n, m = L.p, L.n, L.m
    g = L.gammas
    # coordinatewise: x_i in p^{-(m - g_i)} Z_p, xi_i window p^{(m - g_i) - above} Z_p
    # cells of xi_i: p^{(m - g_i) + below} Z_p, so residues eta_i mod p^{above + below}
    # x_i mod p^{-(m - g_i) + above}: residues zeta_i mod p^{above}
    R = above + below
    eta_axis = np.arange(p ** R, dtype=np.int64)
    zeta_axis = np.arange(p ** above, dtype=np.int64)
    etas = np.array(list(product(eta_axis, repeat=n)), dtype=np.int64).reshape(-1, n)
    zetas = np.array(list(product(zeta_axis, repeat=n)), dtype=np.int64).reshape(-1, n)
    # x_i xi_i = p^{-above} zeta_i eta_i; chi trivial iff the sum is 0 mod p^above
    pair = (zetas @ etas.T) % (p ** above)
    in_dual = np.all(pair == 0, axis=0)
    # dual norm of xi: max_i p^{-g_i} |xi_i| = max_i p^{-g_i} p^{-(m - g_i - above + v(eta_i))}
    #                = p^{-m + above - min_i v(eta_i)}; zero residue -> below the window
    v = _vp_array(etas, p, R).min(axis=1)
    norm_exp = -m + above - v  # for v == R this is -m - below: "at most" that
    inner = norm_exp <= -m
    outer = norm_exp < -m + 1
    return SandwichReport(
        cosets=len(etas),
        in_dual=int(in_dual.sum()),
        inner_violations=int(np.sum(inner & ~in_dual)),
        outer_violations=int(np.sum(in_dual & ~outer)),
        exact_mismatches=int(np.sum(in_dual != inner)),
    )
