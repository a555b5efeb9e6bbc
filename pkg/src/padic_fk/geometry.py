"""Norm profiles of D-norms and the quaternion division algebra over Q_p.

A :class:`NormProfile` records the radial skeleton of a norm: the ordered
values ``a_r`` and the Haar measures of the balls ``{|v| <= a_r}``.  Every
profile here is homogeneous: shifting the index by ``m`` multiplies the value
by ``p`` and the measure by ``p**n``, so one period determines the whole
(doubly infinite) profile.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .padic import PadicError, PadicNumber, valuation_int


@dataclass(frozen=True)
class NormProfile:
    """Value set ``a_r = p**exponent(r)`` and ball measures ``measure(r)``.

    Parameters
    ----------
    p : int
        Residue field size q (here always a prime).
    n : int
        Dimension of the space over Q_p.
    m : int
        Number of values per factor p (the "ramification" of the value set).
    base_exponents : tuple of Fraction
        ``log_p a_r`` for r = 0..m-1, strictly increasing within [0, 1).
    base_measures : tuple of Fraction
        ``meas{|v| <= a_r}`` for r = 0..m-1.
    self_dual : bool
        True for the unweighted max-norm on Q_p^n, whose balls have balls of
        the same norm as dual lattices.  Only such profiles carry shell
        densities in :mod:`padic_fk.heatkernel`.
    """

    p: int
    n: int
    m: int
    base_exponents: tuple[Fraction, ...]
    base_measures: tuple[Fraction, ...]
    self_dual: bool = False
    window: tuple[int, int] = (-12, 12)
    label: str = ""
    notes: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.base_exponents) != self.m or len(self.base_measures) != self.m:
            raise ValueError("need exactly m base exponents and measures")

    def exponent(self, r: int) -> Fraction:
        k, j = divmod(r, self.m)
        return k + self.base_exponents[j]

    def value(self, r: int) -> float:
        return float(self.p) ** float(self.exponent(r))

    def measure(self, r: int) -> Fraction:
        k, j = divmod(r, self.m)
        return self.base_measures[j] * Fraction(self.p) ** (self.n * k)

    def index_of_exponent(self, e: Fraction) -> int:
        """Index r with exponent(r) == e (raises if e is not a value)."""
        e = Fraction(e)
        k = math.floor(e)
        frac = e - k
        try:
            j = self.base_exponents.index(frac)
        except ValueError:
            raise ValueError(f"p^{e} is not a value of this norm") from None
        return k * self.m + j

    def rows(self, window: tuple[int, int] | None = None) -> list[tuple[int, Fraction, Fraction]]:
        lo, hi = window or self.window
        return [(r, self.exponent(r), self.measure(r)) for r in range(lo, hi + 1)]

    def spacing_ok(self, window: tuple[int, int] | None = None) -> bool:
        """q^{1/m} <= a_{r+1}/a_r <= q on the window, checked on exponents."""
        lo, hi = window or self.window
        return all(Fraction(1, self.m) <= self.exponent(r + 1) - self.exponent(r) <= 1
                   for r in range(lo, hi))

    def volume_constant(self, window: tuple[int, int] | None = None) -> float:
        """Smallest A with a^n / A <= meas{|v| <= a} <= A a^n over the window."""
        lo, hi = window or self.window
        worst = 1.0
        for r in range(lo, hi + 1):
            log_ratio = (math.log(self.measure(r).numerator) - math.log(self.measure(r).denominator)
                         - self.n * float(self.exponent(r)) * math.log(self.p))
            worst = max(worst, math.exp(abs(log_ratio)))
        return worst

    def to_csv(self, window: tuple[int, int] | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "a_r", "log_p_a_r", "measure"])
        for r, e, meas in self.rows(window):
            w.writerow([r, f"{float(self.p) ** float(e):.17g}", str(e),
                        f"{meas.numerator}/{meas.denominator}"])
        return buf.getvalue()


def standard_profile(p: int, n: int = 1, c: Sequence[int | Fraction] | None = None,
                     window: tuple[int, int] = (-12, 12)) -> NormProfile:
    """Profile of |x| = max_i c_i |x_i| on Q_p^n; each c_i must be a power of p."""
    c = tuple(c) if c is not None else (1,) * n
    if len(c) != n:
        raise ValueError(f"need {n} constants, got {len(c)}")
    gammas = []
    for ci in c:
        ci = Fraction(ci)
        if ci <= 0:
            raise ValueError(f"norm constant {ci} must be positive")
        g = _power_of_p(ci, p)
        if g is None:
            raise ValueError(f"norm constant {ci} is not a power of {p}")
        gammas.append(g)
    # {max p^{g_i}|x_i| <= p^r} = prod {|x_i| <= p^{r - g_i}}
    meas0 = Fraction(p) ** (-sum(gammas))
    return NormProfile(p, n, 1, (Fraction(0),), (meas0,), self_dual=all(g == 0 for g in gammas),
                       window=window, label=f"standard(p={p}, n={n}, c={tuple(str(x) for x in c)})")


def _power_of_p(x: Fraction, p: int) -> int | None:
    num, den = x.numerator, x.denominator
    if num == 1 and den == 1:
        return 0
    if den == 1:
        v = valuation_int(num, p)
        return v if p ** v == num else None
    if num == 1:
        v = valuation_int(den, p)
        return -v if p ** v == den else None
    return None


# -- quaternions ---------------------------------------------------------------

def _as_padic(x, p: int, precision: int) -> PadicNumber:
    return x if isinstance(x, PadicNumber) else PadicNumber.from_rational(x, p, precision)


@dataclass(frozen=True, eq=False)
class QuaternionElement:
    """x_0 + x_1 i + x_2 j + x_3 k in (a, b)_{Q_p}: i^2 = a, j^2 = b, ij = -ji = k."""

    coords: tuple[PadicNumber, PadicNumber, PadicNumber, PadicNumber]
    a: PadicNumber
    b: PadicNumber

    @classmethod
    def make(cls, coords: Iterable, a, b, p: int, precision: int = 32) -> "QuaternionElement":
        cs = tuple(_as_padic(x, p, precision) for x in coords)
        if len(cs) != 4:
            raise ValueError("a quaternion has four coordinates")
        return cls(cs, _as_padic(a, p, precision), _as_padic(b, p, precision))

    @property
    def p(self) -> int:
        return self.a.p

    def _check(self, other: "QuaternionElement") -> None:
        if self.p != other.p or not (self.a == other.a and self.b == other.b):
            raise PadicError("quaternions from different algebras")

    def __add__(self, other: "QuaternionElement") -> "QuaternionElement":
        self._check(other)
        return QuaternionElement(tuple(x + y for x, y in zip(self.coords, other.coords)), self.a, self.b)

    def __sub__(self, other: "QuaternionElement") -> "QuaternionElement":
        self._check(other)
        return QuaternionElement(tuple(x - y for x, y in zip(self.coords, other.coords)), self.a, self.b)

    def __mul__(self, other: "QuaternionElement") -> "QuaternionElement":
        return quaternion_mul(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuaternionElement):
            return NotImplemented
        return all(x == y for x, y in zip(self.coords, other.coords))

    __hash__ = None

    def scalar(self, s) -> "QuaternionElement":
        s = _as_padic(s, self.p, self.a.precision)
        return QuaternionElement(tuple(s * x for x in self.coords), self.a, self.b)


def quaternion_mul(x: QuaternionElement, y: QuaternionElement) -> QuaternionElement:
    x._check(y)
    a, b = x.a, x.b
    x0, x1, x2, x3 = x.coords
    y0, y1, y2, y3 = y.coords
    ab = a * b
    z0 = x0 * y0 + a * x1 * y1 + b * x2 * y2 - ab * x3 * y3
    z1 = x0 * y1 + x1 * y0 - b * x2 * y3 + b * x3 * y2
    z2 = x0 * y2 + x2 * y0 + a * x1 * y3 - a * x3 * y1
    z3 = x0 * y3 + x3 * y0 + x1 * y2 - x2 * y1
    return QuaternionElement((z0, z1, z2, z3), a, b)


def reduced_norm_trace(x: QuaternionElement) -> tuple[PadicNumber, PadicNumber]:
    """(det, trace) of the 2x2 matrix representing x."""
    a, b = x.a, x.b
    x0, x1, x2, x3 = x.coords
    det = x0 * x0 - a * x1 * x1 - b * x2 * x2 + a * b * x3 * x3
    return det, x0 + x0


def quaternion_norm(x: QuaternionElement) -> float:
    """The Q_p-norm |det(x)|^{1/2}."""
    det, _ = reduced_norm_trace(x)
    return 0.0 if det.is_zero else float(x.p) ** (-det.valuation / 2)


def legendre(a: int, p: int) -> int:
    r = pow(a % p, (p - 1) // 2, p)
    return -1 if r == p - 1 else r


def smallest_nonresidue(p: int) -> int:
    for a in range(2, p):
        if legendre(a, p) == -1:
            return a
    raise PadicError(f"no quadratic non-residue mod {p}")


def default_quaternion_parameters(p: int) -> tuple[int, int]:
    if p == 2:
        raise PadicError("the quaternion construction here requires odd p")
    return smallest_nonresidue(p), p


def _square_histogram(coef: int, k: int, p: int) -> np.ndarray:
    """Counts of coef * x^2 mod p^k over x mod p^k."""
    mod = p ** k
    x = np.arange(mod, dtype=np.int64)
    vals = (coef % mod) * (x * x % mod) % mod
    return np.bincount(vals, minlength=mod).astype(np.int64)


def _cyclic_convolve(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Exact cyclic convolution of integer histograms."""
    out = np.zeros(len(u), dtype=np.int64)
    for i in np.nonzero(u)[0]:
        out += u[i] * np.roll(w, i)
    return out


def _det_histogram(coefs: Sequence[int], k: int, p: int) -> np.ndarray:
    """Number of residue vectors mod p^k with sum_i coef_i x_i^2 = each value mod p^k."""
    hist = None
    for c in coefs:
        h = _square_histogram(c, k, p)
        hist = h if hist is None else _cyclic_convolve(hist, h)
    return hist


def _primitive_zero_count(coefs: Sequence[int], k: int, p: int) -> int:
    """Residue vectors mod p^k, not all divisible by p, with form = 0 mod p^k."""
    total = int(_det_histogram(coefs, k, p)[0])
    if k <= 2:
        # x = p y: form(x) = p^2 form(y) = 0 mod p^k for every y mod p^{k-1}
        non_primitive = p ** ((k - 1) * len(coefs))
    else:
        # p^2 form(y) = 0 mod p^k  <=>  form(y) = 0 mod p^{k-2}, y mod p^{k-1}
        h = _det_histogram(coefs, k - 2, p)
        non_primitive = int(h[0]) * p ** len(coefs)
    return total - non_primitive


@dataclass(frozen=True)
class DivisionCheck:
    is_division: bool
    witness: tuple[int, int, int, int] | None
    resolution: int
    isotropic_count: int


def division_algebra_check(p: int, a: int | None = None, b: int | None = None,
                           k: int = 4) -> DivisionCheck:
    """Search all residue vectors mod p^k for a primitive zero of the reduced norm.

    For a division algebra no vector with a unit coordinate has
    det = 0 mod p^k once k >= 2.  Otherwise the witness returned is the first
    isotropic residue vector in the order (x_3, x_2, x_1, x_0).
    """
    if p == 2:
        raise PadicError("p = 2 is not supported (characteristic-2 residue field)")
    if a is None or b is None:
        a0, b0 = default_quaternion_parameters(p)
        a = a0 if a is None else a
        b = b0 if b is None else b
    coefs = (1, -a, -b, a * b)
    count = _primitive_zero_count(coefs, k, p)
    if count == 0:
        return DivisionCheck(True, None, k, 0)
    return DivisionCheck(False, _find_witness(a, b, k, p), k, count)


def _find_witness(a: int, b: int, k: int, p: int) -> tuple[int, int, int, int]:
    mod = p ** k
    r = np.arange(mod, dtype=np.int64)
    x0, x1 = np.meshgrid(r, r, indexing="ij")
    n1 = (x0 * x0 - (a % mod) * (x1 * x1 % mod)) % mod
    # best (x1, x0) for every value of x0^2 - a x1^2
    order = np.lexsort((x0.ravel(), x1.ravel()))
    vals = n1.ravel()[order]
    first = {}
    for pos in range(len(vals)):
        v = int(vals[pos])
        if v not in first:
            first[v] = order[pos]
    prim0 = (x0 % p != 0) | (x1 % p != 0)
    for x3 in range(mod):
        for x2 in range(mod):
            target = int((b * (x2 * x2 - a * x3 * x3)) % mod)
            if x2 % p == 0 and x3 % p == 0:
                # need a primitive (x0, x1): scan in order
                hits = np.nonzero((n1.ravel()[order] == target) & prim0.ravel()[order])[0]
                if hits.size:
                    flat = order[hits[0]]
                    return (int(flat // mod), int(flat % mod), x2, x3)
            elif target in first:
                flat = first[target]
                return (int(flat // mod), int(flat % mod), x2, x3)
    raise AssertionError("isotropic count positive but no witness found")


def trace_zero_profile(p: int, a: int | None = None, b: int | None = None, k: int = 4,
                       window: tuple[int, int] = (-12, 12)) -> NormProfile:
    """Profile of |x| = |det x|^{1/2} on the trace-zero quaternions W ~ Q_p^3.

    Ball measures are obtained by counting residue vectors (x_1, x_2, x_3)
    mod p^k by the valuation of det = -a x_1^2 - b x_2^2 + ab x_3^2; Haar
    measure is normalized to give the integral points Z_p^3 measure 1.
    Counted levels 0..k fix the profile; levels beyond are recovered by
    homogeneity (x -> p x multiplies det by p^2 and measure by p^-3) and the
    counted levels are checked against it.
    """
    if a is None or b is None:
        a0, b0 = default_quaternion_parameters(p)
        a = a0 if a is None else a
        b = b0 if b is None else b
    if k < 2:
        raise ValueError(f"resolution p^{k} cannot resolve both parities of det valuation; need k >= 2")
    chk = division_algebra_check(p, a, b, k)
    if not chk.is_division:
        raise PadicError(f"({a}, {b})_Q{p} is split: isotropic vector {chk.witness}")
    coefs = (-a, -b, a * b)
    if _primitive_zero_count(coefs, 2, p) != 0:
        raise ValueError("the closed unit ball is not Z_p^3 for these (a, b); rescale b to valuation 0 or 1")
    counts = counted_det_levels(p, a, b, k)
    total = p ** (3 * k)
    level = [Fraction(c, total) for c in counts]  # meas{v(det) >= s}, s = 0..k
    for s in range(2, k + 1):
        if level[s] != level[s - 2] / p ** 3:
            raise ValueError(f"counted measure at det valuation {s} breaks homogeneity")
    # a_r = p^{r/2} and {|x| <= a_r} = {v(det) >= -r}; r = 0 -> s = 0, r = 1 -> s = -1 = level[1] * p^3
    base_measures = (level[0], level[1] * p ** 3)
    exps = (Fraction(0), Fraction(1, 2))
    if level[0] == level[1] or level[1] == level[2]:
        raise ValueError("some half-integer radius is not attained; profile is not m = 2")
    return NormProfile(p, 3, 2, exps, base_measures, self_dual=False, window=window,
                       label=f"trace_zero(p={p}, a={a}, b={b}, k={k})",
                       notes=("Haar measure on W normalized so that Z_p^3 has measure 1",))


def counted_det_levels(p: int, a: int, b: int, k: int) -> list[int]:
    """#{(x1,x2,x3) mod p^k : v(det) >= s} for s = 0..k."""
    hist = _det_histogram((-a, -b, a * b), k, p)
    mod = p ** k
    out = []
    for s in range(k + 1):
        step = p ** s
        out.append(int(hist[::step].sum()))
    return out


def counted_measure(p: int, a: int, b: int, r: int, resolution: int) -> Fraction:
    """Measure of {|x| <= p^{r/2}} in W from counting at one resolution alone."""
    s = -r
    if not 0 <= s <= resolution:
        raise ValueError(f"radius index {r} not resolved by counting mod p^{resolution}")
    return Fraction(counted_det_levels(p, a, b, resolution)[s], p ** (3 * resolution))
