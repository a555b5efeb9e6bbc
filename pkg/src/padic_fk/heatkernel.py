"""The heat-kernel densities f_{t,b} and their radial laws.

With Fourier transform phi(xi) = exp(-t |xi|^b) and dual self-dual measures
dx = dxi = p^{-n delta/2} d_0, the density on the shell |x| = p^s is

    f(p^s) = p^{-n delta/2} * sum_{r <= delta - s} p^{rn} (e^{-t p^{rb}} - e^{-t p^{(r+1)b}})

(the indicator of a ball transforms to the indicator of its dual ball, and
phi is a positive combination of ball indicators).  Every series below is
truncated with an explicit majorant so the reported values carry a certified
relative error of at most ``eps``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericRangeError
from .geometry import NormProfile, standard_profile

MAX_TERMS = 200_000


@dataclass(frozen=True)
class HeatKernelParams:
    t: float
    b: float
    profile: NormProfile
    delta: int = 0
    eps: float = 1e-12

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"t must be positive, got {self.t}")
        if not self.b > 0:
            raise ValueError(f"b must be positive, got {self.b}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    @classmethod
    def standard(cls, p: int, t: float, b: float, n: int = 1, delta: int = 0,
                 eps: float = 1e-12) -> "HeatKernelParams":
        return cls(t, b, standard_profile(p, n), delta, eps)

    @property
    def p(self) -> int:
        return self.profile.p

    @property
    def n(self) -> int:
        return self.profile.n

    @property
    def prefactor(self) -> float:
        """p^{-n delta / 2}, the self-dual normalization of dx and dxi."""
        return float(self.p) ** (-self.n * self.delta / 2)

    def at(self, t: float) -> "HeatKernelParams":
        return replace(self, t=t)


def _require_self_dual(params: HeatKernelParams) -> None:
    if not params.profile.self_dual:
        raise ValueError("shell densities need a self-dual (unweighted max-norm) profile; "
                         f"got {params.profile.label}")


def _increments(params: HeatKernelParams, r: np.ndarray) -> np.ndarray:
    """p^{rn} (e^{-t p^{rb}} - e^{-t p^{(r+1)b}}) in the cancellation-free form."""
    p, n, b, t = float(params.p), params.n, params.b, params.t
    log_p = math.log(p)
    with np.errstate(over="ignore"):
        x = t * np.exp(r * b * log_p)  # inf far above the peak, where the term is 0
        gap = x * (p ** b - 1.0)
        return np.exp(r * n * log_p - x) * -np.expm1(-gap)


def _lower_tail(params: HeatKernelParams, r0: int) -> float:
    """Majorant of sum_{r < r0} p^{rn} Delta_r using Delta_r <= t p^{(r+1)b}."""
    p, n, b = float(params.p), params.n, params.b
    return params.t * p ** b * p ** ((r0 - 1) * (n + b)) / (1.0 - p ** (-(n + b)))


def _summation_floor(params: HeatKernelParams) -> int:
    """Start index shared by every partial sum.

    Below it the majorant of the whole lower tail is under the smallest
    subnormal, so the start does not depend on the caller's range.  With one
    start and one term sequence, the running sums are monotone in floating
    point and no tabulated shell can exceed f(0).
    """
    p, n, b, t = float(params.p), params.n, params.b, params.t
    log_p = math.log(p)
    # (r0 - 1)(n + b) log p + log(t p^b / (1 - p^{-(n+b)})) <= log 2^-1075
    target = -1075 * math.log(2) - math.log(t) - b * log_p + math.log1p(-p ** (-(n + b)))
    return math.floor(target / ((n + b) * log_p)) + 1


def partial_sums(params: HeatKernelParams, R_lo: int, R_hi: int) -> np.ndarray:
    """S(R) = sum_{r <= R} p^{rn} Delta_r for R = R_lo..R_hi (relative error <= eps/4)."""
    _require_self_dual(params)
    if R_hi < R_lo:
        raise ValueError("empty range")
    r0 = _summation_floor(params)
    if R_hi - r0 > MAX_TERMS:
        raise NumericRangeError(f"partial sums need {R_hi - r0} terms (t={params.t}, b={params.b})")
    if R_lo < r0:
        raise NumericRangeError(f"shell index {R_lo} lies below the float range (t={params.t}, b={params.b})")
    S = np.cumsum(_increments(params, np.arange(r0, R_hi + 1, dtype=float)))[R_lo - r0:]
    if not np.isfinite(S[-1]):
        raise NumericRangeError(f"shell densities exceed the float range (t={params.t}, b={params.b})")
    if not S[0] > 0 or _lower_tail(params, r0) > params.eps / 4 * S[0]:
        raise NumericRangeError(f"lower tail not certified (t={params.t}, b={params.b})")
    return S


def _peak_from_partial_sums(params: HeatKernelParams) -> float:
    """f(0) = lim S(R), run until the increments underflow to exactly zero
    (they decay superexponentially past the peak), so every S(R) <= f(0)."""
    p, b = float(params.p), params.b
    R = max(int(math.floor(-math.log(params.t, p) / b)), _summation_floor(params)) + 64
    while True:
        S = partial_sums(params, R, R + 63)  # same start, same sequence as every table
        if _increments(params, np.array([float(R + 63)]))[0] == 0.0:
            return params.prefactor * float(S[-1])
        R += 64


def density_value(params: HeatKernelParams, m: int) -> float:
    """f_{t,b}(x) for |x| = p^m."""
    S = partial_sums(params, params.delta - m, params.delta - m)
    return params.prefactor * float(S[0])


def density_table(params: HeatKernelParams, s_lo: int, s_hi: int) -> np.ndarray:
    """f on the shells |x| = p^s, s = s_lo..s_hi (ascending s)."""
    d = params.delta
    S = partial_sums(params, d - s_hi, d - s_lo)
    return params.prefactor * S[::-1].copy()


def density_at_zero(params: HeatKernelParams) -> float:
    """f(0) = int e^{-t|xi|^b} dxi = sum_r (meas(r) - meas(r-1)) e^{-t a_r^b}.

    Self-dual profiles take the limit of the shell partial sums instead, so
    that f(0) bounds every tabulated shell exactly.  For other profiles the lower tail is bounded by the ball measures
    (sum_{r < r0} meas(r) <= m meas(r0 - 1) / (1 - p^-n)); the upper tail
    stops once a term is below eps/8 and the next ratio is below 1/2.
    """
    prof, t, b = params.profile, params.t, params.b
    p = prof.p
    if prof.self_dual:
        return _peak_from_partial_sums(params)

    log_p = math.log(p)

    def term(r: int) -> float:
        arg = float(prof.exponent(r)) * b * log_p  # a_r^b = exp(arg), kept in log space
        if arg > 709:
            return 0.0
        dm = prof.measure(r) - prof.measure(r - 1)
        log_dm = math.log(dm.numerator) - math.log(dm.denominator)
        try:
            return math.exp(log_dm - t * math.exp(arg))
        except OverflowError:
            raise NumericRangeError(f"f(0) exceeds the float range (t={t}, b={b})") from None

    r_peak = int(math.floor(math.log(max(1.0 / t, 1e-300), p) / b * prof.m))
    terms = []
    r = r_peak
    while True:
        terms.append(term(r))
        r += 1
        nxt = term(r)
        if nxt <= params.eps / 8 * sum(terms) and (terms[-1] == 0 or nxt / terms[-1] < 0.5):
            # geometric majorant with ratio <= 1/2 from here on (exponent grows superlinearly)
            break
        if len(terms) > MAX_TERMS:
            raise NumericRangeError("upper tail of f(0) not certified")
    total_hi = sum(terms)
    lower = []
    r = r_peak - 1
    while True:
        lower.append(term(r))
        bound = prof.m * float(prof.measure(r - 1)) / (1.0 - float(p) ** (-prof.n))
        if bound <= params.eps / 4 * (total_hi + sum(lower)):
            break
        r -= 1
        if len(lower) > MAX_TERMS:
            raise NumericRangeError("lower tail of f(0) not certified")
    return params.prefactor * math.fsum(terms + lower)


def ball_probability(params: HeatKernelParams, s: int) -> float:
    """P(|X(t)| <= p^s) from pairing phi with the dual ball indicator:

        p^{(s - delta)n} sum_{r <= delta - s} (p^{rn} - p^{(r-1)n}) e^{-t p^{rb}}.
    """
    _require_self_dual(params)
    p, n, b, t, d = float(params.p), params.n, params.b, params.t, params.delta
    R = d - s
    r_hi = R
    r_lo = R - 8
    while True:
        r = np.arange(r_lo, r_hi + 1, dtype=float)
        terms = (p ** (r * n)) * (1 - p ** (-n)) * np.exp(-t * p ** (r * b))
        total = math.fsum(terms)
        # sum_{r < r_lo} (p^{rn} - p^{(r-1)n}) e^{...} <= p^{(r_lo - 1) n}
        if total > 0 and p ** ((r_lo - 1) * n) <= params.eps / 4 * total:
            break
        r_lo -= 16
        if r_hi - r_lo > MAX_TERMS:
            raise NumericRangeError("ball probability series not certified")
    return p ** ((s - d) * n) * total


@dataclass(frozen=True)
class RadialDensity:
    """Tabulated law of the radius |X(t)| on shells s_lo..s_hi.

    ``pmf[i]`` is P(|X| = p^{s_lo+i}); ``lower_tail`` is P(|X| < p^{s_lo})
    and ``upper_tail`` a certified bound on P(|X| > p^{s_hi}).  The density
    is constant on each shell, so f(a x) = f(x) for units a by construction.
    """

    params: HeatKernelParams
    s_lo: int
    s_hi: int
    density: np.ndarray
    shell_measure: np.ndarray
    pmf: np.ndarray
    cdf: np.ndarray
    lower_tail: float
    upper_tail: float

    @property
    def radii(self) -> np.ndarray:
        return np.arange(self.s_lo, self.s_hi + 1)

    def sampling_cdf(self) -> np.ndarray:
        """CDF with both tails folded into the extreme shells (bias < eps per draw)."""
        w = self.pmf.copy()
        w[0] += self.lower_tail
        c = np.cumsum(w)
        c /= c[-1]
        return c

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "a_r", "pmf", "cdf", "density"])
        p = self.params.p
        for i, s in enumerate(self.radii):
            w.writerow([int(s), f"{float(p) ** int(s):.17g}", f"{self.pmf[i]:.17g}",
                        f"{self.cdf[i]:.17g}", f"{self.density[i]:.17g}"])
        return buf.getvalue()


def _pmf_constant(params: HeatKernelParams) -> float:
    """C with pmf(s) <= C p^{-sb} for every shell."""
    p, n, b, d = float(params.p), params.n, params.b, params.delta
    return (p ** (-n * d) * params.t * p ** b * p ** (d * (n + b))
            / (1.0 - p ** (-(n + b))))


def radial_window(params: HeatKernelParams, tail: float) -> tuple[int, int]:
    """Shell window outside which each tail carries mass below ``tail``."""
    p, n, b = float(params.p), params.n, params.b
    f0 = density_at_zero(params)
    lo_ball = math.floor(math.log(tail / (f0 * params.prefactor), p) / n)
    s_lo = lo_ball + 1
    C = _pmf_constant(params)
    s_hi = math.ceil(math.log(C / (tail * (1 - p ** (-b))), p) / b) - 1
    s_lo = min(s_lo, s_hi)
    if s_hi - s_lo > MAX_TERMS:
        raise NumericRangeError(f"radial window [{s_lo}, {s_hi}] too wide")
    return s_lo, s_hi


def radial_law(params: HeatKernelParams, window: tuple[int, int] | None = None) -> RadialDensity:
    _require_self_dual(params)
    p, n = float(params.p), params.n
    s_lo, s_hi = window or radial_window(params, params.eps / 2)
    dens = density_table(params, s_lo, s_hi)
    s = np.arange(s_lo, s_hi + 1, dtype=float)
    shell = params.prefactor * p ** (s * n) * (1 - p ** (-n))
    pmf = dens * shell
    lower = ball_probability(params, s_lo - 1)
    cdf = lower + np.cumsum(pmf)
    C = _pmf_constant(params)
    upper = C * p ** (-(s_hi + 1) * params.b) / (1 - p ** (-params.b))
    return RadialDensity(params, s_lo, s_hi, dens, shell, pmf, cdf, lower, upper)


def moment(params: HeatKernelParams, k: float) -> float:
    """E|X(t)|^k for 0 <= k < b, with relative truncation error <= eps."""
    if not 0 <= k < params.b:
        raise ValueError(f"moment order k={k} must satisfy 0 <= k < b={params.b}; "
                         "the integral diverges otherwise")
    p, b = float(params.p), params.b
    s_lo, s_hi = radial_window(params, params.eps / 4)
    C = _pmf_constant(params)
    # tail sum_{s > S} p^{sk} C p^{-sb}; first estimate the moment from the body
    body = radial_law(params, (s_lo, s_hi))
    est = float(np.sum(p ** (body.radii * k) * body.pmf))
    gap = b - k
    S = math.ceil(math.log(C / (params.eps / 4 * est * (1 - p ** (-gap))), p) / gap)
    if S > s_hi:
        if S - s_lo > MAX_TERMS:
            raise NumericRangeError(f"moment k={k} needs {S - s_lo} shells")
        body = radial_law(params, (s_lo, S))
    terms = p ** (body.radii * k) * body.pmf
    return math.fsum(terms) + body.lower_tail * p ** ((body.s_lo - 1) * k)


def peak_constant(params: HeatKernelParams) -> float:
    """t^{n/b} f(0); log-periodic in t with period p^b."""
    return params.t ** (params.n / params.b) * density_at_zero(params)


@dataclass(frozen=True)
class SemigroupReport:
    fourier: float
    space: float

    @property
    def max_deviation(self) -> float:
        return max(self.fourier, self.space)


def semigroup_check(params1: HeatKernelParams, params2: HeatKernelParams,
                    N: int = 5, M: int = 5) -> SemigroupReport:
    """Deviation of phi_t phi_s from phi_{t+s}, and of f_t * f_s from f_{t+s}
    under the exact coset convolution on p^{-N}Z_p / p^M Z_p."""
    from .finite_model import build_model, free_kernel

    if params1.b != params2.b or params1.profile != params2.profile:
        raise ValueError("semigroup check needs equal b and profile")
    p, b = float(params1.p), params1.b
    xi = p ** np.arange(-40, 41, dtype=float)
    t, s = params1.t, params2.t
    fourier = float(np.max(np.abs(np.exp(-t * xi ** b) * np.exp(-s * xi ** b) - np.exp(-(t + s) * xi ** b))))
    model = build_model(params1.p, N, M)
    kt, ks, kts = (free_kernel(model, b, tt) for tt in (t, s, t + s))
    conv = np.real(np.fft.ifft(np.fft.fft(kt) * np.fft.fft(ks))) * model.cell_measure
    space = float(np.max(np.abs(conv - kts)))
    return SemigroupReport(fourier, space)
