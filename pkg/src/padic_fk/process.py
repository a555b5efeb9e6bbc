"""Sampling the jump process X(t) with independent increments of law f_{t,b}.

Elements of Q_p^n are handled in batches through :class:`PadicArrayCodec`, a
fixed window p^{-K} Z_p / p^{A} Z_p stored as little-endian int64 limbs.
The window is chosen from the radial laws in play: increments never exceed
norm p^K (both tails are folded into the tabulated shells) and, by the
ultrametric inequality, neither does any partial sum.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import stats

from .heatkernel import HeatKernelParams, RadialDensity, moment, radial_law
from .padic import PadicNumber
from .rng import RngSpec, run_chunks

ZERO_RADIUS = -(1 << 40)
PRECISION_GUARD = 16


class PadicArrayCodec:
    """Batched arithmetic on p^{-K} Z_p / p^{A} Z_p.

    An element x is stored as the integer j = p^K x mod p^{K+A}, split into
    limbs of ``e`` base-p digits (p^e <= 2^30).  |x| = p^{K - v_p(j)}; the
    class of 0 means |x| < p^{-A + 1}, reported as ``ZERO_RADIUS``.
    """

    def __init__(self, p: int, top: int, precision: int):
        if top + precision < 1:
            raise ValueError("empty digit window")
        self.p, self.top, self.precision = p, top, precision
        self.digits = top + precision
        e = 1
        while p ** (e + 1) <= 1 << 30:
            e += 1
        self.e = e
        self.base = p ** e
        self.nlimbs = -(-self.digits // e)
        self.top_digits = self.digits - e * (self.nlimbs - 1)
        self.top_mod = p ** self.top_digits
        self.pw = np.array([p ** i for i in range(e + 1)], dtype=np.int64)

    def __repr__(self) -> str:
        return f"PadicArrayCodec(p={self.p}, top={self.top}, precision={self.precision})"

    # -- arithmetic -------------------------------------------------------
    def _normalize(self, s: np.ndarray) -> np.ndarray:
        s = s.copy()
        for l in range(self.nlimbs - 1):
            carry = np.floor_divide(s[..., l], self.base)
            s[..., l] -= carry * self.base
            s[..., l + 1] += carry
        s[..., -1] %= self.top_mod
        return s

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self._normalize(a + b)

    def sub(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self._normalize(a - b)

    def neg(self, a: np.ndarray) -> np.ndarray:
        return self._normalize(-a)

    def valuation(self, a: np.ndarray) -> np.ndarray:
        """v_p(j) per element (``digits`` for the zero class)."""
        nz = a != 0
        first = np.argmax(nz, axis=-1)
        any_nz = nz.any(axis=-1)
        limb = np.take_along_axis(a, first[..., None], axis=-1)[..., 0]
        v = first * self.e
        limb = np.where(any_nz, limb, 1)
        while True:
            div = limb % self.p == 0
            if not div.any():
                break
            v = v + div
            limb = np.where(div, limb // self.p, limb)
        return np.where(any_nz, v, self.digits)

    def radius_exponent(self, a: np.ndarray) -> np.ndarray:
        """log_p of the max-norm over the coordinate axis (-2)."""
        v = self.valuation(a)
        s = np.where(v >= self.digits, ZERO_RADIUS, self.top - v)
        return s.max(axis=-1)

    # -- conversion -------------------------------------------------------
    def encode(self, x: PadicNumber) -> np.ndarray:
        out = np.zeros(self.nlimbs, dtype=np.int64)
        if x.is_zero:
            return out
        shift = self.top + x.valuation
        if shift < 0:
            raise ValueError(f"|x| = p^{-x.valuation} exceeds the window top p^{self.top}")
        j = (x.unit * self.p ** shift) % (self.p ** self.digits)
        for l in range(self.nlimbs):
            j, out[l] = divmod(j, self.base)
        return out

    def encode_vector(self, xs: Sequence[PadicNumber]) -> np.ndarray:
        return np.stack([self.encode(x) for x in xs])

    def _to_int(self, limbs: np.ndarray) -> int:
        return sum(int(l) * self.base ** i for i, l in enumerate(limbs))

    def decode(self, limbs: np.ndarray) -> PadicNumber:
        j = self._to_int(limbs)
        if j == 0:
            return PadicNumber.zero(self.p)
        v = 0
        while j % self.p == 0:
            j //= self.p
            v += 1
        return PadicNumber(self.p, v - self.top, j, self.digits - v)

    def digit_string(self, limbs: np.ndarray) -> str:
        """Base-p digits d_0 d_1 ... of the unit part (d_0 first); "0" for zero."""
        x = self.decode(limbs)
        if x.is_zero:
            return "0"
        return "".join(str(d) if d < 10 else f"[{d}]" for d in x.digits)

    # -- sampling ---------------------------------------------------------
    def _random_limbs(self, rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
        out = rng.integers(0, self.base, size=shape + (self.nlimbs,), dtype=np.int64)
        out[..., -1] %= self.top_mod
        return out

    def _clear_below(self, limbs: np.ndarray, k0: np.ndarray) -> np.ndarray:
        """Zero every digit of position < k0 (k0 broadcast over the limb axis)."""
        li = np.arange(self.nlimbs)
        lo = np.clip(k0[..., None] - li * self.e, 0, self.e)
        return (limbs // self.pw[lo]) * self.pw[lo]

    def sample_shell(self, rng: np.random.Generator, s: np.ndarray, n: int = 1) -> np.ndarray:
        """Uniform samples from {x in Q_p^n : |x| = p^s} (max-norm), one per entry of s."""
        s = np.asarray(s, dtype=np.int64)
        if s.size and (s.max() > self.top or s.min() <= -self.precision):
            raise ValueError("shell outside the codec window")
        k0 = self.top - s
        if n == 1:
            limbs = self._clear_below(self._random_limbs(rng, s.shape), k0)
            l0, i0 = k0 // self.e, k0 % self.e
            cur = np.take_along_axis(limbs, l0[..., None], axis=-1)[..., 0]
            d = (cur // self.pw[i0]) % self.p
            new = rng.integers(1, self.p, size=s.shape, dtype=np.int64) if self.p > 2 else np.ones_like(d)
            np.put_along_axis(limbs, l0[..., None], (cur + (new - d) * self.pw[i0])[..., None], axis=-1)
            return limbs[..., None, :]
        out = np.empty(s.shape + (n, self.nlimbs), dtype=np.int64)
        pending = np.arange(s.size)
        flat_out = out.reshape(-1, n, self.nlimbs)
        flat_k0 = k0.reshape(-1)
        while pending.size:
            kk = np.repeat(flat_k0[pending][:, None], n, axis=1)
            draw = self._clear_below(self._random_limbs(rng, (pending.size, n)), kk)
            ok = (self.valuation(draw) == kk).any(axis=1)
            flat_out[pending[ok]] = draw[ok]
            pending = pending[~ok]
        return out


def make_codec(p: int, laws: Sequence[RadialDensity], points: Sequence[Sequence[PadicNumber]] = ()) -> PadicArrayCodec:
    top = max(law.s_hi for law in laws)
    for pt in points:
        for x in pt:
            if not x.is_zero:
                top = max(top, -x.valuation)
    bottom = min(law.s_lo for law in laws)
    return PadicArrayCodec(p, top, -bottom + PRECISION_GUARD)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    steps: int

    def __post_init__(self):
        if not self.T > 0 or self.steps < 1:
            raise ValueError("need T > 0 and at least one step")

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return self.T * np.arange(self.steps + 1) / self.steps


def as_point(x, p: int, n: int = 1) -> tuple[PadicNumber, ...]:
    """Coerce a rational, PadicNumber or sequence of them into an n-tuple."""
    if isinstance(x, (PadicNumber, int, Fraction, str)):
        x = (x,)
    pt = tuple(v if isinstance(v, PadicNumber) else PadicNumber.from_rational(v, p) for v in x)
    if len(pt) != n:
        raise ValueError(f"point {x} has dimension {len(pt)}, expected {n}")
    return pt


class IncrementSampler:
    """Draws increments X(u + dt) - X(u) by inverse CDF on the radial law."""

    def __init__(self, law: RadialDensity, codec: PadicArrayCodec):
        self.law = law
        self.codec = codec
        self.cdf = law.sampling_cdf()
        self.n = law.params.n

    def radii(self, rng: np.random.Generator, count: int) -> np.ndarray:
        u = rng.random(count)
        idx = np.minimum(np.searchsorted(self.cdf, u, side="right"), len(self.cdf) - 1)
        return self.law.s_lo + idx

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.codec.sample_shell(rng, self.radii(rng, count), self.n)


def sample_increment(params: HeatKernelParams, dt: float, rng: RngSpec) -> tuple[PadicNumber, ...]:
    """One increment over time dt, returned as a point of Q_p^n."""
    law = radial_law(params.at(dt))
    codec = make_codec(params.p, [law])
    draw = IncrementSampler(law, codec).sample(rng.rng(), 1)[0]
    return tuple(codec.decode(c) for c in draw)


def sample_increments(params: HeatKernelParams, dt: float, rng: RngSpec, count: int,
                      threads: int | None = None) -> tuple[PadicArrayCodec, np.ndarray]:
    law = radial_law(params.at(dt))
    codec = make_codec(params.p, [law])
    sampler = IncrementSampler(law, codec)
    parts = run_chunks(lambda c, a, b: sampler.sample(rng.rng(c), b - a), count, threads)
    return codec, np.concatenate(parts)


@dataclass
class PathBatch:
    """Paths sampled at the nodes of a grid, read as right-continuous step functions."""

    start: tuple[PadicNumber, ...]
    grid: TimeGrid
    codec: PadicArrayCodec
    values: np.ndarray  # (paths, steps + 1, n, nlimbs)
    rng: RngSpec
    path_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.path_ids is None:
            self.path_ids = np.arange(len(self.values))

    def __len__(self) -> int:
        return len(self.values)

    def radius_exponents(self) -> np.ndarray:
        return self.codec.radius_exponent(self.values)

    def path(self, i: int) -> "PathSample":
        return PathSample(self.start, self.grid, self.codec, self.values[i], self.rng, int(self.path_ids[i]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path_id", "t_j", "radius_exponent", "digit_string"])
        radii = self.radius_exponents()
        nodes = self.grid.nodes
        for i in range(len(self)):
            for j, tj in enumerate(nodes):
                s = int(radii[i, j])
                digits = ";".join(self.codec.digit_string(c) for c in self.values[i, j])
                w.writerow([int(self.path_ids[i]), f"{tj:.17g}", "zero" if s == ZERO_RADIUS else s, digits])
        return buf.getvalue()


@dataclass
class PathSample:
    start: tuple[PadicNumber, ...]
    grid: TimeGrid
    codec: PadicArrayCodec
    values: np.ndarray  # (steps + 1, n, nlimbs)
    rng: RngSpec
    path_id: int = 0

    def radius_exponents(self) -> np.ndarray:
        return self.codec.radius_exponent(self.values)

    def node(self, j: int) -> tuple[PadicNumber, ...]:
        return tuple(self.codec.decode(c) for c in self.values[j])

    def at(self, t: float) -> tuple[PadicNumber, ...]:
        """Right-continuous step interpolation between grid nodes."""
        j = int(min(math.floor(t / self.grid.dt + 1e-12), self.grid.steps))
        return self.node(j)


def _walk(sampler: IncrementSampler, start: np.ndarray, steps: int, rng: np.random.Generator,
          count: int) -> np.ndarray:
    codec = sampler.codec
    out = np.empty((count, steps + 1) + start.shape, dtype=np.int64)
    out[:, 0] = start
    cur = np.broadcast_to(start, (count,) + start.shape).copy()
    for j in range(steps):
        cur = codec.add(cur, sampler.sample(rng, count))
        out[:, j + 1] = cur
    return out


def sample_paths(x, grid: TimeGrid, params: HeatKernelParams, rng: RngSpec, n_paths: int,
                 threads: int | None = None, codec: PadicArrayCodec | None = None) -> PathBatch:
    start = as_point(x, params.p, params.n)
    law = radial_law(params.at(grid.dt))
    codec = codec or make_codec(params.p, [law], [start])
    sampler = IncrementSampler(law, codec)
    x0 = codec.encode_vector(start)
    parts = run_chunks(lambda c, a, b: _walk(sampler, x0, grid.steps, rng.rng(c), b - a), n_paths, threads)
    return PathBatch(start, grid, codec, np.concatenate(parts), rng)


def sample_path(x, grid: TimeGrid, params: HeatKernelParams, rng: RngSpec) -> PathSample:
    return sample_paths(x, grid, params, rng, 1).path(0)


# -- statistics ---------------------------------------------------------------

def radial_chisquare(radii: np.ndarray, law: RadialDensity, min_expected: float = 20.0) -> float:
    """p-value of a chi-square goodness-of-fit test of sampled radii to ``law``."""
    n = len(radii)
    probs = np.append(law.pmf, 0.0)
    probs[0] += law.lower_tail
    probs[-1] = max(1.0 - probs[:-1].sum(), 0.0)
    idx = np.clip(np.asarray(radii) - law.s_lo, 0, len(law.pmf))
    counts = np.bincount(idx, minlength=len(probs)).astype(float)
    obs, exp = _pool(counts, probs * n, min_expected)
    return float(stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue)


def _pool(obs: np.ndarray, exp: np.ndarray, min_expected: float) -> tuple[np.ndarray, np.ndarray]:
    """Merge adjacent bins until every expected count reaches ``min_expected``."""
    o_out, e_out, o_acc, e_acc = [], [], 0.0, 0.0
    for o, e in zip(obs, exp):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            o_out.append(o_acc)
            e_out.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if e_out:
            o_out[-1] += o_acc
            e_out[-1] += e_acc
        else:
            o_out.append(o_acc)
            e_out.append(e_acc)
    return np.array(o_out), np.array(e_out)


def two_sample_chisquare(a: np.ndarray, b: np.ndarray, min_count: float = 20.0) -> float:
    """p-value for equality of two discrete samples (pooled contingency table)."""
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    ca = np.bincount(a - lo, minlength=hi - lo + 1).astype(float)
    cb = np.bincount(b - lo, minlength=hi - lo + 1).astype(float)
    rows_a, rows_b, acc_a, acc_b = [], [], 0.0, 0.0
    for u, v in zip(ca, cb):
        acc_a += u
        acc_b += v
        if acc_a + acc_b >= min_count:
            rows_a.append(acc_a)
            rows_b.append(acc_b)
            acc_a = acc_b = 0.0
    if rows_a:
        rows_a[-1] += acc_a
        rows_b[-1] += acc_b
    table = np.array([rows_a, rows_b])
    if table.shape[1] < 2:
        return 1.0
    return float(stats.chi2_contingency(table)[1])


@dataclass(frozen=True)
class ProductMomentResult:
    mc_value: float
    stderr: float
    exact_value: float
    bound_ratio: float
    n: int
    seed: int

    @property
    def z(self) -> float:
        return abs(self.mc_value - self.exact_value) / self.stderr

    def to_json(self) -> str:
        return json.dumps({"estimate": self.mc_value, "stderr": self.stderr, "exact": self.exact_value,
                           "bound_ratio": self.bound_ratio, "n": self.n, "seed": self.seed}, sort_keys=True)


def product_moment_exact(params: HeatKernelParams, k: float, t1: float, t2: float, t3: float) -> tuple[float, float]:
    """E|X(t2)-X(t1)|^k |X(t3)-X(t2)|^k by independence, and its ratio to (t3-t1)^{2k/b}."""
    _check_window(params, k, t1, t2, t3)
    exact = moment(params.at(t2 - t1), k) * moment(params.at(t3 - t2), k)
    return exact, exact / (t3 - t1) ** (2 * k / params.b)


def _check_window(params: HeatKernelParams, k: float, t1: float, t2: float, t3: float) -> None:
    if not 0 < t1 < t2 < t3:
        raise ValueError("need 0 < t1 < t2 < t3")
    if not params.b / 2 < k < params.b:
        raise ValueError(f"k={k} outside (b/2, b) = ({params.b / 2}, {params.b}): "
                         "the path-regularity moment criterion needs b/2 < k < b")


def product_moment_check(params: HeatKernelParams, k: float, t1: float, t2: float, t3: float,
                         n_samples: int, rng: RngSpec, threads: int | None = None) -> ProductMomentResult:
    """Monte Carlo product moment from sampled values X(t1), X(t2), X(t3) started at 0."""
    exact, ratio = product_moment_exact(params, k, t1, t2, t3)
    laws = [radial_law(params.at(dt)) for dt in (t1, t2 - t1, t3 - t2)]
    codec = make_codec(params.p, laws)
    samplers = [IncrementSampler(law, codec) for law in laws]
    p = float(params.p)

    def chunk(c, a, b):
        g = rng.rng(c)
        x1 = samplers[0].sample(g, b - a)
        x2 = codec.add(x1, samplers[1].sample(g, b - a))
        x3 = codec.add(x2, samplers[2].sample(g, b - a))
        r12 = codec.radius_exponent(codec.sub(x2, x1))
        r23 = codec.radius_exponent(codec.sub(x3, x2))
        return p ** (k * r12.astype(float)) * p ** (k * r23.astype(float))

    vals = np.concatenate(run_chunks(chunk, n_samples, threads))
    return ProductMomentResult(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples)),
                               exact, ratio, n_samples, rng.seed)
