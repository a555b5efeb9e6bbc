"""Monte Carlo estimation of the kernel of e^{-t(Delta_b + V)}.

The estimator runs free paths from x on the grid t_j = j t / M and weights
each one by

    exp(-d sum_{j<M} V(omega_j)) * f_{d,b}(y - omega_{M-1}),   d = t / M,

whose mean is the kernel of (e^{-dV} e^{-d Delta_b})^M at (x, y).  For V = 0
or constant V this equals the exact kernel at every M; for bounded V it
converges as M grows.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .heatkernel import HeatKernelParams, density_at_zero, density_table, radial_law
from .process import (ZERO_RADIUS, IncrementSampler, PadicArrayCodec, PathSample, as_point,
                      make_codec)
from .rng import RngSpec, run_chunks


@dataclass(frozen=True)
class Potential:
    """Radial potential V(x) = v(|x|).

    ``steps`` is an ascending list of (r, value): V takes the value of the
    first step with |x| <= p^r, and ``far_field`` beyond the last one.  The
    Coulomb variant -e / max(|x|, p^cutoff) is experimental and is refused
    by the estimator unless explicitly allowed.
    """

    steps: tuple[tuple[int, float], ...] = ()
    far_field: float = 0.0
    coulomb: tuple[float, int] | None = None
    label: str = "custom"

    def __post_init__(self):
        rs = [r for r, _ in self.steps]
        if rs != sorted(set(rs)):
            raise ValueError("step radii must be strictly increasing")
        if self.coulomb is None and (self.far_field < 0 or any(v < 0 for _, v in self.steps)):
            raise ValueError("potential values must be nonnegative")

    @classmethod
    def zero(cls) -> "Potential":
        return cls(label="zero")

    @classmethod
    def constant(cls, c: float) -> "Potential":
        return cls(far_field=float(c), label="constant")

    @classmethod
    def indicator(cls, r: int = 0, value: float = 1.0) -> "Potential":
        """value * 1[|x| <= p^r]."""
        return cls(((int(r), float(value)),), 0.0, label="indicator")

    @classmethod
    def step(cls, steps: Sequence[tuple[int, float]], far_field: float = 0.0) -> "Potential":
        return cls(tuple((int(r), float(v)) for r, v in steps), float(far_field), label="step")

    @classmethod
    def coulomb_potential(cls, e: float, cutoff: int) -> "Potential":
        return cls(coulomb=(float(e), int(cutoff)), label="coulomb")

    @property
    def experimental(self) -> bool:
        return self.coulomb is not None

    def sup(self, p: int) -> float:
        if self.coulomb:
            e, cut = self.coulomb
            return abs(e) / float(p) ** cut
        return max([self.far_field] + [v for _, v in self.steps])

    def evaluate(self, radius: np.ndarray, p: int | None = None) -> np.ndarray:
        """V on points with the given radius exponents (``ZERO_RADIUS`` for 0)."""
        radius = np.asarray(radius)
        if self.coulomb:
            if p is None:
                raise ValueError("the Coulomb variant needs p")
            e, cut = self.coulomb
            return -e / float(p) ** np.maximum(radius, cut).astype(float)
        out = np.full(radius.shape, self.far_field, dtype=float)
        for r, v in reversed(self.steps):
            out = np.where(radius <= r, v, out)
        return out

    def descriptor(self) -> dict:
        d = {"kind": self.label, "steps": [list(s) for s in self.steps], "far_field": self.far_field}
        if self.coulomb:
            d["coulomb"] = {"charge": self.coulomb[0], "cutoff": self.coulomb[1]}
        return d

    def dominates(self, other: "Potential", window: range) -> bool:
        """self >= other on every radius in ``window`` and at 0 (used for paired checks)."""
        r = np.append(np.array(list(window)), ZERO_RADIUS)
        return bool(np.all(self.evaluate(r) >= other.evaluate(r)))


def potential_integral(path: PathSample, V: Potential) -> float:
    """Left-endpoint sum d * sum_{j<M} V(omega_j)."""
    s = path.radius_exponents()[:-1]
    return float(path.grid.dt * V.evaluate(s, path.codec.p).sum())


@dataclass(frozen=True)
class KernelEstimate:
    x: tuple
    y: tuple
    t: float
    b: float
    p: int
    n: int
    potential: dict
    estimate: float
    stderr: float
    n_paths: int
    steps: int
    seed: int
    extra: dict = field(default_factory=dict)

    def record(self) -> dict:
        rec = {"x": [str(v.to_fraction()) for v in self.x], "y": [str(v.to_fraction()) for v in self.y],
               "t": self.t, "b": self.b, "p": self.p, "n": self.n, "V": self.potential,
               "N": self.n_paths, "M": self.steps, "estimate": self.estimate,
               "stderr": self.stderr, "seed": self.seed}
        rec.update(self.extra)
        return rec

    def to_json(self) -> str:
        return json.dumps(self.record(), sort_keys=True)

    def z(self, reference: float) -> float:
        return abs(self.estimate - reference) / self.stderr if self.stderr > 0 else (
            0.0 if self.estimate == reference else math.inf)


class DensityLookup:
    """f_{d,b} by radius exponent over a codec window; the zero class maps to f(0)."""

    def __init__(self, params: HeatKernelParams, codec: PadicArrayCodec):
        self.lo = codec.top - codec.digits + 1
        self.table = density_table(params, self.lo, codec.top)
        self.at_zero = density_at_zero(params)

    def __call__(self, s: np.ndarray) -> np.ndarray:
        idx = np.clip(s - self.lo, 0, len(self.table) - 1)
        return np.where(s == ZERO_RADIUS, self.at_zero, self.table[idx])


def _path_weights(x, y, t: float, params: HeatKernelParams, potentials: Sequence[Potential],
                  n_paths: int, steps: int, rng: RngSpec, threads: int | None) -> np.ndarray:
    """Per-path estimator values, one column per potential (common random numbers)."""
    p, n = params.p, params.n
    xs, ys = as_point(x, p, n), as_point(y, p, n)
    d = t / steps
    law = radial_law(params.at(d))
    codec = make_codec(p, [law], [xs, ys])
    sampler = IncrementSampler(law, codec)
    dens = DensityLookup(params.at(d), codec)
    x0, y0 = codec.encode_vector(xs), codec.encode_vector(ys)

    def chunk(c, a, b):
        g = rng.rng(c)
        m = b - a
        cur = np.broadcast_to(x0, (m,) + x0.shape).copy()
        acc = np.zeros((m, len(potentials)))
        for j in range(steps):
            s = codec.radius_exponent(cur)
            for i, V in enumerate(potentials):
                acc[:, i] += V.evaluate(s, p)
            if j < steps - 1:
                cur = codec.add(cur, sampler.sample(g, m))
        last = dens(codec.radius_exponent(codec.sub(y0[None], cur)))
        return np.exp(-d * acc) * last[:, None]

    return np.concatenate(run_chunks(chunk, n_paths, threads))


def _check_potential(V: Potential, allow_experimental: bool) -> None:
    if V.experimental and not allow_experimental:
        raise ValueError("the Coulomb potential is experimental; pass allow_experimental=True")


def estimate_kernels(x, y, t: float, params: HeatKernelParams, potentials: Sequence[Potential],
                     n_paths: int, steps: int, rng: RngSpec, threads: int | None = None,
                     allow_experimental: bool = False) -> tuple[list[KernelEstimate], np.ndarray]:
    """Estimates for several potentials on the same paths, plus the raw per-path weights."""
    if not t > 0:
        raise ValueError("t must be positive")
    if steps < 1 or n_paths < 2:
        raise ValueError("need at least one step and two paths")
    for V in potentials:
        _check_potential(V, allow_experimental)
    w = _path_weights(x, y, t, params, potentials, n_paths, steps, rng, threads)
    xs, ys = as_point(x, params.p, params.n), as_point(y, params.p, params.n)
    out = []
    for i, V in enumerate(potentials):
        col = w[:, i]
        out.append(KernelEstimate(xs, ys, t, params.b, params.p, params.n, V.descriptor(),
                                  float(col.mean()), float(col.std(ddof=1) / math.sqrt(n_paths)),
                                  n_paths, steps, rng.seed))
    return out, w


def estimate_kernel(x, y, t: float, params: HeatKernelParams, V: Potential, n_paths: int, steps: int,
                    rng: RngSpec, threads: int | None = None,
                    allow_experimental: bool = False) -> KernelEstimate:
    return estimate_kernels(x, y, t, params, [V], n_paths, steps, rng, threads, allow_experimental)[0][0]


def paired_difference(weights: np.ndarray, i: int, j: int) -> tuple[float, float]:
    """Mean and standard error of column i minus column j."""
    diff = weights[:, i] - weights[:, j]
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(len(diff)))


def estimates_csv(estimates: Sequence[KernelEstimate], references: Sequence[float] | None = None) -> str:
    """One row per estimate; the shell of x - y comes from the 'shell' extra when present."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "shell", "t", "M", "N", "estimate", "stderr", "reference", "z"])
    for i, e in enumerate(estimates):
        ref = references[i] if references is not None else float("nan")
        w.writerow([";".join(str(v.to_fraction()) for v in e.x), ";".join(str(v.to_fraction()) for v in e.y),
                    e.extra.get("shell", ""), f"{e.t:.17g}", e.steps, e.n_paths, f"{e.estimate:.17g}",
                    f"{e.stderr:.17g}", f"{ref:.17g}", f"{e.z(ref):.17g}" if references is not None else ""])
    return buf.getvalue()
