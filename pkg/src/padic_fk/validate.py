"""The bundled invariant suite behind ``padic-fk validate``.

Each check is deterministic and quick.  A check reports the config keys
whose values it depends on, so a tampered tolerance shows up by name.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import ExperimentConfig
from .errors import NumericRangeError
from .feynman_kac import Potential
from .finite_model import (Propagator, build_model, free_kernel, free_kernel_series, vladimirov_matrix,
                           wraparound_offset)
from .geometry import (QuaternionElement, division_algebra_check, reduced_norm_trace, standard_profile,
                       trace_zero_profile)
from .heatkernel import (HeatKernelParams, density_at_zero, density_table, moment, peak_constant,
                         radial_law)
from .padic import BallSpec, Character, character_ball_integral, character_ball_integral_bruteforce, \
    verify_dual_sandwich
from .process import product_moment_exact


@dataclass
class CheckResult:
    id: str
    property: str
    passed: bool
    value: float
    tolerance: float
    keys: list[str] = field(default_factory=list)
    seconds: float = 0.0
    detail: str = ""
    key: str | None = None

    def record(self) -> dict:
        return {"id": self.id, "property": self.property, "passed": self.passed,
                "value": _finite(self.value), "tolerance": self.tolerance, "keys": self.keys,
                "seconds": round(self.seconds, 3), "detail": self.detail, "key": self.key}


def _finite(x: float):
    return x if math.isfinite(x) else str(x)


CHECKS: list[tuple[str, str, list[str], Callable]] = []


def check(id_: str, prop: str, keys: tuple[str, ...] = ()):
    def deco(fn):
        CHECKS.append((id_, prop, list(keys), fn))
        return fn
    return deco


@check("character_ball_integral", "two-case closed form of the character integral over balls "
       "equals the coset sum (p in 2,3,5; delta in 0,1; m in [-6,6])")
def _char(cfg: ExperimentConfig):
    err = 0.0
    for p in (2, 3, 5):
        for d in (0, 1):
            chi = Character(p, d)
            for m in range(-6, 7):
                exact = float(character_ball_integral(chi, m))
                err = max(err, abs(exact - character_ball_integral_bruteforce(chi, m)))
    return err < 1e-14, err, 1e-14


@check("dual_lattice_sandwich", "dual of {|x| <= p^m} is {|xi| <= p^-m}, by exhaustive coset "
       "enumeration (p in 2,3; n in 1,2; m in [-6,6])")
def _dual(cfg):
    bad = 0
    for p in (2, 3):
        for n in (1, 2):
            for m in range(-6, 7):
                bad += not verify_dual_sandwich(BallSpec(p, m, n)).ok
    return bad == 0, float(bad), 0.0


@check("heat_kernel_positivity", "f_{t,b} > 0 on every tabulated shell and f <= f(0)",
       ("tolerances.eps", "p", "b", "t"))
def _positivity(cfg):
    worst = math.inf
    for t in cfg.times:
        prm = cfg.heat_params(t)
        law = radial_law(prm)
        f0 = density_at_zero(prm)
        if np.any(law.density <= 0) or np.any(law.density > f0):
            return False, float(law.density.min()), 0.0
        worst = min(worst, float(law.density.min()))
    return True, worst, 0.0


@check("heat_kernel_normalization", "pmf over the radial window plus both tails sums to 1",
       ("tolerances.eps", "tolerances.normalization"))
def _normalization(cfg):
    tol = cfg.section("tolerances")["normalization"]
    dev = 0.0
    for t in cfg.times:
        law = radial_law(cfg.heat_params(t))
        dev = max(dev, abs(float(law.pmf.sum()) + law.lower_tail - 1.0),
                  abs(float(law.cdf[-1]) - 1.0))
    # eps must sit well below the tolerance it is judged against, or the tails alone can break it
    culprit = "tolerances.eps" if cfg.eps > tol / 10 else "tolerances.normalization"
    return dev < tol and cfg.eps <= tol / 10, dev, tol, culprit


@check("heat_kernel_peak_band", "t^{n/b} f(0) over t in 1e-3..1e3 has max/min ratio <= p^{n/b}",
       ("tolerances.eps", "p", "n", "b"))
def _band(cfg):
    p, n, b = cfg.p, cfg.n, cfg.b
    vals = [peak_constant(HeatKernelParams.standard(p, float(t), b, n, 0, cfg.eps))
            for t in np.logspace(-3, 3, 61)]
    ratio = max(vals) / min(vals)
    tol = float(p) ** (n / b) + 1e-9
    return ratio <= tol, ratio, tol


@check("moment_scaling", "E|X(p^b t)|^k = p^k E|X(t)|^k for k in b/4, b/2, 3b/4", ("tolerances.eps", "p", "b"))
def _moment(cfg):
    p, b = cfg.p, cfg.b
    worst = 0.0
    for k in (b / 4, b / 2, 3 * b / 4):
        base = HeatKernelParams.standard(p, 1.0, b, cfg.n, 0, cfg.eps)
        m1 = moment(base, k)
        m2 = moment(base.at(float(p) ** b), k)
        worst = max(worst, abs(m2 - float(p) ** k * m1) / m1)
    return worst < 1e-10, worst, 1e-10


@check("product_moment_bound", "E|dX12|^k |dX23|^k / (t3-t1)^{2k/b} is invariant under t -> p^b t",
       ("tolerances.eps", "p", "b"))
def _product(cfg):
    p, b = cfg.p, cfg.b
    prm = HeatKernelParams.standard(p, 1.0, b, cfg.n, 0, cfg.eps)
    k = 0.6 * b
    ts = (0.3, 0.7, 1.2)
    _, r1 = product_moment_exact(prm, k, *ts)
    _, r2 = product_moment_exact(prm, k, *(float(p) ** b * t for t in ts))
    dev = abs(r2 - r1) / r1
    return dev < 1e-9, dev, 1e-9


@check("finite_model_closed_form", "V=0 finite kernel equals the continuum density plus the "
       "wrap-around constant on resolved shells", ("tolerances.eps", "p", "b", "t", "model.N", "model.M"))
def _closed(cfg):
    if cfg.n != 1:
        return True, 0.0, 0.0
    model = build_model(cfg.p, cfg.section("model")["N"], cfg.section("model")["M"])
    worst = 0.0
    for t in cfg.times:
        prm = cfg.heat_params(t)
        k = free_kernel(model, cfg.b, t)
        s_lo, s_hi = -model.M + 1, model.N
        cont = density_table(prm, s_lo, s_hi)
        off = wraparound_offset(cfg.p, model.N, cfg.b, t)
        for s, f in zip(range(s_lo, s_hi + 1), cont):
            j = int(np.argmax(model.radius_exponents == s))
            worst = max(worst, abs(k[j] - f - off) / f)
        worst = max(worst, float(np.max(np.abs(k - free_kernel_series(model, cfg.b, t)))) / k.max())
    return worst < 1e-9, worst, 1e-9


@check("finite_model_operator", "Laplacian symmetric with zero row sums; e^{-tH} symmetric, positive, "
       "stochastic for V=0 and a semigroup", ("p", "b", "model.N", "model.M"))
def _operator(cfg):
    model = build_model(2, 3, 3)
    L = vladimirov_matrix(model, cfg.b).matrix
    dev = max(float(np.max(np.abs(L - L.T))), float(np.max(np.abs(L.sum(axis=1)))))
    free = Propagator(model, cfg.b)
    K = free.kernel(1.0)
    dev = max(dev, float(np.max(np.abs(K.sum(axis=1) * model.cell_measure - 1))))
    prop = Propagator(model, cfg.b, Potential.indicator(0, 1.0))
    A, B, C = prop.matrix(0.4), prop.matrix(0.6), prop.matrix(1.0)
    dev = max(dev, float(np.max(np.abs(A @ B - C))), float(np.max(np.abs(C - C.T))))
    return dev < 1e-10 and bool(np.all(C > 0)), dev, 1e-10


@check("quaternion_algebra", "i^2=a, j^2=b, ij=-ji=k, det multiplicative; (3,2,3) and (5,2,5) "
       "division; trace-zero profile spacing")
def _quat(cfg):
    rng = np.random.default_rng(7)
    ok = True
    for p, a, b in ((3, 2, 3), (5, 2, 5)):
        one = QuaternionElement.make((1, 0, 0, 0), a, b, p)
        i = QuaternionElement.make((0, 1, 0, 0), a, b, p)
        j = QuaternionElement.make((0, 0, 1, 0), a, b, p)
        k = QuaternionElement.make((0, 0, 0, 1), a, b, p)
        ok &= i * i == one.scalar(a) and j * j == one.scalar(b) and i * j == k and j * i == k.scalar(-1)
        for _ in range(200):
            x = QuaternionElement.make(rng.integers(-50, 50, 4).tolist(), a, b, p)
            y = QuaternionElement.make(rng.integers(-50, 50, 4).tolist(), a, b, p)
            ok &= reduced_norm_trace(x * y)[0] == reduced_norm_trace(x)[0] * reduced_norm_trace(y)[0]
        ok &= division_algebra_check(p, a, b).is_division
        prof = trace_zero_profile(p, a, b)
        ok &= prof.spacing_ok()
    return bool(ok), float(not ok), 0.0


@check("standard_profile_band", "standard profile volume constant A is finite and spacing holds", ("p", "n"))
def _profile(cfg):
    prof = standard_profile(cfg.p, cfg.n)
    A = prof.volume_constant()
    return prof.spacing_ok() and math.isfinite(A), A, math.inf


def run_validation(cfg: ExperimentConfig) -> dict:
    results = []
    for id_, prop, keys, fn in CHECKS:
        t0 = time.perf_counter()
        key = None
        try:
            out = fn(cfg)
            passed, value, tol = out[:3]
            detail = ""
            if not passed:
                key = out[3] if len(out) > 3 else (keys[0] if keys else None)
        except (NumericRangeError, ValueError, ArithmeticError) as exc:
            passed, value, tol, detail = False, math.nan, math.nan, f"{type(exc).__name__}: {exc}"
            key = keys[0] if keys else None
        res = CheckResult(id_, prop, bool(passed), float(value), float(tol), keys,
                          time.perf_counter() - t0, detail, key)
        if key:
            res.detail = (res.detail + "; " if res.detail else "") + f"offending key: {key}"
        results.append(res)
    return {"passed": all(r.passed for r in results), "checks": [r.record() for r in results]}
