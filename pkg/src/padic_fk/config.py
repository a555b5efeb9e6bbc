"""Experiment configuration: a versioned TOML file with centralized defaults.

Every field is checked at parse time; failures raise :class:`ConfigError`
carrying the dotted key of the offending field.
"""
from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

SCHEMA_VERSION = 1

DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "p": 2,
    "n": 1,
    "b": 1.0,
    "delta": 0,
    "t": [1.0],
    "potential": {"kind": "zero", "value": 1.0, "radius": 0, "steps": [], "far_field": 0.0,
                  "charge": 1.0, "cutoff": -4, "experimental": False},
    "model": {"N": 5, "M": 5, "size_cap": 65536},
    "mc": {"paths": 100000, "steps": 16, "seed": 20240601, "threads": 0},
    "kernel": {"x": ["0"], "y": ["0", "1/2", "1/4", "2", "1/8"], "trotter_steps": [4, 8, 16, 32]},
    "density": {"s_lo": None, "s_hi": None},
    "paths": {"x": "0", "T": 1.0, "moment_order": None, "dump": 1000},
    "profile": {"kind": "standard", "c": [], "a": 0, "b": 0, "resolution": 4, "r_lo": -12, "r_hi": 12},
    "output": {"dir": ""},
    "tolerances": {"eps": 1e-12, "normalization": 1e-10, "z_fail": 5.0, "z_pass": 3.0},
}


def _is_prime(p: int) -> bool:
    return p >= 2 and all(p % d for d in range(2, math.isqrt(p) + 1))


def _merge(base: dict, over: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(key, "unknown key")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(key, "expected a table")
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict = field(repr=False)

    # -- typed views -----------------------------------------------------
    @property
    def p(self) -> int:
        return self.raw["p"]

    @property
    def n(self) -> int:
        return self.raw["n"]

    @property
    def b(self) -> float:
        return float(self.raw["b"])

    @property
    def delta(self) -> int:
        return self.raw["delta"]

    @property
    def times(self) -> list[float]:
        return [float(t) for t in self.raw["t"]]

    @property
    def eps(self) -> float:
        return float(self.raw["tolerances"]["eps"])

    def section(self, name: str) -> dict:
        return self.raw[name]

    def with_overrides(self, **dotted: Any) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        for key, value in dotted.items():
            if value is None:
                continue
            *path, last = key.split(".")
            node = raw
            for part in path:
                node = node[part]
            node[last] = value
        return validate_config(raw)

    def heat_params(self, t: float | None = None):
        from .heatkernel import HeatKernelParams
        return HeatKernelParams.standard(self.p, self.times[0] if t is None else t, self.b, self.n,
                                         self.delta, self.eps)

    def potential(self):
        from .feynman_kac import Potential
        v = self.raw["potential"]
        kind = v["kind"]
        if kind == "zero":
            return Potential.zero()
        if kind == "constant":
            return Potential.constant(v["value"])
        if kind == "indicator":
            return Potential.indicator(v["radius"], v["value"])
        if kind == "step":
            return Potential.step([tuple(s) for s in v["steps"]], v["far_field"])
        return Potential.coulomb_potential(v["charge"], v["cutoff"])

    def to_toml(self) -> str:
        return dump_toml(self.raw)


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(type(v))


def dump_toml(raw: dict) -> str:
    lines = [f"{k} = {_toml_value(v)}" for k, v in raw.items() if not isinstance(v, dict)]
    for k, v in raw.items():
        if isinstance(v, dict):
            lines.append(f"\n[{k}]")
            lines += [f"{kk} = {_toml_value(vv)}" for kk, vv in v.items() if vv is not None]
    return "\n".join(lines) + "\n"


def _int(raw: dict, key: str, lo: int | None = None, hi: int | None = None) -> None:
    node, *rest = key.split(".")
    holder = raw if not rest else raw[node]
    name = rest[0] if rest else node
    v = holder[name]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(key, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(key, f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(key, f"must be <= {hi}, got {v}")


def _positive(raw: dict, key: str) -> None:
    node, *rest = key.split(".")
    v = raw[node][rest[0]] if rest else raw[node]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0 or not math.isfinite(v):
        raise ConfigError(key, f"expected a positive number, got {v!r}")


def _rational(v: Any, key: str) -> Fraction:
    try:
        return Fraction(v)
    except (TypeError, ValueError, ZeroDivisionError):
        raise ConfigError(key, f"expected a rational such as '3/4', got {v!r}") from None


def validate_config(raw: dict) -> ExperimentConfig:
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    _int(raw, "p", 2)
    if not _is_prime(raw["p"]):
        raise ConfigError("p", f"{raw['p']} is not prime")
    _int(raw, "n", 1, 8)
    _positive(raw, "b")
    _int(raw, "delta")
    ts = raw["t"]
    if not isinstance(ts, list):
        raw["t"] = ts = [ts]
    if not ts or any(isinstance(t, bool) or not isinstance(t, (int, float)) or not t > 0 for t in ts):
        raise ConfigError("t", f"times must be positive numbers, got {ts!r}")

    pot = raw["potential"]
    kinds = ("zero", "constant", "indicator", "step", "coulomb")
    if pot["kind"] not in kinds:
        raise ConfigError("potential.kind", f"must be one of {kinds}")
    if pot["kind"] == "coulomb" and not pot["experimental"]:
        raise ConfigError("potential.experimental", "the Coulomb potential requires experimental = true")
    if pot["kind"] in ("constant", "indicator") and not pot["value"] >= 0:
        raise ConfigError("potential.value", "must be >= 0")
    if pot["kind"] == "step":
        st = pot["steps"]
        if not st or any(len(s) != 2 or not isinstance(s[0], int) or s[1] < 0 for s in st):
            raise ConfigError("potential.steps", "expected [[r, value >= 0], ...]")
        if [s[0] for s in st] != sorted({s[0] for s in st}):
            raise ConfigError("potential.steps", "radii must be strictly increasing")
        if pot["far_field"] < 0:
            raise ConfigError("potential.far_field", "must be >= 0")
    _int(raw, "potential.radius")
    _int(raw, "potential.cutoff")

    _int(raw, "model.N")
    _int(raw, "model.M")
    _int(raw, "model.size_cap", 2)
    if raw["model"]["N"] + raw["model"]["M"] < 1:
        raise ConfigError("model.M", "need N + M >= 1")

    _int(raw, "mc.paths", 2)
    _int(raw, "mc.steps", 1)
    _int(raw, "mc.seed", 0, 2 ** 64 - 1)
    _int(raw, "mc.threads", 0)

    k = raw["kernel"]
    for name in ("x", "y"):
        if not isinstance(k[name], list) or not k[name]:
            raise ConfigError(f"kernel.{name}", "expected a non-empty list of points")
        for v in k[name]:
            for coord in (v if isinstance(v, list) else [v]):
                _rational(coord, f"kernel.{name}")
    if not all(isinstance(m, int) and m >= 1 for m in k["trotter_steps"]):
        raise ConfigError("kernel.trotter_steps", "expected positive integers")

    d = raw["density"]
    for name in ("s_lo", "s_hi"):
        if d[name] is not None:
            _int(raw, f"density.{name}")
    if d["s_lo"] is not None and d["s_hi"] is not None and d["s_lo"] > d["s_hi"]:
        raise ConfigError("density.s_lo", "must not exceed density.s_hi")

    pa = raw["paths"]
    _rational(pa["x"], "paths.x")
    _positive(raw, "paths.T")
    _int(raw, "paths.dump", 0)
    if pa["moment_order"] is not None:
        k_ = pa["moment_order"]
        if not isinstance(k_, (int, float)) or not 0 <= k_ < raw["b"]:
            raise ConfigError("paths.moment_order", f"must lie in [0, b) = [0, {raw['b']})")

    pr = raw["profile"]
    if pr["kind"] not in ("standard", "trace_zero"):
        raise ConfigError("profile.kind", "must be 'standard' or 'trace_zero'")
    _int(raw, "profile.resolution", 2, 8)
    _int(raw, "profile.r_lo")
    _int(raw, "profile.r_hi")

    tol = raw["tolerances"]
    for name in ("eps", "normalization", "z_fail", "z_pass"):
        _positive(raw, f"tolerances.{name}")
    if not isinstance(raw["output"]["dir"], str):
        raise ConfigError("output.dir", "expected a path string")
    return ExperimentConfig(raw)


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    over: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                over = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError("--config", f"no such file: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("--config", f"not valid TOML: {exc}") from None
        if "schema_version" not in over:
            raise ConfigError("schema_version", "missing; expected schema_version = 1")
    return validate_config(_merge(DEFAULTS, over))


def default_config() -> ExperimentConfig:
    return load_config(None)
