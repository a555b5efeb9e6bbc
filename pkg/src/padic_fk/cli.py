"""Command-line driver: ``padic-fk <density|kernel|paths|validate|profile|model>``.

Exit codes: 0 ok, 1 validation failure, 2 config error, 3 numeric range
error, 4 Monte Carlo / oracle disagreement (z above ``tolerances.z_fail``).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import ConfigError, NumericRangeError

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_RANGE, EXIT_DISAGREE = 0, 1, 2, 3, 4


def _g(x: float) -> str:
    return f"{x:.17g}"


class Output:
    """Writes named artifacts to --out DIR, or the primary one to stdout."""

    def __init__(self, directory: str | None):
        self.dir = Path(directory) if directory else None
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str, primary: bool = False) -> None:
        if self.dir:
            with open(self.dir / name, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        elif primary:
            sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _points(values, p: int, n: int, key: str):
    from .process import as_point
    try:
        return [as_point([Fraction(c) for c in v] if isinstance(v, list) else Fraction(v), p, n) for v in values]
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def _radius(diff) -> int | None:
    """log_p of the max-norm of a point; None for 0."""
    vals = [-c.valuation for c in diff if not c.is_zero]
    return max(vals) if vals else None


# -- density ----------------------------------------------------------------------

def cmd_density(cfg: ExperimentConfig, out: Output, args) -> int:
    from .heatkernel import radial_law, radial_window

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "r", "a_r", "f", "pmf", "cdf"])
    dwin = cfg.section("density")
    for t in cfg.times:
        prm = cfg.heat_params(t)
        lo, hi = radial_window(prm, prm.eps / 2)
        lo = dwin["s_lo"] if dwin["s_lo"] is not None else lo
        hi = dwin["s_hi"] if dwin["s_hi"] is not None else hi
        law = radial_law(prm, (lo, hi))
        for i, s in enumerate(law.radii):
            w.writerow([_g(t), int(s), _g(float(cfg.p) ** int(s)), _g(law.density[i]), _g(law.pmf[i]),
                        _g(law.cdf[i])])
    out.write("density.csv", buf.getvalue(), primary=True)
    if not args.validate:
        return EXIT_OK
    report = density_cross_check(cfg)
    out.write("density_validation.json", _json(report))
    print(f"finite-model cross-check: raw max deviation {report['max_raw_deviation']:.3e}, "
          f"after wrap-around correction {report['max_corrected_deviation']:.3e}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_VALIDATION


def density_cross_check(cfg: ExperimentConfig) -> dict:
    from .finite_model import build_model, free_kernel, wraparound_offset
    from .heatkernel import density_table

    if cfg.n != 1:
        raise ConfigError("n", "the finite-model cross-check exists for n = 1 only")
    N, M = cfg.section("model")["N"], cfg.section("model")["M"]
    model = _model(cfg)
    rows, raw, corr = [], 0.0, 0.0
    for t in cfg.times:
        k = free_kernel(model, cfg.b, t)
        off = wraparound_offset(cfg.p, N, cfg.b, t)
        s_lo, s_hi = -M + 1, N
        cont = density_table(cfg.heat_params(t), s_lo, s_hi)
        for s, f in zip(range(s_lo, s_hi + 1), cont):
            j = int(np.argmax(model.radius_exponents == s))
            raw = max(raw, abs(k[j] - f))
            corr = max(corr, abs(k[j] - f - off))
            rows.append({"t": t, "r": s, "continuum": f, "finite": float(k[j]), "offset": off})
    return {"N": N, "M": M, "max_raw_deviation": raw, "max_corrected_deviation": corr,
            "passed": bool(corr < 1e-9), "rows": rows}


def _model(cfg: ExperimentConfig):
    from .finite_model import ModelSizeError, build_model
    m = cfg.section("model")
    try:
        return build_model(cfg.p, m["N"], m["M"], m["size_cap"])
    except ModelSizeError as exc:
        raise ConfigError("model.N", str(exc)) from None


# -- kernel -----------------------------------------------------------------------

def cmd_kernel(cfg: ExperimentConfig, out: Output, args) -> int:
    from .feynman_kac import estimate_kernel
    from .finite_model import ModelSizeError, Propagator, build_model, trotter_kernel
    from .heatkernel import density_at_zero, density_value
    from .rng import RngSpec

    V = cfg.potential()
    mc = cfg.section("mc")
    xs = _points(cfg.section("kernel")["x"], cfg.p, cfg.n, "kernel.x")
    ys = _points(cfg.section("kernel")["y"], cfg.p, cfg.n, "kernel.y")
    threads = mc["threads"] or None
    model = prop = None
    if cfg.n == 1:
        m = cfg.section("model")
        try:
            model = build_model(cfg.p, m["N"], m["M"], m["size_cap"])
        except ModelSizeError:
            model = None
        if model is not None and model.size <= 4096:
            prop = Propagator(model, cfg.b, V)
    z_fail = cfg.section("tolerances")["z_fail"]
    records, bias_rows, worst = [], [], 0.0
    stream = 0
    for t in cfg.times:
        prm = cfg.heat_params(t)
        K = prop.kernel(t) if prop is not None else None
        target = trotter_kernel(model, cfg.b, V, t, mc["steps"]) if K is not None else None
        for x in xs:
            for y in ys:
                diff = tuple(a - b for a, b in zip(x, y))
                s = _radius(diff)
                est = estimate_kernel(x, y, t, prm, V, mc["paths"], mc["steps"],
                                      RngSpec(mc["seed"], stream), threads,
                                      allow_experimental=cfg.section("potential")["experimental"])
                stream += 1
                rec = est.record()
                rec["shell"] = "zero" if s is None else s
                closed = None
                if V.label in ("zero", "constant"):
                    f = density_at_zero(prm) if s is None else density_value(prm, s)
                    closed = math.exp(-V.far_field * t) * f
                    rec["closed_form"] = closed
                oracle = None
                if K is not None:
                    try:
                        i, j = model.index_of(x[0]), model.index_of(y[0])
                    except ValueError:
                        i = j = None
                    if i is not None:
                        oracle = float(K[i, j])
                        rec["oracle"] = oracle
                        rec["trotter_target"] = float(target[i, j])
                ref = closed if closed is not None else oracle
                if ref is not None:
                    rec["z"] = est.z(ref)
                    worst = max(worst, rec["z"])
                records.append(rec)
        if K is not None and V.label not in ("zero", "constant"):
            i = model.index_of(xs[0][0])
            for steps in cfg.section("kernel")["trotter_steps"]:
                T = trotter_kernel(model, cfg.b, V, t, steps)
                bias_rows.append({"t": t, "M": steps, "max_abs_bias": float(np.max(np.abs(T[i] - K[i]))),
                                  "max_rel_bias": float(np.max(np.abs(T[i] - K[i]) / K[i]))})
    report = {"records": records, "trotter_bias": bias_rows, "max_z": worst, "z_fail": z_fail}
    out.write("kernel.json", _json(report), primary=True)
    out.write("kernel.csv", _kernel_csv(records))
    if worst > z_fail:
        print(f"oracle disagreement: max z = {worst:.2f} > {z_fail}", file=sys.stderr)
        return EXIT_DISAGREE
    return EXIT_OK


def _kernel_csv(records: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "shell", "t", "M", "N", "estimate", "stderr", "reference", "z"])
    for r in records:
        ref = r.get("closed_form", r.get("oracle", float("nan")))
        w.writerow([";".join(r["x"]), ";".join(r["y"]), r["shell"], _g(r["t"]), r["M"], r["N"],
                    _g(r["estimate"]), _g(r["stderr"]), _g(ref), _g(r.get("z", float("nan")))])
    return buf.getvalue()


# -- paths ------------------------------------------------------------------------

def cmd_paths(cfg: ExperimentConfig, out: Output, args) -> int:
    from .heatkernel import moment
    from .process import ZERO_RADIUS, TimeGrid, sample_paths
    from .rng import RngSpec

    mc, pa = cfg.section("mc"), cfg.section("paths")
    grid = TimeGrid(float(pa["T"]), mc["steps"])
    prm = cfg.heat_params(grid.dt)
    rng = RngSpec(mc["seed"])
    batch = sample_paths(Fraction(pa["x"]), grid, prm, rng, mc["paths"], mc["threads"] or None)
    dump = min(pa["dump"], len(batch))
    if dump:
        from .process import PathBatch
        head = PathBatch(batch.start, grid, batch.codec, batch.values[:dump], rng, batch.path_ids[:dump])
        out.write("paths.csv", head.to_csv(), primary=True)

    k = pa["moment_order"] if pa["moment_order"] is not None else cfg.b / 4
    x0 = batch.codec.encode_vector(batch.start)
    rel = batch.codec.radius_exponent(batch.codec.sub(batch.values, x0[None, None]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_j", "k", "mc_moment", "stderr", "exact_moment", "ratio", "moment_over_t_k_b"])
    p = float(cfg.p)
    for j in range(1, grid.steps + 1):
        tj = grid.nodes[j]
        vals = np.where(rel[:, j] == ZERO_RADIUS, 0.0, p ** (k * rel[:, j].astype(float)))
        m_mc, se = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))
        exact = moment(prm.at(tj), k)
        w.writerow([_g(tj), _g(k), _g(m_mc), _g(se), _g(exact), _g(m_mc / exact), _g(m_mc / tj ** (k / cfg.b))])
    out.write("paths_moments.csv", buf.getvalue(), primary=not dump)
    end = rel[:, -1]
    radii, counts = np.unique(end, return_counts=True)
    summary = {"seed": rng.seed, "rng": rng.record(), "n": len(batch), "T": grid.T, "M": grid.steps, "k": k,
               "endpoint_radial_occupation": {("zero" if r == ZERO_RADIUS else str(int(r))): int(c)
                                              for r, c in zip(radii, counts)}}
    out.write("paths_summary.json", _json(summary))
    return EXIT_OK


# -- validate / profile / model -----------------------------------------------------

def cmd_validate(cfg: ExperimentConfig, out: Output, args) -> int:
    from .validate import run_validation
    report = run_validation(cfg)
    out.write("validate.json", _json(report), primary=True)
    for c in report["checks"]:
        if not c["passed"]:
            print(f"FAILED {c['id']}: {c['detail']}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_VALIDATION


def cmd_profile(cfg: ExperimentConfig, out: Output, args) -> int:
    from .geometry import default_quaternion_parameters, standard_profile, trace_zero_profile

    pr = cfg.section("profile")
    window = (pr["r_lo"], pr["r_hi"])
    try:
        if pr["kind"] == "standard":
            prof = standard_profile(cfg.p, cfg.n, pr["c"] or None, window)
        else:
            a, b = default_quaternion_parameters(cfg.p) if not pr["a"] else (pr["a"], pr["b"])
            prof = trace_zero_profile(cfg.p, a, b, pr["resolution"], window)
    except ValueError as exc:
        raise ConfigError("profile", str(exc)) from None
    out.write("profile.csv", prof.to_csv(window), primary=True)
    meta = {"label": prof.label, "m": prof.m, "n": prof.n, "volume_constant": prof.volume_constant(window),
            "spacing_ok": prof.spacing_ok(window), "notes": prof.notes}
    out.write("profile_meta.json", _json(meta))
    return EXIT_OK


def cmd_model(cfg: ExperimentConfig, out: Output, args) -> int:
    from .finite_model import Propagator, kernel_csv, spectrum_csv

    model = _model(cfg)
    if model.size > 4096:
        raise ConfigError("model.N", f"dense eigensolve limited to S <= 4096, got {model.size}")
    prop = Propagator(model, cfg.b, cfg.potential())
    out.write("spectrum.csv", spectrum_csv(prop.spectrum()), primary=True)
    xs = _points(cfg.section("kernel")["x"], cfg.p, 1, "kernel.x") if cfg.n == 1 else []
    rows = sorted({model.index_of(x[0]) for x in xs})
    out.write("model_kernel.csv", kernel_csv(prop.kernel(cfg.times[0]), rows))
    return EXIT_OK


COMMANDS = {"density": cmd_density, "kernel": cmd_kernel, "paths": cmd_paths,
            "validate": cmd_validate, "profile": cmd_profile, "model": cmd_model}


_FLAGS = {"config": None, "seed": None, "out": None, "threads": None, "validate": False, "show_config": False}


def build_parser() -> argparse.ArgumentParser:
    # flags are accepted before or after the subcommand; SUPPRESS keeps one
    # position from overwriting the other with its default
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", metavar="PATH", help="TOML experiment configuration")
    common.add_argument("--seed", type=int, metavar="U64", help="override mc.seed")
    common.add_argument("--out", metavar="DIR", help="write artifacts into DIR instead of stdout")
    common.add_argument("--threads", type=int, metavar="INT",
                        help="worker threads (default: $PADIC_FK_THREADS, else 1)")
    common.add_argument("--validate", action="store_true", help="cross-check against the finite model")
    common.add_argument("--show-config", action="store_true", help="print the effective configuration and exit")
    parser = argparse.ArgumentParser(prog="padic-fk", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in _FLAGS.items():
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.command is None and not args.show_config:
        parser.error("a subcommand is required")
    try:
        cfg = load_config(args.config)
        if args.seed is not None or args.threads is not None:
            cfg = cfg.with_overrides(**{"mc.seed": args.seed, "mc.threads": args.threads})
        if args.show_config:
            sys.stdout.write(cfg.to_toml())
            return EXIT_OK
        out = Output(args.out or cfg.section("output")["dir"] or None)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericRangeError as exc:
        print(f"numeric range error: {exc}", file=sys.stderr)
        return EXIT_RANGE


if __name__ == "__main__":
    sys.exit(main())
