"""Command-line front end: ``eitlab run <config>`` plus thin per-module subcommands.

Configuration files are INI text.  ``[experiment]`` names the kind and the
common settings; a section named after the kind holds its parameters.  Every
key has a default (see ``SCHEMA``) and unknown sections or keys are errors.

Exit codes: 0 success, 2 schema/usage error, 3 budget exceeded, 4 failed
assertion-mode check.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, frozen
from .eit_paths import PathMeasureSpec, tail_fit, theta_d_estimate
from .network_flows import (build_flow, energy_report, path_sample, resistance_growth_profile,
                            sphere_resistance)
from .percolation import oriented_cluster, sample_config, survival_lower_bound_check
from .spin_tree import BudgetExceededError, SpinParams, exact_pmf, verify_lemma_bound
from .unpredictable_walk import ProfileEstimate, sample_path, unconditional_concentration

EXIT_OK, EXIT_SCHEMA, EXIT_BUDGET, EXIT_ASSERT = 0, 2, 3, 4
OUT_ENV = "EITLAB_OUT"

# kind -> {key: (parser, default)}
_bool = lambda s: {"true": True, "false": False, "1": True, "0": False}[s.strip().lower()]
_ints = lambda s: [int(t) for t in s.replace(",", " ").split()]

COMMON = {
    "kind": (str, None),
    "seed": (int, 0),
    "replicas": (int, 1),
    "out": (str, None),
    "assert": (_bool, False),
}
SCHEMA = {
    "pmf": {"ell": (int, 2), "r": (int, 1), "n": (int, 3)},
    "profile": {"ell": (int, 3), "r": (int, 1), "k": (_ints, [4, 16, 64])},
    "eit": {"measure": (str, "z3"), "d": (int, 3), "ell": (int, 3), "r": (int, 1),
            "length": (int, 256), "bootstrap": (int, 200)},
    "theta_d": {"d": (int, 4), "horizon": (int, 10_000)},
    "survival": {"p": (float, 0.95), "n": (int, 20), "d": (int, 3)},
    "flow-energy": {"p": (float, 0.95), "n": (int, 20), "d": (int, 3)},
    "resistance": {"d": (int, 3), "p": (float, 0.95), "radii": (_ints, [4, 8, 16]),
                   "oriented": (_bool, True)},
}


class SchemaError(ValueError):
    pass


# -- config ---------------------------------------------------------------------

def load_config(path) -> dict:
    """Parse and validate a config file into ``{"experiment": {...}, "params": {...}}``."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise SchemaError(f"unparseable config: {exc}") from None
    if not cp.has_section("experiment"):
        raise SchemaError("missing [experiment] section")
    exp = _coerce(dict(cp["experiment"]), COMMON, "experiment")
    kind = exp["kind"]
    if kind not in SCHEMA:
        raise SchemaError(f"unknown experiment kind {kind!r}")
    for section in cp.sections():
        if section not in ("experiment", kind):
            raise SchemaError(f"unknown section [{section}]")
    params = _coerce(dict(cp[kind]) if cp.has_section(kind) else {}, SCHEMA[kind], kind)
    return {"experiment": exp, "params": params}


def _coerce(raw: dict, schema: dict, section: str) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in schema:
            raise SchemaError(f"unknown key {key!r} in [{section}]")
        try:
            out[key] = schema[key][0](value)
        except (ValueError, KeyError):
            raise SchemaError(f"bad value {value!r} for key {key!r} in [{section}]") from None
    for key, (_, default) in schema.items():
        if key not in out:
            if default is None and key == "kind":
                raise SchemaError("missing key 'kind' in [experiment]")
            out[key] = default
    return out


def _fmt(v) -> str:
    return " ".join(map(str, v)) if isinstance(v, list) else str(v)


# -- output ---------------------------------------------------------------------

def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def metadata_header(resolved: dict) -> str:
    """Comment block: version, resolved config, seed, timestamp (last line)."""
    exp, params = resolved["experiment"], resolved["params"]
    lines = [f"# eitlab {__version__}"]
    lines += [f"# experiment.{k} = {_fmt(v)}" for k, v in sorted(exp.items()) if k != "out"]
    lines += [f"# {exp['kind']}.{k} = {_fmt(v)}" for k, v in sorted(params.items())]
    lines.append(f"# seed = {exp['seed']}")
    lines.append(f"# timestamp = {_timestamp()}")
    return "\n".join(lines) + "\n"


def strip_timestamp(text: str) -> str:
    return "".join(l for l in text.splitlines(True) if not l.startswith("# timestamp"))


class Outputs:
    """Collects files and writes them only after the experiment succeeds."""

    def __init__(self, out_dir: Path, header: str):
        self.dir, self.header, self.files = out_dir, header, {}

    def add(self, name: str, body: str):
        self.files[name] = self.header + body

    def commit(self) -> list:
        self.dir.mkdir(parents=True, exist_ok=True)
        written = []
        try:
            for name, text in self.files.items():
                path = self.dir / name
                path.write_text(text)
                written.append(path)
        except OSError:
            for path in written:
                path.unlink(missing_ok=True)
            raise
        return written


# -- experiments ----------------------------------------------------------------

def _spec(params: dict, seed) -> PathMeasureSpec:
    if params.get("measure", "z3") == "z3":
        return PathMeasureSpec("z3", 3, SpinParams(params.get("ell", 3), params.get("r", 1)), seed)
    return PathMeasureSpec("uniform", params["d"], None, seed)


def _check(ok: bool, message: str, failures: list):
    if not ok:
        failures.append(message)


def run_pmf(exp, params, out: Outputs, failures):
    sp = SpinParams(params["ell"], params["r"])
    pmf = exact_pmf(sp, params["n"])
    out.add("pmf.csv", pmf.to_csv())
    if exp["assert"]:
        target = Fraction(params["ell"]) ** params["n"]
        _check(pmf.mean() == target if pmf.mode == "exact" else
               math.isclose(pmf.mean(), float(target), rel_tol=1e-12), "pmf mean identity", failures)
        _check(verify_lemma_bound(sp, params["n"]).ok, "lemma bound", failures)


def run_profile(exp, params, out, failures):
    sp = SpinParams(params["ell"], params["r"])
    rows = unconditional_concentration(sp, exp["seed"], params["k"], exp["replicas"])
    out.add("profile.csv", ProfileEstimate.CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in rows))
    if exp["assert"]:
        _check(not any(r.flag for r in rows), "profile bound exceeded", failures)


def run_eit(exp, params, out, failures):
    spec = _spec(params, exp["seed"])
    fit = tail_fit(spec, params["length"], exp["replicas"], bootstrap=params["bootstrap"])
    out.add("survival.csv", fit.survival_csv())
    out.add("fit.csv", fit.fit_csv())
    if exp["assert"] and spec.kind == "z3":
        _check(not fit.degenerate and fit.hi < frozen.THETA_FEASIBILITY, "theta upper CI", failures)
        _check(not fit.non_exponential, "z3 tail flagged non-exponential", failures)


def run_theta_d(exp, params, out, failures):
    est = theta_d_estimate(params["d"], exp["seed"], exp["replicas"], params["horizon"])
    out.add("theta_d.csv", "d,theta,lo,hi,walks,horizon,returned\n"
            f"{est.d},{est.value!r},{est.lo!r},{est.hi!r},{est.walks},{est.horizon},{est.returned}\n")
    if exp["assert"]:
        _check(0 < est.value < 1, "theta_d in (0,1)", failures)


def run_survival(exp, params, out, failures):
    spec = PathMeasureSpec(seed=exp["seed"])
    rep = survival_lower_bound_check(spec, params["p"], frozen.Z3_THETA_HAT, frozen.Z3_C_ENVELOPE,
                                     params["n"], exp["replicas"], seed=exp["seed"], d=params["d"])
    out.add("survival.csv", "p,N,trials,frequency,se,bound,ok\n"
            f"{rep['p']!r},{rep['N']},{rep['trials']},{rep['frequency']!r},{rep['se']!r},"
            f"{rep['bound']!r},{int(rep['ok'])}\n")
    if exp["assert"]:
        _check(rep["ok"], "survival lower bound", failures)


def run_flow_energy(exp, params, out, failures):
    spec = PathMeasureSpec(seed=exp["seed"])
    p, N = params["p"], params["n"]
    theta, C = frozen.Z3_THETA_HAT, frozen.Z3_C_ENVELOPE
    sample = path_sample(spec, N)
    buf = io.StringIO()
    buf.write("replica,strength,energy,bound,resistance_proxy,r_eff\n")
    energies = []
    for t in range(exp["replicas"]):
        cfg = sample_config(params["d"], N, p, True, "bond", (exp["seed"], "flow", t))
        flow = build_flow(cfg, spec, N, sample=sample)
        rep = energy_report(flow, theta, C, p)
        r_eff = sphere_resistance(oriented_cluster(cfg), N) if rep.strength > 0 else math.inf
        energies.append(rep.energy)
        buf.write(f"{t},{rep.csv_row()},{r_eff!r}\n")
        if exp["assert"]:
            _check(flow.conservation_residual() < 1e-9, f"conservation (replica {t})", failures)
            if rep.strength > 0:
                _check(r_eff <= rep.resistance_proxy * (1 + 1e-9), f"Thomson (replica {t})", failures)
    out.add("flow_energy.csv", buf.getvalue())
    if exp["assert"] and len(energies) > 1:
        e = np.asarray(energies)
        se = e.std(ddof=1) / math.sqrt(e.size)
        _check(e.mean() <= rep.bound + 3 * se, "mean energy bound", failures)


def run_resistance(exp, params, out, failures):
    theta = frozen.Z3_THETA_HAT if params["p"] < 1 and params["d"] == 3 else None
    prof = resistance_growth_profile(params["d"], params["p"], PathMeasureSpec(), params["radii"],
                                     exp["replicas"], exp["seed"], oriented=params["oriented"],
                                     theta=theta)
    out.add("resistance.csv", prof.to_csv())
    if exp["assert"] and params["p"] == 1 and params["d"] >= 3:
        _check(prof.flag == "transient-like", "full-lattice increments decrease", failures)


RUNNERS = {"pmf": run_pmf, "profile": run_profile, "eit": run_eit, "theta_d": run_theta_d,
           "survival": run_survival, "flow-energy": run_flow_energy, "resistance": run_resistance}


def _out_dir(value) -> Path | None:
    value = value or os.environ.get(OUT_ENV)
    return Path(value) if value else None


def run(config_path, out_override=None) -> int:
    """Execute a config file; returns the exit code."""
    try:
        resolved = load_config(config_path)
    except (SchemaError, OSError) as exc:
        print(f"eitlab: error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    exp, params = resolved["experiment"], resolved["params"]
    out_dir = _out_dir(out_override or exp["out"]) or Path(".")
    out = Outputs(out_dir, metadata_header(resolved))
    failures = []
    try:
        RUNNERS[exp["kind"]](exp, params, out, failures)
    except BudgetExceededError as exc:
        print(f"eitlab: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as exc:
        print(f"eitlab: error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    if failures:
        print("eitlab: assertion-mode check failed: " + "; ".join(failures), file=sys.stderr)
        return EXIT_ASSERT
    for path in out.commit():
        print(path)
    return EXIT_OK


# -- validation -----------------------------------------------------------------

def _rows(text: str):
    body = [l for l in text.splitlines() if l and not l.startswith("#")]
    reader = csv.reader(body)
    return next(reader), list(reader)


def validate_text(text: str) -> list:
    """Re-parse an emitted CSV and return a list of invariant violations."""
    header, rows = _rows(text)
    errors = []
    key = ",".join(header)
    if key == "x,prob":
        probs = [float(Fraction(p)) for _, p in rows]
        xs = [int(x) for x, _ in rows]
        if not math.isclose(sum(probs), 1.0, abs_tol=1e-9):
            errors.append("probabilities do not sum to 1")
        if any(p < 0 for p in probs) or xs != sorted(xs):
            errors.append("negative mass or unsorted support")
    elif key == "n,S_n":
        vals = [int(v) for _, v in rows]
        if [int(n) for n, _ in rows] != list(range(len(rows))):
            errors.append("indices not consecutive")
        if any(abs(b - a) != 1 for a, b in zip(vals, vals[1:])):
            errors.append("non-unit increment")
    elif key == "ell,survival,count":
        surv = [float(s) for _, s, _ in rows]
        if any(not 0 <= s <= 1 for s in surv) or any(b > a for a, b in zip(surv, surv[1:])):
            errors.append("survival not a nonincreasing curve in [0,1]")
    elif key == "edge_id,value":
        if any(not math.isfinite(float(v)) or float(v) < 0 for _, v in rows):
            errors.append("non-finite or negative flow value")
    elif key == "u,v":
        if any(int(u) < 0 or int(v) < 0 for u, v in rows):
            errors.append("negative vertex index")
    elif key == ProfileEstimate.CSV_HEADER:
        if any(not 0 <= float(r[1]) <= 1 for r in rows):
            errors.append("probability outside [0,1]")
    elif key == "theta_hat,C_hat,lo,hi,range":
        for r in rows:
            theta, _, lo, hi = map(float, r[:4])
            if not lo <= theta <= hi:
                errors.append("theta_hat outside its interval")
    elif header and header[0] in ("radius", "d", "p", "replica"):
        for r in rows:
            if any(v and math.isnan(float(v)) for v in r):
                errors.append("NaN entry")
    else:
        errors.append(f"unrecognised header {key!r}")
    return errors


# -- subcommands ----------------------------------------------------------------

def _emit(args, name: str, body: str, resolved: dict, series=None):
    out_dir = _out_dir(args.out)
    text = metadata_header(resolved) + body
    if out_dir is None:
        sys.stdout.write(body)
    else:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / name).write_text(text)
        print(out_dir / name)
    if getattr(args, "plot", False) and series is not None:
        _plot(series, (out_dir or Path(".")) / (Path(name).stem + ".svg"))


def _plot(series, path: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "eitlab"
    x, y, xlabel, ylabel = series
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(x, y, marker="o", ms=3, lw=1)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    print(path)


def _resolved(kind: str, args, **params) -> dict:
    return {"experiment": {"kind": kind, "seed": args.seed, "replicas": args.replicas},
            "params": params}


def cmd_pmf(args):
    pmf = exact_pmf(SpinParams(args.ell, args.r), args.n)
    _emit(args, "pmf.csv", pmf.to_csv(), _resolved("pmf", args, ell=args.ell, r=args.r, n=args.n),
          (pmf.support, pmf.float_masses, "x", "P[Y_N = x]"))


def cmd_walk(args):
    path = sample_path(SpinParams(args.ell, args.r), args.seed, args.n)
    _emit(args, "walk.csv", path.to_csv(), _resolved("walk", args, ell=args.ell, r=args.r, n=args.n),
          (np.arange(args.n + 1), path.values, "n", "S_n"))


def cmd_profile(args):
    ks = args.k or [4, 16, 64]
    rows = unconditional_concentration(SpinParams(args.ell, args.r), args.seed, ks, args.replicas)
    body = ProfileEstimate.CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in rows)
    _emit(args, "profile.csv", body, _resolved("profile", args, ell=args.ell, r=args.r, k=ks),
          ([r.k for r in rows], [float(r.value) for r in rows], "k", "max_x P[S_k = x]"))


def cmd_eit(args):
    spec = PathMeasureSpec(args.measure, args.d, SpinParams(args.ell, args.r) if args.measure == "z3"
                           else None, args.seed)
    fit = tail_fit(spec, args.n, args.replicas)
    _emit(args, "survival.csv", fit.survival_csv(),
          _resolved("eit", args, measure=args.measure, d=args.d, length=args.n),
          (np.arange(fit.survival.size), fit.survival, "collisions", "survival"))
    if _out_dir(args.out) is not None:
        _emit(args, "fit.csv", fit.fit_csv(),
              _resolved("eit", args, measure=args.measure, d=args.d, length=args.n))


def cmd_perc(args):
    cfg = sample_config(args.d, args.depth, args.p, not args.ordinary, args.mode, args.seed)
    g = oriented_cluster(cfg)
    resolved = _resolved("perc", args, d=args.d, depth=args.depth, p=args.p, mode=args.mode,
                         oriented=not args.ordinary)
    resolved["params"].update(cluster_size=g.n_vertices, truncated=g.truncated)
    _emit(args, "cluster.csv", g.to_csv(), resolved)
    out_dir = _out_dir(args.out)
    if out_dir is not None:
        (out_dir / "config.bin").write_bytes(cfg.to_bytes())


def cmd_resist(args):
    radii = args.radii or [2 ** i for i in range(int(math.log2(args.depth)) + 1)]
    if radii[-1] > args.depth:
        raise SchemaError("radii exceed --depth")
    theta = frozen.Z3_THETA_HAT if args.p < 1 and args.d == 3 else None
    prof = resistance_growth_profile(args.d, args.p, PathMeasureSpec(), radii, args.replicas,
                                     args.seed, theta=theta)
    _emit(args, "resistance.csv", prof.to_csv(),
          _resolved("resistance", args, d=args.d, p=args.p, radii=radii),
          (prof.radii, prof.medians, "radius", "median R"))


def cmd_run(args):
    return run(args.config, args.out)


def cmd_validate(args):
    status = EXIT_OK
    for name in args.files:
        try:
            errors = validate_text(Path(name).read_text())
        except (OSError, ValueError, StopIteration) as exc:
            errors = [f"unreadable: {exc}"]
        print(f"{name}: {'ok' if not errors else '; '.join(errors)}")
        status = status or (EXIT_ASSERT if errors else EXIT_OK)
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eitlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"eitlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help, **defaults):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--replicas", type=int, default=defaults.get("replicas", 1))
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV}, else stdout)")
        p.add_argument("--plot", action="store_true", help="also write an SVG of the primary series")
        return p

    p = sub.add_parser("run", help="run an experiment config file")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="re-parse emitted CSVs and check row invariants")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_validate)

    for name, fn, help, n in [("pmf", cmd_pmf, "exact law of Y_N", 3),
                              ("walk", cmd_walk, "one unpredictable walk path", 20)]:
        p = add(name, fn, help)
        p.add_argument("--ell", type=int, default=2 if name == "pmf" else 3)
        p.add_argument("--r", type=int, default=1)
        p.add_argument("--n", type=int, default=n)

    p = add("profile", cmd_profile, "Monte Carlo concentration max_x P[S_k=x]", replicas=10_000)
    p.add_argument("--ell", type=int, default=3)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--k", type=int, action="append", help="horizon (repeatable)")

    p = add("eit", cmd_eit, "collision-tail fit of a path measure", replicas=2000)
    p.add_argument("--measure", choices=["z3", "uniform"], default="z3")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--ell", type=int, default=3)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--n", type=int, default=256, help="path length L")

    p = add("perc", cmd_perc, "percolation sample and origin cluster")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--depth", type=int, default=20)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--mode", choices=["bond", "site"], default="bond")
    p.add_argument("--ordinary", action="store_true", help="unoriented L-infinity box")

    p = add("resist", cmd_resist, "resistance growth profile", replicas=50)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--p", type=float, default=0.95)
    p.add_argument("--depth", type=int, default=16)
    p.add_argument("--radii", type=int, nargs="+")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        code = args.func(args)
    except BudgetExceededError as exc:
        print(f"eitlab: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (SchemaError, ValueError) as exc:
        ap.print_usage(sys.stderr)
        print(f"eitlab: error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
