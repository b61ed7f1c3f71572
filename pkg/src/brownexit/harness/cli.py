"""Command-line entry point: ``brownexit <subcommand> --config c.json --seed S --out r.csv``.

Every subcommand writes a CSV with a fixed header and, next to it, a run
manifest ``<out stem>.manifest.json``.  Outputs are written only after the
whole computation has succeeded.  Exit codes: 0 pass, 1 verdict failure,
2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from brownexit import __version__
from brownexit.capacity import dirichlet_condenser, energy_capacity, equilibrium_mass
from brownexit.geometry import GeometryError, as_point, compact_from_config, domain_from_config
from brownexit.harness.experiments import verify_fast_exit, verify_hardy_tails, verify_long_stay
from brownexit.harness.lemma import check_lemma1, lemma1_bound
from brownexit.harness.schlicht import schlicht_entry
from brownexit.kernels import dump_tables
from brownexit.pde import eigen_lambda, exit_cdf_flux, solve_killed_density, survival_curve
from brownexit.sampler import em_exit, fit_tail_exponent, wos_exit

log = logging.getLogger("brownexit")

SUBCOMMANDS = (
    "simulate",
    "pde",
    "capacity",
    "lambda",
    "tails",
    "verify-fast-exit",
    "verify-long-stay",
    "verify-lemma1",
    "verify-hardy",
    "dump-tables",
)


class ConfigError(ValueError):
    pass


def _keys(cfg: dict, required: set, optional: set = frozenset()) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(cfg) - required - set(optional)
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    missing = required - set(cfg)
    if missing:
        raise ConfigError(f"missing config keys: {sorted(missing)}")
    return cfg


def _times(spec) -> np.ndarray:
    """A list of times, or ``{"start", "stop", "num", "spacing"}``."""
    if isinstance(spec, dict):
        _keys(spec, {"start", "stop", "num"}, {"spacing"})
        spacing = spec.get("spacing", "linear")
        if spacing not in ("linear", "log"):
            raise ConfigError("spacing must be 'linear' or 'log'")
        f = np.linspace if spacing == "linear" else np.geomspace
        return f(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
    t = np.asarray(spec, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ConfigError("times must be a nonempty list")
    return t


def _entry(spec):
    if isinstance(spec, str):
        return schlicht_entry(spec)
    _keys(spec, {"id"}, {"angle"})
    return schlicht_entry(spec["id"], spec.get("angle"))


class Output:
    """CSV table plus manifest fields produced by one subcommand."""

    def __init__(self, columns, rows, passed=True, manifest=None, raw=None):
        self.columns = list(columns)
        self.rows = rows
        self.passed = passed
        self.manifest = manifest or {}
        self.raw = raw  # preformatted CSV text, if the engine writes its own

    def csv_text(self) -> str:
        if self.raw is not None:
            return self.raw
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg, args) -> Output:
    _keys(cfg, {"domain", "n"}, {"x0", "sampler", "eps", "dt", "t_max", "bridge"})
    dom = domain_from_config(cfg["domain"])
    x0 = as_point(cfg.get("x0", [0.0] * dom.dim), dom.dim)
    sampler = cfg.get("sampler", "wos")
    n = int(cfg["n"])
    if sampler == "wos":
        batch = wos_exit(dom, x0, float(cfg.get("eps", 1e-4)), n, args.seed, t_max=cfg.get("t_max"), threads=args.threads)
    elif sampler == "em":
        batch = em_exit(
            dom, x0, float(cfg.get("dt", 1e-3)), n, args.seed, t_max=cfg.get("t_max"), bridge=bool(cfg.get("bridge", True)), threads=args.threads
        )
    else:
        raise ConfigError("sampler must be 'wos' or 'em'")
    cols = ["index", "exit_time", "exit_x", "exit_y", "exit_z"][: 2 + dom.dim] + ["censored"]
    rows = [[i, t, *x, c] for i, (t, x, c) in enumerate(zip(batch.times, batch.points, batch.censored))]
    return Output(cols, rows, manifest={"batch": batch.sidecar() | {"censored": int(batch.censored.sum())}})


def cmd_pde(cfg, args) -> Output:
    _keys(cfg, {"domain", "t"}, {"x0", "h", "output", "tags"})
    dom = domain_from_config(cfg["domain"])
    x0 = as_point(cfg.get("x0", [0.0] * dom.dim), dom.dim)
    t = _times(cfg["t"])
    h = cfg.get("h")
    kind = cfg.get("output", "exit_cdf")
    if kind == "density":
        f = solve_killed_density(dom, x0, float(t.max()), h, times=t)
        buf = io.StringIO()
        cols = ["t", "node_x", "node_y", "node_z"][: 1 + dom.dim] + ["density"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for s, p in zip(f.snap_times, f.snapshots):
            for x, v in zip(f.nodes, p):
                w.writerow([_fmt(s)] + [_fmt(c) for c in x] + [_fmt(v)])
        return Output(cols, None, raw=buf.getvalue(), manifest={"engine": f.meta, "h": f.h, "dt": f.dt})
    if kind == "exit_cdf":
        F = exit_cdf_flux(dom, x0, t, resolution=h, error_estimate=True, tags=cfg.get("tags"))
        rows = list(zip(F.t, F.cdf, F.error, F.truncation_bound))
        return Output(["t", "cdf", "error_estimate", "truncation_bound"], rows, manifest={"h": F.h})
    if kind == "survival":
        S = survival_curve(dom, x0, t, h)
        return Output(["t", "survival"], list(zip(t, S)), manifest={"h": h})
    raise ConfigError("output must be 'density', 'exit_cdf' or 'survival'")


def cmd_capacity(cfg, args) -> Output:
    _keys(cfg, {"kind", "compact"}, {"domain", "points", "h"})
    K = compact_from_config(cfg["compact"])
    kind = cfg["kind"]
    if kind == "energy":
        rep = energy_capacity(K, points=cfg.get("points"))
    elif kind == "condenser":
        rep = dirichlet_condenser(domain_from_config(cfg["domain"]), K, cfg.get("h"))
    elif kind == "equilibrium":
        rep = equilibrium_mass(domain_from_config(cfg["domain"]), K, int(cfg.get("points", 256)))
    else:
        raise ConfigError("kind must be 'energy', 'condenser' or 'equilibrium'")
    cols = ["kind", "value", "convention_constant", "extrapolated", "error_estimate"]
    row = [rep.kind, rep.value, rep.convention_constant, rep.extrapolated, rep.error_estimate]
    print(f"{'quantity':<22}{'value':>22}")
    for c, v in zip(cols, row):
        print(f"{c:<22}{_fmt(v):>22}")
    return Output(cols, [row], manifest={"report": json.loads(rep.to_json())})


def cmd_lambda(cfg, args) -> Output:
    _keys(cfg, {"domain"}, {"h"})
    res = eigen_lambda(domain_from_config(cfg["domain"]), cfg.get("h"))
    return Output(["lambda", "residual", "h", "flag"], [[res.lam, res.residual, res.h, res.flag or ""]])


def cmd_tails(cfg, args) -> Output:
    _keys(cfg, {"domain", "n", "window"}, {"x0", "eps", "points"})
    dom = domain_from_config(cfg["domain"])
    x0 = as_point(cfg.get("x0", [0.0] * dom.dim), dom.dim)
    a, b = map(float, cfg["window"])
    batch = wos_exit(dom, x0, float(cfg.get("eps", 1e-4)), int(cfg["n"]), args.seed, t_max=b, threads=args.threads)
    fit = fit_tail_exponent(batch, (a, b * (1 - 1e-9)), int(cfg.get("points", 16)))
    lo, hi = fit.ci()
    cols = ["t_start", "t_end", "exponent", "stderr", "ci_low", "ci_high", "super_polynomial"]
    return Output(cols, [[a, b, fit.exponent, fit.stderr, lo, hi, fit.super_polynomial]])


def _experiment_output(res) -> Output:
    return Output(res.columns, res.table.tolist(), passed=res.passed, manifest={"experiment": res.to_dict()})


def cmd_verify_fast_exit(cfg, args) -> Output:
    _keys(cfg, {"U", "W", "t"}, {"h", "margin", "ks_samples", "eps"})
    res = verify_fast_exit(
        domain_from_config(cfg["U"]),
        domain_from_config(cfg["W"]),
        _times(cfg["t"]),
        resolution=cfg.get("h"),
        margin=float(cfg.get("margin", 0.25)),
        ks_samples=int(cfg.get("ks_samples", 100_000)),
        seed=args.seed,
        eps=float(cfg.get("eps", 1e-4)),
        threads=args.threads,
    )
    return _experiment_output(res)


def cmd_verify_long_stay(cfg, args) -> Output:
    _keys(cfg, {"entry", "t"}, {"samples", "eps", "h"})
    res = verify_long_stay(
        _entry(cfg["entry"]),
        _times(cfg["t"]),
        samples=int(cfg.get("samples", 20_000)),
        seed=args.seed,
        eps=float(cfg.get("eps", 1e-4)),
        threads=args.threads,
        resolution=cfg.get("h"),
    )
    return _experiment_output(res)


def cmd_verify_lemma1(cfg, args) -> Output:
    _keys(cfg, {"compact", "a", "delta"}, {"points", "h", "t_lo_fraction", "nodes"})
    consts = lemma1_bound(compact_from_config(cfg["compact"]), cfg["a"], float(cfg["delta"]), int(cfg.get("nodes", 256)))
    chk = check_lemma1(consts, int(cfg.get("points", 20)), float(cfg.get("h", 1 / 160)), float(cfg.get("t_lo_fraction", 0.05)))
    rows = list(zip(chk.t, chk.probability, chk.bound, chk.holds))
    man = {
        "constants": {"M": consts.M, "C": consts.C, "T1": consts.T1, "T": consts.T, "exponent": consts.exponent},
        "h": chk.h,
    }
    return Output(["t", "probability", "bound", "holds"], rows, passed=chk.passed, manifest=man)


def cmd_verify_hardy(cfg, args) -> Output:
    _keys(cfg, {"U", "W"}, {"window", "samples", "eps", "points", "growth"})
    res = verify_hardy_tails(
        _entry(cfg["U"]),
        _entry(cfg["W"]),
        window=tuple(cfg.get("window", (10.0, 100.0))),
        samples=int(cfg.get("samples", 100_000)),
        seed=args.seed,
        eps=float(cfg.get("eps", 1e-4)),
        threads=args.threads,
        points=int(cfg.get("points", 16)),
        growth=float(cfg.get("growth", 5.0)),
    )
    return _experiment_output(res)


COMMANDS = {
    "simulate": cmd_simulate,
    "pde": cmd_pde,
    "capacity": cmd_capacity,
    "lambda": cmd_lambda,
    "tails": cmd_tails,
    "verify-fast-exit": cmd_verify_fast_exit,
    "verify-long-stay": cmd_verify_long_stay,
    "verify-lemma1": cmd_verify_lemma1,
    "verify-hardy": cmd_verify_hardy,
}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brownexit", description="Brownian exit-time computations and verification runs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, required=name != "dump-tables")
        s.add_argument("--seed", type=_seed, default=0)
        s.add_argument("--out", type=Path)
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("--verbose", action="store_true")
    return p


def manifest_path(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def run_cli(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2

    if args.command == "dump-tables":
        text = dump_tables() + "\n"
        if args.out:
            args.out.write_text(text)
        else:
            sys.stdout.write(text)
        return 0

    start = time.perf_counter()
    try:
        cfg = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config {args.config}: {exc}", file=sys.stderr)
        return 2
    try:
        out = COMMANDS[args.command](cfg, args)
    except (ConfigError, GeometryError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    wall = time.perf_counter() - start

    text = out.csv_text()
    if args.out is None:
        sys.stdout.write(text)
    else:
        manifest = {
            "command": args.command,
            "config": cfg,
            "seed": args.seed,
            "package_version": __version__,
            "csv": args.out.name,
            "passed": bool(out.passed),
            **out.manifest,
            # run-dependent fields are kept apart so the rest can be compared byte for byte
            "runtime": {"wall_time_s": wall, "threads": args.threads},
        }
        args.out.write_text(text)
        manifest_path(args.out).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    log.info("%s finished in %.3f s (%s)", args.command, wall, "pass" if out.passed else "FAIL")
    return 0 if out.passed else 1


def main() -> None:
    sys.exit(run_cli())
