"""Command-line front end.

Every run writes ``manifest.json`` next to its outputs.  ``replay`` re-runs
a manifest into a new directory and compares output hashes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__, copulas, dptree, finance, harness, kernels
from .errors import DataError, DomainError, DPTCopulaError, UsageError
from .grid import GridDensity

GLOBAL_VALUED = ("--seed", "--threads", "--out")
GLOBAL_FLAGS = ("--full",)


# --------------------------------------------------------------------------
# file helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def read_points_csv(path) -> np.ndarray:
    """``(u, v)`` pairs, one per line, with an optional ``u,v`` header."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    pts = []
    with fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or (lineno == 1 and [x.strip().lower() for x in rec] == ["u", "v"]):
                continue
            try:
                if len(rec) != 2:
                    raise ValueError
                u, v = float(rec[0]), float(rec[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed row {','.join(rec)!r}") from exc
            if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
                raise DomainError(f"{path}:{lineno}: ({u!r}, {v!r}) outside the unit square")
            pts.append((u, v))
    return np.array(pts, dtype=float).reshape(-1, 2)


def write_points_csv(points: np.ndarray, path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write("u,v\n")
        fh.writelines(f"{u!r},{v!r}\n" for u, v in np.asarray(points).tolist())


# --------------------------------------------------------------------------
# subcommands


def cmd_fit(args, ctx) -> dict:
    pts = read_points_csv(args.input)
    ctx.inputs.append(args.input)
    tree = dptree.fit(pts, args.M, dptree.HyperSchedule.parse(args.schedule), args.weight)
    grid = dptree.posterior_mean_grid(tree)
    fix = harness.normalizer(args.normalize)
    if fix is not None:
        grid = fix(grid)
    grid.to_csv(ctx.path("grid.csv"))
    dptree.write_tree_csv(tree, ctx.path("tree.csv"))
    return {"points": len(pts), "M": args.M, "schedule": args.schedule, "normalize": args.normalize}


def cmd_sample(args, ctx) -> dict:
    if args.mode not in dptree.MODES:
        raise UsageError(f"mode must be one of {dptree.MODES}, got {args.mode!r}")
    if args.n < 0:
        raise UsageError(f"n must be nonnegative, got {args.n}")
    rng = np.random.default_rng(np.random.SeedSequence(ctx.seed))
    if args.tree is not None:
        ctx.inputs.append(args.tree)
        pts = dptree.sample_predictive(dptree.read_tree_csv(args.tree), rng, args.n, args.mode)
    elif args.grid is not None:
        if args.mode != "mean_measure":
            raise UsageError("a grid input fixes the measure; use --mode mean_measure or pass --tree")
        ctx.inputs.append(args.grid)
        pts = dptree.sample_grid_points(GridDensity.from_csv(args.grid), args.n, rng) if args.n else np.empty((0, 2))
    else:
        tree = dptree.new_prior(args.M)
        pts = dptree.sample_predictive(tree, rng, args.n, args.mode)
    write_points_csv(pts, ctx.path("samples.csv"))
    return {"n": args.n, "mode": args.mode}


def cmd_simulate(args, ctx) -> dict:
    cfg = harness.ExperimentConfig.from_file(args.config)
    ctx.inputs.append(args.config)
    ctx.config_text = cfg.source_text
    if ctx.full:
        cfg = cfg.at_full_scale()
    if args.datasets is not None:
        cfg = replace(cfg, datasets=args.datasets)
    if args.normalize is not None:
        cfg = replace(cfg, normalize=args.normalize)
    name = cfg.name
    info = {"kind": cfg.kind, "draws": cfg.draws, "replications": cfg.replications,
            "datasets": cfg.datasets, "Ns": list(cfg.Ns), "normalize": cfg.normalize}
    if cfg.kind == "kl_table":
        rows = harness.run_kl_table(cfg, ctx.seed, ctx.threads)
        harness.write_csv(ctx.path(f"{name}_long.csv"), harness.KLRow.columns(), rows)
        header, body = harness.pivot_kl(rows)
        harness.write_csv(ctx.path(f"{name}_table.csv"), header, body)
        try:
            fits = harness.run_convergence_fit(rows)
        except UsageError as exc:
            info["convergence"] = f"skipped: {exc}"
        else:
            harness.write_csv(ctx.path(f"{name}_convergence.csv"), harness.ConvergenceFit.columns(), fits)
    else:
        rows = harness.run_freq_comparison(cfg, ctx.seed, ctx.threads)
        harness.write_csv(ctx.path(f"{name}_long.csv"), harness.MetricReport.columns(), rows)
        summary = harness.summarize_freq(rows)
        harness.write_csv(ctx.path(f"{name}_summary.csv"), harness.FreqSummary.columns(), summary)
        header, body = harness.pivot_freq(summary)
        harness.write_csv(ctx.path(f"{name}_table.csv"), header, body)
    return info


def _parse_rolling(text):
    try:
        vals = [int(x) for x in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"--rolling expects T_tr,T_te,t_e,t_p, got {text!r}") from exc
    if len(vals) != 4:
        raise UsageError(f"--rolling expects four integers, got {text!r}")
    return vals


def cmd_finance(args, ctx) -> dict:
    a = finance.read_prices(args.prices_a)
    b = finance.read_prices(args.prices_b)
    ctx.inputs += [args.prices_a, args.prices_b]
    info = {"mode": args.mode, "M": args.M, "alignment_policy": "inner join on dates"}
    if args.mode == "cv":
        u, prep = finance.prepare_cv(a, b)
        rng = np.random.default_rng(np.random.SeedSequence(ctx.seed))
        scores = finance.cross_validate(u, args.folds, finance.default_estimators(args.M), rng)
        header = ["method", "mean_cross_entropy"]
        body = [[m, harness.format_value(s)] for m, s in scores.items()]
        info["folds"] = args.folds
    elif args.mode == "rolling":
        T_tr, T_te, t_e, t_p = _parse_rolling(args.rolling)
        cfg = finance.RollingConfig(T_tr, T_te, t_e, t_p, args.historic_weight, args.M)
        u, prep = finance.prepare_rolling(a, b, cfg)
        results = finance.rolling_predict(u, cfg)
        header = ["method", "avg_loglik", "rmise_c"]
        body = [[r.method, harness.format_value(r.avg_loglik), harness.format_value(r.rmise_c)] for r in results]
        info["rolling"] = [T_tr, T_te, t_e, t_p]
        info["historic_weight"] = args.historic_weight
    else:
        raise UsageError(f"mode must be cv or rolling, got {args.mode!r}")
    harness.write_csv(ctx.path("report.csv"), header, body)
    garch = [["asset", "omega", "alpha1", "beta1", "loglik"]]
    for name, f in zip(("a", "b"), prep.fits):
        garch.append([name] + [harness.format_value(float(x)) for x in (f.omega, f.alpha1, f.beta1, f.loglik)])
    harness.write_csv(ctx.path("garch.csv"), garch[0], garch[1:])
    info["common_dates"] = int(len(prep.alignment.dates))
    info["dropped_dates_a"] = [str(d) for d in prep.alignment.dropped_first]
    info["dropped_dates_b"] = [str(d) for d in prep.alignment.dropped_second]
    return info


def cmd_synth_prices(args, ctx) -> dict:
    model = copulas.parse_model(args.model)
    if args.T < 2:
        raise UsageError(f"T must be at least 2, got {args.T}")
    rng = np.random.default_rng(np.random.SeedSequence(ctx.seed))
    a, b = finance.synthetic_prices(model, args.T, rng, omega=args.omega, a=args.alpha1, b=args.beta1)
    finance.write_prices(a, ctx.path("prices_a.csv"))
    finance.write_prices(b, ctx.path("prices_b.csv"))
    return {"model": copulas.describe(model), "T": args.T}


def cmd_replay(args, ctx) -> dict:
    manifest_path = Path(args.manifest)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    for key in ("command_argv", "seed", "full", "cwd", "outputs"):
        if key not in manifest:
            raise DataError(f"manifest {manifest_path} lacks {key!r}")
    threads = ctx.threads if ctx.threads_given else manifest.get("threads", 1)
    out = ctx.out.resolve()
    argv = ["--seed", str(manifest["seed"]), "--threads", str(threads), "--out", str(out)]
    if manifest["full"]:
        argv.append("--full")
    argv += manifest["command_argv"]
    with _chdir(manifest["cwd"]):
        code = main(argv)
    if code != 0:
        raise DataError(f"replayed command exited with code {code}")
    mismatched = []
    for name, digest in manifest["outputs"].items():
        p = out / name
        if not p.exists() or sha256_file(p) != digest:
            mismatched.append(name)
    ctx.replay_ok = not mismatched
    return {"replayed": str(manifest_path), "mismatched": mismatched}


@contextmanager
def _chdir(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


# --------------------------------------------------------------------------
# run context and manifest


class RunContext:
    def __init__(self, out: Path, seed: int, threads: int, threads_given: bool, full: bool):
        self.out = out
        self.seed = seed
        self.threads = threads
        self.threads_given = threads_given
        self.full = full
        self.inputs: list = []
        self.outputs: list = []
        self.config_text = ""
        self.replay_ok = True

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return self.out / name


def _versions() -> dict:
    return {
        "dptcopula": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def write_manifest(ctx: RunContext, command: str, command_argv: list, info: dict) -> None:
    manifest = {
        "command": command,
        "command_argv": command_argv,
        "cwd": os.getcwd(),
        "seed": ctx.seed,
        "threads": ctx.threads,
        "full": ctx.full,
        "config_sha256": hashlib.sha256(ctx.config_text.encode()).hexdigest() if ctx.config_text else None,
        "versions": _versions(),
        "backend": kernels.BACKEND,
        "inputs": {str(p): sha256_file(p) for p in ctx.inputs},
        "outputs": {name: sha256_file(ctx.out / name) for name in dict.fromkeys(ctx.outputs)},
        "details": info,
    }
    ctx.out.mkdir(parents=True, exist_ok=True)
    (ctx.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# argument parsing


def _u64(text):
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64), got {v}")
    return v


def _positive(text):
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _global_options(parser, suppress: bool):
    d = argparse.SUPPRESS
    parser.add_argument("--seed", type=_u64, default=d if suppress else 0, help="root seed (default 0)")
    parser.add_argument("--threads", type=_positive, default=d if suppress else None,
                        help="worker processes (default 1)")
    parser.add_argument("--out", type=Path, default=d if suppress else Path("out"),
                        help="output directory (default ./out)")
    parser.add_argument("--full", action="store_true", default=d if suppress else False,
                        help="full-scale draws and replications")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dptcopula", description="D-P tree copula estimation")
    _global_options(parser, suppress=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        _global_options(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("fit", cmd_fit, "posterior-mean grid from (u, v) data")
    p.add_argument("input", help="CSV of u,v pairs in [0, 1]")
    p.add_argument("--M", type=int, default=8, help="tree depth (default 8)")
    p.add_argument("--schedule", default="canonical", help="canonical | scaled:z | power:z,p | constant:z")
    p.add_argument("--normalize", choices=harness.NORMALIZATIONS, default="none")
    p.add_argument("--weight", type=float, default=1.0, help="count per observation")

    p = add("sample", cmd_sample, "posterior predictive draws")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--tree", help="tree.csv written by fit")
    src.add_argument("--grid", help="grid.csv written by fit")
    p.add_argument("--M", type=int, default=8, help="prior depth when no input is given")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--mode", default="mean_measure", help="mean_measure | single_measure")

    p = add("simulate", cmd_simulate, "run a simulation table from a config")
    p.add_argument("config", help="experiment config (see docs/config.md)")
    p.add_argument("--datasets", type=_positive, default=None, help="datasets per cell for K-L tables")
    p.add_argument("--normalize", choices=harness.NORMALIZATIONS, default=None)

    p = add("finance", cmd_finance, "copula estimation on two price series")
    p.add_argument("prices_a")
    p.add_argument("prices_b")
    p.add_argument("--mode", default="cv", help="cv | rolling")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--M", type=int, default=finance.FINANCE_LEVEL)
    p.add_argument("--rolling", default="500,500,250,50", help="T_tr,T_te,t_e,t_p")
    p.add_argument("--historic-weight", type=float, default=0.1)

    p = add("synth-prices", cmd_synth_prices, "synthetic GARCH price pair with a given copula")
    p.add_argument("model", help='e.g. "gaussian rho=0.5"')
    p.add_argument("--T", type=int, default=5000, help="number of returns")
    p.add_argument("--omega", type=float, default=1e-6)
    p.add_argument("--alpha1", type=float, default=0.08)
    p.add_argument("--beta1", type=float, default=0.90)

    p = add("replay", cmd_replay, "re-run a manifest and compare output hashes")
    p.add_argument("manifest")
    return parser


def strip_globals(argv: list) -> list:
    """The subcommand's own arguments, without global options."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in GLOBAL_VALUED:
            i += 2
            continue
        if tok in GLOBAL_FLAGS or any(tok.startswith(g + "=") for g in GLOBAL_VALUED):
            i += 1
            continue
        out.append(tok)
        i += 1
    return out


def _absolute_inputs(command_argv: list, args) -> list:
    """Input paths are made absolute so replays work from any directory."""
    paths = {}
    for attr in ("input", "tree", "grid", "config", "prices_a", "prices_b", "manifest"):
        val = getattr(args, attr, None)
        if val is not None:
            paths[str(val)] = str(Path(val).resolve())
    return [paths.get(tok, tok) for tok in command_argv]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    threads_given = args.threads is not None
    ctx = RunContext(args.out, args.seed, args.threads or 1, threads_given, args.full)
    command_argv = _absolute_inputs(strip_globals(argv), args)
    try:
        info = args.func(args, ctx)
        if args.command != "replay":
            write_manifest(ctx, args.command, command_argv, info)
    except DPTCopulaError as exc:
        print(f"dptcopula {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    if not ctx.replay_ok:
        print(f"dptcopula replay: outputs differ: {', '.join(info['mismatched'])}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
