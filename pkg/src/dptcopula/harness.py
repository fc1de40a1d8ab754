"""Replication engine for the simulation tables.

Every unit of work (one grid cell and one replication) draws its random
numbers from ``SeedSequence(root_seed, spawn_key=(cell, replication))``, so
results do not depend on the number of workers or on scheduling order.
Results are reduced in task order.
"""

from __future__ import annotations

import configparser
import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import copulas, dptree, estimators, metrics, normalize
from .errors import ConfigError, UsageError
from .metrics import MetricReport, format_value

KINDS = ("kl_table", "freq_comparison")
NORMALIZATIONS = ("none", "ipf", "pit")


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    families: tuple
    Ns: tuple
    M: int
    draws: int = 200
    datasets: int = 1
    replications: int = 25
    n_mc: int = 10_000
    normalize: str = "none"
    estimators: tuple = estimators.ESTIMATORS
    grid_points: int = 512
    full_draws: int = 1000
    full_replications: int = 50
    full_Ns: tuple = ()
    name: str = "experiment"
    source_text: str = field(default="", compare=False, repr=False)

    def at_full_scale(self) -> "ExperimentConfig":
        Ns = tuple(self.Ns) + tuple(n for n in self.full_Ns if n not in self.Ns)
        return replace(self, draws=self.full_draws, replications=self.full_replications, Ns=Ns)

    @classmethod
    def from_text(cls, text: str, name: str = "experiment") -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        if "experiment" not in parser:
            raise ConfigError("config needs an [experiment] section")
        sec = parser["experiment"]
        known = {
            "kind", "families", "ns", "m", "draws", "datasets", "replications", "n_mc",
            "normalize", "estimators", "grid_points", "full_draws", "full_replications",
            "full_ns", "name",
        }
        for key in sec:
            if key not in known:
                raise ConfigError(f"unknown key {key!r}")

        def need(key):
            if key not in sec:
                raise ConfigError(f"missing required key {key!r}")
            return sec[key]

        def as_int(key, default=None, minimum=0):
            if key not in sec:
                if default is None:
                    raise ConfigError(f"missing required key {key!r}")
                return default
            try:
                val = int(sec[key])
            except ValueError as exc:
                raise ConfigError(f"key {key!r}: expected an integer, got {sec[key]!r}") from exc
            if val < minimum:
                raise ConfigError(f"key {key!r}: must be >= {minimum}, got {val}")
            return val

        def as_int_list(key, default=None):
            if key not in sec:
                if default is None:
                    raise ConfigError(f"missing required key {key!r}")
                return default
            try:
                vals = tuple(int(x.replace("_", "")) for x in sec[key].replace(",", " ").split())
            except ValueError as exc:
                raise ConfigError(f"key {key!r}: expected integers, got {sec[key]!r}") from exc
            if any(v < 0 for v in vals):
                raise ConfigError(f"key {key!r}: values must be >= 0")
            return vals

        kind = need("kind").strip()
        if kind not in KINDS:
            raise ConfigError(f"key 'kind': unknown value {kind!r}; expected one of {KINDS}")
        fams = []
        for line in need("families").splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                fams.append(copulas.parse_model(line))
            except UsageError as exc:
                raise ConfigError(f"key 'families': {exc}") from exc
        if not fams:
            raise ConfigError("key 'families': no families listed")
        M = as_int("m", minimum=1)
        if M > dptree.MAX_TREE_LEVEL:
            raise ConfigError(f"key 'M': must be <= {dptree.MAX_TREE_LEVEL}")
        norm = sec.get("normalize", "none").strip()
        if norm not in NORMALIZATIONS:
            raise ConfigError(f"key 'normalize': unknown value {norm!r}")
        ests = tuple(e.strip() for e in sec.get("estimators", ",".join(estimators.ESTIMATORS)).split(",") if e.strip())
        for e in ests:
            if e not in estimators.ESTIMATORS:
                raise ConfigError(f"key 'estimators': unknown value {e!r}")
        grid_points = as_int("grid_points", 512, minimum=64)
        return cls(
            kind=kind,
            families=tuple(fams),
            Ns=as_int_list("ns"),
            M=M,
            draws=as_int("draws", 200, minimum=1),
            datasets=as_int("datasets", 1, minimum=1),
            replications=as_int("replications", 25, minimum=1),
            n_mc=as_int("n_mc", 10_000, minimum=1),
            normalize=norm,
            estimators=ests,
            grid_points=grid_points,
            full_draws=as_int("full_draws", 1000, minimum=1),
            full_replications=as_int("full_replications", 50, minimum=1),
            full_Ns=as_int_list("full_ns", ()),
            name=sec.get("name", name).strip(),
            source_text=text,
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, name=path.stem)


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package, by stem or file name."""
    if not name.endswith(".cfg"):
        name += ".cfg"
    return Path(__file__).parent / "configs" / name


# --------------------------------------------------------------------------
# seeded task pool


def task_rng(root_seed: int, cell: int, replication: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=(cell, replication)))


_SHARED: dict = {}


def _init_shared(shared):
    _SHARED.clear()
    _SHARED.update(shared)


def run_tasks(func: Callable, tasks: Sequence, threads: int = 1, shared: dict | None = None) -> list:
    """Apply ``func`` to each task, in a process pool when ``threads > 1``.

    ``shared`` is read-only data installed in every worker before any task
    runs.  Results come back in task order.
    """
    shared = shared or {}
    if threads <= 1 or len(tasks) <= 1:
        _init_shared(shared)
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_shared, initargs=(shared,)) as pool:
        return list(pool.map(func, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


# --------------------------------------------------------------------------
# K-L table


@dataclass(frozen=True)
class KLRow:
    family: str
    N: int
    dataset: int
    draws: int
    kl_mean: float
    kl_sd: float
    mc_se: float

    @staticmethod
    def columns():
        return ["family", "N", "dataset", "draws", "kl_mean", "kl_sd", "mc_se"]

    def as_row(self):
        return [self.family, str(self.N), str(self.dataset), str(self.draws),
                format_value(self.kl_mean), format_value(self.kl_sd), format_value(self.mc_se)]


def normalizer(name):
    return {"none": None, "ipf": normalize.ipf_normalize, "pit": normalize.pit_normalize}[name]


def _kl_task(task):
    root, cell, rep, model, N, M, draws, n_mc, norm = task
    rng = task_rng(root, cell, rep)
    data = model.sample(rng, N)
    tree = dptree.fit(data, M)
    truth_pts, log_c = model.sample_with_log_density(rng, n_mc)
    kls = np.empty(draws)
    # per-draw K-L and the variance of each draw's Monte Carlo mean
    mc_var = np.empty(draws)
    fix = normalizer(norm)
    sampler = dptree.PathSampler(tree, truth_pts) if fix is None else None
    for d in range(draws):
        if sampler is not None:
            log_p = sampler.draw_log_density(rng)
        else:
            grid = fix(dptree.sample_measure(tree, rng))
            with np.errstate(divide="ignore"):
                log_p = np.log(grid.density(truth_pts[:, 0], truth_pts[:, 1]))
        diff = log_c - log_p
        kls[d] = diff.mean()
        mc_var[d] = diff.var(ddof=1) / n_mc if n_mc > 1 else math.nan
    sd = float(kls.std(ddof=1)) if draws > 1 else math.nan
    mc_se = float(math.sqrt(mc_var.mean()))
    return KLRow(copulas.describe(model), N, rep, draws, float(kls.mean()), sd, mc_se)


def run_kl_table(cfg: ExperimentConfig, seed: int, threads: int = 1) -> list[KLRow]:
    """Mean and spread of K-L over posterior measure draws, per family and N."""
    tasks = []
    cell = 0
    for model in cfg.families:
        for N in cfg.Ns:
            for r in range(cfg.datasets):
                tasks.append((seed, cell, r, model, N, cfg.M, cfg.draws, cfg.n_mc, cfg.normalize))
            cell += 1
    return run_tasks(_kl_task, tasks, threads)


def pivot_kl(rows: Sequence[KLRow]) -> tuple[list[str], list[list[str]]]:
    """Families down, N across; cells ``mean (sd)`` averaged over datasets."""
    fams = list(dict.fromkeys(r.family for r in rows))
    Ns = sorted({r.N for r in rows})
    header = ["family"] + [str(n) for n in Ns]
    body = []
    for f in fams:
        line = [f]
        for n in Ns:
            sel = [r for r in rows if r.family == f and r.N == n]
            if not sel:
                line.append("")
                continue
            mean = float(np.mean([r.kl_mean for r in sel]))
            sd = float(np.mean([r.kl_sd for r in sel]))
            line.append(f"{mean:.2f} ({sd:.2f})")
        body.append(line)
    return header, body


# --------------------------------------------------------------------------
# frequentist comparison


def _freq_truth(model: copulas.CopulaModel, M: int, grid_points: int, cache_dir=None) -> dict:
    g = metrics.midpoint_grid(grid_points)
    return {
        "masses": copulas.true_cell_masses(model, M, cache_dir),
        "cdf": copulas.cdf_table(model, g, cache_dir),
        "density": np.exp(model.log_density_grid(g)),
    }


def _freq_task(task):
    root, cell, rep, fam_idx, N, cfg = task
    model = cfg.families[fam_idx]
    truth = _SHARED[fam_idx]
    rng = task_rng(root, cell, rep)
    data = model.sample(rng, N)
    truth_pts, log_c = model.sample_with_log_density(rng, cfg.n_mc)
    fix = normalizer(cfg.normalize)
    out = []
    for name in cfg.estimators:
        est = estimators.fit_estimator(name, data, cfg.M)
        if fix is not None and isinstance(est, estimators.GridEstimate) and name == "dptree":
            est = estimators.GridEstimate(fix(est.grid), name)
        log_p = est.log_density(truth_pts[:, 0], truth_pts[:, 1])
        if log_p is None:
            kl = None
        elif np.isneginf(log_p).any():
            kl = math.inf
        else:
            kl = float(np.mean(log_c - log_p))
        dens = est.density_grid(metrics.midpoint_grid(cfg.grid_points))
        mise = None if dens is None else float(np.mean((truth["density"] - dens) ** 2))
        mise_c = float(np.mean((truth["cdf"] - est.cdf_grid(metrics.midpoint_grid(cfg.grid_points))) ** 2))
        mse_g = metrics.mse_g(truth["masses"], est.cell_masses(cfg.M))
        out.append(MetricReport(name, copulas.describe(model), N, cfg.M, rep, kl, mise, mise_c, mse_g))
    return out


def run_freq_comparison(cfg: ExperimentConfig, seed: int, threads: int = 1, cache_dir=None) -> list[MetricReport]:
    """All estimators on fresh datasets, ``replications`` times per (family, N)."""
    # truth tables are built once here and shared read-only with workers
    shared = {i: _freq_truth(m, cfg.M, cfg.grid_points, cache_dir) for i, m in enumerate(cfg.families)}
    tasks = []
    cell = 0
    for i, _ in enumerate(cfg.families):
        for N in cfg.Ns:
            if N < 1:
                raise ConfigError("key 'Ns': the frequentist comparison needs N >= 1")
            for r in range(cfg.replications):
                tasks.append((seed, cell, r, i, N, cfg))
            cell += 1
    results = run_tasks(_freq_task, tasks, threads, shared)
    return [row for rows in results for row in rows]


def _agg(values, root: bool):
    if any(v is None for v in values):
        return None
    if any(math.isinf(v) for v in values):
        return math.inf
    m = float(np.mean(values))
    return math.sqrt(m) if root else m


@dataclass(frozen=True)
class FreqSummary:
    family: str
    N: int
    estimator: str
    replications: int
    kl: float | None
    rmise: float | None
    rmise_c: float | None
    rmse_g: float | None

    @staticmethod
    def columns():
        return ["family", "N", "estimator", "replications", "kl", "rmise", "rmise_c", "rmse_g"]

    def as_row(self):
        return [self.family, str(self.N), self.estimator, str(self.replications),
                format_value(self.kl), format_value(self.rmise),
                format_value(self.rmise_c), format_value(self.rmse_g)]


def summarize_freq(rows: Sequence[MetricReport]) -> list[FreqSummary]:
    """Replication averages: mean K-L, and root of mean MISE, MISE_C and MSE_g."""
    keys = list(dict.fromkeys((r.family, r.N, r.estimator) for r in rows))
    out = []
    for fam, N, est in keys:
        sel = [r for r in rows if (r.family, r.N, r.estimator) == (fam, N, est)]
        out.append(FreqSummary(
            fam, N, est, len(sel),
            _agg([r.kl for r in sel], False),
            _agg([r.mise for r in sel], True),
            _agg([r.mise_c for r in sel], True),
            _agg([r.mse_g for r in sel], True),
        ))
    return out


def _fmt3(x):
    if x is None:
        return "NA"
    if math.isinf(x):
        return "Inf"
    return f"{x:.3f}"


def pivot_freq(summary: Sequence[FreqSummary]) -> tuple[list[str], list[list[str]]]:
    """One block per (family, metric): N down, estimators across."""
    ests = list(dict.fromkeys(s.estimator for s in summary))
    header = ["family", "metric", "N"] + ests
    body = []
    for fam in dict.fromkeys(s.family for s in summary):
        for metric in ("kl", "rmise", "rmise_c", "rmse_g"):
            for N in sorted({s.N for s in summary if s.family == fam}):
                line = [fam, metric, str(N)]
                for e in ests:
                    hit = [s for s in summary if (s.family, s.N, s.estimator) == (fam, N, e)]
                    line.append(_fmt3(getattr(hit[0], metric)) if hit else "")
                body.append(line)
    return header, body


# --------------------------------------------------------------------------
# convergence fit


@dataclass(frozen=True)
class ConvergenceFit:
    family: str
    points: int
    slope_lin: float
    r2_lin: float
    slope_log: float
    r2_log: float

    @staticmethod
    def columns():
        return ["family", "points", "slope_lin", "r2_lin", "slope_log", "r2_log"]

    def as_row(self):
        return [self.family, str(self.points)] + [format_value(x) for x in
                                                   (self.slope_lin, self.r2_lin, self.slope_log, self.r2_log)]


def _ols(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res <= 1e-30 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(coef[1]), r2


def convergence_fit(Ns, kls, family: str = "") -> ConvergenceFit:
    """OLS of ``KL ~ log N`` and ``log KL ~ log N``."""
    pairs = [(n, k) for n, k in zip(Ns, kls) if n > 0 and k is not None and math.isfinite(k) and k > 0]
    if len({n for n, _ in pairs}) < 4:
        raise UsageError("convergence fit needs at least 4 distinct N with positive finite K-L")
    logN = np.log([n for n, _ in pairs])
    kl = np.array([k for _, k in pairs])
    s_lin, r2_lin = _ols(logN, kl)
    s_log, r2_log = _ols(logN, np.log(kl))
    return ConvergenceFit(family, len(pairs), s_lin, r2_lin, s_log, r2_log)


def run_convergence_fit(kl_rows: Sequence[KLRow]) -> list[ConvergenceFit]:
    """One fit per family, on dataset-averaged mean K-L."""
    out = []
    for fam in dict.fromkeys(r.family for r in kl_rows):
        sel = [r for r in kl_rows if r.family == fam]
        Ns = sorted({r.N for r in sel})
        kls = [float(np.mean([r.kl_mean for r in sel if r.N == n])) for n in Ns]
        out.append(convergence_fit(Ns, kls, fam))
    return out


# --------------------------------------------------------------------------
# output


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r.as_row() if hasattr(r, "as_row") else r)


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)
