"""Distances between copula estimates and a reference copula.

Not-applicable results (an estimator without a density) are ``None``;
support mismatches give ``math.inf``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import copulas
from .dptree import as_points
from .errors import UsageError
from .grid import GridDensity


def midpoint_grid(n: int) -> np.ndarray:
    if int(n) != n or n < 64:
        raise UsageError(f"grid_points must be an integer >= 64, got {n!r}")
    return (np.arange(n) + 0.5) / n


def _log_density_fn(estimate):
    """Normalize the accepted estimate types to ``f(u, v) -> log density or None``."""
    if isinstance(estimate, GridDensity):
        def f(u, v):
            with np.errstate(divide="ignore"):
                return np.log(estimate.density(u, v))
        return f
    if hasattr(estimate, "log_density"):
        return estimate.log_density
    if callable(estimate):
        def f(u, v):
            with np.errstate(divide="ignore"):
                return np.log(estimate(u, v))
        return f
    raise UsageError(f"cannot evaluate a density from {type(estimate).__name__}")


def kl_samples(truth: copulas.CopulaModel, estimate, n_mc: int, rng: np.random.Generator):
    """Per-draw ``log c - log p_hat`` at ``n_mc`` draws from the truth (``None`` if NA)."""
    if int(n_mc) != n_mc or n_mc < 1:
        raise UsageError(f"n_mc must be a positive integer, got {n_mc!r}")
    pts, log_c = truth.sample_with_log_density(rng, int(n_mc))
    log_p = _log_density_fn(estimate)(pts[:, 0], pts[:, 1])
    if log_p is None:
        return None
    return log_c - log_p


def kl_divergence(truth, estimate, n_mc: int = 100_000, rng=None):
    """Monte Carlo ``E_c log(c / p_hat)``; ``inf`` if ``p_hat`` vanishes at a draw."""
    rng = rng if rng is not None else np.random.default_rng()
    d = kl_samples(truth, estimate, n_mc, rng)
    if d is None:
        return None
    if np.isposinf(d).any():
        return math.inf
    return float(d.mean())


def kl_with_se(truth, estimate, n_mc: int, rng):
    """``(mean, standard error)`` of the Monte Carlo K-L estimate."""
    d = kl_samples(truth, estimate, n_mc, rng)
    if d is None:
        return None, None
    if np.isposinf(d).any():
        return math.inf, math.nan
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else math.nan


def _density_on_grid(obj, g):
    if isinstance(obj, copulas.CopulaModel):
        return np.exp(obj.log_density_grid(g))
    if isinstance(obj, GridDensity):
        uu, vv = np.meshgrid(g, g)
        return obj.density(uu, vv)
    if hasattr(obj, "density_grid"):
        return obj.density_grid(g)
    if callable(obj):
        uu, vv = np.meshgrid(g, g)
        return np.asarray(obj(uu, vv), float)
    if isinstance(obj, np.ndarray):
        return obj
    raise UsageError(f"cannot evaluate a density from {type(obj).__name__}")


def _cdf_on_grid(obj, g, cache_dir=None):
    if isinstance(obj, copulas.CopulaModel):
        return copulas.cdf_table(obj, g, cache_dir)
    if isinstance(obj, GridDensity):
        uu, vv = np.meshgrid(g, g)
        return obj.cdf(uu, vv)
    if hasattr(obj, "cdf_grid"):
        return obj.cdf_grid(g)
    if callable(obj):
        uu, vv = np.meshgrid(g, g)
        return np.asarray(obj(uu, vv), float)
    if isinstance(obj, np.ndarray):
        return obj
    raise UsageError(f"cannot evaluate a CDF from {type(obj).__name__}")


def mise(truth, estimate, grid_points: int = 512):
    """Midpoint-rule ``integral (c - c_hat)^2`` over the unit square.

    Either argument may be a copula model, a :class:`GridDensity`, an
    estimator, a density callable or a precomputed grid array.
    """
    g = midpoint_grid(grid_points)
    a = _density_on_grid(truth, g)
    b = _density_on_grid(estimate, g)
    if a is None or b is None:
        return None
    return float(np.mean((a - b) ** 2))


def mise_c(truth_cdf, estimate_cdf, grid_points: int = 512, cache_dir=None):
    """Midpoint-rule ``integral (C - C_hat)^2`` over the unit square."""
    g = midpoint_grid(grid_points)
    a = _cdf_on_grid(truth_cdf, g, cache_dir)
    b = _cdf_on_grid(estimate_cdf, g, cache_dir)
    return float(np.mean((a - b) ** 2))


def _masses(x) -> np.ndarray:
    if isinstance(x, GridDensity):
        return np.asarray(x.mass)
    return np.asarray(x, float)


def mse_g(truth_cell_masses, estimate) -> float:
    """Summed squared cell-mass error ``sum (C(B) - C_hat(B))^2`` over the grid.

    The sum, not the per-cell mean, is used; see the project decisions log.
    """
    a = _masses(truth_cell_masses)
    b = _masses(estimate)
    if a.shape != b.shape:
        raise UsageError(f"level mismatch: {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def cross_entropy(estimate, heldout_points) -> float:
    """``-mean log c_hat`` over held-out points; ``inf`` if any density is zero."""
    pts = as_points(heldout_points)
    if len(pts) == 0:
        raise UsageError("cross entropy needs at least one held-out point")
    log_p = _log_density_fn(estimate)(pts[:, 0], pts[:, 1])
    if log_p is None:
        raise UsageError("estimate has no density")
    log_p = np.asarray(log_p, float)
    if np.isneginf(log_p).any():
        return math.inf
    return float(-log_p.mean())


# --------------------------------------------------------------------------
# report rows


def format_value(x) -> str:
    """CSV text of a metric: ``NA``, ``Inf``, or a round-trippable float."""
    if x is None:
        return "NA"
    if isinstance(x, float) and math.isinf(x):
        return "Inf" if x > 0 else "-Inf"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def parse_value(text: str):
    if text == "NA" or text == "":
        return None
    if text == "Inf":
        return math.inf
    if text == "-Inf":
        return -math.inf
    return float(text)


@dataclass
class MetricReport:
    estimator: str
    family: str
    N: int
    M: int
    replication: int
    kl: float | None = None
    mise: float | None = None
    mise_c: float | None = None
    mse_g: float | None = None
    cross_entropy: float | None = None

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_row(self) -> list[str]:
        return [format_value(v) for v in asdict(self).values()]
