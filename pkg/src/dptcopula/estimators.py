"""Baseline copula estimators and the D-P tree posterior-mean estimator.

Every estimator exposes the same interface so the metrics and harness can
treat them uniformly:

``cdf(u, v)``
    estimated copula CDF at points.
``cdf_grid(g)``
    CDF on the tensor grid ``g x g``, indexed ``[v, u]``.
``log_density(u, v)`` / ``density_grid(g)``
    ``None`` when the estimator has no density (the empirical copula).
``cell_masses(M)``
    estimated probability of every level-``M`` cell, grid layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri

from . import dptree, kernels
from .errors import DomainError, UsageError
from .grid import GridDensity, cell_masses_from_corners

_LOG2PI = np.log(2.0 * np.pi)


def _points(points) -> np.ndarray:
    pts = dptree.as_points(points)
    if len(pts) == 0:
        raise UsageError("estimators need at least one point")
    return pts


def silverman_bandwidth(N: int) -> float:
    """``h = N ** (-1/5)``."""
    if N < 1:
        raise UsageError(f"N must be >= 1, got {N!r}")
    return float(N) ** -0.2


# --------------------------------------------------------------------------
# empirical


def empirical_cdf(points, u, v):
    """Fraction of points with ``U <= u`` and ``V <= v``."""
    pts = _points(points)
    u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
    su = np.sort(pts[:, 0])
    order = np.argsort(pts[:, 0], kind="stable")
    sv = pts[order, 1]
    # count per query; O(n_query * N) in the worst case but vectorized
    k = np.searchsorted(su, u.ravel(), side="right")
    out = np.empty(k.shape)
    for i, (kk, vv) in enumerate(zip(k, v.ravel())):
        out[i] = np.count_nonzero(sv[:kk] <= vv)
    return (out / len(pts)).reshape(u.shape)


def _le_counts_on_grid(pts, g):
    """``#{U_i <= g_a, V_i <= g_b}`` for all grid pairs, indexed ``[b, a]``."""
    g = np.asarray(g, float)
    ia = np.searchsorted(g, pts[:, 0], side="left")
    ib = np.searchsorted(g, pts[:, 1], side="left")
    n = g.size
    keep = (ia < n) & (ib < n)
    hist = np.zeros((n, n))
    np.add.at(hist, (ib[keep], ia[keep]), 1.0)
    return hist.cumsum(axis=0).cumsum(axis=1)


@dataclass(frozen=True)
class Empirical:
    points: np.ndarray
    name = "empirical"

    def cdf(self, u, v):
        return empirical_cdf(self.points, u, v)

    def cdf_grid(self, g):
        return _le_counts_on_grid(self.points, g) / len(self.points)

    def log_density(self, u, v):
        return None

    def density_grid(self, g):
        return None

    def cell_masses(self, M: int) -> np.ndarray:
        return histogram_fit(self.points, M).grid.mass


# --------------------------------------------------------------------------
# grid estimators (histogram, D-P tree posterior mean)


@dataclass(frozen=True)
class GridEstimate:
    """Piecewise-uniform estimate on the level-``M`` grid."""

    grid: GridDensity
    name: str = "grid"

    def cdf(self, u, v):
        return self.grid.cdf(u, v)

    def cdf_grid(self, g):
        uu, vv = np.meshgrid(g, g)
        return self.grid.cdf(uu, vv)

    def log_density(self, u, v):
        with np.errstate(divide="ignore"):
            return np.log(self.grid.density(u, v))

    def density_grid(self, g):
        idx = kernels.cell_indices(np.asarray(g, float), self.grid.level)
        return self.grid.mass[np.ix_(idx, idx)] * float(self.grid.size**2)

    def cell_masses(self, M: int) -> np.ndarray:
        if M != self.grid.level:
            raise UsageError(f"estimate is level {self.grid.level}, asked for {M}")
        return np.asarray(self.grid.mass)


def histogram_fit(points, M: int) -> GridEstimate:
    """Cell masses ``n_cell / N`` on the level-``M`` grid."""
    pts = _points(points)
    n = 1 << M
    rows = kernels.cell_indices(pts[:, 1], M)
    cols = kernels.cell_indices(pts[:, 0], M)
    counts = kernels.weighted_histogram(rows, cols, n, 1.0)
    return GridEstimate(GridDensity(counts / len(pts)), "histogram")


def dptree_fit(points, M: int, schedule: dptree.HyperSchedule | None = None) -> GridEstimate:
    """Posterior-mean estimate of the D-P tree (prior mean when no points)."""
    tree = dptree.fit(points, M, schedule)
    return GridEstimate(dptree.posterior_mean_grid(tree), "dptree")


# --------------------------------------------------------------------------
# Gaussian kernel in normal scores


def _scores(x):
    x = np.asarray(x, float)
    if not np.all((x > 0) & (x < 1)):
        raise DomainError("kernel estimator is defined on the open unit square")
    return ndtri(x)


@dataclass(frozen=True)
class Kernel:
    """Independent Gaussian kernel on normal scores with bandwidth ``h``."""

    points: np.ndarray
    h: float
    name = "kernel"

    def __post_init__(self):
        if not self.h > 0:
            raise UsageError(f"bandwidth must be positive, got {self.h!r}")

    @property
    def _xy(self):
        return _scores(self.points[:, 0]), _scores(self.points[:, 1])

    def cdf(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        X, Y = self._xy
        x = _scores(u).ravel()
        y = _scores(v).ravel()
        out = np.empty(x.shape)
        for s in range(0, x.size, 1024):
            a = ndtr((x[s:s + 1024, None] - X[None, :]) / self.h)
            b = ndtr((y[s:s + 1024, None] - Y[None, :]) / self.h)
            out[s:s + 1024] = (a * b).mean(axis=1)
        return out.reshape(u.shape)

    def _grid_factors(self, g, func):
        X, Y = self._xy
        z = _scores(g)
        A = func((z[None, :] - X[:, None]) / self.h)
        B = func((z[None, :] - Y[:, None]) / self.h)
        return A, B

    def cdf_grid(self, g):
        A, B = self._grid_factors(g, ndtr)
        return (B.T @ A) / len(self.points)

    def log_density(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        X, Y = self._xy
        x = _scores(u).ravel()
        y = _scores(v).ravel()
        h = self.h
        out = np.empty(x.shape)
        step = max(1, 2_000_000 // len(X))
        for s in range(0, x.size, step):
            dx = (x[s:s + step, None] - X[None, :]) / h
            dy = (y[s:s + step, None] - Y[None, :]) / h
            out[s:s + step] = logsumexp(-0.5 * (dx * dx + dy * dy), axis=1)
        out += -np.log(len(X)) - _LOG2PI - 2.0 * np.log(h)
        # divide by the standard normal densities of the scores
        out += 0.5 * (x * x + y * y) + _LOG2PI
        return out.reshape(u.shape)

    def density_grid(self, g):
        z = _scores(g)
        A, B = self._grid_factors(g, lambda t: np.exp(-0.5 * t * t))
        phi = np.exp(-0.5 * z * z)
        dens = (B.T @ A) / (len(self.points) * self.h**2)
        return dens / np.outer(phi, phi)

    def cell_masses(self, M: int) -> np.ndarray:
        n = 1 << M
        g = np.arange(n + 1) / n
        corners = np.zeros((n + 1, n + 1))
        inner = g[1:-1]
        A, B = self._grid_factors(inner, ndtr)
        corners[1:-1, 1:-1] = (B.T @ A) / len(self.points)
        # C(u, 1) = mean of the u-factor alone, and symmetrically
        corners[-1, 1:-1] = A.mean(axis=0)
        corners[1:-1, -1] = B.mean(axis=0)
        corners[-1, -1] = 1.0
        return cell_masses_from_corners(corners)


def kernel_fit(points, h: float | None = None) -> Kernel:
    pts = _points(points)
    return Kernel(pts, silverman_bandwidth(len(pts)) if h is None else float(h))


def kernel_cdf(points, u, v, h: float | None = None):
    return kernel_fit(points, h).cdf(u, v)


def kernel_density(points, u, v, h: float | None = None):
    return np.exp(kernel_fit(points, h).log_density(u, v))


ESTIMATORS = ("dptree", "empirical", "kernel", "histogram")


def fit_estimator(name: str, points, M: int = 8):
    """Fit one of :data:`ESTIMATORS` by name."""
    if name == "dptree":
        return dptree_fit(points, M)
    if name == "empirical":
        return Empirical(_points(points))
    if name == "kernel":
        return kernel_fit(points)
    if name == "histogram":
        return histogram_fit(points, M)
    raise UsageError(f"unknown estimator {name!r}; expected one of {ESTIMATORS}")
