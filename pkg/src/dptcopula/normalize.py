"""Make the margins of a grid density uniform.

``ipf_normalize`` rescales rows and columns alternately (Sinkhorn scaling).
``pit_normalize`` pushes the measure through its own piecewise-linear
marginal CDFs, reallocating each cell by exact interval overlap.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import DomainError, NumericError
from .grid import GridDensity


def _check_margins(mass: np.ndarray) -> None:
    rows = mass.sum(axis=1)
    cols = mass.sum(axis=0)
    if (rows <= 0).any() or (cols <= 0).any():
        raise DomainError("grid has a zero-mass row or column; margins cannot be made uniform")


def margin_error(grid: GridDensity) -> float:
    """Largest deviation of a row or column sum from ``2**-M``."""
    target = 1.0 / grid.size
    m = np.asarray(grid.mass)
    return float(max(np.abs(m.sum(axis=1) - target).max(), np.abs(m.sum(axis=0) - target).max()))


def ipf_normalize(grid: GridDensity, tol: float = 1e-12, max_iter: int = 10_000) -> GridDensity:
    """Iterative proportional fitting to row and column sums ``2**-M``."""
    mass = np.array(grid.mass, dtype=np.float64)
    _check_margins(mass)
    target = 1.0 / mass.shape[0]
    for _ in range(max_iter):
        mass *= (target / mass.sum(axis=1))[:, None]
        mass *= (target / mass.sum(axis=0))[None, :]
        if np.abs(mass.sum(axis=1) - target).max() <= tol:
            return GridDensity(mass / mass.sum())
    err = np.abs(mass.sum(axis=1) - target).max()
    raise NumericError(f"IPF did not reach tol={tol!r} in {max_iter} sweeps (row error {err!r})")


def marginal_cdf_knots(mass: np.ndarray, axis: int) -> np.ndarray:
    """Marginal CDF at the grid lines ``0, 1/n, ..., 1`` (``axis=0`` for ``u``)."""
    marg = mass.sum(axis=0) if axis == 0 else mass.sum(axis=1)
    knots = np.concatenate([[0.0], np.cumsum(marg)])
    return knots / knots[-1]


def pit_normalize(grid: GridDensity) -> GridDensity:
    """Remap the grid through its own marginal CDFs.

    Within a cell the marginal CDFs are linear, so the image of a cell is a
    rectangle carrying uniform mass; splitting it over the new cells is an
    outer product of 1-D overlap fractions.
    """
    mass = np.asarray(grid.mass, dtype=np.float64)
    _check_margins(mass)
    n = mass.shape[0]
    ox = kernels.interval_overlap_matrix(marginal_cdf_knots(mass, 0), n)
    oy = kernels.interval_overlap_matrix(marginal_cdf_knots(mass, 1), n)
    new = oy.T @ mass @ ox
    np.maximum(new, 0.0, out=new)
    return GridDensity(new / new.sum())


def grid_spearman(grid: GridDensity) -> float:
    """Spearman's rho of the grid measure, ``12 E[F(U) G(V)] - 3``.

    Inside a cell ``U`` and ``V`` are independent uniforms and the marginal
    CDFs ``F``, ``G`` are linear, so the conditional expectation is the
    product of the CDFs at the cell midpoints.
    """
    mass = np.asarray(grid.mass)
    fx = marginal_cdf_knots(mass, 0)
    fy = marginal_cdf_knots(mass, 1)
    mx = 0.5 * (fx[:-1] + fx[1:])
    my = 0.5 * (fy[:-1] + fy[1:])
    return float(12.0 * (my @ mass @ mx) - 3.0)
