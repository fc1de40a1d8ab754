"""Piecewise-constant measures on the level-M dyadic grid."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataError, DomainError, UsageError

MASS_TOL = 1e-12


@dataclass(frozen=True)
class GridDensity:
    """Cell masses of an M-level measure.

    ``mass[row, col]`` is the probability of the cell with ``v`` in row
    ``row`` and ``u`` in column ``col``; inside a cell the measure is uniform,
    so the density there is ``mass * 4**M``.
    """

    mass: np.ndarray

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=np.float64)
        n = mass.shape[0]
        if mass.ndim != 2 or mass.shape[1] != n or n < 2 or n & (n - 1):
            raise UsageError(f"grid must be 2^M x 2^M with M >= 1, got {mass.shape}")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise DomainError("grid masses must be finite and nonnegative")
        total = mass.sum()
        if abs(total - 1.0) > 1e-9:
            raise DomainError(f"grid masses sum to {total!r}, expected 1")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @property
    def level(self) -> int:
        return self.mass.shape[0].bit_length() - 1

    M = level

    @property
    def size(self) -> int:
        return self.mass.shape[0]

    @classmethod
    def uniform(cls, level: int) -> "GridDensity":
        n = 1 << level
        return cls(np.full((n, n), 1.0 / (n * n)))

    def density(self, u, v):
        """Density at points; the closed upper edge belongs to the last cell."""
        rows = kernels.cell_indices(np.asarray(v, dtype=float), self.level)
        cols = kernels.cell_indices(np.asarray(u, dtype=float), self.level)
        return self.mass[rows, cols] * float(self.size * self.size)

    def corner_cdf(self) -> np.ndarray:
        """CDF at the grid corners ``(j/n, i/n)``, shape ``(n+1, n+1)`` indexed [v, u]."""
        n = self.size
        out = np.zeros((n + 1, n + 1))
        out[1:, 1:] = self.mass.cumsum(axis=0).cumsum(axis=1)
        return out

    def cdf(self, u, v):
        """CDF at arbitrary points.

        The CDF of a piecewise-uniform measure is bilinear inside each cell,
        so interpolating the corner values is exact.
        """
        return bilinear(self.corner_cdf(), u, v)

    def row_sums(self) -> np.ndarray:
        """Mass of each horizontal strip (the marginal of ``v``)."""
        return self.mass.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        """Mass of each vertical strip (the marginal of ``u``)."""
        return self.mass.sum(axis=0)

    def coarsen(self, level: int) -> "GridDensity":
        if not 1 <= level <= self.level:
            raise UsageError(f"cannot coarsen level {self.level} grid to {level}")
        m = self.mass
        for _ in range(self.level - level):
            m = m[0::2, 0::2] + m[0::2, 1::2] + m[1::2, 0::2] + m[1::2, 1::2]
        return GridDensity(m)

    def to_csv(self, path) -> None:
        write_grid_csv(self, path)

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        return read_grid_csv(path)


def bilinear(corners: np.ndarray, u, v):
    """Bilinear interpolation of values on the uniform corner grid of ``[0,1]^2``."""
    n = corners.shape[0] - 1
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    x = np.clip(u, 0.0, 1.0) * n
    y = np.clip(v, 0.0, 1.0) * n
    i = np.minimum(np.floor(x).astype(np.int64), n - 1)
    j = np.minimum(np.floor(y).astype(np.int64), n - 1)
    fx = x - i
    fy = y - j
    c00 = corners[j, i]
    c01 = corners[j, i + 1]
    c10 = corners[j + 1, i]
    c11 = corners[j + 1, i + 1]
    return (c00 * (1 - fx) + c01 * fx) * (1 - fy) + (c10 * (1 - fx) + c11 * fx) * fy


def cell_masses_from_corners(corners: np.ndarray) -> np.ndarray:
    """Rectangle masses from a CDF tabulated on the corner grid."""
    return corners[1:, 1:] - corners[:-1, 1:] - corners[1:, :-1] + corners[:-1, :-1]


def write_grid_csv(grid: GridDensity, path) -> None:
    path = Path(path)
    mass = grid.mass
    n = grid.size
    with path.open("w", newline="") as fh:
        fh.write("row,col,mass\n")
        lines = []
        for r in range(n):
            row = mass[r]
            for c in range(n):
                lines.append(f"{r},{c},{float(row[c])!r}\n")
        fh.writelines(lines)


def read_grid_csv(path) -> GridDensity:
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot read grid file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["row", "col", "mass"]:
            raise DataError(f"{path}: expected header row,col,mass, got {header}")
        entries = []
        for lineno, rec in enumerate(reader, start=2):
            try:
                r, c, m = int(rec[0]), int(rec[1]), float(rec[2])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row {rec!r}") from exc
            entries.append((r, c, m))
    n = int(round(len(entries) ** 0.5))
    if n * n != len(entries):
        raise DataError(f"{path}: {len(entries)} rows is not a square grid")
    mass = np.full((n, n), np.nan)
    for r, c, m in entries:
        if not (0 <= r < n and 0 <= c < n):
            raise DataError(f"{path}: cell ({r}, {c}) outside {n}x{n} grid")
        mass[r, c] = m
    if np.isnan(mass).any():
        raise DataError(f"{path}: missing cells")
    return GridDensity(mass)
