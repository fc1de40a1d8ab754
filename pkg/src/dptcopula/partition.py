"""Quaternary dyadic partition of the unit square.

A cell at level ``m`` is addressed by a path of ``m`` digits in ``{0, 1, 2, 3}``.
Each digit picks a quadrant of the current cell::

    2 | 3
    --+--
    0 | 1

i.e. ``digit = 2 * (v in upper half) + (u in right half)``.  Cells are
half-open ``[lo, hi)`` except at the global upper edge 1, which is closed.

On the ``2**m x 2**m`` grid a path maps to ``(row, col)`` where ``row`` indexes
``v`` and ``col`` indexes ``u``; the path digits are the interleaved bits of
``row`` and ``col`` (most significant first).
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError, UsageError

CellPath = tuple  # tuple[int, ...] of digits in {0, 1, 2, 3}

MAX_LEVEL = 30


class Rect(NamedTuple):
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def contains(self, u: float, v: float) -> bool:
        return self.x_lo <= u <= self.x_hi and self.y_lo <= v <= self.y_hi

    @property
    def area(self) -> float:
        return (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)


def _check_level(level: int) -> int:
    if int(level) != level or not 1 <= level <= MAX_LEVEL:
        raise UsageError(f"level must be an integer in [1, {MAX_LEVEL}], got {level!r}")
    return int(level)


def _check_path(path: Sequence[int]) -> CellPath:
    path = tuple(int(d) for d in path)
    for d in path:
        if d not in (0, 1, 2, 3):
            raise DomainError(f"path digit {d} not in {{0,1,2,3}}")
    return path


def grid_index(x, level: int):
    """Index of the level-``level`` dyadic interval containing each ``x``.

    Works on scalars and arrays; 1.0 maps to the last interval.
    """
    n = 1 << level
    idx = np.floor(np.asarray(x, dtype=float) * n).astype(np.int64)
    return np.minimum(idx, n - 1)


def locate(u: float, v: float, level: int) -> CellPath:
    level = _check_level(level)
    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        raise DomainError(f"point ({u}, {v}) outside the unit square")
    col = int(grid_index(u, level))
    row = int(grid_index(v, level))
    return grid_to_path(row, col, level)


def rect(path: Sequence[int]) -> Rect:
    path = _check_path(path)
    x_lo = y_lo = 0.0
    side = 1.0
    for d in path:
        side /= 2.0
        x_lo += side * (d & 1)
        y_lo += side * (d >> 1)
    return Rect(x_lo, x_lo + side, y_lo, y_lo + side)


def path_to_grid(path: Sequence[int], level: int | None = None) -> tuple[int, int]:
    path = _check_path(path)
    if level is not None and len(path) != level:
        raise UsageError(f"path has length {len(path)}, expected {level}")
    row = col = 0
    for d in path:
        row = (row << 1) | (d >> 1)
        col = (col << 1) | (d & 1)
    return row, col


def grid_to_path(row: int, col: int, level: int) -> CellPath:
    level = _check_level(level)
    n = 1 << level
    if not (0 <= row < n and 0 <= col < n):
        raise UsageError(f"grid coordinate ({row}, {col}) outside [0, {n})^2")
    return tuple(
        2 * ((row >> k) & 1) + ((col >> k) & 1) for k in range(level - 1, -1, -1)
    )


def path_index(path: Sequence[int]) -> int:
    """Base-4 integer of a path (first digit most significant)."""
    idx = 0
    for d in _check_path(path):
        idx = 4 * idx + d
    return idx


def level_rects(level: int) -> list[Rect]:
    """All ``4**level`` cells of one level, in grid (row-major) order."""
    level = _check_level(level)
    n = 1 << level
    side = 1.0 / n
    return [
        Rect(c * side, (c + 1) * side, r * side, (r + 1) * side)
        for r in range(n)
        for c in range(n)
    ]
