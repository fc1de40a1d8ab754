"""Dirichlet-based Polya tree priors on the unit square.

Every node of the quaternary dyadic partition splits its mass among its four
children with a Dirichlet draw.  At level ``m`` the Dirichlet parameters are
``alpha(m) + n_child`` where ``alpha`` is the hyper-parameter schedule and
``n_child`` the (possibly weighted) number of observations in the child cell.
The tree is truncated at level ``M`` and mass is spread uniformly inside each
level-``M`` cell.

Counts are kept in grid layout: ``counts[m - 1]`` is a ``2**m x 2**m`` array
indexed ``[row, col]`` as in :mod:`dptcopula.partition`.  The four children of
grid cell ``(r, c)`` at level ``m`` are ``(2r + i, 2c + j)`` at level ``m + 1``.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import DataError, DomainError, UsageError
from .grid import GridDensity

MAX_TREE_LEVEL = 12
MODES = ("mean_measure", "single_measure")
REGIMES = ("lower_bounded", "gaussian", "generic")


class ContinuityWarning(UserWarning):
    """Schedule grows too slowly for absolutely continuous realizations."""


# --------------------------------------------------------------------------
# grid helpers


def aggregate(level_grid: np.ndarray) -> np.ndarray:
    """Sum each 2x2 block of children into its parent (fixed digit order)."""
    g = level_grid
    return g[0::2, 0::2] + g[0::2, 1::2] + g[1::2, 0::2] + g[1::2, 1::2]


def expand(parent_grid: np.ndarray) -> np.ndarray:
    """Broadcast each parent value onto its four children."""
    return np.repeat(np.repeat(parent_grid, 2, axis=0), 2, axis=1)


def grid_to_path_order(level: int) -> np.ndarray:
    """Flat grid indices listed in base-4 path order.

    ``grid.ravel()[grid_to_path_order(m)]`` lists the level-``m`` cells as
    paths ``0...0, 0...1, ..., 3...3``.
    """
    p = np.arange(4**level, dtype=np.int64)
    row = np.zeros_like(p)
    col = np.zeros_like(p)
    for k in range(level):
        digit = (p >> (2 * k)) & 3
        row |= (digit >> 1) << k
        col |= (digit & 1) << k
    return row * (1 << level) + col


# --------------------------------------------------------------------------
# hyper-parameter schedules


@dataclass(frozen=True)
class HyperSchedule:
    """Per-level Dirichlet hyper-parameter ``alpha(m) > 0``."""

    kind: str
    func: Callable[[int], float] = field(compare=False, repr=False)
    name: str = "canonical"

    @classmethod
    def canonical(cls) -> "HyperSchedule":
        return cls("canonical", lambda m: float(m * m), "canonical")

    @classmethod
    def custom(cls, func: Callable[[int], float], name: str = "custom") -> "HyperSchedule":
        sched = cls("custom", func, name)
        for m in range(1, MAX_TREE_LEVEL + 1):
            a = sched.value(m)
            if not (np.isfinite(a) and a > 0):
                raise UsageError(f"schedule {name!r} gives alpha({m}) = {a!r}; must be > 0")
        ms = np.arange(4, MAX_TREE_LEVEL + 1)
        vals = np.array([sched.value(int(m)) for m in ms])
        slope = np.polyfit(np.log(ms), np.log(vals), 1)[0]
        if slope <= 1.0:
            warnings.warn(
                f"schedule {name!r} grows like m^{slope:.2f}; growth faster than "
                "m^(1+delta) is needed for absolutely continuous realizations",
                ContinuityWarning,
                stacklevel=2,
            )
        return sched

    @classmethod
    def parse(cls, text: str) -> "HyperSchedule":
        """Build a schedule from ``canonical``, ``scaled:z`` (z*m^2),
        ``power:z,p`` (z*m^p) or ``constant:z``."""
        text = text.strip()
        if text == "canonical":
            return cls.canonical()
        m = re.fullmatch(r"(scaled|power|constant):(.+)", text)
        if not m:
            raise UsageError(f"unknown schedule {text!r}")
        try:
            args = [float(a) for a in m.group(2).split(",")]
        except ValueError as exc:
            raise UsageError(f"bad schedule arguments in {text!r}") from exc
        kind = m.group(1)
        if kind == "scaled" and len(args) == 1:
            z = args[0]
            return cls.custom(lambda k: z * k * k, text)
        if kind == "power" and len(args) == 2:
            z, p = args
            return cls.custom(lambda k: z * float(k) ** p, text)
        if kind == "constant" and len(args) == 1:
            z = args[0]
            return cls.custom(lambda k: z, text)
        raise UsageError(f"wrong number of arguments in schedule {text!r}")

    def value(self, m: int) -> float:
        return float(self.func(int(m)))

    def __str__(self) -> str:
        return self.name


# --------------------------------------------------------------------------
# the tree


@dataclass(frozen=True)
class DPTree:
    """Counts of a D-P tree prior (all zero) or posterior.

    Instances are immutable; :func:`update` returns a new tree.
    """

    M: int
    schedule: HyperSchedule
    counts: tuple

    @property
    def total_weight(self) -> float:
        return float(self.counts[0].sum())

    def alpha(self, m: int) -> float:
        return self.schedule.value(m)

    def level_counts(self, m: int, order: str = "path") -> np.ndarray:
        """Flat counts of level ``m`` in base-4 ``path`` order or ``grid`` order."""
        if not 1 <= m <= self.M:
            raise UsageError(f"level {m} outside [1, {self.M}]")
        flat = self.counts[m - 1].ravel()
        if order == "grid":
            return flat.copy()
        if order == "path":
            return flat[grid_to_path_order(m)]
        raise UsageError(f"unknown order {order!r}")

    def truncate(self, level: int) -> "DPTree":
        if not 1 <= level <= self.M:
            raise UsageError(f"cannot truncate level-{self.M} tree to {level}")
        return DPTree(level, self.schedule, self.counts[:level])

    def posterior_params(self, m: int) -> np.ndarray:
        """Dirichlet parameters ``alpha(m) + n`` of the level-``m`` children."""
        return self.counts[m - 1] + self.alpha(m)


def _check_M(M) -> int:
    if int(M) != M or not 1 <= M <= MAX_TREE_LEVEL:
        raise UsageError(f"M must be an integer in [1, {MAX_TREE_LEVEL}], got {M!r}")
    return int(M)


def _freeze(arrays) -> tuple:
    for a in arrays:
        a.setflags(write=False)
    return tuple(arrays)


def _levels_from_finest(finest: np.ndarray, M: int) -> tuple:
    levels = [finest]
    for _ in range(M - 1):
        levels.append(aggregate(levels[-1]))
    return _freeze(levels[::-1])


def new_prior(M: int, schedule: HyperSchedule | None = None) -> DPTree:
    M = _check_M(M)
    schedule = schedule or HyperSchedule.canonical()
    finest = np.zeros((1 << M, 1 << M))
    return DPTree(M, schedule, _levels_from_finest(finest, M))


def as_points(points) -> np.ndarray:
    """Validate an ``(n, 2)`` array of ``(u, v)`` pairs in the closed unit square."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.empty((0, 2))
    if pts.ndim == 1 and pts.shape[0] == 2:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise UsageError(f"points must have shape (n, 2), got {pts.shape}")
    bad = ~((pts >= 0.0) & (pts <= 1.0)).all(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"point {i} = {tuple(pts[i])} outside the unit square")
    return pts


def update(tree: DPTree, points, weight: float = 1.0) -> DPTree:
    """Add ``weight`` per observation to every cell containing it."""
    weight = float(weight)
    if not (np.isfinite(weight) and weight > 0):
        raise UsageError(f"weight must be positive, got {weight!r}")
    pts = as_points(points)
    n = 1 << tree.M
    rows = kernels.cell_indices(pts[:, 1], tree.M)
    cols = kernels.cell_indices(pts[:, 0], tree.M)
    hist = kernels.weighted_histogram(rows, cols, n, weight)
    return DPTree(tree.M, tree.schedule, _levels_from_finest(tree.counts[-1] + hist, tree.M))


def fit(points, M: int, schedule: HyperSchedule | None = None, weight: float = 1.0) -> DPTree:
    """Posterior tree from a prior and one batch of points."""
    tree = new_prior(M, schedule)
    pts = as_points(points)
    return update(tree, pts, weight) if len(pts) else tree


def write_tree_csv(tree: DPTree, path) -> None:
    """Nonzero finest-level counts under a ``# M=.. schedule=..`` line.

    Only schedules built by :meth:`HyperSchedule.parse` round-trip.
    """
    finest = tree.counts[-1]
    rows, cols = np.nonzero(finest)
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# M={tree.M} schedule={tree.schedule.name}\n")
        fh.write("row,col,count\n")
        fh.writelines(f"{r},{c},{float(finest[r, c])!r}\n" for r, c in zip(rows.tolist(), cols.tolist()))


def read_tree_csv(path) -> DPTree:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read tree file {path}: {exc}") from exc
    head = re.fullmatch(r"# M=(\d+) schedule=(\S+)", lines[0].strip()) if lines else None
    if head is None:
        raise DataError(f"{path}:1: expected '# M=<level> schedule=<name>'")
    M = _check_M(int(head.group(1)))
    schedule = HyperSchedule.parse(head.group(2))
    if len(lines) < 2 or lines[1].strip() != "row,col,count":
        raise DataError(f"{path}:2: expected header row,col,count")
    n = 1 << M
    finest = np.zeros((n, n))
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        try:
            r, c, x = line.split(",")
            r, c, x = int(r), int(c), float(x)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: malformed row {line!r}") from exc
        if not (0 <= r < n and 0 <= c < n) or not (np.isfinite(x) and x >= 0):
            raise DomainError(f"{path}:{lineno}: cell ({r}, {c}) or count {x!r} out of range")
        finest[r, c] = x
    return DPTree(M, schedule, _levels_from_finest(finest, M))


# --------------------------------------------------------------------------
# posterior mean and sampling


def posterior_mean_grid(tree: DPTree) -> GridDensity:
    """Telescoping product of per-level Dirichlet means."""
    mass = np.ones((1, 1))
    for m in range(1, tree.M + 1):
        params = tree.posterior_params(m)
        mass = expand(mass) * (params / expand(aggregate(params)))
    return GridDensity(mass)


def _gamma_level(rng: np.random.Generator, shape: np.ndarray) -> np.ndarray:
    """Log of independent Gamma(shape, 1) draws.

    Shapes below 1 use ``G(a) = G(a + 1) * U**(1/a)`` in log space so tiny
    shapes do not underflow to zero.
    """
    if shape.min() >= 1.0:
        return np.log(rng.standard_gamma(shape))
    g = rng.standard_gamma(shape + 1.0)
    u = rng.random(shape.shape)
    return np.log(g) + np.log(u) / shape


def _normalize_groups(log_g: np.ndarray) -> np.ndarray:
    """Log Dirichlet components from log Gammas, normalized within 2x2 blocks."""
    n = log_g.shape[0] // 2
    blocks = log_g.reshape(n, 2, n, 2)
    return (blocks - logsumexp(blocks, axis=(1, 3), keepdims=True)).reshape(log_g.shape)


def sample_measure(tree: DPTree, rng: np.random.Generator) -> GridDensity:
    """One draw of the level-``M`` random measure."""
    log_mass = np.zeros((1, 1))
    for m in range(1, tree.M + 1):
        log_z = _normalize_groups(_gamma_level(rng, tree.posterior_params(m)))
        log_mass = expand(log_mass) + log_z
    mass = np.exp(log_mass)
    return GridDensity(mass / mass.sum())


def _uniform_in_cells(flat_idx: np.ndarray, level: int, rng: np.random.Generator) -> np.ndarray:
    n = 1 << level
    rows, cols = np.divmod(flat_idx, n)
    jitter = rng.random((flat_idx.shape[0], 2))
    u = (cols + jitter[:, 0]) / n
    v = (rows + jitter[:, 1]) / n
    return np.column_stack([u, v])


def sample_grid_points(grid: GridDensity, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. points from a piecewise-uniform grid measure."""
    flat = np.asarray(grid.mass).ravel()
    cdf = np.cumsum(flat)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    np.minimum(idx, flat.size - 1, out=idx)
    return _uniform_in_cells(idx, grid.level, rng)


def sample_predictive(tree: DPTree, rng: np.random.Generator, n: int, mode: str = "mean_measure") -> np.ndarray:
    """Posterior predictive points, shape ``(n, 2)`` with columns ``(u, v)``.

    ``mean_measure`` draws i.i.d. from the posterior mean measure; choosing a
    level-``M`` cell from the flattened mean grid has the same law as walking
    the tree and picking children with probability ``(alpha + n_i) / sum``.
    ``single_measure`` first draws one random measure and samples from it.
    """
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {mode!r}")
    if int(n) != n or n < 0:
        raise UsageError(f"n must be a nonnegative integer, got {n!r}")
    if n == 0:
        return np.empty((0, 2))
    if mode == "mean_measure":
        grid = posterior_mean_grid(tree)
    else:
        grid = sample_measure(tree, rng)
    return sample_grid_points(grid, int(n), rng)


class PathSampler:
    """Log density of posterior measure draws at a fixed set of points.

    Evaluating ``log p(x_i)`` for a random measure only needs the Dirichlet
    vectors on the root-to-leaf paths of the ``x_i``.  For a few thousand
    points this is far cheaper than drawing all ``(4**(M+1) - 4) / 3``
    components; when it is not, a full measure is drawn instead.
    """

    def __init__(self, tree: DPTree, points):
        pts = as_points(points)
        self.tree = tree
        M = tree.M
        rows = kernels.cell_indices(pts[:, 1], M)
        cols = kernels.cell_indices(pts[:, 0], M)
        self._levels = []
        needed = 0
        for m in range(1, M + 1):
            shift = M - m
            r = rows >> shift
            c = cols >> shift
            parent = (r >> 1) * (1 << (m - 1)) + (c >> 1)
            uniq, inv = np.unique(parent, return_inverse=True)
            child = 2 * (r & 1) + (c & 1)
            pr, pc = np.divmod(uniq, 1 << (m - 1))
            params = tree.posterior_params(m)
            group = np.stack(
                [params[2 * pr, 2 * pc], params[2 * pr, 2 * pc + 1],
                 params[2 * pr + 1, 2 * pc], params[2 * pr + 1, 2 * pc + 1]],
                axis=1,
            )
            self._levels.append((group, inv, child))
            needed += group.size
        total = (4 ** (M + 1) - 4) // 3
        self.use_paths = needed < total
        self._rows = rows
        self._cols = cols
        self._log_cell = M * np.log(4.0)

    def draw_log_density(self, rng: np.random.Generator) -> np.ndarray:
        if not self.use_paths:
            mass = sample_measure(self.tree, rng).mass
            with np.errstate(divide="ignore"):
                return np.log(mass[self._rows, self._cols]) + self._log_cell
        out = np.full(self._rows.shape[0], self._log_cell)
        for group, inv, child in self._levels:
            log_g = _gamma_level(rng, group)
            log_z = log_g - logsumexp(log_g, axis=1, keepdims=True)
            kernels.add_gathered(out, log_z, inv, child)
        return out


# --------------------------------------------------------------------------
# quasi-Polya tree baseline


def quasi_pt_mean_grid(points, M: int) -> GridDensity:
    """Posterior mean of the quasi-Polya tree with ``alpha = m**2`` per side.

    At every node a Beta variable splits mass between the digit classes
    ``{0, 2}`` (left half) and ``{1, 3}`` (right half); each class then
    divides its share equally between its two cells, so cells 0 and 2 (and
    cells 1 and 3) always receive the same mass.
    """
    M = _check_M(M)
    tree = fit(points, M)
    mass = np.ones((1, 1))
    for m in range(1, M + 1):
        cnt = tree.counts[m - 1]
        a = float(m * m)
        left = cnt[0::2, 0::2] + cnt[1::2, 0::2]
        right = cnt[0::2, 1::2] + cnt[1::2, 1::2]
        p_left = (a + left) / (2 * a + left + right)
        split = np.empty((cnt.shape[0], cnt.shape[1]))
        half = 0.5 * p_left
        split[0::2, 0::2] = half
        split[1::2, 0::2] = half
        split[0::2, 1::2] = 0.5 - half
        split[1::2, 1::2] = 0.5 - half
        mass = expand(mass) * split
    return GridDensity(mass)


# --------------------------------------------------------------------------
# equivalent binary Polya tree


@dataclass(frozen=True)
class BinaryPT:
    """Beta parameters of the equivalent binary Polya tree.

    ``levels[j]`` holds the ``(a, b)`` pairs of binary level ``j + 1``, shape
    ``(nodes, 2)``.  Binary level ``2k - 1`` has one node per quaternary
    level-``(k-1)`` cell, indexed by its base-4 path index ``p``, and splits
    digits ``{0, 1}`` (a) from ``{2, 3}`` (b).  Binary level ``2k`` has nodes
    ``2p`` (splitting digit 0 from 1) and ``2p + 1`` (digit 2 from 3).
    """

    levels: tuple

    @property
    def depth(self) -> int:
        return len(self.levels)


def to_binary_pt(tree: DPTree) -> BinaryPT:
    levels = []
    for k in range(1, tree.M + 1):
        params = tree.posterior_params(k).ravel()[grid_to_path_order(k)].reshape(-1, 4)
        first = np.column_stack([params[:, 0] + params[:, 1], params[:, 2] + params[:, 3]])
        second = params.reshape(-1, 2)
        levels.extend([first, second])
    return BinaryPT(_freeze(levels))


def _beta_moments(a, b, take_a):
    """First and second moments of the chosen Beta component."""
    x = np.where(take_a, a, b)
    s = a + b
    return x / s, x * (x + 1) / (s * (s + 1))


def dpt_cell_moments(tree: DPTree) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of each level-``M`` cell mass, in path order."""
    m1 = np.ones(1)
    m2 = np.ones(1)
    for k in range(1, tree.M + 1):
        params = tree.posterior_params(k).ravel()[grid_to_path_order(k)].reshape(-1, 4)
        total = params.sum(axis=1, keepdims=True)
        e1 = params / total
        e2 = params * (params + 1) / (total * (total + 1))
        m1 = (m1[:, None] * e1).ravel()
        m2 = (m2[:, None] * e2).ravel()
    return m1, m2 - m1 * m1


def binary_cell_moments(bpt: BinaryPT) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of each leaf mass of a binary tree, in path order.

    Leaf ``i`` at binary depth ``2M`` corresponds to the quaternary cell with
    base-4 index ``i``.
    """
    m1 = np.ones(1)
    m2 = np.ones(1)
    for ab in bpt.levels:
        a = ab[:, 0][:, None]
        b = ab[:, 1][:, None]
        side = np.array([[True, False]])
        e1, e2 = _beta_moments(a, b, side)
        m1 = (m1[:, None] * e1).ravel()
        m2 = (m2[:, None] * e2).ravel()
    return m1, m2 - m1 * m1


# --------------------------------------------------------------------------
# level selection


def suggest_level(N: int, regime: str = "lower_bounded") -> int:
    """Largest ``M`` in ``[1, 12]`` allowed by the sample-size order rules.

    ``lower_bounded`` and ``gaussian`` use ``N >= M**2 * 2**(4M)``;
    ``generic`` uses ``N >= M**3``.
    """
    if regime not in REGIMES:
        raise UsageError(f"regime must be one of {REGIMES}, got {regime!r}")
    if N < 1:
        raise UsageError(f"N must be >= 1, got {N!r}")
    best = 1
    for M in range(1, MAX_TREE_LEVEL + 1):
        need = M**3 if regime == "generic" else M * M * 2 ** (4 * M)
        if N >= need:
            best = M
    return best
