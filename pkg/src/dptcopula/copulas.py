"""Reference copula families: Gaussian, Student's t, Gumbel and skew-normal.

Each family is a frozen dataclass exposing ``sample``, ``density``,
``log_density`` and ``cdf``.  ``sample_with_log_density`` returns the draws
together with the exact log copula density, computed from the latent
variables so no quantile inversion is needed (used by Monte Carlo K-L).
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special
from scipy.special import log_ndtr, ndtr, ndtri, owens_t

from .errors import DataError, DomainError, NumericError, UsageError
from .grid import bilinear, cell_masses_from_corners

_LOG2PI = np.log(2.0 * np.pi)
_U_LO = np.finfo(float).tiny
_U_HI = 1.0 - np.finfo(float).epsneg
_CHUNK = 4096

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _clip_unit(u):
    return np.clip(u, _U_LO, _U_HI)


def _check_interior(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if not (np.all((u > 0) & (u < 1)) and np.all((v > 0) & (v < 1))):
        raise DomainError("copula densities are evaluated on the open unit square")
    return u, v


def _check_closed(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if not (np.all((u >= 0) & (u <= 1)) and np.all((v >= 0) & (v <= 1))):
        raise DomainError("copula CDFs are evaluated on the closed unit square")
    return np.broadcast_arrays(u, v)


def _check_tol(tol):
    if not tol > 0:
        raise UsageError(f"tol must be positive, got {tol!r}")


def _with_boundaries(u, v, interior):
    """Fill the CDF on the edges of the square and ``interior`` elsewhere."""
    u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
    out = np.empty(u.shape)
    edge_zero = (u == 0) | (v == 0)
    top = (v == 1) & ~edge_zero
    right = (u == 1) & ~edge_zero & ~top
    inner = ~(edge_zero | top | right)
    out[edge_zero] = 0.0
    out[top] = u[top]
    out[right] = v[right]
    if inner.any():
        out[inner] = interior(u[inner], v[inner])
    return np.clip(out, 0.0, 1.0)


def _chunked(func, *arrays):
    n = arrays[0].shape[0]
    out = np.empty(n)
    for s in range(0, n, _CHUNK):
        out[s:s + _CHUNK] = func(*(a[s:s + _CHUNK] for a in arrays))
    return out


# --------------------------------------------------------------------------
# bivariate normal rectangle probability


def bvn_cdf(h, k, rho):
    """``P(X <= h, Y <= k)`` for standard normals with correlation ``rho``.

    Uses the Owen's T representation, exact to working precision.
    """
    h, k = np.broadcast_arrays(np.asarray(h, float), np.asarray(k, float))
    h = h.astype(float)
    k = k.astype(float)
    if rho == 0.0:
        return ndtr(h) * ndtr(k)
    s = np.sqrt((1.0 - rho) * (1.0 + rho))
    out = np.empty(h.shape)
    both0 = (h == 0) & (k == 0)
    out[both0] = 0.25 + np.arcsin(rho) / (2.0 * np.pi)
    m = ~both0
    hm, km = h[m], k[m]
    with np.errstate(divide="ignore", invalid="ignore"):
        ah = (km - rho * hm) / (hm * s)
        ak = (hm - rho * km) / (km * s)
    # h == 0 gives ah = +-inf with T(0, +-inf) = +-1/4; the sign of the
    # numerator decides it.
    ah = np.where(hm == 0, np.sign(km - rho * hm) * np.inf, ah)
    ak = np.where(km == 0, np.sign(hm - rho * km) * np.inf, ak)
    beta = np.where((hm * km > 0) | ((hm * km == 0) & (hm + km >= 0)), 0.0, 0.5)
    val = 0.5 * ndtr(hm) + 0.5 * ndtr(km) - owens_t(hm, ah) - owens_t(km, ak) - beta
    # the formula is exact but loses relative accuracy deep in the lower tail
    out[m] = np.clip(val, 0.0, np.minimum(ndtr(hm), ndtr(km)))
    return out


# --------------------------------------------------------------------------
# skew-normal helpers


def sn_marginal_cdf(x, alpha_bar):
    """CDF of the standard skew-normal ``2 phi(z) Phi(alpha_bar z)``."""
    x = np.asarray(x, dtype=float)
    val = ndtr(x) - 2.0 * owens_t(x, alpha_bar)
    return np.clip(val, 0.0, 1.0)


def sn_marginal_logpdf(x, alpha_bar):
    x = np.asarray(x, dtype=float)
    return np.log(2.0) - 0.5 * (x * x + _LOG2PI) + log_ndtr(alpha_bar * x)


def sn_marginal_quantile(p, alpha_bar, xtol: float = 1e-12, max_iter: int = 200):
    """Inverse of :func:`sn_marginal_cdf` by safeguarded Newton iteration.

    The bracket starts at ``[-40, 40]`` and is widened if needed.  Newton
    steps that leave the current bracket are replaced by bisection.
    """
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0) & (p < 1)):
        raise DomainError("quantile argument must lie in (0, 1)")
    shape = p.shape
    p = p.ravel()
    lo = np.full(p.shape, -40.0)
    hi = np.full(p.shape, 40.0)
    for _ in range(8):
        low_bad = sn_marginal_cdf(lo, alpha_bar) > p
        high_bad = sn_marginal_cdf(hi, alpha_bar) < p
        if not (low_bad.any() or high_bad.any()):
            break
        lo[low_bad] *= 2.0
        hi[high_bad] *= 2.0
    # start from the normal quantile, shifted into the bracket
    x = np.clip(ndtri(p), lo, hi)
    done = np.zeros(p.shape, dtype=bool)
    for _ in range(max_iter):
        f = sn_marginal_cdf(x, alpha_bar) - p
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        dens = np.exp(sn_marginal_logpdf(x, alpha_bar))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = f / dens
        newton = x - step
        mid = 0.5 * (lo + hi)
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        new = np.where(ok, newton, mid)
        done = (np.abs(new - x) <= xtol * (1.0 + np.abs(x))) | (f == 0) | (hi - lo <= xtol)
        x = new
        if done.all():
            return x.reshape(shape)
    bad = np.flatnonzero(~done)
    raise NumericError(
        f"skew-normal quantile did not converge for {bad.size} value(s), "
        f"e.g. p={p[bad[0]]!r}, alpha_bar={alpha_bar!r}, bracket=[{lo[bad[0]]!r}, {hi[bad[0]]!r}]"
    )


def sn_delta(rho: float, alpha) -> np.ndarray:
    """``delta = Omega alpha / sqrt(1 + alpha' Omega alpha)`` for unit-diagonal Omega."""
    omega = np.array([[1.0, rho], [rho, 1.0]])
    alpha = np.asarray(alpha, dtype=float)
    oa = omega @ alpha
    return oa / np.sqrt(1.0 + alpha @ oa)


def sn_alpha_from_delta(rho: float, delta) -> np.ndarray:
    """``alpha = Omega^-1 delta / sqrt(1 - delta' Omega^-1 delta)``."""
    omega = np.array([[1.0, rho], [rho, 1.0]])
    delta = np.asarray(delta, dtype=float)
    w = np.linalg.solve(omega, delta)
    q = 1.0 - delta @ w
    if q <= 0:
        raise DomainError("delta outside the admissible region")
    return w / np.sqrt(q)


# --------------------------------------------------------------------------
# models


class CopulaModel:
    """Common interface of the reference families."""

    family: str = ""

    # subclasses implement _latent_sample, _log_density_latent, _to_uniform,
    # _from_uniform and _cdf_interior

    def key(self) -> str:
        """Canonical parameter string, used for cache file names and reports."""
        fields = ",".join(f"{k}={float(getattr(self, k))!r}" for k in self._params)
        return f"{self.family}({fields})"

    def __str__(self) -> str:
        return self.key()

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.sample_with_log_density(rng, n)[0]

    def sample_with_log_density(self, rng: np.random.Generator, n: int):
        """``(points, log_c)`` with points clipped to the open unit square."""
        if int(n) != n or n < 0:
            raise UsageError(f"n must be a nonnegative integer, got {n!r}")
        x, y = self._latent_sample(rng, int(n))
        u = _clip_unit(self._to_uniform(x, 0))
        v = _clip_unit(self._to_uniform(y, 1))
        return np.column_stack([u, v]), self._log_density_latent(x, y)

    def log_density(self, u, v):
        u, v = _check_interior(u, v)
        return self._log_density_latent(self._from_uniform(u, 0), self._from_uniform(v, 1))

    def density(self, u, v):
        return np.exp(self.log_density(u, v))

    def log_density_grid(self, g):
        """Log density on the tensor grid ``g x g``, indexed ``[v, u]``."""
        g = np.asarray(g, dtype=float)
        _check_interior(g, g)
        x = self._from_uniform(g, 0)
        y = self._from_uniform(g, 1)
        return self._log_density_latent(x[None, :], y[:, None])

    def cdf(self, u, v, tol: float = 1e-8):
        _check_tol(tol)
        u, v = _check_closed(u, v)
        return _with_boundaries(u, v, self._cdf_interior)


@dataclass(frozen=True)
class Gaussian(CopulaModel):
    rho: float
    family = "gaussian"
    _params = ("rho",)

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise UsageError(f"gaussian rho must lie in (-1, 1), got {self.rho!r}")

    def _latent_sample(self, rng, n):
        z = rng.standard_normal((n, 2))
        x = z[:, 0]
        y = self.rho * z[:, 0] + np.sqrt(1.0 - self.rho**2) * z[:, 1]
        return x, y

    def _to_uniform(self, x, axis):
        return ndtr(x)

    def _from_uniform(self, u, axis):
        return ndtri(u)

    def _log_density_latent(self, x, y):
        r = self.rho
        q = 1.0 - r * r
        return -0.5 * np.log(q) - (r * r * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * q)

    def _cdf_interior(self, u, v):
        return bvn_cdf(ndtri(u), ndtri(v), self.rho)


@dataclass(frozen=True)
class StudentT(CopulaModel):
    rho: float
    nu: float
    family = "student_t"
    _params = ("rho", "nu")

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise UsageError(f"student_t rho must lie in (-1, 1), got {self.rho!r}")
        if not self.nu > 0:
            raise UsageError(f"student_t nu must be positive, got {self.nu!r}")

    def _latent_sample(self, rng, n):
        z = rng.standard_normal((n, 2))
        w = rng.chisquare(self.nu, n) / self.nu
        scale = 1.0 / np.sqrt(w)
        x = z[:, 0] * scale
        y = (self.rho * z[:, 0] + np.sqrt(1.0 - self.rho**2) * z[:, 1]) * scale
        return x, y

    def _to_uniform(self, x, axis):
        return special.stdtr(self.nu, x)

    def _from_uniform(self, u, axis):
        return special.stdtrit(self.nu, u)

    def _t_logpdf(self, x):
        nu = self.nu
        return (
            special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)
            - 0.5 * np.log(nu * np.pi) - (nu + 1) / 2 * np.log1p(x * x / nu)
        )

    def _log_density_latent(self, x, y):
        nu, r = self.nu, self.rho
        q = 1.0 - r * r
        quad = (x * x - 2.0 * r * x * y + y * y) / (nu * q)
        joint = (
            special.gammaln((nu + 2) / 2) - special.gammaln(nu / 2)
            - np.log(nu * np.pi) - 0.5 * np.log(q) - (nu + 2) / 2 * np.log1p(quad)
        )
        return joint - self._t_logpdf(x) - self._t_logpdf(y)

    def _mixing_rule(self):
        """Nodes and weights in ``w`` for ``E f(W)``, ``W ~ chi2(nu) / nu``.

        Composite Gauss-Legendre in ``log w`` over a range holding all but
        about 1e-14 of the mass.
        """
        shape, scale = self.nu / 2.0, 2.0 / self.nu
        lo = special.gammaincinv(shape, 1e-15) * scale
        hi = special.gammainccinv(shape, 1e-15) * scale
        edges = np.linspace(np.log(lo), np.log(hi), 41)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        s = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        wq = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        w = np.exp(s)
        # density of log W: f_W(w) * w
        logf = (shape * np.log(w / scale) - w / scale - special.gammaln(shape))
        weights = wq * np.exp(logf)
        return w, weights / weights.sum()

    def _cdf_interior(self, u, v):
        x = self._from_uniform(u, 0).ravel()
        y = self._from_uniform(v, 1).ravel()
        w, wt = self._mixing_rule()
        sw = np.sqrt(w)

        def block(xb, yb):
            vals = bvn_cdf(xb[:, None] * sw[None, :], yb[:, None] * sw[None, :], self.rho)
            return vals @ wt

        return _chunked(block, x, y).reshape(np.shape(u))


@dataclass(frozen=True)
class Gumbel(CopulaModel):
    a: float
    family = "gumbel"
    _params = ("a",)

    def __post_init__(self):
        if not self.a >= 1.0:
            raise UsageError(f"gumbel a must be >= 1, got {self.a!r}")

    def sample_with_log_density(self, rng, n):
        if int(n) != n or n < 0:
            raise UsageError(f"n must be a nonnegative integer, got {n!r}")
        n = int(n)
        alpha = 1.0 / self.a
        theta = rng.uniform(0.0, np.pi, n)
        w = rng.standard_exponential(n)
        e = rng.standard_exponential((n, 2))
        # positive alpha-stable with Laplace transform exp(-t**alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (
                np.sin(alpha * theta) / np.sin(theta) ** (1.0 / alpha)
                * (np.sin((1.0 - alpha) * theta) / w) ** ((1.0 - alpha) / alpha)
            )
        if alpha == 1.0:
            s = np.ones(n)
        t = -((e / s[:, None]) ** alpha)
        pts = _clip_unit(np.exp(t))
        # recompute the density from the clipped uniforms so it matches density()
        return pts, self._log_density_uv(pts[:, 0], pts[:, 1])

    def _log_density_uv(self, u, v):
        a = self.a
        x = -np.log(u)
        y = -np.log(v)
        lx, ly = np.log(x), np.log(y)
        # log(x**a + y**a) without overflow
        ls = np.logaddexp(a * lx, a * ly)
        log_a_root = ls / a
        log_c = -np.exp(log_a_root)
        return (
            log_c + x + y + (a - 1.0) * (lx + ly) - (2.0 - 1.0 / a) * ls
            + np.log(np.exp(log_a_root) + a - 1.0)
        )

    def log_density(self, u, v):
        u, v = _check_interior(u, v)
        return self._log_density_uv(u, v)

    def log_density_grid(self, g):
        g = np.asarray(g, dtype=float)
        return self.log_density(g[None, :], g[:, None])

    def _cdf_interior(self, u, v):
        a = self.a
        x = -np.log(u)
        y = -np.log(v)
        return np.exp(-((x**a + y**a) ** (1.0 / a)))


@dataclass(frozen=True)
class SkewNormal(CopulaModel):
    """Copula of the bivariate skew-normal with ``Omega = [[1, rho], [rho, 1]]``."""

    rho: float
    alpha1: float
    alpha2: float
    family = "skew_normal"
    _params = ("rho", "alpha1", "alpha2")

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise UsageError(f"skew_normal rho must lie in (-1, 1), got {self.rho!r}")
        if not (np.isfinite(self.alpha1) and np.isfinite(self.alpha2)):
            raise UsageError("skew_normal alpha must be finite")

    @property
    def alpha(self) -> np.ndarray:
        return np.array([self.alpha1, self.alpha2], dtype=float)

    @property
    def omega(self) -> np.ndarray:
        return np.array([[1.0, self.rho], [self.rho, 1.0]])

    @property
    def alpha_bar(self) -> tuple[float, float]:
        """Shape parameters of the two skew-normal marginals."""
        r, a1, a2 = self.rho, self.alpha1, self.alpha2
        q = 1.0 - r * r
        return (
            (a1 + r * a2) / np.sqrt(1.0 + a2 * a2 * q),
            (a2 + r * a1) / np.sqrt(1.0 + a1 * a1 * q),
        )

    def _latent_sample(self, rng, n):
        delta = sn_delta(self.rho, self.alpha)
        cond = self.omega - np.outer(delta, delta)
        chol = np.linalg.cholesky(cond)
        z0 = rng.standard_normal(n)
        z = rng.standard_normal((n, 2))
        xy = z0[:, None] * delta[None, :] + z @ chol.T
        xy = np.where((z0 > 0)[:, None], xy, -xy)
        return xy[:, 0], xy[:, 1]

    def _to_uniform(self, x, axis):
        return sn_marginal_cdf(x, self.alpha_bar[axis])

    def _from_uniform(self, u, axis):
        return sn_marginal_quantile(u, self.alpha_bar[axis])

    def _log_density_latent(self, x, y):
        r = self.rho
        q = 1.0 - r * r
        log_phi2 = -_LOG2PI - 0.5 * np.log(q) - (x * x - 2.0 * r * x * y + y * y) / (2.0 * q)
        joint = np.log(2.0) + log_phi2 + log_ndtr(self.alpha1 * x + self.alpha2 * y)
        ab1, ab2 = self.alpha_bar
        return joint - sn_marginal_logpdf(x, ab1) - sn_marginal_logpdf(y, ab2)

    def _whitened(self):
        """Rotation putting the skewing direction on the first axis.

        With ``Omega = L L'`` and ``g = L' alpha``, writing ``(X, Y) = L w`` and
        ``w = t e1 + s e2`` gives independent ``t ~ 2 phi(t) Phi(lam t)`` and
        ``s ~ N(0, 1)``.  Returns ``lam`` and the rows ``(p_i, q_i)`` such
        that coordinate ``i`` equals ``p_i t + q_i s``.
        """
        L = np.linalg.cholesky(self.omega)
        g = L.T @ self.alpha
        lam = float(np.hypot(*g))
        e1 = g / lam if lam > 0 else np.array([1.0, 0.0])
        e2 = np.array([-e1[1], e1[0]])
        return lam, L @ e1, L @ e2

    def _cdf_interior(self, u, v):
        x = self._from_uniform(u, 0).ravel()
        y = self._from_uniform(v, 1).ravel()
        return sn_bivariate_cdf(x, y, *self._whitened()).reshape(np.shape(u))


_SIGMOID_OFFSETS = np.array([-8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0])
_T_RANGE = 9.0
_Q_ZERO = 1e-13


def sn_bivariate_cdf(x, y, lam, p, q):
    """``P(X <= x, Y <= y)`` in the whitened representation (see ``_whitened``).

    One-dimensional integral over ``t`` of ``2 phi(t) Phi(lam t)`` times the
    normal probability of the admissible ``s`` interval.  The integrand has
    sharp features near ``t = 0`` (width ``1/lam``), where each bound crosses
    zero, and where the two bounds meet; composite Gauss-Legendre panels are
    placed around each of these per point.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)

    def block(xb, yb):
        z = np.column_stack([xb, yb])
        n = z.shape[0]
        pts = [np.broadcast_to(np.arange(-_T_RANGE, _T_RANGE + 1, 1.5), (n, 13))]
        if lam > 0:
            pts.append(np.broadcast_to(_SIGMOID_OFFSETS / lam, (n, 7)))
        for i in range(2):
            if p[i] != 0:
                c = z[:, i] / p[i]
                w = abs(q[i] / p[i]) if abs(q[i]) > _Q_ZERO else 0.0
                pts.append(c[:, None] + w * _SIGMOID_OFFSETS[None, :])
        det = p[0] * q[1] - p[1] * q[0]
        if abs(q[0]) > _Q_ZERO and abs(q[1]) > _Q_ZERO and det != 0:
            pts.append(((z[:, 0] * q[1] - z[:, 1] * q[0]) / det)[:, None])
        bp = np.clip(np.concatenate(pts, axis=1), -_T_RANGE, _T_RANGE)
        bp = np.sort(bp, axis=1)
        a, b = bp[:, :-1], bp[:, 1:]
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        t = mid[:, :, None] + half[:, :, None] * _GL_NODES
        wts = half[:, :, None] * _GL_WEIGHTS
        lo = np.full(t.shape, -np.inf)
        hi = np.full(t.shape, np.inf)
        ok = np.ones(t.shape, dtype=bool)
        for i in range(2):
            zi = z[:, i][:, None, None]
            if abs(q[i]) <= _Q_ZERO:
                ok &= p[i] * t <= zi
            elif q[i] > 0:
                hi = np.minimum(hi, (zi - p[i] * t) / q[i])
            else:
                lo = np.maximum(lo, (zi - p[i] * t) / q[i])
        # Phi(hi) - Phi(lo), computed on the accurate side
        upper = lo > 0
        prob = np.where(upper, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
        prob = np.where(ok & (hi > lo), np.maximum(prob, 0.0), 0.0)
        dens = 2.0 * np.exp(-0.5 * (t * t + _LOG2PI)) * ndtr(lam * t)
        return np.einsum("ijk,ijk->i", wts, dens * prob)

    return _chunked(block, x.ravel(), y.ravel())


# --------------------------------------------------------------------------
# parsing and construction


FAMILIES = {
    "gaussian": Gaussian,
    "student_t": StudentT,
    "gumbel": Gumbel,
    "skew_normal": SkewNormal,
}


def parse_model(text: str) -> CopulaModel:
    """Parse ``family key=value ...`` as written in experiment configs.

    Examples: ``gaussian rho=0.5``, ``student_t rho=0.6 nu=4``,
    ``gumbel a=2``, ``skew_normal rho=0.5 alpha=100,-100``.
    """
    parts = text.split()
    if not parts:
        raise UsageError("empty copula description")
    fam = parts[0]
    if fam not in FAMILIES:
        raise UsageError(f"unknown copula family {fam!r}; expected one of {sorted(FAMILIES)}")
    kwargs = {}
    for item in parts[1:]:
        m = re.fullmatch(r"(\w+)=([-+0-9.eE,]+)", item)
        if not m:
            raise UsageError(f"cannot parse parameter {item!r} in {text!r}")
        key, val = m.groups()
        try:
            nums = [float(s) for s in val.split(",")]
        except ValueError as exc:
            raise UsageError(f"bad number in {item!r}") from exc
        if key == "alpha" and fam == "skew_normal":
            if len(nums) != 2:
                raise UsageError(f"skew_normal alpha needs two values, got {val!r}")
            kwargs["alpha1"], kwargs["alpha2"] = nums
        elif len(nums) == 1:
            kwargs[key] = nums[0]
        else:
            raise UsageError(f"parameter {key!r} takes one value, got {val!r}")
    try:
        return FAMILIES[fam](**kwargs)
    except TypeError as exc:
        raise UsageError(f"wrong parameters for {fam}: {exc}") from exc


def describe(model: CopulaModel) -> str:
    """Inverse of :func:`parse_model`."""
    if isinstance(model, SkewNormal):
        return f"skew_normal rho={model.rho!r} alpha={model.alpha1!r},{model.alpha2!r}"
    fields = " ".join(f"{k}={float(getattr(model, k))!r}" for k in model._params)
    return f"{model.family} {fields}"


# --------------------------------------------------------------------------
# cached CDF grids


def default_cache_dir() -> Path:
    env = os.environ.get("DPTCOPULA_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "dptcopula"


def _cache_path(model: CopulaModel, g: np.ndarray, cache_dir) -> Path:
    h = hashlib.sha256(model.key().encode())
    h.update(np.ascontiguousarray(g, dtype=np.float64).tobytes())
    return Path(cache_dir) / f"cdf_{model.family}_{h.hexdigest()[:16]}_{g.size}.csv"


def cdf_table(model: CopulaModel, g, cache_dir=None) -> np.ndarray:
    """``C(g[a], g[b])`` on the tensor grid, shape ``(len(g), len(g))`` indexed ``[b, a]``.

    Closed-form families are computed directly.  Others are computed by
    quadrature once and cached as CSV with header ``u,v,C`` (u varying
    fastest) under ``cache_dir``; a leading comment line holds the model key.
    """
    g = np.asarray(g, dtype=np.float64)
    uu, vv = np.meshgrid(g, g)
    if isinstance(model, (Gumbel, Gaussian)):
        return model.cdf(uu, vv)
    path = _cache_path(model, g, cache_dir if cache_dir is not None else default_cache_dir())
    if path.exists():
        return _read_cdf_csv(path, model, g.size)
    grid = model.cdf(uu, vv)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp{os.getpid()}")
        with tmp.open("w") as fh:
            fh.write(f"# {model.key()}\n")
            fh.write("u,v,C\n")
            fh.writelines(
                f"{a!r},{b!r},{c!r}\n" for a, b, c in zip(uu.ravel().tolist(), vv.ravel().tolist(), grid.ravel().tolist())
            )
        os.replace(tmp, path)
    except OSError:
        pass  # the cache is an optimization only
    return grid


def cdf_corner_grid(model: CopulaModel, n: int, cache_dir=None) -> np.ndarray:
    """``C(i/n, j/n)`` on the ``(n+1) x (n+1)`` corner grid, indexed ``[v, u]``."""
    if int(n) != n or n < 1:
        raise UsageError(f"grid size must be a positive integer, got {n!r}")
    return cdf_table(model, np.arange(n + 1) / n, cache_dir)


def true_cell_masses(model: CopulaModel, M: int, cache_dir=None) -> np.ndarray:
    """Exact probability of every level-``M`` cell, grid layout."""
    return np.maximum(cell_masses_from_corners(cdf_corner_grid(model, 1 << M, cache_dir)), 0.0)


def _read_cdf_csv(path: Path, model: CopulaModel, n: int) -> np.ndarray:
    with path.open() as fh:
        first = fh.readline().strip()
        if first != f"# {model.key()}":
            raise DataError(f"{path}: cache key mismatch ({first!r})")
        data = np.loadtxt(fh, delimiter=",", skiprows=1)
    if data.shape != (n * n, 3):
        raise DataError(f"{path}: expected {n * n} rows")
    return data[:, 2].reshape(n, n)


def interpolated_cdf(model: CopulaModel, n: int = 1024, cache_dir=None):
    """Fast approximate CDF: bilinear interpolation of the cached corner grid."""
    corners = cdf_corner_grid(model, n, cache_dir)
    return lambda u, v: bilinear(corners, u, v)
