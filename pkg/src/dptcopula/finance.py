"""Two-asset pipeline: prices, GARCH(1,1) marginals, copula fits and evaluation.

Returns are modelled as ``r_t = sigma_t * eps_t`` with
``sigma_t^2 = omega + a * r_{t-1}^2 + b * sigma_{t-1}^2`` and ``sigma_1^2``
equal to the sample variance.  The standardized innovations are mapped to
the unit square with empirical marginal CDFs, and copula estimators are
compared by held-out log-likelihood.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy import optimize, special
from scipy.special import expit, logit
from scipy.stats import rankdata

from . import copulas, dptree, estimators, kernels, metrics
from .errors import DataError, DomainError, NumericError, UsageError
from .grid import GridDensity

# --------------------------------------------------------------------------
# prices


@dataclass(frozen=True)
class PriceSeries:
    dates: np.ndarray  # datetime64[D]
    prices: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        prices = np.asarray(self.prices, dtype=float)
        if dates.shape != prices.shape or dates.ndim != 1:
            raise DataError("dates and prices must be 1-D and of equal length")
        if (np.diff(dates) <= np.timedelta64(0, "D")).any():
            raise DataError("dates must be strictly increasing")
        if not (np.isfinite(prices).all() and (prices > 0).all()):
            raise DomainError("prices must be positive and finite")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "prices", prices)

    def __len__(self) -> int:
        return len(self.prices)


def read_prices(path) -> PriceSeries:
    """Read a ``date,price`` CSV with ISO-8601 dates."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot read price file {path}: {exc}") from exc
    dates, prices = [], []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "price"]:
            raise DataError(f"{path}: expected header date,price, got {header}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                d = np.datetime64(rec[0].strip(), "D")
                p = float(rec[1])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row {rec!r}") from exc
            if not (math.isfinite(p) and p > 0):
                raise DomainError(f"{path}:{lineno}: price must be positive, got {rec[1]!r}")
            dates.append(d)
            prices.append(p)
    try:
        return PriceSeries(np.array(dates, dtype="datetime64[D]"), np.array(prices))
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_prices(series: PriceSeries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write("date,price\n")
        fh.writelines(f"{d},{p!r}\n" for d, p in zip(series.dates.astype(str), series.prices.tolist()))


@dataclass(frozen=True)
class Alignment:
    dates: np.ndarray
    prices: np.ndarray  # shape (T, 2)
    dropped_first: np.ndarray
    dropped_second: np.ndarray


def align(a: PriceSeries, b: PriceSeries, min_length: int = 2) -> Alignment:
    """Inner join on dates; the dates present in only one series are reported."""
    common, ia, ib = np.intersect1d(a.dates, b.dates, return_indices=True)
    only_a = np.setdiff1d(a.dates, common)
    only_b = np.setdiff1d(b.dates, common)
    if len(common) < min_length:
        shown = ", ".join(str(d) for d in np.concatenate([only_a, only_b])[:10])
        raise DataError(
            f"only {len(common)} common dates; unmatched dates include: {shown}"
        )
    return Alignment(common, np.column_stack([a.prices[ia], b.prices[ib]]), only_a, only_b)


def log_returns(prices) -> np.ndarray:
    """First differences of log prices along the first axis."""
    if isinstance(prices, PriceSeries):
        prices = prices.prices
    p = np.asarray(prices, dtype=float)
    if p.shape[0] < 2:
        raise UsageError("need at least two prices")
    if not (p > 0).all():
        raise DomainError("prices must be positive")
    return np.diff(np.log(p), axis=0)


# --------------------------------------------------------------------------
# GARCH(1,1)


@dataclass(frozen=True)
class GarchFit:
    omega: float
    alpha1: float
    beta1: float
    sigma: np.ndarray
    innovations: np.ndarray
    sigma2_0: float
    loglik: float

    def filter(self, returns) -> tuple[np.ndarray, np.ndarray]:
        """Run the fitted recursion over ``returns`` from the fitted start.

        Returns ``(sigma, innovations)``; on the training returns this
        reproduces the fitted path.
        """
        r = np.asarray(returns, dtype=float)
        s2 = kernels.garch_variance(r, self.omega, self.alpha1, self.beta1, self.sigma2_0)
        sigma = np.sqrt(s2)
        return sigma, r / sigma


GARCH_START = (0.05, 0.90)  # (a, b); omega starts at 0.05 * sample variance


def _garch_unpack(theta):
    omega = math.exp(theta[0])
    persistence = expit(theta[1])
    a = persistence * expit(theta[2])
    return omega, a, persistence - a


def garch_nll(r: np.ndarray, omega: float, a: float, b: float, sigma2_0: float) -> float:
    """Gaussian negative log-likelihood without the ``log(2 pi)`` constant."""
    s2 = kernels.garch_variance(r, omega, a, b, sigma2_0)
    if not (s2 > 0).all():
        return math.inf
    return 0.5 * float(np.sum(np.log(s2) + r * r / s2))


def garch11_fit(returns, max_iter: int = 4000) -> GarchFit:
    """Gaussian quasi-maximum-likelihood GARCH(1,1) by Nelder-Mead.

    The search runs over ``(log omega, logit(a + b), logit(a / (a + b)))``
    so stationarity and positivity hold throughout.
    """
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or r.size < 50:
        raise UsageError("GARCH fitting needs a 1-D series of at least 50 returns")
    if not np.isfinite(r).all():
        raise DataError("returns contain non-finite values")
    var = float(r.var())
    if var <= 0:
        raise DomainError("returns are constant; volatility is not identified")
    a0, b0 = GARCH_START
    theta0 = np.array([math.log(0.05 * var), logit(a0 + b0), logit(a0 / (a0 + b0))])

    def objective(theta):
        if not np.isfinite(theta).all() or abs(theta[1]) > 40 or abs(theta[2]) > 40:
            return math.inf
        return garch_nll(r, *_garch_unpack(theta), var)

    res = None
    theta = theta0
    # restart once from the optimum; Nelder-Mead can stall on the first simplex
    for _ in range(2):
        res = optimize.minimize(
            objective, theta, method="Nelder-Mead",
            options={"maxiter": max_iter, "xatol": 1e-8, "fatol": 1e-10},
        )
        theta = res.x
    if not (res.success and np.isfinite(res.fun)):
        raise NumericError(f"GARCH optimizer failed: {res.message}")
    omega, a, b = _garch_unpack(res.x)
    s2 = kernels.garch_variance(r, omega, a, b, var)
    sigma = np.sqrt(s2)
    return GarchFit(omega, a, b, sigma, r / sigma, var, -res.fun - 0.5 * r.size * math.log(2 * math.pi))


def simulate_garch(innovations: np.ndarray, omega: float, a: float, b: float) -> np.ndarray:
    """Returns driven by given standardized innovations (one column per asset)."""
    z = np.asarray(innovations, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    out = np.empty_like(z)
    s2_0 = omega / (1.0 - a - b)
    for j in range(z.shape[1]):
        s2 = s2_0
        for t in range(z.shape[0]):
            out[t, j] = math.sqrt(s2) * z[t, j]
            s2 = omega + a * out[t, j] ** 2 + b * s2
    return out if innovations.ndim > 1 else out[:, 0]


def simulate_copula_garch(model: copulas.CopulaModel, T: int, rng: np.random.Generator,
                          omega: float = 1e-6, a: float = 0.08, b: float = 0.90) -> np.ndarray:
    """``T`` paired returns with standard normal margins joined by ``model``."""
    u = model.sample(rng, T)
    return simulate_garch(special.ndtri(u), omega, a, b)


def synthetic_prices(model: copulas.CopulaModel, T: int, rng: np.random.Generator,
                     start: str = "2000-01-03", omega: float = 1e-6, a: float = 0.08,
                     b: float = 0.90) -> tuple[PriceSeries, PriceSeries]:
    """Two business-day price series whose GARCH innovations have copula ``model``."""
    r = simulate_copula_garch(model, T, rng, omega, a, b)
    dates = np.busday_offset(np.datetime64(start, "D"), np.arange(T + 1), roll="forward")
    logp = np.log(100.0) + np.vstack([np.zeros((1, 2)), np.cumsum(r, axis=0)])
    p = np.exp(logp)
    return PriceSeries(dates, p[:, 0]), PriceSeries(dates, p[:, 1])


# --------------------------------------------------------------------------
# marginal transforms


def empirical_pit(values) -> np.ndarray:
    """``rank / (n + 1)`` with average ranks for ties."""
    x = np.asarray(values, dtype=float)
    if x.size < 1:
        raise UsageError("empirical_pit needs at least one value")
    return rankdata(x, method="average") / (x.size + 1)


def ecdf_transform(reference, values) -> np.ndarray:
    """Map ``values`` through the empirical CDF of ``reference``.

    ``(#{ref < x} + #{ref <= x} + 1) / (2 (n + 1))``: a reference point of
    rank ``r`` maps to ``r / (n + 1)`` as in :func:`empirical_pit`, and any
    other value to a point strictly inside ``(0, 1)``.
    """
    ref = np.sort(np.asarray(reference, dtype=float))
    x = np.asarray(values, dtype=float)
    lt = np.searchsorted(ref, x, side="left")
    le = np.searchsorted(ref, x, side="right")
    return (lt + le + 1) / (2.0 * (ref.size + 1))


def pit_pairs(innovations) -> np.ndarray:
    z = np.asarray(innovations, dtype=float)
    return np.column_stack([empirical_pit(z[:, 0]), empirical_pit(z[:, 1])])


# --------------------------------------------------------------------------
# parametric copula MLE


_RHO_BOUND = 0.999
_NU_BOUNDS = (0.5, 200.0)


def _interior(points) -> np.ndarray:
    pts = dptree.as_points(points)
    if len(pts) < 10:
        raise UsageError("copula MLE needs at least 10 points")
    if not ((pts > 0) & (pts < 1)).all():
        raise DomainError("copula MLE needs points strictly inside the unit square")
    return pts


def fit_gaussian_copula_mle(points) -> float:
    pts = _interior(points)
    x = special.ndtri(pts[:, 0])
    y = special.ndtri(pts[:, 1])
    sxx = float(np.mean(x * x + y * y))
    sxy = float(np.mean(x * y))

    def nll(r):
        q = 1.0 - r * r
        return 0.5 * math.log(q) + (r * r * sxx - 2.0 * r * sxy) / (2.0 * q)

    res = optimize.minimize_scalar(nll, bounds=(-_RHO_BOUND, _RHO_BOUND), method="bounded",
                                   options={"xatol": 1e-10})
    if not res.success:
        raise NumericError(f"Gaussian copula MLE failed: {res.message}")
    return float(res.x)


def fit_t_copula_mle(points) -> tuple[float, float]:
    pts = _interior(points)
    rho0 = fit_gaussian_copula_mle(pts)

    def nll(theta):
        rho, lognu = theta
        model = copulas.StudentT(float(np.clip(rho, -_RHO_BOUND, _RHO_BOUND)), math.exp(lognu))
        val = -float(np.mean(model.log_density(pts[:, 0], pts[:, 1])))
        return val if math.isfinite(val) else 1e10

    # start at the Gaussian estimate with a moderate nu
    res = optimize.minimize(
        nll, np.array([rho0, math.log(8.0)]), method="L-BFGS-B",
        bounds=[(-_RHO_BOUND, _RHO_BOUND), tuple(math.log(b) for b in _NU_BOUNDS)],
    )
    if not np.isfinite(res.fun):
        raise NumericError(f"t copula MLE failed: {res.message}")
    return float(res.x[0]), float(math.exp(res.x[1]))


@dataclass(frozen=True)
class ParametricEstimate:
    """A fitted reference copula, usable wherever an estimator is expected."""

    model: copulas.CopulaModel
    name: str

    def log_density(self, u, v):
        return self.model.log_density(u, v)

    def cdf_grid(self, g):
        uu, vv = np.meshgrid(g, g)
        return self.model.cdf(uu, vv)


def gaussian_mle(points) -> ParametricEstimate:
    return ParametricEstimate(copulas.Gaussian(fit_gaussian_copula_mle(points)), "gaussian")


def t_mle(points) -> ParametricEstimate:
    rho, nu = fit_t_copula_mle(points)
    return ParametricEstimate(copulas.StudentT(rho, nu), "student_t")


FINANCE_LEVEL = 8


def default_estimators(M: int = FINANCE_LEVEL) -> dict[str, Callable]:
    return {
        "dptree": lambda pts: estimators.dptree_fit(pts, M),
        "gaussian": gaussian_mle,
        "student_t": t_mle,
    }


# --------------------------------------------------------------------------
# cross-validation


def fold_assignment(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold label of each of ``n`` points; fold sizes differ by at most one."""
    if k < 2 or n < k:
        raise UsageError(f"need k >= 2 and n >= k, got k={k}, n={n}")
    return rng.permutation(np.arange(n) % k)


def cross_validate(points, k: int, estimator_fns: Mapping[str, Callable] | None = None,
                   rng: np.random.Generator | None = None) -> dict[str, float]:
    """Mean held-out cross entropy ``-mean log c_hat`` per estimator."""
    pts = dptree.as_points(points)
    estimator_fns = estimator_fns if estimator_fns is not None else default_estimators()
    rng = rng if rng is not None else np.random.default_rng()
    folds = fold_assignment(len(pts), k, rng)
    totals = {name: [] for name in estimator_fns}
    for f in range(k):
        train = pts[folds != f]
        test = pts[folds == f]
        for name, fn in estimator_fns.items():
            totals[name].append(metrics.cross_entropy(fn(train), test))
    return {name: float(np.mean(v)) for name, v in totals.items()}


# --------------------------------------------------------------------------
# rolling prediction


@dataclass(frozen=True)
class RollingConfig:
    T_tr: int
    T_te: int
    t_e: int
    t_p: int
    historic_weight: float = 0.1
    M: int = FINANCE_LEVEL
    mise_c_grid: int = 64

    def __post_init__(self):
        for name in ("T_tr", "T_te", "t_e", "t_p"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise UsageError(f"{name} must be a positive integer, got {v!r}")
        if self.t_e > self.T_tr:
            raise UsageError("t_e must not exceed T_tr")
        if not self.historic_weight > 0:
            raise UsageError("historic_weight must be positive")

    @property
    def windows(self) -> list[tuple[int, int]]:
        """``(start, stop)`` offsets of the prediction windows within the test span."""
        return [(s, min(s + self.t_p, self.T_te)) for s in range(0, self.T_te, self.t_p)]


ROLLING_METHODS = ("dptree", "dptree_w", "empirical", "kernel", "gaussian", "student_t")
# also accepted by rolling_predict: "uniform", the independence copula


def _rolling_fit(name, window, history, cfg):
    if name == "dptree":
        return estimators.dptree_fit(window, cfg.M)
    if name == "dptree_w":
        tree = dptree.new_prior(cfg.M)
        if len(history):
            tree = dptree.update(tree, history, cfg.historic_weight)
        tree = dptree.update(tree, window)
        return estimators.GridEstimate(dptree.posterior_mean_grid(tree), "dptree_w")
    if name == "empirical":
        return estimators.Empirical(window)
    if name == "kernel":
        return estimators.kernel_fit(window)
    if name == "gaussian":
        return gaussian_mle(window)
    if name == "student_t":
        return t_mle(window)
    if name == "uniform":
        return estimators.GridEstimate(GridDensity.uniform(1), "uniform")
    raise UsageError(f"unknown rolling method {name!r}; expected one of {ROLLING_METHODS}")


@dataclass(frozen=True)
class RollingResult:
    method: str
    avg_loglik: float | None
    rmise_c: float | None


def rolling_predict(points, cfg: RollingConfig, methods=ROLLING_METHODS) -> list[RollingResult]:
    """Rolling-window prediction over the test span ``[T_tr, T_tr + T_te)``.

    ``points`` are the transformed innovations of the whole span.  Every
    window fits each method on the ``t_e`` points preceding it and scores
    the next ``t_p`` points.  The historic-weighted tree also receives all
    points before the estimation window at weight ``historic_weight``.
    MISE_C uses the empirical CDF of the prediction window as the target
    (``mise_c_grid = 0`` skips it).
    """
    pts = dptree.as_points(points)
    if len(pts) < cfg.T_tr + cfg.T_te:
        raise UsageError(f"need {cfg.T_tr + cfg.T_te} points, got {len(pts)}")
    g = metrics.midpoint_grid(cfg.mise_c_grid) if cfg.mise_c_grid else None
    loglik = {m: 0.0 for m in methods}
    sq = {m: 0.0 for m in methods}
    for s, e in cfg.windows:
        start = cfg.T_tr + s
        window = pts[start - cfg.t_e:start]
        history = pts[:start - cfg.t_e]
        target = pts[start:cfg.T_tr + e]
        truth = estimators.Empirical(target).cdf_grid(g) if g is not None else None
        for m in methods:
            est = _rolling_fit(m, window, history, cfg)
            lp = est.log_density(target[:, 0], target[:, 1])
            loglik[m] = None if lp is None or loglik[m] is None else loglik[m] + float(np.sum(lp))
            if truth is not None:
                sq[m] += len(target) * float(np.mean((est.cdf_grid(g) - truth) ** 2))
    n = cfg.T_te
    return [
        RollingResult(m, None if loglik[m] is None else loglik[m] / n,
                      math.sqrt(sq[m] / n) if g is not None else None)
        for m in methods
    ]


# --------------------------------------------------------------------------
# end-to-end


@dataclass(frozen=True)
class PreparedData:
    dates: np.ndarray
    returns: np.ndarray
    fits: tuple
    innovations: np.ndarray
    alignment: Alignment


def prepare_cv(a: PriceSeries, b: PriceSeries) -> tuple[np.ndarray, PreparedData]:
    """Returns, per-asset GARCH fits on the full sample, and PIT innovations."""
    al = align(a, b)
    r = log_returns(al.prices)
    fits = tuple(garch11_fit(r[:, j]) for j in range(2))
    z = np.column_stack([f.innovations for f in fits])
    return pit_pairs(z), PreparedData(al.dates[1:], r, fits, z, al)


def prepare_rolling(a: PriceSeries, b: PriceSeries, cfg: RollingConfig) -> tuple[np.ndarray, PreparedData]:
    """GARCH fitted on the first ``T_tr`` returns and run forward over the test span.

    Innovations are mapped to the unit square with the training ECDFs.
    """
    al = align(a, b)
    r = log_returns(al.prices)
    if len(r) < cfg.T_tr + cfg.T_te:
        raise UsageError(f"need {cfg.T_tr + cfg.T_te} returns, got {len(r)}")
    r = r[:cfg.T_tr + cfg.T_te]
    fits = tuple(garch11_fit(r[:cfg.T_tr, j]) for j in range(2))
    z = np.column_stack([fits[j].filter(r[:, j])[1] for j in range(2)])
    u = np.column_stack([ecdf_transform(z[:cfg.T_tr, j], z[:, j]) for j in range(2)])
    return u, PreparedData(al.dates[1:cfg.T_tr + cfg.T_te + 1], r, fits, z, al)
