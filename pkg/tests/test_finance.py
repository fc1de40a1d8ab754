import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from dptcopula import copulas, estimators, finance
from dptcopula.errors import DataError, DomainError, UsageError
from dptcopula.grid import GridDensity


def series(dates, prices):
    return finance.PriceSeries(np.array(dates, dtype="datetime64[D]"), np.array(prices, float))


# --------------------------------------------------------------------- prices and returns


@pytest.mark.parametrize(
    "prices, expected",
    [([100, 100], [0.0]), ([100, 110], [math.log(1.1)])],
)
def test_log_returns(prices, expected):
    assert_allclose(finance.log_returns(np.array(prices, float)), expected, rtol=1e-14)


def test_log_returns_rejects_short():
    with pytest.raises(UsageError):
        finance.log_returns(np.array([100.0]))


def test_prices_roundtrip(tmp_path):
    s = series(["2020-01-02", "2020-01-03", "2020-01-06"], [1.5, 1.25, 3.0])
    finance.write_prices(s, tmp_path / "p.csv")
    back = finance.read_prices(tmp_path / "p.csv")
    assert_array_equal(back.dates, s.dates)
    assert_array_equal(back.prices, s.prices)


@pytest.mark.parametrize(
    "text, exc, where",
    [
        ("when,price\n2020-01-01,1\n", DataError, "header"),
        ("date,price\n2020-01-01,abc\n", DataError, ":2"),
        ("date,price\n2020-01-01,1\n2020-01-02,-1\n", DomainError, ":3"),
        ("date,price\n2020-01-02,1\n2020-01-01,1\n", DataError, "increasing"),
    ],
)
def test_read_prices_errors(tmp_path, text, exc, where):
    p = tmp_path / "p.csv"
    p.write_text(text)
    with pytest.raises(exc, match=where):
        finance.read_prices(p)


def test_read_prices_missing(tmp_path):
    with pytest.raises(DataError):
        finance.read_prices(tmp_path / "nope.csv")


def test_align_inner_join():
    a = series(["2020-01-01", "2020-01-02", "2020-01-03", "2020-01-06"], [1, 2, 3, 4])
    b = series(["2020-01-02", "2020-01-03", "2020-01-06", "2020-01-07"], [5, 6, 7, 8])
    al = finance.align(a, b)
    assert [str(d) for d in al.dates] == ["2020-01-02", "2020-01-03", "2020-01-06"]
    assert_array_equal(al.prices, [[2, 5], [3, 6], [4, 7]])
    assert [str(d) for d in al.dropped_first] == ["2020-01-01"]
    assert [str(d) for d in al.dropped_second] == ["2020-01-07"]


def test_align_lists_unmatched_dates():
    a = series(["2020-01-01", "2020-01-02"], [1, 2])
    b = series(["2021-01-01", "2021-01-02"], [1, 2])
    with pytest.raises(DataError, match="2020-01-01"):
        finance.align(a, b)


# --------------------------------------------------------------------- GARCH


def test_garch_recovers_parameters():
    rng = np.random.default_rng(41)
    r = finance.simulate_garch(rng.standard_normal(5000), 1e-6, 0.08, 0.90)
    fit = finance.garch11_fit(r)
    for est, true in [(fit.omega, 1e-6), (fit.alpha1, 0.08), (fit.beta1, 0.90)]:
        assert est == pytest.approx(true, rel=0.3)


def test_garch_innovations_standardized():
    rng = np.random.default_rng(42)
    fit = finance.garch11_fit(finance.simulate_garch(rng.standard_normal(3000), 2e-6, 0.1, 0.85))
    assert -0.1 < fit.innovations.mean() < 0.1
    assert 0.8 < fit.innovations.var() < 1.2
    assert fit.alpha1 + fit.beta1 < 1
    sigma, eps = fit.filter(fit.innovations * fit.sigma)
    assert_allclose(sigma, fit.sigma, rtol=1e-12)


def test_garch_constant_volatility():
    rng = np.random.default_rng(43)
    r = 0.01 * rng.standard_normal(5000)
    fit = finance.garch11_fit(r)
    assert fit.alpha1 < 0.02
    assert fit.omega / (1 - fit.alpha1 - fit.beta1) == pytest.approx(r.var(), rel=0.1)


@pytest.mark.parametrize("r, exc", [(np.zeros(100), DomainError), (np.ones(10), UsageError),
                                    (np.r_[np.ones(99), np.nan], DataError)])
def test_garch_errors(r, exc):
    with pytest.raises(exc):
        finance.garch11_fit(r)


def test_garch_nll_matches_direct_sum():
    r = np.array([0.01, -0.02, 0.005, 0.0])
    s2 = [1e-4]
    for x in r[:-1]:
        s2.append(1e-6 + 0.1 * x * x + 0.8 * s2[-1])
    s2 = np.array(s2)
    expected = 0.5 * np.sum(np.log(s2) + r * r / s2)
    assert finance.garch_nll(r, 1e-6, 0.1, 0.8, 1e-4) == pytest.approx(expected, rel=1e-13)


# --------------------------------------------------------------------- marginal transforms


@pytest.mark.parametrize(
    "values, expected",
    [([3, 1, 2], [0.75, 0.25, 0.5]), ([1, 1], [0.5, 0.5])],
)
def test_empirical_pit(values, expected):
    assert_allclose(finance.empirical_pit(values), expected, rtol=1e-15)


def test_empirical_pit_monotone(rng):
    x = np.sort(rng.standard_normal(100))
    assert (np.diff(finance.empirical_pit(x)) > 0).all()


def test_ecdf_transform_matches_pit_on_reference(rng):
    ref = rng.standard_normal(50)
    assert_allclose(finance.ecdf_transform(ref, ref), finance.empirical_pit(ref), rtol=1e-15)
    out = finance.ecdf_transform(ref, np.array([-100.0, 100.0]))
    assert 0 < out[0] < out[1] < 1


# --------------------------------------------------------------------- copula MLE


def test_gaussian_mle_recovers_rho():
    pts = copulas.Gaussian(0.6).sample(np.random.default_rng(44), 5000)
    assert finance.fit_gaussian_copula_mle(pts) == pytest.approx(0.6, abs=0.03)


def test_gaussian_mle_independence():
    pts = np.random.default_rng(45).random((5000, 2))
    assert finance.fit_gaussian_copula_mle(pts) == pytest.approx(0.0, abs=0.03)


def test_t_mle_recovers_nu():
    pts = copulas.StudentT(0.6, 6.0).sample(np.random.default_rng(46), 5000)
    rho, nu = finance.fit_t_copula_mle(pts)
    assert rho == pytest.approx(0.6, abs=0.03)
    assert 4 <= nu <= 9


def test_mle_rejects_boundary_points():
    with pytest.raises(DomainError):
        finance.fit_gaussian_copula_mle(np.r_[np.full((20, 2), 0.5), [[0.0, 0.5]]])
    with pytest.raises(UsageError):
        finance.fit_gaussian_copula_mle(np.full((5, 2), 0.5))


# --------------------------------------------------------------------- cross-validation


def test_fold_assignment_balanced(rng):
    f = finance.fold_assignment(103, 10, rng)
    counts = np.bincount(f)
    assert counts.max() - counts.min() <= 1 and counts.sum() == 103
    with pytest.raises(UsageError):
        finance.fold_assignment(5, 10, rng)


def test_cross_validate_uniform_is_zero(rng):
    uniform = lambda pts: GridDensity.uniform(2)
    out = finance.cross_validate(rng.random((100, 2)), 5, {"uniform": uniform}, rng)
    assert out == {"uniform": 0.0}


def test_cross_validate_t_data_prefers_t_mle():
    pts = copulas.StudentT(0.6, 6.0).sample(np.random.default_rng(47), 5000)
    scores = finance.cross_validate(pts, 10, finance.default_estimators(), np.random.default_rng(48))
    assert min(scores, key=scores.get) == "student_t"


# --------------------------------------------------------------------- rolling prediction


def test_rolling_config_validation():
    with pytest.raises(UsageError):
        finance.RollingConfig(100, 100, 200, 10)
    with pytest.raises(UsageError):
        finance.RollingConfig(100, 100, 50, 0)
    assert finance.RollingConfig(10, 25, 5, 10).windows == [(0, 10), (10, 20), (20, 25)]


def test_rolling_uniform_loglik_zero(rng):
    cfg = finance.RollingConfig(100, 60, 50, 20)
    (res,) = finance.rolling_predict(rng.random((160, 2)), cfg, ["uniform"])
    assert res.avg_loglik == 0.0


def test_rolling_gaussian_near_oracle():
    rho = 0.6
    truth = copulas.Gaussian(rho)
    pts, logc = truth.sample_with_log_density(np.random.default_rng(49), 1000)
    cfg = finance.RollingConfig(500, 500, 250, 50)
    res = {r.method: r for r in finance.rolling_predict(pts, cfg, ["gaussian", "empirical", "dptree_w"])}
    oracle = -0.5 * math.log(1 - rho * rho)
    se = logc[500:].std() / math.sqrt(500)
    assert abs(res["gaussian"].avg_loglik - oracle) < 2 * se
    assert res["empirical"].avg_loglik is None
    assert res["empirical"].rmise_c > 0


def test_rolling_rejects_short_input(rng):
    with pytest.raises(UsageError):
        finance.rolling_predict(rng.random((10, 2)), finance.RollingConfig(10, 10, 5, 5))
    with pytest.raises(UsageError):
        finance.rolling_predict(rng.random((20, 2)), finance.RollingConfig(10, 10, 5, 5), ["bogus"])


def test_historic_weight_enters_prior(rng):
    """With no history the weighted tree equals the plain tree."""
    pts = rng.random((40, 2))
    cfg = finance.RollingConfig(20, 20, 20, 20)
    res = {r.method: r.avg_loglik for r in finance.rolling_predict(pts, cfg, ["dptree", "dptree_w"])}
    assert res["dptree"] == res["dptree_w"]


# --------------------------------------------------------------------- end to end


def test_synthetic_prices_deterministic():
    a1, b1 = finance.synthetic_prices(copulas.Gaussian(0.5), 300, np.random.default_rng(50))
    a2, b2 = finance.synthetic_prices(copulas.Gaussian(0.5), 300, np.random.default_rng(50))
    assert_array_equal(a1.prices, a2.prices)
    assert_array_equal(b1.dates, b2.dates)
    assert len(a1) == 301


def test_prepare_pipelines():
    a, b = finance.synthetic_prices(copulas.Gaussian(0.5), 600, np.random.default_rng(51))
    u, prep = finance.prepare_cv(a, b)
    assert u.shape == (600, 2) and ((u > 0) & (u < 1)).all()
    assert len(prep.dates) == 600
    cfg = finance.RollingConfig(300, 200, 100, 50)
    u2, prep2 = finance.prepare_rolling(a, b, cfg)
    assert u2.shape == (500, 2) and ((u2 > 0) & (u2 < 1)).all()
    # GARCH fitted on the training span only
    fit_tr = finance.garch11_fit(prep2.returns[:300, 0])
    assert prep2.fits[0].omega == fit_tr.omega
