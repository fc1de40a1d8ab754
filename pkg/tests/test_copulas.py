import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate, stats

from dptcopula import copulas
from dptcopula.errors import DomainError, UsageError

FAMILY_STRINGS = [
    "gaussian rho=0.5",
    "gaussian rho=-0.3",
    "student_t rho=0.5 nu=1",
    "student_t rho=0.9 nu=4",
    "gumbel a=2",
    "gumbel a=4",
    "skew_normal rho=0.5 alpha=100,-100",
    "skew_normal rho=0.9 alpha=-10,50",
]


@pytest.fixture(params=FAMILY_STRINGS)
def model(request):
    return copulas.parse_model(request.param)


# --------------------------------------------------------------------- construction


@pytest.mark.parametrize(
    "text",
    [
        "gaussian rho=1",
        "gaussian rho=-1.5",
        "student_t rho=0.5 nu=0",
        "gumbel a=0.9",
        "skew_normal rho=0.5 alpha=1",
        "frank theta=2",
        "gaussian rho=abc",
        "gaussian",
        "",
    ],
)
def test_parse_rejects(text):
    with pytest.raises(UsageError):
        copulas.parse_model(text)


def test_describe_roundtrip(model):
    again = copulas.parse_model(copulas.describe(model))
    assert again == model and again.key() == model.key()


# --------------------------------------------------------------------- sampling


@pytest.mark.parametrize(
    "text, tau",
    [
        ("gaussian rho=0.5", 2 * math.asin(0.5) / math.pi),
        ("gaussian rho=0.9", 2 * math.asin(0.9) / math.pi),
        ("student_t rho=0.5 nu=4", 2 * math.asin(0.5) / math.pi),
        ("gumbel a=2", 0.5),
        ("gumbel a=4", 0.75),
    ],
)
def test_kendall_tau(text, tau):
    pts = copulas.parse_model(text).sample(np.random.default_rng(11), 100_000)
    assert stats.kendalltau(pts[:, 0], pts[:, 1])[0] == pytest.approx(tau, abs=0.01)


def test_gumbel_one_is_independent():
    pts = copulas.Gumbel(1.0).sample(np.random.default_rng(12), 100_000)
    assert abs(np.corrcoef(pts.T)[0, 1]) < 0.01


def test_margins_uniform(model):
    pts = model.sample(np.random.default_rng(13), 20_000)
    assert ((pts > 0) & (pts < 1)).all()
    for j in range(2):
        assert stats.kstest(pts[:, j], "uniform").pvalue > 0.01


def test_sample_deterministic(model):
    a = model.sample(np.random.default_rng(1), 50)
    b = model.sample(np.random.default_rng(1), 50)
    assert_array_equal(a, b)


def test_sample_with_log_density_consistent(model):
    pts, logc = model.sample_with_log_density(np.random.default_rng(2), 500)
    assert_allclose(logc, model.log_density(pts[:, 0], pts[:, 1]), rtol=1e-9, atol=1e-9)


# --------------------------------------------------------------------- density


@pytest.mark.parametrize(
    "text, u, v, expected",
    [
        ("gaussian rho=0", 0.3, 0.8, 1.0),
        ("gaussian rho=0.5", 0.5, 0.5, 1 / math.sqrt(0.75)),
        ("gumbel a=1", 0.3, 0.8, 1.0),
        ("skew_normal rho=0 alpha=0,0", 0.2, 0.9, 1.0),
    ],
)
def test_density_values(text, u, v, expected):
    assert copulas.parse_model(text).density(u, v) == pytest.approx(expected, rel=1e-12)


def test_density_integrates_to_one(model):
    n = 2048
    g = (np.arange(n) + 0.5) / n
    assert np.exp(model.log_density_grid(g)).mean() == pytest.approx(1.0, abs=1e-3)


def test_density_grid_matches_pointwise(model):
    g = np.array([0.05, 0.3, 0.77])
    uu, vv = np.meshgrid(g, g)
    assert_allclose(model.log_density_grid(g), model.log_density(uu, vv), rtol=1e-10, atol=1e-12)


def test_t_density_matches_scipy():
    m = copulas.StudentT(0.6, 3.0)
    u, v = 0.2, 0.7
    x = stats.t.ppf([u, v], 3.0)
    joint = stats.multivariate_t(shape=[[1, 0.6], [0.6, 1]], df=3.0).pdf(x)
    assert m.density(u, v) == pytest.approx(joint / np.prod(stats.t.pdf(x, 3.0)), rel=1e-10)


def test_skew_normal_zero_alpha_is_gaussian():
    sn = copulas.SkewNormal(0.6, 0.0, 0.0)
    ga = copulas.Gaussian(0.6)
    u = np.array([0.1, 0.5, 0.93])
    v = np.array([0.4, 0.2, 0.88])
    assert_allclose(sn.log_density(u, v), ga.log_density(u, v), rtol=1e-12)
    assert_allclose(sn.cdf(u, v), ga.cdf(u, v), atol=1e-10)


@pytest.mark.parametrize("bad", [(0.0, 0.5), (0.5, 1.0), (-0.1, 0.5)])
def test_density_domain(bad):
    with pytest.raises(DomainError):
        copulas.Gaussian(0.5).density(*bad)


# --------------------------------------------------------------------- cdf


def test_cdf_boundaries(model):
    u = np.array([0.0, 0.25, 0.6, 1.0])
    assert_allclose(model.cdf(u, np.zeros(4)), 0.0, atol=1e-15)
    assert_allclose(model.cdf(u, np.ones(4)), u, atol=1e-12)
    assert_allclose(model.cdf(np.ones(4), u), u, atol=1e-12)


@pytest.mark.parametrize(
    "text, u, v, expected",
    [("gumbel a=1", 0.5, 0.5, 0.25), ("gaussian rho=0", 0.3, 0.7, 0.21)],
)
def test_cdf_values(text, u, v, expected):
    assert copulas.parse_model(text).cdf(u, v) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("text", ["gaussian rho=0.5", "student_t rho=0.5 nu=1", "gumbel a=2"])
def test_cdf_matches_integrated_density(text):
    m = copulas.parse_model(text)
    ref, _ = integrate.dblquad(
        lambda v, u: float(m.density(np.array([u]), np.array([v]))[0]),
        0, 0.3, 0, 0.6, epsabs=1e-10, epsrel=1e-9,
    )
    assert m.cdf(0.3, 0.6) == pytest.approx(ref, abs=1e-8)


def test_bvn_cdf_matches_scipy():
    h, k, r = -0.4, 1.1, 0.7
    ref = stats.multivariate_normal(mean=[0, 0], cov=[[1, r], [r, 1]]).cdf([h, k])
    assert copulas.bvn_cdf(h, k, r) == pytest.approx(ref, abs=1e-5)


@pytest.mark.parametrize("text", ["skew_normal rho=0.5 alpha=100,-100", "skew_normal rho=0.9 alpha=-10,50",
                                  "student_t rho=0.9 nu=4"])
def test_cdf_matches_sample_frequency(text):
    m = copulas.parse_model(text)
    n = 1_000_000
    pts = m.sample(np.random.default_rng(14), n)
    for u, v in [(0.3, 0.6), (0.8, 0.2), (0.5, 0.5)]:
        p = np.mean((pts[:, 0] <= u) & (pts[:, 1] <= v))
        se = math.sqrt(p * (1 - p) / n)
        assert abs(m.cdf(u, v) - p) < 4 * se


def test_cdf_monotone_2_increasing(model):
    g = np.linspace(0, 1, 9)
    uu, vv = np.meshgrid(g, g)
    C = model.cdf(uu, vv)
    cell = C[1:, 1:] - C[:-1, 1:] - C[1:, :-1] + C[:-1, :-1]
    assert (cell > -1e-9).all()


# --------------------------------------------------------------------- skew-normal marginals


def test_sn_marginal_cdf_reduces_to_normal():
    assert copulas.sn_marginal_cdf(0.0, 0.0) == pytest.approx(0.5, abs=1e-15)


def test_sn_quantile_roundtrip():
    assert copulas.sn_marginal_quantile(copulas.sn_marginal_cdf(1.3, 2.0), 2.0) == pytest.approx(1.3, abs=1e-8)


@pytest.mark.parametrize("x, a", [(0.7, 3.0), (-1.2, 0.5), (2.0, -8.0)])
def test_sn_reflection(x, a):
    total = copulas.sn_marginal_cdf(x, a) + copulas.sn_marginal_cdf(-x, -a)
    assert total == pytest.approx(1.0, abs=1e-12)
    ref, _ = integrate.quad(lambda z: 2 * stats.norm.pdf(z) * stats.norm.cdf(a * z), -np.inf, x)
    assert copulas.sn_marginal_cdf(x, a) == pytest.approx(ref, abs=1e-9)


def test_sn_quantile_extreme_tail():
    p = np.array([1e-12, 0.5, 1 - 1e-12])
    x = copulas.sn_marginal_quantile(p, 70.0)
    assert_allclose(copulas.sn_marginal_cdf(x, 70.0), p, rtol=0, atol=1e-15)


def test_sn_quantile_domain():
    with pytest.raises(DomainError):
        copulas.sn_marginal_quantile(1.0, 0.0)


def test_sn_alpha_delta_roundtrip():
    d = copulas.sn_delta(0.5, np.array([3.0, -2.0]))
    assert_allclose(copulas.sn_alpha_from_delta(0.5, d), [3.0, -2.0], rtol=1e-10)


# --------------------------------------------------------------------- cached tables


def test_cdf_table_cache_roundtrip(tmp_path):
    m = copulas.StudentT(0.5, 4.0)
    g = (np.arange(8) + 0.5) / 8
    first = copulas.cdf_table(m, g, tmp_path)
    files = list(tmp_path.glob("cdf_student_t_*.csv"))
    assert len(files) == 1
    assert files[0].read_text().splitlines()[1] == "u,v,C"
    assert_array_equal(copulas.cdf_table(m, g, tmp_path), first)


def test_true_cell_masses_sum_to_one(tmp_path):
    masses = copulas.true_cell_masses(copulas.StudentT(0.5, 4.0), 3, tmp_path)
    assert masses.shape == (8, 8)
    assert masses.sum() == pytest.approx(1.0, abs=1e-9)
    assert_allclose(masses.sum(axis=0), 1 / 8, atol=1e-9)
