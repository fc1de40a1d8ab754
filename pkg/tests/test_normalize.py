import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from dptcopula import copulas, dptree, metrics, normalize
from dptcopula.errors import DomainError, NumericError
from dptcopula.grid import GridDensity

NORMALIZERS = [normalize.ipf_normalize, normalize.pit_normalize]


def random_posterior(seed, M):
    rng = np.random.default_rng(seed)
    rho = rng.uniform(-0.9, 0.9)
    pts = copulas.Gaussian(rho).sample(rng, int(rng.integers(0, 300)))
    tree = dptree.fit(pts, M)
    if rng.random() < 0.5:
        return dptree.posterior_mean_grid(tree)
    return dptree.sample_measure(tree, rng)


@pytest.mark.parametrize("fix", NORMALIZERS)
def test_uniform_is_fixed_point(fix):
    g = GridDensity.uniform(3)
    assert_allclose(fix(g).mass, g.mass, atol=1e-15)


def test_ipf_two_by_two():
    g = GridDensity(np.array([[0.4, 0.2], [0.1, 0.3]]))
    out = normalize.ipf_normalize(g)
    assert_allclose(out.row_sums(), 0.5, atol=1e-12)
    assert_allclose(out.col_sums(), 0.5, atol=1e-12)


def test_ipf_product_form_one_sweep():
    r = np.array([0.1, 0.2, 0.3, 0.4])
    c = np.array([0.4, 0.3, 0.2, 0.1])
    out = normalize.ipf_normalize(GridDensity(np.outer(r, c)), max_iter=1)
    assert_allclose(out.mass, 1 / 16, atol=1e-15)


def test_ipf_reports_nonconvergence():
    g = GridDensity(np.array([[0.7, 0.1], [0.1, 0.1]]))
    with pytest.raises(NumericError):
        normalize.ipf_normalize(g, tol=1e-15, max_iter=1)


@pytest.mark.parametrize("fix", NORMALIZERS)
def test_zero_row_is_domain_error(fix):
    g = GridDensity(np.array([[0.5, 0.5], [0.0, 0.0]]))
    with pytest.raises(DomainError):
        fix(g)


def test_pit_identity_on_uniform_margins(rng):
    # a doubly stochastic perturbation keeps margins uniform
    n = 8
    m = np.full((n, n), 1 / n**2)
    for _ in range(20):
        i, j = rng.integers(0, n, 2)
        k, l = rng.integers(0, n, 2)
        if i == k or j == l:
            continue
        eps = 0.5 * min(m[i, j], m[k, l], m[i, l], m[k, j]) * rng.random()
        m[i, j] += eps
        m[k, l] += eps
        m[i, l] -= eps
        m[k, j] -= eps
    g = GridDensity(m / m.sum())
    assert normalize.margin_error(g) < 1e-15
    assert_allclose(normalize.pit_normalize(g).mass, g.mass, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.sampled_from(NORMALIZERS))
def test_margins_mass_and_idempotence(seed, M, fix):
    g = random_posterior(seed, M)
    out = fix(g)
    assert normalize.margin_error(out) <= 1e-10
    assert abs(out.mass.sum() - 1.0) <= 1e-12
    again = fix(out)
    assert_allclose(again.mass, out.mass, atol=1e-10)


def test_pit_posterior_margins_and_kl_drift():
    truth = copulas.Gaussian(0.9)
    rng = np.random.default_rng(31)
    tree = dptree.fit(truth.sample(rng, 100), 8)
    before = dptree.posterior_mean_grid(tree)
    after = normalize.pit_normalize(before)
    assert normalize.margin_error(after) <= 1e-10
    kl0 = metrics.kl_divergence(truth, before, 50_000, np.random.default_rng(5))
    kl1 = metrics.kl_divergence(truth, after, 50_000, np.random.default_rng(5))
    assert abs(kl1 - kl0) < 0.1 * kl0


def test_grid_spearman_known_values():
    assert normalize.grid_spearman(GridDensity.uniform(4)) == pytest.approx(0.0, abs=1e-14)
    # comonotone diagonal grid approaches rho_S = 1 as the grid refines
    n = 64
    diag = GridDensity(np.eye(n) / n)
    assert normalize.grid_spearman(diag) == pytest.approx(1 - 1 / n**2, abs=1e-12)


def test_grid_spearman_matches_copula():
    # Spearman's rho of the Gaussian copula is (6 / pi) asin(rho / 2)
    g = GridDensity(copulas.true_cell_masses(copulas.Gaussian(0.5), 6) /
                    copulas.true_cell_masses(copulas.Gaussian(0.5), 6).sum())
    assert normalize.grid_spearman(g) == pytest.approx(6 / np.pi * np.arcsin(0.25), abs=2 * 4.0**-6)


@given(st.integers(0, 2**32 - 1), st.integers(2, 7))
def test_pit_spearman_change_bounded_by_cell_size(seed, M):
    g = random_posterior(seed, M)
    delta = normalize.grid_spearman(normalize.pit_normalize(g)) - normalize.grid_spearman(g)
    assert abs(delta) <= 2 * 4.0**-M


@pytest.mark.xfail(strict=True, reason="within-cell discretization moves the grid Spearman statistic by O(4^-M)")
def test_pit_spearman_change_below_1e_6():
    g = random_posterior(3, 6)
    delta = normalize.grid_spearman(normalize.pit_normalize(g)) - normalize.grid_spearman(g)
    assert abs(delta) < 1e-6
