import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dptcopula import harness
from dptcopula.errors import ConfigError, UsageError

SMALL_KL = """
[experiment]
kind = kl_table
M = 4
Ns = 0, 20
draws = 5
n_mc = 200
families =
    gaussian rho=0.5
    gumbel a=2
"""

SMALL_FREQ = """
[experiment]
kind = freq_comparison
M = 3
Ns = 10, 40
replications = 2
n_mc = 200
grid_points = 64
families =
    gaussian rho=0.5
"""


# --------------------------------------------------------------------- config


def test_config_parses_defaults():
    cfg = harness.ExperimentConfig.from_text(SMALL_KL, name="small")
    assert cfg.kind == "kl_table" and cfg.M == 4 and cfg.Ns == (0, 20)
    assert len(cfg.families) == 2 and cfg.name == "small"
    assert cfg.normalize == "none" and cfg.datasets == 1


@pytest.mark.parametrize("name", ["table1_desk", "table2_desk"])
def test_bundled_configs_load(name):
    cfg = harness.ExperimentConfig.from_file(harness.bundled_config(name))
    assert cfg.name == name
    full = cfg.at_full_scale()
    assert full.draws == cfg.full_draws and full.replications == cfg.full_replications


def test_bundled_table1_matches_protocol():
    cfg = harness.ExperimentConfig.from_file(harness.bundled_config("table1_desk"))
    assert cfg.M == 10 and cfg.draws == 200 and cfg.Ns == (0, 10, 100, 1000, 10000)
    assert len(cfg.families) == 14
    assert 100000 in cfg.at_full_scale().Ns


@pytest.mark.parametrize(
    "edit, key",
    [
        (lambda t: t + "bogus = 1\n", "bogus"),
        (lambda t: t.replace("kind = kl_table\n", ""), "kind"),
        (lambda t: t.replace("M = 4", "M = x"), "m"),
        (lambda t: t.replace("gumbel a=2", "frank theta=2"), "families"),
        (lambda t: t.replace("Ns = 0, 20", "Ns = 0, -5"), "ns"),
        (lambda t: t.replace("kind = kl_table", "kind = other"), "kind"),
        (lambda t: t + "normalize = sinkhorn\n", "normalize"),
    ],
)
def test_config_errors_name_key(edit, key):
    with pytest.raises(ConfigError, match=key):
        harness.ExperimentConfig.from_text(edit(SMALL_KL))


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        harness.ExperimentConfig.from_file(tmp_path / "none.cfg")


def test_freq_rejects_zero_N():
    cfg = harness.ExperimentConfig.from_text(SMALL_FREQ.replace("Ns = 10, 40", "Ns = 0"))
    with pytest.raises(ConfigError):
        harness.run_freq_comparison(cfg, 1)


# --------------------------------------------------------------------- seeding and determinism


def test_task_rng_independent_streams():
    a = harness.task_rng(7, 0, 0).random(4)
    assert_allclose(harness.task_rng(7, 0, 0).random(4), a, rtol=0)
    assert not np.array_equal(harness.task_rng(7, 0, 1).random(4), a)
    assert not np.array_equal(harness.task_rng(7, 1, 0).random(4), a)
    assert not np.array_equal(harness.task_rng(8, 0, 0).random(4), a)


def _csv_text(tmp_path, name, header, rows):
    p = tmp_path / name
    harness.write_csv(p, header, rows)
    return p.read_text()


def test_kl_table_thread_invariant(tmp_path):
    cfg = harness.ExperimentConfig.from_text(SMALL_KL)
    one = harness.run_kl_table(cfg, 11, threads=1)
    two = harness.run_kl_table(cfg, 11, threads=2)
    assert _csv_text(tmp_path, "a.csv", harness.KLRow.columns(), one) == \
        _csv_text(tmp_path, "b.csv", harness.KLRow.columns(), two)


def test_freq_thread_invariant(tmp_path):
    cfg = harness.ExperimentConfig.from_text(SMALL_FREQ)
    one = harness.run_freq_comparison(cfg, 12, threads=1)
    two = harness.run_freq_comparison(cfg, 12, threads=2)
    cols = harness.MetricReport.columns()
    assert _csv_text(tmp_path, "a.csv", cols, one) == _csv_text(tmp_path, "b.csv", cols, two)


# --------------------------------------------------------------------- K-L table


def test_kl_rows_shape_and_pivot():
    cfg = harness.ExperimentConfig.from_text(SMALL_KL)
    rows = harness.run_kl_table(cfg, 13)
    assert len(rows) == 4
    assert all(r.draws == 5 and r.kl_mean > 0 and r.kl_sd >= 0 and r.mc_se > 0 for r in rows)
    header, body = harness.pivot_kl(rows)
    assert header == ["family", "0", "20"]
    assert len(body) == 2
    assert all(" (" in cell for line in body for cell in line[1:])


def test_kl_data_reduce_divergence():
    cfg = harness.ExperimentConfig.from_text(SMALL_KL.replace("Ns = 0, 20", "Ns = 0, 2000"))
    rows = harness.run_kl_table(cfg, 14)
    by = {(r.family, r.N): r.kl_mean for r in rows}
    for fam in {r.family for r in rows}:
        assert by[(fam, 2000)] < by[(fam, 0)]


@pytest.mark.parametrize("norm", ["ipf", "pit"])
def test_kl_normalized_runs(norm):
    cfg = harness.ExperimentConfig.from_text(SMALL_KL + f"normalize = {norm}\n")
    rows = harness.run_kl_table(cfg, 15)
    assert all(math.isfinite(r.kl_mean) for r in rows)


# --------------------------------------------------------------------- frequentist comparison


def test_freq_na_inf_states():
    cfg = harness.ExperimentConfig.from_text(SMALL_FREQ)
    summary = harness.summarize_freq(harness.run_freq_comparison(cfg, 16))
    by = {(s.estimator, s.N): s for s in summary}
    for N in (10, 40):
        assert by[("empirical", N)].kl is None
        assert by[("empirical", N)].rmise is None
        assert by[("histogram", N)].kl == math.inf
        assert math.isfinite(by[("dptree", N)].kl)
        assert math.isfinite(by[("kernel", N)].kl)
        assert all(by[(e, N)].rmise_c > 0 for e in cfg.estimators)
    header, body = harness.pivot_freq(summary)
    assert header == ["family", "metric", "N", "dptree", "empirical", "kernel", "histogram"]
    assert len(body) == 8
    kl_rows = [line for line in body if line[1] == "kl"]
    assert all(line[4] == "NA" and line[6] == "Inf" for line in kl_rows)


@pytest.mark.parametrize(
    "values, root, expected",
    [([1.0, 3.0], False, 2.0), ([1.0, 3.0], True, math.sqrt(2.0)),
     ([1.0, None], False, None), ([1.0, math.inf], True, math.inf)],
)
def test_aggregation(values, root, expected):
    assert harness._agg(values, root) == expected


# --------------------------------------------------------------------- convergence fit


def test_convergence_power_law_exact():
    Ns = [10, 100, 1000, 10000]
    fit = harness.convergence_fit(Ns, [2.0 * n ** -0.3 for n in Ns])
    assert fit.slope_log == pytest.approx(-0.3, rel=1e-12)
    assert fit.r2_log == pytest.approx(1.0, abs=1e-12)
    assert fit.r2_lin < fit.r2_log


def test_convergence_constant():
    fit = harness.convergence_fit([10, 100, 1000, 10000], [0.5] * 4)
    assert fit.slope_log == pytest.approx(0.0, abs=1e-12)
    assert fit.slope_lin == pytest.approx(0.0, abs=1e-12)


def test_convergence_needs_four_points():
    with pytest.raises(UsageError):
        harness.convergence_fit([0, 10, 100, 1000], [1.0, 0.5, 0.3, 0.2])


def test_convergence_on_published_row():
    # Gaussian rho=0.9 row of the published table, N = 10 .. 100000
    fit = harness.convergence_fit([10, 100, 1000, 10000, 100000], [0.83, 0.48, 0.22, 0.10, 0.05])
    assert -0.33 < fit.slope_log < -0.28
    assert fit.r2_log > 0.98 and fit.r2_log > fit.r2_lin


def test_run_convergence_fit_groups_families():
    rows = [harness.KLRow(f, n, 0, 1, k, 0.0, 0.0)
            for f, s in (("a", -0.3), ("b", -0.5))
            for n, k in [(n, n ** s) for n in (10, 100, 1000, 10000)]]
    fits = harness.run_convergence_fit(rows)
    assert [f.family for f in fits] == ["a", "b"]
    assert_allclose([f.slope_log for f in fits], [-0.3, -0.5], rtol=1e-12)
