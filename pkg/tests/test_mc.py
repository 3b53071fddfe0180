"""Monte Carlo study harness."""

import dataclasses
import io

import numpy as np
import pytest

from recmean import (
    ConvergenceError,
    gompertz_cum,
    load_config,
    mc_summary_to_csv,
    parse_link,
    run_mc_study,
)


def small_cfg():
    return dataclasses.replace(load_config("scenario_bc_1"), seed=202)


@pytest.fixture(scope="module")
def summary():
    return run_mc_study(small_cfg(), parse_link("boxcox:1"), reps=8, n=80)


def test_row_layout_and_truths(summary):
    cfg = small_cfg()
    names = [r.name for r in summary.rows]
    assert names == ["beta1", "beta2", "A(tau/4)", "A(tau/2)", "A(tau)"]
    assert summary.rows[0].truth == cfg.beta[0]
    assert summary.rows[1].truth == cfg.beta[1]
    for row, t in zip(summary.rows[2:], (cfg.tau / 4, cfg.tau / 2, cfg.tau)):
        assert np.isclose(row.truth, gompertz_cum(cfg.gamma1, cfg.gamma2, t))
    assert summary.reps == 8
    assert summary.successes == 8 - summary.failures
    assert summary.fit_link == "boxcox:1"
    assert summary.n == 80


def test_row_values_are_sane(summary):
    for r in summary.rows:
        assert np.isclose(r.bias, r.mean_est - r.truth)
        assert np.isclose(r.bias_pct, 100 * r.bias / r.truth)
        assert r.sd is not None and r.sd > 0
        assert r.mean_se_fisher > 0 and r.mean_se_sandwich > 0
        assert 0.0 <= r.cp_fisher <= 1.0 and 0.0 <= r.cp_sandwich <= 1.0


def test_reproducible(summary):
    again = run_mc_study(small_cfg(), parse_link("boxcox:1"), reps=8, n=80)
    for a, b in zip(summary.rows, again.rows):
        assert a.mean_est == b.mean_est and a.sd == b.sd


def test_worker_pool_matches_sequential(summary):
    pooled = run_mc_study(small_cfg(), parse_link("boxcox:1"), reps=8, n=80,
                          workers=2)
    assert pooled.failures == summary.failures
    for a, b in zip(summary.rows, pooled.rows):
        assert a == b


def test_single_replicate_has_no_sd():
    s = run_mc_study(small_cfg(), parse_link("boxcox:1"), reps=1, n=80)
    assert s.rows[0].sd is None
    buf = io.StringIO()
    mc_summary_to_csv(s, buf)
    lines = buf.getvalue().strip().splitlines()
    row = lines[1].split(",")
    header = lines[0].split(",")
    assert row[header.index("sd")] == ""


def test_csv_fields(summary, tmp_path):
    path = tmp_path / "mc.csv"
    mc_summary_to_csv(summary, str(path))
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    assert header == ["name", "truth", "mean_est", "bias", "bias_pct", "sd",
                      "mean_se_fisher", "mean_se_sandwich", "cp_fisher",
                      "cp_sandwich", "reps", "failures"]
    assert len(lines) == 6
    first = lines[1].split(",")
    assert first[0] == "beta1"
    assert float(first[1]) == summary.rows[0].truth
    assert int(first[-2]) == 8 and int(first[-1]) == summary.failures


def test_argument_validation():
    with pytest.raises(ValueError):
        run_mc_study(small_cfg(), parse_link("boxcox:1"), reps=0, n=80)
    with pytest.raises(ValueError):
        run_mc_study(small_cfg(), parse_link("boxcox:1"), reps=2, n=0)


def test_all_failures_raise():
    # one subject cannot support a 2-covariate fit; every replicate fails
    with pytest.raises(ConvergenceError, match="all .* failed"):
        run_mc_study(small_cfg(), parse_link("boxcox:1"), reps=3, n=1)
