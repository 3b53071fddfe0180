"""NPMLE fitting, profile jump updates, and the rate-model reference fit."""

import warnings

import numpy as np
import pytest

from recmean import (
    DataError,
    SolverOptions,
    build_dataset,
    fit_npmle,
    ghosh_lin_fit,
    initial_values,
    ipc_weights,
    km_censoring,
    make_subject,
    parse_link,
    profile_jump_update,
)
from conftest import random_dataset


@pytest.mark.parametrize("link_spec", ["boxcox:1", "log:1e-12"])
def test_identity_link_jumps_are_event_fractions(two_subject_ds, link_spec):
    # no covariates, no censoring, no terminal event: the NPMLE jump at
    # each event time is (number of events) / n for any identity-limit link
    fit = fit_npmle(two_subject_ds, parse_link(link_spec))
    assert fit.converged
    assert np.allclose(fit.jump_times, [1.0, 2.0])
    assert np.allclose(fit.jump_sizes, [0.5, 0.5], rtol=0, atol=1e-8)


def test_event_fraction_jumps_larger_sample():
    ds = random_dataset(n=60, d=0, seed=4, with_terminal=False,
                        with_censor=False)
    fit = fit_npmle(ds, parse_link("boxcox:1"))
    assert fit.converged
    wc = ipc_weights(ds, km_censoring(ds))
    counts = np.array([
        sum(np.isclose(s.recurrent_times, t).sum() for s in ds.subjects)
        for t in fit.jump_times
    ])
    assert np.allclose(fit.jump_sizes, counts / ds.n, rtol=0, atol=1e-8)


def test_profile_update_fixed_point(two_subject_ds):
    wc = ipc_weights(two_subject_ds, km_censoring(two_subject_ds))
    link = parse_link("boxcox:1")
    jumps = np.array([0.5, 0.5])
    out = profile_jump_update(np.zeros(0), jumps, two_subject_ds, wc, link)
    assert np.allclose(out, jumps, rtol=0, atol=1e-12)


def test_profile_update_improves_loglik(general_ds):
    from recmean import Engine, build_likelihood_data

    wc = ipc_weights(general_ds, km_censoring(general_ds))
    link = parse_link("boxcox:0.5")
    eng = Engine(build_likelihood_data(general_ds, wc), link)
    p0 = initial_values(general_ds, wc)
    beta = p0.beta
    j0 = p0.jumps
    j1 = profile_jump_update(beta, j0, general_ds, wc, link)
    assert np.all(j1 > 0)
    assert eng.loglik(beta, j1) >= eng.loglik(beta, j0) - 1e-10


def test_initial_values_shapes(general_ds):
    wc = ipc_weights(general_ds, km_censoring(general_ds))
    p = initial_values(general_ds, wc)
    assert p.beta.shape == (2,)
    assert np.all(np.isfinite(p.beta)) and np.all(np.isfinite(p.log_jumps))
    assert p.jumps.min() > 0


@pytest.mark.parametrize("link_spec", ["boxcox:1", "boxcox:0.5", "log:1"])
def test_fit_converges_and_zeroes_gradient(general_ds, link_spec):
    fit = fit_npmle(general_ds, parse_link(link_spec))
    assert fit.converged
    assert fit.gradient_norm < 1e-8
    assert np.isfinite(fit.loglik)
    assert fit.k == len(fit.jump_times) == len(fit.jump_sizes)
    assert np.all(fit.jump_sizes > 0)
    cum = fit.cumulative(np.linspace(0, fit.tau, 25))
    assert np.all(np.diff(cum) >= 0)
    assert np.isclose(fit.cumulative(fit.tau), fit.jump_sizes.sum())


def test_fit_result_dict_round_keys(general_ds):
    fit = fit_npmle(general_ds, parse_link("boxcox:1"))
    d = fit.to_dict()
    for key in ("beta", "jump_times", "jump_sizes", "loglik",
                "converged", "link", "n", "tau", "k", "gradient_norm"):
        assert key in d
    assert d["converged"] is True


def test_non_convergence_is_flagged_not_raised(general_ds):
    opts = SolverOptions(max_iter=1, lbfgs_maxiter=1, profile_sweeps=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_npmle(general_ds, parse_link("log:0.5"), opts)
    assert fit.converged is False
    assert np.isfinite(fit.loglik)


def test_ghosh_lin_matches_proportional_means_fit():
    ds = random_dataset(n=150, d=2, seed=8)
    beta_gl = ghosh_lin_fit(ds)
    fit = fit_npmle(ds, parse_link("boxcox:1"))
    assert fit.converged
    assert np.max(np.abs(beta_gl - fit.beta_hat)) < 1e-4


def test_ghosh_lin_needs_covariates(two_subject_ds):
    with pytest.raises(DataError):
        ghosh_lin_fit(two_subject_ds)


def test_single_subject_no_events_rejected_or_degenerate():
    # a dataset with no recurrent events anywhere has no jumps to estimate
    subs = [make_subject("1", [(0.0, [0.2])], [], None, 4.0, 4.0)]
    ds = build_dataset(subs, 4.0)
    with pytest.raises(DataError):
        fit_npmle(ds, parse_link("boxcox:1"))
