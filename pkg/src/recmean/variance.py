"""Sandwich variance for the weighted NPMLE.

Bread: the observed information (negated Hessian in raw jump-size
coordinates). Middle: the empirical second moment of per-subject influence
terms eta_i + kappa_i, where eta_i are the per-subject score rows and kappa_i
corrects for the estimated censoring distribution via the censoring-process
martingale. Functionals of (beta, jumps) get delta-method variances through
a linear pairing vector.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .censoring import CensoringSurvival, WeightContext
from .data import Dataset
from .estimator import FitResult
from .likelihood import Engine, LikelihoodData
from .links import LinkFunction


class VarianceError(RuntimeError):
    """Variance assembly failed (singular or indefinite information)."""


@dataclass
class VarianceResult:
    fisher: np.ndarray  # (d+k, d+k) negated raw-coordinate Hessian
    middle: np.ndarray  # (d+k, d+k) mean outer product of eta+kappa rows
    covariance: np.ndarray  # (d+k, d+k) sandwich covariance of (beta, jumps)
    beta_se: np.ndarray  # sandwich SEs for beta
    fisher_only_se: np.ndarray  # inverse-Fisher SEs for beta
    fisher_inv: np.ndarray = None
    d: int = 0

    @property
    def k(self) -> int:
        return self.covariance.shape[0] - self.d


def eta_components(fit: FitResult, ds: Dataset, wc: WeightContext, link: LinkFunction):
    """Per-subject score rows at the fit, raw jump coordinates: n x (d+k)."""
    ld = LikelihoodData(ds, wc)
    eng = Engine(ld, link)
    rows = eng.grad_raw(fit.beta_hat, fit.jump_sizes, per_subject=True)
    bad = ~np.isfinite(rows)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        block = "beta" if j < ds.d else "jump"
        raise VarianceError(
            f"non-finite score contribution for subject {ld.subject_ids[i]} "
            f"({block} block)"
        )
    return rows


def _score_g_arrays(eng: Engine, beta, lam):
    """Derivatives of s_jk G'(A_jk) wrt (beta, lambda_m), used by kappa.

    Returns (gbeta, delta_part, suffix_g2) where for subject j and grid
    index k:
      gbeta[j, k, :] = s_jk (Z_jk G'(A_jk) + G''(A_jk) B_jk)
      d/d lambda_m  = delta_part[j, k] when m = k, plus
                      c_jm * (suffix over the summed k of s G'' ) handled
                      by the caller through suffix_g2.
    """
    ld = eng.ld
    q = eng._core(beta, np.asarray(lam, dtype=float))
    c, s = q["c"], q["s"]
    G1A, G2A = q["G1A"], q["G2A"]
    TMW = ld.TMW
    if ld.d:
        B = np.cumsum(ld.Zg * s[:, :, None], axis=1)
        gbeta = s[:, :, None] * (ld.Zg * G1A[:, :, None] + G2A[:, :, None] * B)
    else:
        gbeta = np.zeros((ld.n, ld.k, 0))
    delta_part = c * G1A  # coefficient of the m = k spike
    sg2 = s * G2A  # summed with the 1{m <= k} tail against c_jm
    return q, TMW, gbeta, delta_part, sg2


def kappa_components(
    fit: FitResult,
    ds: Dataset,
    wc: WeightContext,
    gc: CensoringSurvival,
    link: LinkFunction,
):
    """Censoring-martingale correction rows kappa_i: n x (d+k).

    kappa_i = integral of q(u) / pi(u) against dM_i^c(u), where M_i^c has a
    unit point mass at subject i's observed random censoring time and drift
    -1{X_i >= u} dA^c(u) at censoring-hazard jump times. q(u) aggregates,
    over subjects with a terminal time D_j <= u, the pseudo-risk tail terms
    at grid times t_k > u.
    """
    ld = LikelihoodData(ds, wc)
    n, k, d = ld.n, ld.k, ld.d
    out = np.zeros((n, d + k))
    times = gc.jump_times
    if len(times) == 0:
        return out
    eng = Engine(ld, link)
    q, TMW, gbeta, delta_part, sg2 = _score_g_arrays(eng, fit.beta_hat, fit.jump_sizes)
    c = q["c"]
    X = wc.followup_end
    D = wc.terminal_time  # nan when no terminal event
    has_term = ~np.isnan(D)
    is_cens = np.array(
        [s.terminal_time is None and s.censor_time < ds.tau for s in ds.subjects]
    )
    dAc = gc.hazard_increments()

    # suffix sums over k of the weighted tail pieces, per subject
    tg_beta = np.flip(np.cumsum(np.flip(TMW[:, :, None] * gbeta, axis=1), axis=1), axis=1)
    tg_sg2 = np.flip(np.cumsum(np.flip(TMW * sg2, axis=1), axis=1), axis=1)

    qpi = np.zeros((len(times), d + k))
    for j, u in enumerate(times):
        pi = float((X >= u).sum()) / n
        if pi <= 0:
            raise VarianceError(f"empty risk set at censoring time {u:g}")
        ku = int(np.searchsorted(ds.recurrent_grid, u, side="right"))
        live = has_term & (D <= u)  # subjects whose terminal tail covers u
        if not np.any(live) or ku >= k:
            continue
        row = np.zeros(d + k)
        if d:
            row[:d] = tg_beta[live, ku, :].sum(axis=0)
        # jump block: spike at m >= ku plus the cumulative-exposure tail
        spike = (TMW[live] * delta_part[live])[:, ku:].sum(axis=0)
        row[d + ku :] += spike
        m_idx = np.arange(k)
        tail_at = tg_sg2[live][:, np.maximum(m_idx, ku)]  # (n_live, k)
        row[d:] += (c[live] * tail_at).sum(axis=0)
        qpi[j] = row / (n * pi)

    # point mass at each subject's own censoring time
    for i in np.flatnonzero(is_cens):
        j = int(np.searchsorted(times, X[i]))
        out[i] += qpi[j]
    # drift: -1{X_i >= u} dA^c(u)
    atrisk_mask = X[:, None] >= times[None, :]  # (n, n_c)
    out -= (atrisk_mask * dAc[None, :]) @ qpi
    return out


def sandwich(
    fit: FitResult,
    ds: Dataset,
    wc: WeightContext,
    gc: CensoringSurvival,
    link: LinkFunction,
) -> VarianceResult:
    """Assemble the full sandwich covariance of (beta_hat, jump sizes)."""
    ld = LikelihoodData(ds, wc)
    eng = Engine(ld, link)
    d, k = ds.d, ds.k
    H = eng.hessian_raw(fit.beta_hat, fit.jump_sizes)
    fisher = -H
    fisher = 0.5 * (fisher + fisher.T)
    try:
        cf = linalg.cho_factor(fisher)
    except linalg.LinAlgError as exc:
        raise VarianceError(
            "observed information is not positive definite; inspect the model "
            "and dataset (near-singular design or boundary jump sizes)"
        ) from exc
    finv = linalg.cho_solve(cf, np.eye(d + k))
    cond = np.linalg.norm(fisher, 1) * np.linalg.norm(finv, 1)
    if cond > 1e12:
        warnings.warn(
            f"observed information is ill-conditioned (cond ~ {cond:.2e})",
            stacklevel=2,
        )
    eta = eta_components(fit, ds, wc, link)
    kap = kappa_components(fit, ds, wc, gc, link)
    R = eta + kap
    middle = (R.T @ R) / ds.n
    S = finv @ R.T  # cov = S S', a Gram product, so PSD by construction
    cov = S @ S.T
    dg = np.diag(cov)[:d]
    return VarianceResult(
        fisher=fisher,
        middle=middle,
        covariance=cov,
        beta_se=np.sqrt(dg),
        fisher_only_se=np.sqrt(np.diag(finv)[:d]),
        fisher_inv=finv,
        d=d,
    )


def _pairing_vector(vr: VarianceResult, h1, h2) -> np.ndarray:
    d, k = vr.d, vr.k
    h = np.zeros(d + k)
    if h1 is not None:
        h1 = np.atleast_1d(np.asarray(h1, dtype=float))
        if len(h1) != d:
            raise ValueError(f"h1 must have length {d}, got {len(h1)}")
        h[:d] = h1
    if h2 is None:
        return h
    if np.isscalar(h2):
        h[d:] = float(h2)
    else:
        h2 = np.asarray(h2, dtype=float)
        if h2.shape != (k,):
            raise ValueError(f"h2 must have length {k}, got shape {h2.shape}")
        h[d:] = h2
    return h


def functional_variance(vr: VarianceResult, h1, h2, variant="sandwich") -> float:
    """Variance of the linear functional h1' beta + sum_m h2(t_m) jump_m."""
    h = _pairing_vector(vr, h1, h2)
    mat = vr.covariance if variant == "sandwich" else vr.fisher_inv
    return float(h @ mat @ h)


def functional_covariance(vr: VarianceResult, ha, hb, variant="sandwich") -> float:
    """Covariance between two linear functionals, each given as (h1, h2)."""
    va = _pairing_vector(vr, *ha)
    vb = _pairing_vector(vr, *hb)
    mat = vr.covariance if variant == "sandwich" else vr.fisher_inv
    return float(va @ mat @ vb)
