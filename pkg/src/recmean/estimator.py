"""Weighted NPMLE solver plus the Ghosh-Lin weighted-score cross-check.

The joint maximizer over (beta, jump sizes) is found by L-BFGS-B with the
analytic gradient on the log-jump scale, followed by a damped Newton polish
with the analytic Hessian. Initialization is beta = 0 with weighted
Nelson-Aalen jump increments, stabilized by a few profile sweeps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .censoring import WeightContext, ipc_weights, km_censoring
from .data import DataError, Dataset
from .likelihood import Engine, LikelihoodData, LikelihoodError, ParamVector
from .links import LinkFunction, format_link


class ConvergenceError(RuntimeError):
    """Solver failed to reach the requested tolerance."""


@dataclass
class SolverOptions:
    tol: float = 1e-8  # max-norm of the gradient
    rel_tol: float = 1e-12  # relative log-likelihood change
    max_iter: int = 100  # Newton polish iterations
    lbfgs_maxiter: int = 400
    profile_sweeps: int = 3


@dataclass
class FitResult:
    beta_hat: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    gradient_norm: float
    link: LinkFunction = None
    n: int = 0
    tau: float = None

    @property
    def k(self) -> int:
        return len(self.jump_times)

    def cumulative(self, t) -> np.ndarray:
        """Baseline Lambda0(t) = sum of jump sizes at times <= t."""
        csum = np.cumsum(self.jump_sizes)
        idx = np.searchsorted(self.jump_times, np.asarray(t, dtype=float), side="right")
        out = np.where(idx > 0, csum[np.clip(idx - 1, 0, None)], 0.0)
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return {
            "beta": [float(b) for b in self.beta_hat],
            "jump_times": [float(t) for t in self.jump_times],
            "jump_sizes": [float(x) for x in self.jump_sizes],
            "loglik": float(self.loglik),
            "link": format_link(self.link) if self.link else None,
            "converged": bool(self.converged),
            "n": int(self.n),
            "k": int(self.k),
            "tau": float(self.tau) if self.tau is not None else None,
            "iterations": int(self.iterations),
            "gradient_norm": float(self.gradient_norm),
        }


def initial_values(ds: Dataset, wc: WeightContext) -> ParamVector:
    """beta = 0 and weighted Nelson-Aalen increments dN(t)/pseudo-risk."""
    ld = LikelihoodData(ds, wc)
    denom = wc.weights.sum(axis=0)
    if np.any(denom[ld.dN > 0] <= 0):
        raise DataError("pseudo risk set is empty at an observed event time")
    jumps = ld.dN / denom
    return ParamVector(np.zeros(ds.d), np.log(jumps))


def profile_jump_update(beta, jumps, ds: Dataset, wc: WeightContext, link: LinkFunction):
    """One sweep of the self-consistency jump equation.

    new lambda_k = dN(t_k) / sum_i w_i(t_k) exp(beta'Z_ik) G'(A_i(t_k)),
    with A evaluated at the old jumps. Exact fixed point of the NPMLE for the
    identity link; an initializer otherwise.
    """
    ld = LikelihoodData(ds, wc)
    eng = Engine(ld, link)
    q = eng._core(beta, np.asarray(jumps, dtype=float))
    denom = (wc.weights * q["c"] * q["G1A"]).sum(axis=0)
    if np.any(denom[ld.dN > 0] <= 0):
        raise DataError("zero denominator in the profile jump update")
    return ld.dN / denom


def _newton_polish(eng: Engine, beta, logj, opts: SolverOptions):
    """Damped Newton ascent on (beta, log jumps); returns final state."""
    d = eng.ld.d
    x = np.concatenate([beta, logj])
    ll = eng.loglik(x[:d], np.exp(x[d:]))
    iterations = 0
    converged = False
    gnorm = np.inf
    rel = 0.0  # relative loglik change of the last accepted step
    for it in range(opts.max_iter):
        lam = np.exp(x[d:])
        g = eng.grad_log(x[:d], lam)
        gnorm = float(np.max(np.abs(g))) if len(g) else 0.0
        if gnorm < opts.tol and rel < opts.rel_tol:
            converged = True
            break
        H = eng.hessian_log(x[:d], lam)
        # solve (-H) step = g with escalating ridge if not PD
        ridge = 0.0
        base = max(1e-12, 1e-10 * float(np.max(np.abs(np.diag(H)))))
        step = None
        for _ in range(12):
            try:
                cf = np.linalg.cholesky(-(H - ridge * np.eye(len(x))))
                step = np.linalg.solve(cf.T, np.linalg.solve(cf, g))
                break
            except np.linalg.LinAlgError:
                ridge = base if ridge == 0.0 else ridge * 100.0
        if step is None:
            step = g / max(1.0, np.max(np.abs(np.diag(H))))
        # backtracking line search, strict monotone ascent
        t = 1.0
        slope = float(g @ step)
        new_ll = None
        for _ in range(40):
            try:
                cand = eng.loglik(x[:d] + t * step[:d], np.exp(x[d:] + t * step[d:]))
            except LikelihoodError:
                cand = -np.inf
            if np.isfinite(cand) and cand > ll + 1e-4 * t * max(slope, 0.0):
                new_ll = cand
                break
            t *= 0.5
        if new_ll is None:
            # ascent below float resolution; take the full step anyway if it
            # strictly halves the gradient norm (cannot cycle), else stop
            try:
                g_try = eng.grad_log(x[:d] + step[:d], np.exp(x[d:] + step[d:]))
            except LikelihoodError:
                break
            if len(g_try) and float(np.max(np.abs(g_try))) < 0.5 * gnorm:
                x = x + step
                ll = eng.loglik(x[:d], np.exp(x[d:]))
                iterations = it + 1
                rel = 0.0
                continue
            break  # no progress possible, stop at current iterate
        x = x + t * step
        iterations = it + 1
        rel = abs(new_ll - ll) / max(1.0, abs(ll))
        ll = new_ll
    # final gradient check
    lam = np.exp(x[d:])
    g = eng.grad_log(x[:d], lam)
    gnorm = float(np.max(np.abs(g))) if len(g) else 0.0
    converged = gnorm < opts.tol
    return x, ll, iterations, converged, gnorm


def _fit_with_context(ds: Dataset, link: LinkFunction, opts=None):
    """Fit and return (FitResult, wc, gc, Engine) for downstream reuse."""
    opts = opts or SolverOptions()
    if ds.k == 0:
        raise DataError("no recurrent events: nothing to estimate")
    gc = km_censoring(ds)
    wc = ipc_weights(ds, gc)
    ld = LikelihoodData(ds, wc)
    eng = Engine(ld, link)
    d = ds.d

    p0 = initial_values(ds, wc)
    jumps = p0.jumps
    beta = p0.beta
    for _ in range(opts.profile_sweeps):
        jumps = profile_jump_update(beta, jumps, ds, wc, link)
    logj = np.log(jumps)

    x0 = np.concatenate([beta, logj])
    ll0 = eng.loglik(beta, jumps)
    if not np.isfinite(ll0):
        raise LikelihoodError("non-finite likelihood at the initial point")

    def negf(x):
        try:
            return -eng.loglik(x[:d], np.exp(x[d:]))
        except LikelihoodError:
            return np.inf

    def negg(x):
        try:
            return -eng.grad_log(x[:d], np.exp(x[d:]))
        except LikelihoodError:
            return np.zeros_like(x)

    res = optimize.minimize(
        negf,
        x0,
        jac=negg,
        method="L-BFGS-B",
        options={"maxiter": opts.lbfgs_maxiter, "ftol": 1e-14, "gtol": 1e-10},
    )
    x = res.x if -res.fun >= ll0 else x0

    x, ll, iterations, converged, gnorm = _newton_polish(eng, x[:d], x[d:], opts)
    if not converged:
        warnings.warn(
            f"NPMLE did not reach tolerance (max |grad| = {gnorm:.3e})", stacklevel=2
        )
    fit = FitResult(
        beta_hat=x[:d].copy(),
        jump_times=ds.recurrent_grid.copy(),
        jump_sizes=np.exp(x[d:]),
        loglik=ll,
        iterations=iterations,
        converged=converged,
        gradient_norm=gnorm,
        link=link,
        n=ds.n,
        tau=ds.tau,
    )
    return fit, wc, gc, eng


def fit_npmle(ds: Dataset, link: LinkFunction, opts: SolverOptions = None) -> FitResult:
    """Maximize the discretized weighted log-likelihood."""
    fit, _, _, _ = _fit_with_context(ds, link, opts)
    return fit


def ghosh_lin_fit(ds: Dataset, wc: WeightContext = None, tol=1e-10, max_iter=60):
    """Root of the IPC-weighted partial-likelihood score, by damped Newton.

    For the identity link this is an algebraically equivalent profile of the
    NPMLE, so it serves as an independent cross-check solver.
    """
    if ds.d < 1:
        raise DataError("ghosh_lin_fit needs at least one covariate")
    if wc is None:
        wc = ipc_weights(ds, km_censoring(ds))
    ld = LikelihoodData(ds, wc)
    W, Zg, E, dN = wc.weights, ld.Zg, ld.E, ld.dN
    d = ds.d
    ev_z = np.einsum("nk,nkl->l", E, Zg)  # sum of Z at events

    def score_and_jac(beta):
        bz = Zg @ beta
        wce = W * np.exp(bz)  # (n, k)
        s0 = wce.sum(axis=0)  # (k,)
        s1 = np.einsum("nk,nkl->kl", wce, Zg)  # (k, d)
        s2 = np.einsum("nk,nkl,nkj->klj", wce, Zg, Zg)  # (k, d, d)
        zbar = s1 / s0[:, None]
        U = ev_z - dN @ zbar
        V = s2 / s0[:, None, None] - np.einsum("kl,kj->klj", zbar, zbar)
        J = -np.einsum("k,klj->lj", dN, V)
        return U, J

    beta = np.zeros(d)
    U, J = score_and_jac(beta)
    for _ in range(max_iter):
        if np.max(np.abs(U)) < tol:
            return beta
        try:
            step = np.linalg.solve(J, -U)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular score Jacobian in ghosh_lin_fit") from None
        t = 1.0
        for _ in range(30):
            cand = beta + t * step
            Uc, Jc = score_and_jac(cand)
            if np.max(np.abs(Uc)) < np.max(np.abs(U)) or t < 1e-6:
                beta, U, J = cand, Uc, Jc
                break
            t *= 0.5
    if np.max(np.abs(U)) < tol:
        return beta
    raise ConvergenceError("ghosh_lin_fit did not converge")
