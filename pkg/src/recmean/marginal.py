"""Marginal-mean prediction and nonparametric reference estimators.

predict_marginal_mean evaluates the fitted model mean G{integral of
exp(beta'Z) dLambda0} along a covariate profile, with delta-method standard
errors contracted against the sandwich covariance. The two nonparametric
estimators (pseudo-risk Nelson-Aalen, Aalen-Johansen plug-in) serve as
model-free references.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .censoring import WeightContext, km_censoring
from .data import DataError, Dataset
from .estimator import FitResult
from .links import eval_link
from .variance import VarianceResult, functional_variance

Z975 = 1.959963984540054


@dataclass
class StepFunction:
    """Right-continuous step function, 0 before the first jump."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)], 0.0)
        return float(out) if out.ndim == 0 else out


@dataclass
class PredictionCurve:
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray


def _profile_on_grid(profile, grid, d):
    """Covariate values at each grid time for a prediction profile.

    Accepts None (zero covariates), a constant vector, or a piecewise path
    [(start_time, values), ...] with the same closed-left convention as
    subject covariate paths.
    """
    k = len(grid)
    if profile is None:
        return np.zeros((k, d))
    if isinstance(profile, (list, tuple)) and len(profile) and isinstance(
        profile[0], (list, tuple)
    ):
        starts = np.array([float(p[0]) for p in profile])
        vals = np.array([np.atleast_1d(np.asarray(p[1], dtype=float)) for p in profile])
        if starts[0] != 0.0:
            raise DataError("prediction profile must start at time 0")
        if np.any(np.diff(starts) <= 0):
            raise DataError("prediction profile start times must increase")
        if vals.shape[1] != d:
            raise DataError(f"prediction profile has dimension {vals.shape[1]}, expected {d}")
        idx = np.searchsorted(starts, grid, side="right") - 1
        return vals[np.clip(idx, 0, None)]
    vec = np.atleast_1d(np.asarray(profile, dtype=float))
    if vec.shape != (d,):
        raise DataError(f"prediction profile has dimension {vec.shape}, expected ({d},)")
    return np.tile(vec, (k, 1))


def predict_marginal_mean(
    fit: FitResult,
    vr: VarianceResult,
    profile,
    times,
    log_band=False,
) -> PredictionCurve:
    """Model-based mean curve with pointwise 95% Wald bands.

    With vr None the curve carries zero standard errors.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise DataError("prediction times must be nonnegative")
    if fit.tau is not None and np.any(times > fit.tau + 1e-12):
        raise DataError("prediction times beyond the study end")
    grid = fit.jump_times
    lam = fit.jump_sizes
    d, k = len(fit.beta_hat), len(grid)
    Zg = _profile_on_grid(profile, grid, d)
    c = np.exp(Zg @ fit.beta_hat) if d else np.ones(k)
    incr = c * lam
    A = np.cumsum(incr)
    GA, G1A, _ = eval_link(fit.link, A)

    mean = np.zeros(len(times))
    se = np.zeros(len(times))
    cut = np.searchsorted(grid, times, side="right")  # jumps with t_m <= t
    for j, m in enumerate(cut):
        if m == 0:
            continue
        mean[j] = GA[m - 1]
        if vr is None:
            continue
        g1 = G1A[m - 1]
        h2 = np.zeros(k)
        h2[:m] = g1 * c[:m]
        h1 = g1 * (Zg[:m] * incr[:m, None]).sum(axis=0) if d else None
        se[j] = np.sqrt(max(0.0, functional_variance(vr, h1, h2)))

    if log_band:
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(mean > 0, se / np.where(mean > 0, mean, 1.0), 0.0)
        lo = np.where(mean > 0, mean * np.exp(-Z975 * rel), 0.0)
        hi = np.where(mean > 0, mean * np.exp(Z975 * rel), 0.0)
    else:
        lo = mean - Z975 * se
        hi = mean + Z975 * se
    return PredictionCurve(times=times, mean=mean, se=se, ci_low=lo, ci_high=hi)


def _pseudo_risk_totals(ds: Dataset, grid: np.ndarray) -> np.ndarray:
    """Column sums of the IPC weight matrix without materializing it.

    Each subject contributes 1 while under observation (t <= followup end)
    and, past a terminal event, the ratio G_c(t-)/G_c(D_i-). Both pieces
    reduce to sorted-prefix sums, so the totals cost O((n + k) log n).
    """
    gc = km_censoring(ds)
    X = np.sort(np.array([s.followup_end for s in ds.subjects]))
    alive = len(X) - np.searchsorted(X, grid, side="left")
    D = np.array([s.terminal_time for s in ds.subjects if s.terminal_time is not None])
    if not D.size:
        return alive.astype(float)
    D.sort()
    denom = gc.at_left(D)
    if np.any(denom <= 0.0):
        raise DataError(
            "censoring survival is zero at a terminal event time; "
            "IPC weight undefined"
        )
    pref = np.concatenate([[0.0], np.cumsum(1.0 / denom)])
    past = pref[np.searchsorted(D, grid, side="left")]
    return alive + gc.at_left(grid) * past


def nelson_aalen_pseudo(ds: Dataset, wc: WeightContext | None = None) -> StepFunction:
    """Weighted Nelson-Aalen marginal mean: sum of dN(t_k)/pseudo-risk.

    When wc is omitted the pseudo-risk totals are computed directly from
    the dataset, which keeps memory linear in n + k for large samples.
    """
    grid = ds.recurrent_grid
    dN = np.zeros(len(grid))
    for s in ds.subjects:
        if len(s.recurrent_times):
            np.add.at(dN, np.searchsorted(grid, s.recurrent_times), 1.0)
    denom = wc.weights.sum(axis=0) if wc is not None else _pseudo_risk_totals(ds, grid)
    if np.any(denom[dN > 0] <= 0):
        j = int(np.flatnonzero((dN > 0) & (denom <= 0))[0])
        raise DataError(f"zero pseudo risk at event time {grid[j]:g}")
    return StepFunction(grid.copy(), np.cumsum(dN / denom))


def aalen_johansen_marginal_mean(ds: Dataset) -> StepFunction:
    """Plug-in marginal mean: survival-of-terminal times recurrence rate.

    mu(t) = sum over recurrence times u <= t of S_D(u-) dN(u)/Y(u), with
    S_D the Kaplan-Meier survival of the terminal event (censoring by C
    only) and Y the number under observation.
    """
    grid = ds.recurrent_grid
    X = np.array([s.followup_end for s in ds.subjects])
    D = np.array(
        [s.terminal_time if s.terminal_time is not None else np.nan for s in ds.subjects]
    )
    has_term = ~np.isnan(D)

    dN = np.zeros(len(grid))
    for s in ds.subjects:
        if len(s.recurrent_times):
            np.add.at(dN, np.searchsorted(grid, s.recurrent_times), 1.0)

    # Kaplan-Meier for the terminal event on its own time grid
    term_times = np.unique(D[has_term]) if np.any(has_term) else np.empty(0)
    km_vals = np.ones(len(term_times))
    surv = 1.0
    for j, u in enumerate(term_times):
        y = (X >= u).sum()
        dd = ((D == u) & has_term).sum()
        surv *= 1.0 - dd / y
        km_vals[j] = surv

    def s_left(t):
        # S_D(t-): product over terminal times strictly before t
        idx = np.searchsorted(term_times, t, side="left") - 1
        return km_vals[idx] if idx >= 0 else 1.0

    incr = np.zeros(len(grid))
    for j, u in enumerate(grid):
        if dN[j] == 0:
            continue
        y = (X >= u).sum()
        if y == 0:
            raise DataError(f"empty risk set at event time {u:g}")
        incr[j] = s_left(u) * dN[j] / y
    return StepFunction(grid.copy(), np.cumsum(incr))
