"""Kaplan-Meier censoring survival and IPC pseudo-risk-set weights.

The censoring distribution G_c is estimated by the reverse Kaplan-Meier over
follow-up termination times X_i = C_i ^ D_i ^ tau, where observed random
censorings (no terminal event, C_i < tau) are the "events" and everything
else, including terminal events and administrative ends at tau, censors the
censoring process. Evaluation at event times uses left limits G_c(t-), so a
censoring tied with a recurrence time does not deflate that recurrence's
weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DataError, Dataset


@dataclass
class CensoringSurvival:
    jump_times: np.ndarray  # distinct observed random-censoring times
    values: np.ndarray  # G_c at jump_times (right-continuous)
    nelson_aalen: np.ndarray  # cumulative censoring hazard at jump_times
    at_risk: np.ndarray  # sum_i 1{X_i >= u} at jump_times
    n_events: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def at(self, t):
        """G_c(t), right-continuous."""
        idx = np.searchsorted(self.jump_times, t, side="right") - 1
        return self._value_at_index(idx)

    def at_left(self, t):
        """Left limit G_c(t-)."""
        idx = np.searchsorted(self.jump_times, t, side="left") - 1
        return self._value_at_index(idx)

    def _value_at_index(self, idx):
        idx = np.asarray(idx)
        if len(self.jump_times) == 0:
            vals = np.ones(idx.shape)
        else:
            vals = np.where(idx >= 0, self.values[np.clip(idx, 0, None)], 1.0)
        if vals.ndim == 0:
            return float(vals)
        return vals

    def hazard_increments(self) -> np.ndarray:
        """Nelson-Aalen increments dA^c at jump_times."""
        if len(self.jump_times) == 0:
            return np.empty(0)
        return np.diff(self.nelson_aalen, prepend=0.0)


def km_censoring(ds: Dataset) -> CensoringSurvival:
    """Reverse Kaplan-Meier for the censoring distribution, with the
    Nelson-Aalen censoring hazard used by the variance machinery."""
    if ds.n == 0:
        raise DataError("cannot estimate the censoring distribution from an empty dataset")
    X = np.array([s.followup_end for s in ds.subjects])
    is_cens = np.array(
        [s.terminal_time is None and s.censor_time < ds.tau for s in ds.subjects]
    )
    times = np.unique(X[is_cens])
    if len(times) == 0:
        empty = np.empty(0)
        return CensoringSurvival(empty, empty.copy(), empty.copy(), empty.copy())
    at_risk = np.array([(X >= u).sum() for u in times], dtype=float)
    d_events = np.array([((X == u) & is_cens).sum() for u in times], dtype=float)
    frac = d_events / at_risk
    values = np.cumprod(1.0 - frac)
    na = np.cumsum(frac)
    return CensoringSurvival(times, values, na, at_risk, d_events.astype(int))


@dataclass
class WeightContext:
    """IPC weight matrices on the recurrent-event grid.

    weights[i, k] is the full w_i(t_k): the observation indicator before any
    terminal event or censoring, and the simplified G_c(t_k-)/G_c(D_i-) ratio
    after a terminal event. simplified[i, k] carries the ratio form where it
    applies and coincides with weights elsewhere. term_mask marks the
    (terminal subject, t_k > D_i) region where the likelihood's pseudo-risk
    tail terms live.
    """

    grid: np.ndarray
    weights: np.ndarray
    simplified: np.ndarray
    term_mask: np.ndarray  # bool (n, k)
    risk_mask: np.ndarray  # bool (n, k): t_k <= X_i
    followup_end: np.ndarray  # X_i
    terminal_time: np.ndarray  # D_i or nan
    gc: CensoringSurvival = None

    @property
    def n(self):
        return self.weights.shape[0]


def ipc_weights(ds: Dataset, gc: CensoringSurvival) -> WeightContext:
    """Build w_i(t_k) and the simplified weights on the recurrence grid."""
    grid = ds.recurrent_grid
    n, k = ds.n, len(grid)
    W = np.zeros((n, k))
    Wstar = np.zeros((n, k))
    term_mask = np.zeros((n, k), dtype=bool)
    risk_mask = np.zeros((n, k), dtype=bool)
    X = np.array([s.followup_end for s in ds.subjects])
    D = np.array(
        [s.terminal_time if s.terminal_time is not None else np.nan for s in ds.subjects]
    )
    gc_left_grid = gc.at_left(grid) if k else np.empty(0)
    for i, s in enumerate(ds.subjects):
        under_obs = grid <= X[i]
        risk_mask[i] = under_obs
        if s.terminal_time is None:
            W[i] = under_obs.astype(float)
            Wstar[i] = W[i]
        else:
            denom = gc.at_left(s.terminal_time)
            after = grid > s.terminal_time
            if np.any(after) and denom <= 0.0:
                raise DataError(
                    f"subject {s.id}: censoring survival is zero at the terminal "
                    "event time; IPC weight undefined"
                )
            ratio = gc_left_grid / denom if denom > 0 else np.zeros(k)
            W[i] = np.where(under_obs, 1.0, np.where(after, ratio, 0.0))
            Wstar[i] = np.where(after, ratio, np.where(under_obs, 1.0, 0.0))
            term_mask[i] = after
    return WeightContext(
        grid=grid,
        weights=W,
        simplified=Wstar,
        term_mask=term_mask,
        risk_mask=risk_mask,
        followup_end=X,
        terminal_time=D,
        gc=gc,
    )


def pseudo_risk_size(wc: WeightContext, t) -> float:
    """Expected pseudo-risk-set size at t: subjects still under observation
    count 1, subjects past a terminal event count G_c(t-)/G_c(D_i-)."""
    gc = wc.gc
    total = 0.0
    gl = gc.at_left(t)
    for i in range(wc.n):
        D = wc.terminal_time[i]
        if np.isnan(D):
            total += 1.0 if t <= wc.followup_end[i] else 0.0
        elif t <= D:
            total += 1.0
        else:
            denom = gc.at_left(D)
            if denom <= 0:
                raise DataError("censoring survival is zero where an IPC ratio is needed")
            total += gl / denom
    return total
