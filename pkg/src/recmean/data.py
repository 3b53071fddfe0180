"""Data model for recurrent/terminal event follow-up and CSV ingestion.

The on-disk format is a counting-process long CSV with header
``id,start,stop,status,z1,...,zd``: one row per covariate-constant interval
per subject, with ``status`` describing what happens at ``stop`` (0 interval
break or censoring, 1 recurrent event, 2 terminal event). Covariate values
apply on [start, next start), i.e. paths are right-continuous step functions.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Malformed input data or violated dataset invariant."""


@dataclass
class SubjectRecord:
    """One subject's follow-up.

    covariate_path is a list of (start_time, values) pairs, piecewise
    constant and right-continuous, starting at 0; the last segment
    extrapolates to tau. recurrent_times are strictly increasing.
    terminal_time is None when no terminal event was observed.
    censor_time is the end of recorded observation (the observed C_i ^ tau
    for subjects without a terminal event; for terminal-event subjects it is
    >= terminal_time and only delimits covariate recording).
    """

    id: str
    covariate_path: list
    recurrent_times: np.ndarray
    terminal_time: float | None
    censor_time: float

    @property
    def followup_end(self) -> float:
        """X_i = D_i ^ C_i (tau capping is enforced at parse time)."""
        if self.terminal_time is not None:
            return self.terminal_time
        return self.censor_time

    def __eq__(self, other):
        if not isinstance(other, SubjectRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.terminal_time == other.terminal_time
            and self.censor_time == other.censor_time
            and np.array_equal(self.recurrent_times, other.recurrent_times)
            and len(self.covariate_path) == len(other.covariate_path)
            and all(
                a[0] == b[0] and np.array_equal(a[1], b[1])
                for a, b in zip(self.covariate_path, other.covariate_path)
            )
        )


@dataclass
class Dataset:
    subjects: list
    tau: float
    d: int
    recurrent_grid: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def k(self) -> int:
        return len(self.recurrent_grid)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.tau == other.tau
            and self.d == other.d
            and np.array_equal(self.recurrent_grid, other.recurrent_grid)
            and self.subjects == other.subjects
        )


def make_subject(id, covariate_path, recurrent_times, terminal_time, censor_time, tau):
    """Validate and build one SubjectRecord; perturbs within-subject ties."""
    sid = str(id)
    if censor_time > tau:
        raise DataError(f"subject {sid}: censor_time {censor_time} exceeds tau {tau}")
    if censor_time <= 0:
        raise DataError(f"subject {sid}: censor_time must be positive")
    if not covariate_path or covariate_path[0][0] != 0.0:
        raise DataError(f"subject {sid}: covariate path must start at time 0")
    starts = [seg[0] for seg in covariate_path]
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise DataError(f"subject {sid}: covariate segment starts must increase")
    dvec = len(np.atleast_1d(covariate_path[0][1]))
    path = []
    for start, vals in covariate_path:
        v = np.atleast_1d(np.asarray(vals, dtype=float))
        if len(v) != dvec:
            raise DataError(f"subject {sid}: inconsistent covariate dimension")
        # canonical form: merge consecutive segments with identical values
        if path and np.array_equal(path[-1][1], v):
            continue
        path.append((float(start), v))

    times = np.asarray(sorted(float(t) for t in recurrent_times), dtype=float)
    if len(times) and times[0] <= 0:
        raise DataError(f"subject {sid}: recurrence times must be positive")
    # ties within one subject get the smallest representable nudge
    bumped = False
    for j in range(1, len(times)):
        while times[j] <= times[j - 1]:
            times[j] = np.nextafter(times[j - 1], np.inf)
            bumped = True
    if bumped:
        warnings.warn(
            f"subject {sid}: tied recurrence times perturbed by the smallest "
            "representable increment",
            stacklevel=2,
        )
    end = terminal_time if terminal_time is not None else censor_time
    if terminal_time is not None:
        if terminal_time > censor_time:
            raise DataError(f"subject {sid}: terminal event after end of observation")
        if len(times) and times[-1] >= terminal_time:
            raise DataError(f"subject {sid}: recurrence at or after terminal event")
    elif len(times) and times[-1] > end:
        raise DataError(f"subject {sid}: recurrence after censoring")
    if len(times) and times[-1] > tau:
        raise DataError(f"subject {sid}: recurrence beyond tau")
    return SubjectRecord(sid, path, times, terminal_time, float(censor_time))


def build_dataset(subjects, tau) -> Dataset:
    """Assemble a Dataset: validates dimensions and builds the event grid."""
    if tau <= 0:
        raise DataError("tau must be positive")
    d = len(subjects[0].covariate_path[0][1]) if subjects else 0
    for s in subjects:
        if len(s.covariate_path[0][1]) != d:
            raise DataError(f"subject {s.id}: covariate dimension differs from dataset")
    all_times = np.concatenate([s.recurrent_times for s in subjects]) if subjects else np.empty(0)
    grid = np.unique(all_times)
    return Dataset(subjects=list(subjects), tau=float(tau), d=d, recurrent_grid=grid)


_BASE_COLUMNS = ["id", "start", "stop", "status"]


def parse_dataset(source, tau) -> Dataset:
    """Parse the counting-process CSV into a validated Dataset.

    source may be a path, bytes, a text string containing CSV, or a
    file-like object. Errors carry the offending 1-based row number.
    """
    if tau is None or tau <= 0:
        raise DataError("tau must be positive")
    text = _as_text(source)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty input: header row required") from None
    header = [h.strip() for h in header]
    if header[: len(_BASE_COLUMNS)] != _BASE_COLUMNS:
        raise DataError(f"header must start with {','.join(_BASE_COLUMNS)}, got {header}")
    zcols = header[len(_BASE_COLUMNS) :]
    d = len(zcols)
    expected_z = [f"z{j + 1}" for j in range(d)]
    if zcols != expected_z:
        raise DataError(f"covariate columns must be named {expected_z}, got {zcols}")
    ncol = len(header)

    rows_by_id: dict[str, list] = {}
    order: list[str] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != ncol:
            raise DataError(f"row {lineno}: expected {ncol} columns, got {len(row)}")
        sid = row[0].strip()
        try:
            start = float(row[1])
            stop = float(row[2])
            status = int(row[3])
            z = [float(c) for c in row[4:]]
        except ValueError:
            raise DataError(f"row {lineno}: non-numeric value") from None
        if status not in (0, 1, 2):
            raise DataError(f"row {lineno}: status must be 0, 1 or 2, got {status}")
        if stop <= start:
            raise DataError(f"row {lineno}: stop must exceed start")
        if stop > tau:
            raise DataError(f"row {lineno}: time {stop} beyond tau {tau}")
        if sid not in rows_by_id:
            rows_by_id[sid] = []
            order.append(sid)
        rows_by_id[sid].append((lineno, start, stop, status, z))

    subjects = []
    for sid in order:
        rows = sorted(rows_by_id[sid], key=lambda r: r[1])
        path = []
        rec = []
        terminal = None
        prev_stop = 0.0
        for lineno, start, stop, status, z in rows:
            if start != prev_stop:
                kind = "overlapping" if start < prev_stop else "gapped"
                raise DataError(f"row {lineno}: {kind} covariate interval for subject {sid}")
            if terminal is not None and status == 1:
                raise DataError(f"row {lineno}: recurrence after terminal event")
            if terminal is not None and status == 2:
                raise DataError(f"row {lineno}: duplicate terminal event")
            if status == 1:
                rec.append(stop)
            elif status == 2:
                terminal = stop
            path.append((start, z))
            prev_stop = stop
        try:
            subjects.append(
                make_subject(sid, path, rec, terminal, prev_stop, tau)
            )
        except DataError as e:
            raise DataError(str(e)) from None
    return build_dataset(subjects, tau)


def _as_text(source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        # heuristically a path unless it contains a newline; blank strings
        # are content so they hit the empty-input check downstream
        if "\n" in source or not source.strip():
            return source
        with open(source, "r", encoding="utf-8") as fh:
            return fh.read()
    if hasattr(source, "read"):
        data = source.read()
        return data.decode("utf-8") if isinstance(data, bytes) else data
    with open(source, "r", encoding="utf-8") as fh:
        return fh.read()


def covariate_at(subject: SubjectRecord, t, tau=None) -> np.ndarray:
    """Covariate value Z_i(t): right-continuous step lookup with constant
    extrapolation of the last segment."""
    if t < 0:
        raise DataError(f"time {t} outside [0, tau]")
    if tau is not None and t > tau:
        raise DataError(f"time {t} outside [0, tau]")
    path = subject.covariate_path
    idx = 0
    for j in range(len(path) - 1, -1, -1):
        if path[j][0] <= t:
            idx = j
            break
    return path[idx][1]


def covariates_on_grid(subject: SubjectRecord, grid: np.ndarray) -> np.ndarray:
    """Z_i(t_k) for all grid times at once; shape (k, d)."""
    starts = np.array([seg[0] for seg in subject.covariate_path])
    vals = np.array([seg[1] for seg in subject.covariate_path])
    idx = np.searchsorted(starts, grid, side="right") - 1
    idx = np.clip(idx, 0, len(starts) - 1)
    return vals[idx]


@dataclass
class DiagnosticsReport:
    n_subjects: int
    n_recurrences: int
    n_terminal: int
    n_censored: int  # random censorings strictly before tau
    warnings: list

    @property
    def frac_terminal(self) -> float:
        return self.n_terminal / self.n_subjects if self.n_subjects else 0.0

    @property
    def frac_censored(self) -> float:
        return self.n_censored / self.n_subjects if self.n_subjects else 0.0

    def __str__(self):
        lines = [
            f"subjects: {self.n_subjects}",
            f"recurrences: {self.n_recurrences}",
            f"terminal events: {self.n_terminal} ({100 * self.frac_terminal:.1f}%)",
            f"censorings before tau: {self.n_censored} ({100 * self.frac_censored:.1f}%)",
        ]
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def diagnostics(ds: Dataset, magnitude_bound=20.0) -> DiagnosticsReport:
    """Validity report: covariate boundedness and multicollinearity checks
    plus the dataset composition counts."""
    warns = []
    n_rec = int(sum(len(s.recurrent_times) for s in ds.subjects))
    n_term = sum(1 for s in ds.subjects if s.terminal_time is not None)
    n_cens = sum(
        1 for s in ds.subjects if s.terminal_time is None and s.censor_time < ds.tau
    )
    if ds.d > 0 and ds.subjects:
        mags = [
            float(np.max(np.abs(seg[1]))) if len(seg[1]) else 0.0
            for s in ds.subjects
            for seg in s.covariate_path
        ]
        top = max(mags) if mags else 0.0
        if top > magnitude_bound:
            warns.append(
                f"covariate magnitude {top:.3g} exceeds bound {magnitude_bound:g}"
            )
        grid = ds.recurrent_grid if ds.k else np.array([ds.tau / 2.0])
        stacked = np.vstack([covariates_on_grid(s, grid) for s in ds.subjects])
        if np.linalg.matrix_rank(stacked) < ds.d:
            warns.append("covariate matrix is rank deficient (multicollinearity)")
    return DiagnosticsReport(ds.n, n_rec, n_term, n_cens, warns)


def serialize_dataset(ds: Dataset) -> str:
    """Inverse of parse_dataset: emit the long CSV (canonical segments)."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(_BASE_COLUMNS + [f"z{j + 1}" for j in range(ds.d)])
    for s in ds.subjects:
        cuts = {seg[0] for seg in s.covariate_path if 0.0 < seg[0] < s.censor_time}
        cuts.update(float(t) for t in s.recurrent_times)
        if s.terminal_time is not None:
            cuts.add(s.terminal_time)
        cuts.add(s.censor_time)
        bounds = sorted(cuts)
        prev = 0.0
        rec_set = set(float(t) for t in s.recurrent_times)
        for b in bounds:
            if s.terminal_time is not None and b == s.terminal_time:
                status = 2
            elif b in rec_set:
                status = 1
            else:
                status = 0
            z = covariate_at(s, prev)
            w.writerow([s.id, repr(prev), repr(b), status, *(repr(float(v)) for v in z)])
            prev = b
    return out.getvalue()
