"""Dataset construction, CSV parsing/serialization, diagnostics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recmean import (
    DataError,
    build_dataset,
    covariate_at,
    covariates_on_grid,
    diagnostics,
    make_subject,
    parse_dataset,
    serialize_dataset,
)
from conftest import random_dataset

CSV = """id,start,stop,status,z1
1,0,0.8,1,0.3
1,0.8,2.0,2,0.3
2,0,1.5,1,-1.0
2,1.5,5,0,0.5
"""


def test_parse_basic():
    ds = parse_dataset(CSV, tau=5.0)
    assert ds.n == 2 and ds.d == 1
    s1, s2 = ds.subjects
    assert np.allclose(s1.recurrent_times, [0.8]) and s1.terminal_time == 2.0
    assert np.allclose(s2.recurrent_times, [1.5]) and s2.terminal_time is None
    assert s2.censor_time == 5.0
    assert np.allclose(ds.recurrent_grid, [0.8, 1.5])


def test_parse_covariate_change_midstream():
    ds = parse_dataset(CSV, tau=5.0)
    s2 = ds.subjects[1]
    assert covariate_at(s2, 1.0)[0] == -1.0
    assert covariate_at(s2, 1.5)[0] == 0.5  # closed-left at the change point
    grid = np.array([0.5, 1.5, 3.0])
    assert np.allclose(covariates_on_grid(s2, grid).ravel(), [-1.0, 0.5, 0.5])


def test_roundtrip_serialize_parse(general_ds):
    text = serialize_dataset(general_ds)
    back = parse_dataset(text, tau=general_ds.tau)
    assert back.n == general_ds.n
    assert np.allclose(back.recurrent_grid, general_ds.recurrent_grid)
    for a, b in zip(general_ds.subjects, back.subjects):
        assert np.allclose(a.recurrent_times, b.recurrent_times)
        assert (a.terminal_time is None) == (b.terminal_time is None)
        if a.terminal_time is not None:
            assert np.isclose(a.terminal_time, b.terminal_time)
        grid = np.linspace(0.01, a.followup_end, 7)
        assert np.allclose(covariates_on_grid(a, grid), covariates_on_grid(b, grid))


@given(st.integers(0, 2 ** 31 - 1), st.integers(0, 3))
@settings(max_examples=25, deadline=None)
def test_roundtrip_property(seed, d):
    ds = random_dataset(n=6, d=d, seed=seed)
    back = parse_dataset(serialize_dataset(ds), tau=ds.tau)
    assert np.allclose(back.recurrent_grid, ds.recurrent_grid)
    for a, b in zip(ds.subjects, back.subjects):
        assert np.allclose(a.recurrent_times, b.recurrent_times)


@pytest.mark.parametrize("bad,msg", [
    ("id,start,stop,status\n1,0,1,3\n", "status"),
    ("id,start,stop,status\n1,0.5,1,1\n", "gapped"),
    ("id,start,stop,status\n1,0,1,1\n1,0.5,2,0\n", "overlapping"),
    ("id,start,stop,status\n1,0,1,2\n1,1,2,1\n", "recurrence after terminal"),
    ("id,start,stop,status\n1,0,1,2\n1,1,2,2\n", "duplicate terminal"),
    ("id,start,stop,status\n1,0,9,1\n", "beyond tau"),
    ("id,start,stop,status\n1,1,1,1\n", "stop must exceed"),
    ("id,start,stop,status\n1,0,x,1\n", "non-numeric"),
    ("time,start,stop,status\n", "header"),
    ("id,start,stop,status,w1\n1,0,1,1,0.2\n", "covariate columns"),
    ("", "empty input"),
])
def test_parse_rejects(bad, msg):
    with pytest.raises(DataError, match=msg):
        parse_dataset(bad, tau=5.0)


def test_make_subject_validation():
    with pytest.raises(DataError):
        make_subject("1", [(0.0, [])], [2.0], 1.0, 1.0, 5.0)  # recurrence after death
    with pytest.raises(DataError):
        make_subject("1", [(0.0, [])], [-1.0], None, 5.0, 5.0)  # negative time
    with pytest.raises(DataError):
        make_subject("1", [(0.5, [])], [], None, 5.0, 5.0)  # path must start at 0
    with pytest.raises(DataError):
        make_subject("1", [(0.0, [])], [], None, 6.0, 5.0)  # censoring beyond tau


def test_tied_recurrences_nudged():
    with pytest.warns(UserWarning, match="tied"):
        s = make_subject("1", [(0.0, [])], [1.0, 1.0], None, 5.0, 5.0)
    assert len(s.recurrent_times) == 2
    assert s.recurrent_times[1] > s.recurrent_times[0]


def test_empty_dataset():
    ds = build_dataset([], 5.0)
    assert ds.n == 0 and ds.k == 0


def test_diagnostics_counts(censoring_ds):
    rep = diagnostics(censoring_ds)
    assert rep.n_subjects == 5
    assert rep.n_recurrences == 4
    assert rep.n_terminal == 1
    assert rep.n_censored == 1  # only the t=2 random censoring, not tau ends
    assert rep.frac_terminal == 0.2
    assert not rep.warnings


def test_diagnostics_warnings():
    big = make_subject("1", [(0.0, [50.0])], [1.0], None, 5.0, 5.0)
    ds = build_dataset([big], 5.0)
    rep = diagnostics(ds)
    assert any("magnitude" in w for w in rep.warnings)
    dup = [
        make_subject("1", [(0.0, [1.0, 2.0])], [1.0], None, 5.0, 5.0),
        make_subject("2", [(0.0, [2.0, 4.0])], [2.0], None, 5.0, 5.0),
    ]
    rep2 = diagnostics(build_dataset(dup, 5.0))
    assert any("rank deficient" in w for w in rep2.warnings)
