"""Shared fixtures: randomized datasets and small hand-built cases."""

import numpy as np
import pytest

from recmean import build_dataset, make_subject


def random_dataset(n=12, d=2, tau=5.0, with_terminal=True, with_censor=True, seed=0):
    """Messy but valid dataset: mixed censoring, terminal events, covariate
    changes. Same generator used across the unit tests so failures reproduce."""
    r = np.random.default_rng(seed)
    subs = []
    for i in range(n):
        z = r.normal(size=d)
        cens = tau if not with_censor or r.random() < 0.5 else float(r.uniform(1, tau))
        term = None
        end = cens
        if with_terminal and r.random() < 0.35:
            term = float(r.uniform(0.5, end))
            end = term
        nrec = r.poisson(1.6)
        recs = sorted(r.uniform(0.05, end * 0.999, size=nrec))
        path = [(0.0, z)]
        if d and r.random() < 0.3:
            path.append((float(r.uniform(0.2, end)), r.normal(size=d)))
            path.sort()
        subs.append(make_subject(str(i + 1), path, recs, term, cens, tau))
    return build_dataset(subs, tau)


@pytest.fixture
def two_subject_ds():
    """d=0, recurrences at 1 and 2, follow-up to tau=3, nothing else."""
    s1 = make_subject("1", [(0.0, [])], [1.0], None, 3.0, 3.0)
    s2 = make_subject("2", [(0.0, [])], [2.0], None, 3.0, 3.0)
    return build_dataset([s1, s2], 3.0)


@pytest.fixture
def censoring_ds():
    """5 subjects, one random censoring at t=2 among 5 at risk."""
    subs = [
        make_subject("A", [(0.0, [])], [1.0], None, 2.0, 5.0),
        make_subject("B", [(0.0, [])], [0.5, 3.0], None, 5.0, 5.0),
        make_subject("C", [(0.0, [])], [], 4.0, 4.0, 5.0),
        make_subject("D", [(0.0, [])], [2.5], None, 5.0, 5.0),
        make_subject("E", [(0.0, [])], [], None, 5.0, 5.0),
    ]
    return build_dataset(subs, 5.0)


@pytest.fixture
def general_ds():
    return random_dataset(n=80, d=2, seed=11)
