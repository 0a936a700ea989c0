import math

import numpy as np
import pytest

from bifcurrents.cycles import CycleCapError
from bifcurrents.equidist import (ConvergenceReport, bump, convergence_report, default_testfns,
                                  measure_weak_error, pointwise_dominance, potential_l1, winsorize)
from bifcurrents.family import FamilySpec
from bifcurrents.grid import SliceSpec

S2 = FamilySpec(2)
BIG = SliceSpec.line(2, 0, (-3, 3), (-3, 3), 64)
ESCAPE = SliceSpec.line(2, 0, (3, 4), (0, 1), 32)


def test_l1_decreases_from_4_to_8():
    e4, _ = potential_l1(S2, BIG, 4, 0)
    e8, clipped = potential_l1(S2, BIG, 8, 0)
    assert e8 < e4 and clipped < 0.01


def test_l1_small_on_escape_locus():
    e6, _ = potential_l1(S2, ESCAPE, 6, 0)
    assert e6 < 0.05 * math.log(2)


def test_refuses_over_cap():
    with pytest.raises(CycleCapError):
        potential_l1(S2, BIG, 15, 0)


def test_weak_error_examples():
    # bump deep in the escape locus, far from Per_6(0) and the bifurcation locus
    chi = bump(3.5 + 0.5j, 0.4)
    assert measure_weak_error(S2, ESCAPE, 6, 0, [chi]) < 1e-3
    assert measure_weak_error(S2, ESCAPE, 6, 0, [lambda t: np.zeros(np.shape(t))]) == 0
    e4 = measure_weak_error(S2, BIG, 4, 0)
    e8 = measure_weak_error(S2, BIG, 8, 0)
    assert e8 < e4
    with pytest.raises(ValueError):
        measure_weak_error(S2, SliceSpec.plane(3, (0, 1), (((-1, 1), (-1, 1)),) * 2, 8), 2, 0)


def test_default_testfns_are_bumps():
    fns = default_testfns(BIG)
    assert len(fns) == 3
    t = BIG.coordinates()[0]
    for chi in fns:
        v = chi(t)
        assert v.max() > 0 and v.min() == 0
        assert (v[np.abs(t - chi.center) >= chi.radius] == 0).all()


def test_dominance():
    rng = np.random.default_rng(0)
    esc = (3 + rng.random(20)) + 1j * rng.random(20)
    assert pointwise_dominance(S2, esc[:, None], 8, 0) == 1.0
    assert pointwise_dominance(S2, np.array([[0j]]), 1, 0) == 1.0
    roots = np.array([[1j * math.sqrt(2)], [-1j * math.sqrt(2)]])
    assert pointwise_dominance(S2, roots, 2, 0) == 1.0


def test_dominance_on_random_sample():
    rng = np.random.default_rng(1)
    P = (rng.uniform(-3, 3, 1000) + 1j * rng.uniform(-3, 3, 1000))[:, None]
    assert pointwise_dominance(S2, P, 8, 0) >= 0.99


def test_winsorize_policy():
    v = np.linspace(0, 1, 10_000)
    v[5] = -np.inf
    v[7] = np.nan
    out, touched = winsorize(v)
    assert touched[5] and touched[7] and np.isneginf(out[5])
    assert touched.mean() < 0.002 + 2e-4


def test_report_csv_and_summary(tmp_path):
    rep = convergence_report(S2, SliceSpec.line(2, 0, (-3, 3), (-3, 3), 16), range(3, 7), [0, 2j])
    assert len(rep) == 2
    r = rep[0]
    assert len(r.periods) == len(r.l1_errors) == len(r.measure_errors) == 4
    assert all(e >= 0 for e in r.l1_errors + r.measure_errors)
    r.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("n,w_re,w_im,l1_error") and len(lines) == 5
    assert "verdict" in r.summary()
    with pytest.raises(ValueError):
        ConvergenceReport(0j, [3, 4], [0.1], [0.1, 0.2], 0.0)
