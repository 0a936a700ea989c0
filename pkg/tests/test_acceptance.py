"""Exit criteria.  Each criterion writes a CSV of its measured quantities;
criterion 12 recomputes 1-11 into a fresh directory and compares bytes."""

import csv
import math
import time
from pathlib import Path

import numpy as np
import pytest

from bifcurrents.cycles import exact_cycles, pern_locus_1d
from bifcurrents.equidist import convergence_report, potential_l1
from bifcurrents.family import FamilySpec, Parameter, coefficient_table
from bifcurrents.grid import (Field, SliceSpec, boundary_cells, components, ddc_1d, mixed_wedge,
                              monge_ampere_2d, within_cells)
from bifcurrents.potential import critical_greens, green_table
from bifcurrents.shift import decompose, decomposition_check

pytestmark = pytest.mark.acceptance

S2, S3 = FamilySpec(2), FamilySpec(3)
SEED = 20240101
BIG = ((-3, 3), (-3, 3))
CUBIC_BOX = ((-2, 2), (-2, 2))


def _write(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(x) if isinstance(x, float) else x for x in r])


# ---------------------------------------------------------------------------
# measurements; each returns a dict and writes c<k>.csv into out
# ---------------------------------------------------------------------------

def c1(out):
    rng = np.random.default_rng(SEED)
    r = 2.0 + rng.exponential(5.0, 1000) + 1e-9
    z = r * np.exp(2j * np.pi * rng.random(1000))
    coef = coefficient_table(S2, np.zeros((1, 1)))
    green_table(coef, z[:1])  # compile outside the timed region
    t = time.perf_counter()
    vals, _ = green_table(np.repeat(coef, z.size, axis=0), z)
    secs = time.perf_counter() - t
    err = np.abs(vals - np.log(np.abs(z) / 2))
    _write(out / "c1.csv", ["max_error"], [[float(err.max())]])
    return {"max_error": float(err.max()), "seconds": secs}


def c2(out):
    slc = SliceSpec.line(2, 0, *BIG, 512)
    g = critical_greens(S2, slc.parameters(2))[:, 0].reshape(slc.shape)
    mg = ddc_1d(Field(slc, g))
    _write(out / "c2.csv", ["mass", "signed_mass", "negative_mass"],
           [[float(mg.total), float(mg.signed_total), float(mg.negative_mass)]])
    return {"mass": float(mg.total), "signed": float(mg.signed_total)}


def c3(out):
    p = Parameter((), 0)
    fixed = sorted(exact_cycles(S2, p, 1).multipliers(), key=abs)
    two = exact_cycles(S2, p, 2).multipliers()
    rows, exact = [], True
    for n in range(1, 9):
        cs = exact_cycles(S2, p, n)
        total = sum(m * k for m, k in cs.count_by_period().items())
        exact &= total == 2 ** n and cs.defect == 0
        rows.append([n, total, cs.defect])
    _write(out / "c3.csv", ["n", "points_in_orbits", "defect"], rows)
    return {"fixed": fixed, "two": list(two), "accounting": exact}


def c4(out):
    rows, found = [], {}
    for n in (1, 2):
        slc = SliceSpec.line(2, 0, *BIG, 64)
        pts, res = pern_locus_1d(S2, slc, n, 0)
        found[n] = (pts, res)
        rows += [[n, float(t.real), float(t.imag), float(r)] for t, r in zip(pts, res)]
    _write(out / "c4.csv", ["n", "a_re", "a_im", "residual"], rows)
    return found


PERIODS = range(4, 10)
W5 = (0, 1, 2, 4j)


def c5(out):
    slc = SliceSpec.line(2, 0, *BIG, 256)
    t = time.perf_counter()
    reps = convergence_report(S2, slc, PERIODS, W5)
    secs = time.perf_counter() - t
    rows = []
    for r in reps:
        for n, e, c in zip(r.periods, r.l1_errors, r.clipped):
            rows.append([n, repr(r.w), float(e), float(c)])
    _write(out / "c5.csv", ["n", "w", "l1_error", "clipped_fraction"], rows)
    return {"reports": reps, "seconds": secs}


def c6(out):
    slc = SliceSpec.line(2, 0, (3, 4), (0, 1), 64)
    e8, clipped = potential_l1(S2, slc, 8, 0)
    _write(out / "c6.csv", ["e8", "clipped_fraction"], [[float(e8), float(clipped)]])
    return {"e8": e8}


CASES = {"d2": (S2, Parameter((), 2)), "d3": (S3, Parameter((4,), 0))}


def c7(out):
    found = {}
    rows = []
    for key, (spec, p) in CASES.items():
        D = decompose(spec, p, rng_seed=SEED)
        found[key] = D
        rows.append([key, D.ell, D.q, " ".join(map(str, D.degrees))])
    _write(out / "c7.csv", ["case", "ell", "q", "degrees"], rows)
    return found


def c8(out):
    fns = [lambda z: z.real, lambda z: z.imag, lambda z: np.abs(z) ** 2]
    t = time.perf_counter()
    errs = {}
    for key, (spec, p) in CASES.items():
        errs[key] = decomposition_check(spec, p, fns, 8, 2000, SEED)
    secs = time.perf_counter() - t
    _write(out / "c8.csv", ["case", "error"], [[k, float(v)] for k, v in errs.items()])
    return {"errors": errs, "seconds": secs}


def _cubic_fields():
    slc = SliceSpec.plane(3, (0, 1), (CUBIC_BOX, CUBIC_BOX), 24)
    gc = critical_greens(S3, slc.parameters(3))
    f = [Field(slc, gc[:, i].reshape(slc.shape)) for i in (0, 1)]
    return slc, f[0], f[1], Field(slc, gc.max(axis=1).reshape(slc.shape))


def c9(out):
    slc, g0, g1, G = _cubic_fields()
    h = 2 * min(slc.spacing)
    wedge = mixed_wedge(g0, g1, h)
    ma = monge_ampere_2d(G, h)
    rows = [["mixed(g0,g1)", float(wedge.total), float(wedge.negative_mass)],
            ["MA(G)", float(ma.total), float(ma.negative_mass)]]
    _write(out / "c9.csv", ["measure", "mass", "negative_mass"], rows)
    return {"wedge": wedge, "ma": ma}


def c10(out):
    slc, _, _, G = _cubic_fields()
    ma = monge_ampere_2d(G, 2 * min(slc.spacing))
    near = within_cells(boundary_cells(G.values < 1e-3), 2)
    frac = float(ma.density[near].sum() / ma.total)
    _write(out / "c10.csv", ["fraction_near_boundary"], [[frac]])
    return {"fraction": frac}


def c11(out):
    slc = SliceSpec.line(2, 0, *BIG, 512)
    g = critical_greens(S2, slc.parameters(2))[:, 0].reshape(slc.shape)
    _, count = components(Field(slc, g), lambda v: v > 1e-6)
    _write(out / "c11.csv", ["components"], [[count]])
    return {"count": count}


MEASURE = {1: c1, 2: c2, 3: c3, 4: c4, 5: c5, 6: c6, 7: c7, 8: c8, 9: c9, 10: c10, 11: c11}


class Runs:
    def __init__(self, root: Path):
        self.root = root
        self.cache: dict = {}

    def get(self, k):
        if k not in self.cache:
            self.cache[k] = MEASURE[k](self.root)
        return self.cache[k]


@pytest.fixture(scope="module")
def first(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("first"))


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_closed_form_green(first, verdict):
    r = first.get(1)
    ok = r["max_error"] < 1e-9 and r["seconds"] < 1.0
    verdict(1, ok, f"max |g - log|z/2|| = {r['max_error']:.2e} (< 1e-9), {r['seconds']:.3f} s")
    assert ok


def test_critical_current_has_unit_mass(first, verdict):
    r = first.get(2)
    ok = 0.95 <= r["mass"] <= 1.05
    verdict(2, ok, f"mass {r['mass']:.4f} in [0.95, 1.05] (signed {r['signed']:.6f})")
    assert ok


def test_cycle_oracle(first, verdict):
    r = first.get(3)
    fixed_ok = len(r["fixed"]) == 2 and abs(r["fixed"][0]) < 1e-12 and abs(r["fixed"][1] - 2) < 1e-9
    two_ok = len(r["two"]) == 1 and abs(r["two"][0] - 4) < 1e-9
    ok = fixed_ok and two_ok and r["accounting"]
    verdict(3, ok, f"fixed {np.round(r['fixed'], 9)}, 2-cycle {np.round(r['two'], 9)}, "
                   f"sum m*#cycles = 2^n for n<=8: {r['accounting']}")
    assert ok


def test_per_n_zero_loci(first, verdict):
    r = first.get(4)
    p1, r1 = r[1]
    p2, r2 = r[2]
    s = math.sqrt(2)
    ok = (len(p1) == 1 and abs(p1[0]) < 1e-8
          and len(p2) == 2 and sorted(p2, key=lambda z: z.imag)[0] - (-1j * s) == pytest.approx(0, abs=1e-8)
          and sorted(p2, key=lambda z: z.imag)[1] - 1j * s == pytest.approx(0, abs=1e-8)
          and max(list(r1) + list(r2)) < 1e-8)
    verdict(4, ok, f"n=1 -> {np.round(p1, 10)}, n=2 -> {np.round(p2, 10)}, "
                   f"max residual {max(list(r1) + list(r2)):.1e}")
    assert ok


@pytest.mark.slow
def test_equidistribution(first, verdict):
    r = first.get(5)
    bad = []
    for rep in r["reports"]:
        e = dict(zip(rep.periods, rep.l1_errors))
        for n in (4, 5, 6, 7):
            if not e[n + 2] < e[n]:
                bad.append(f"w={rep.w:g}: e_{n + 2}={e[n + 2]:.4g} >= e_{n}={e[n]:.4g}")
        if not e[9] < 0.6 * e[5]:
            bad.append(f"w={rep.w:g}: e_9={e[9]:.4g} >= 0.6 e_5={0.6 * e[5]:.4g}")
        if not rep.clipped_fraction < 0.01:
            bad.append(f"w={rep.w:g}: clipped {rep.clipped_fraction:.3%}")
    if r["seconds"] >= 1800:
        bad.append(f"runtime {r['seconds']:.0f} s")
    ok = not bad
    verdict(5, ok, "all step-2 decreases, e_9 < 0.6 e_5, clipped < 1%" if ok else "; ".join(bad))
    assert ok, bad


def test_escape_locus_equality(first, verdict):
    r = first.get(6)
    ok = r["e8"] < 0.05 * math.log(2)
    verdict(6, ok, f"e_8 = {r['e8']:.3e} (< {0.05 * math.log(2):.4f})")
    assert ok


def test_branched_cover_structure(first, verdict):
    r = first.get(7)
    a, b = r["d2"], r["d3"]
    ok = ((a.ell, a.degrees, a.q) == (2, (1, 1), 0)
          and b.ell == 2 and b.q == 1 and sorted(b.degrees) == [1, 2]
          and all(D.ell == D.d - D.q and sum(D.degrees) == D.d for D in (a, b)))
    verdict(7, ok, f"d=2: ell={a.ell} degrees={a.degrees} q={a.q}; "
                   f"d=3: ell={b.ell} degrees={b.degrees} q={b.q}")
    assert ok


def test_measure_decomposition(first, verdict):
    r = first.get(8)
    worst = max(r["errors"].values())
    ok = worst < 0.02 and r["seconds"] < 300
    verdict(8, ok, f"max error {worst:.2e} (< 0.02), {r['seconds']:.1f} s")
    assert ok


def test_mixed_wedge_identity(first, verdict):
    r = first.get(9)
    w, ma = r["wedge"], r["ma"]
    ratio = w.total / (0.5 * ma.total)
    neg_ok = (w.negative_mass < 0.1 * w.total) and (ma.negative_mass < 0.1 * ma.total)
    ok = abs(ratio - 1) <= 0.15 and neg_ok
    verdict(9, ok, f"mixed {w.total:.4f} vs MA(G)/2 {0.5 * ma.total:.4f} (ratio {ratio:.3f}); "
                   f"negative {w.negative_mass:.4f}, {ma.negative_mass:.4f}")
    assert ok


def test_bifurcation_measure_support(first, verdict):
    r = first.get(10)
    ok = r["fraction"] >= 0.9
    verdict(10, ok, f"{r['fraction']:.3f} of MA(G) mass within 2 cells of the boundary of {{G < 1e-3}}")
    assert ok


def test_slice_connectivity(first, verdict):
    r = first.get(11)
    ok = r["count"] == 1
    verdict(11, ok, f"{r['count']} component(s)")
    assert ok


@pytest.mark.slow
def test_determinism(first, tmp_path, verdict):
    for k in MEASURE:
        first.get(k)
    second = Runs(tmp_path)
    differ = []
    for k in MEASURE:
        second.get(k)
        name = f"c{k}.csv"
        if (first.root / name).read_bytes() != (tmp_path / name).read_bytes():
            differ.append(name)
    ok = not differ
    verdict(12, ok, "criteria 1-11 CSV outputs bit-identical across runs" if ok
            else f"differing: {differ}")
    assert ok
