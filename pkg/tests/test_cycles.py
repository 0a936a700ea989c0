import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bifcurrents.cycles import (CycleCapError, CycleSet, exact_cycles, pern_locus_1d,
                                pern_potential, pern_potential_table, periodic_points,
                                snake_order)
from bifcurrents.family import (FamilySpec, Parameter, coefficient_table, derivative,
                                evaluate, random_parameter)
from bifcurrents.grid import SliceSpec, ddc_1d, Field
from bifcurrents.potential import lyapunov

S2, S3 = FamilySpec(2), FamilySpec(3)
P0 = Parameter((), 0)


def same_set(a, b, tol=1e-9):
    a, b = list(a), list(b)
    assert len(a) == len(b)
    for z in a:
        j = min(range(len(b)), key=lambda k: abs(b[k] - z))
        assert abs(b[j] - z) < tol
        b.pop(j)


def test_periodic_points_small():
    same_set(periodic_points(S2, P0, 1), [0, 2])
    w = cmath.exp(2j * math.pi / 3)
    same_set(periodic_points(S2, P0, 2), [0, 2, 2 * w, 2 * w * w])
    same_set(periodic_points(S3, Parameter((0,), 0), 1), [0, math.sqrt(3), -math.sqrt(3)])


def test_periodic_points_sorted_and_capped():
    pts = periodic_points(S2, Parameter((), 0.3 + 0.2j), 4)
    keys = [(z.real, z.imag) for z in pts]
    assert keys == sorted(keys)
    with pytest.raises(CycleCapError):
        periodic_points(S2, P0, 15)


def test_exact_cycles_small():
    cs = exact_cycles(S2, P0, 1)
    same_set(cs.multipliers(), [0, 2])
    cs = exact_cycles(S2, P0, 2)
    assert len(cs.exact()) == 1
    assert cs.exact()[0].multiplier == pytest.approx(4, abs=1e-9)
    cs = exact_cycles(S2, P0, 3)
    assert len(cs.exact()) == 2 and 3 * 2 == 2 ** 3 - 2


@pytest.mark.parametrize("n", range(1, 9))
def test_degree_accounting_at_zero(n):
    cs = exact_cycles(S2, P0, n)
    total = sum(m * k for m, k in cs.count_by_period().items()) + cs.defect
    assert cs.defect == 0 and total == 2 ** n
    if n > 1:
        # z^2/2 is conjugate to w^2: every cycle off 0 is repelling with |multiplier| = 2^n
        np.testing.assert_allclose(np.abs(cs.multipliers()), 2.0 ** n, rtol=1e-9)


@pytest.mark.parametrize("d,n", [(2, 5), (3, 3), (4, 2)])
@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_degree_accounting_random(d, n, seed):
    spec = FamilySpec(d)
    p = random_parameter(spec, np.random.default_rng(seed))
    cs = exact_cycles(spec, p, n)
    assert sum(m * k for m, k in cs.count_by_period().items()) + cs.defect == d ** n
    for cyc in cs.cycles:
        scale = 1 + max(abs(z) for z in cyc.points)
        for i, z in enumerate(cyc.points):
            nxt = cyc.points[(i + 1) % cyc.period]
            assert abs(evaluate(spec, p, z) - nxt) < 1e-8 * scale ** d
        assert cyc.multiplier == pytest.approx(complex(np.prod(derivative(spec, p, np.array(cyc.points)))))
    pts = [z for c in cs.cycles for z in c.points]
    if len(pts) > 1:
        arr = np.array(pts)
        dist = np.abs(arr[:, None] - arr[None, :]) + np.eye(len(pts)) * 1e9
        assert dist.min() > 1e-7 * (1 + np.abs(arr).max())


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_multipliers_invariant_under_deck_maps(seed):
    rng = np.random.default_rng(seed)
    spec = FamilySpec(4)
    p = random_parameter(spec, rng)
    zeta = cmath.exp(2j * math.pi * rng.integers(4) / 4)
    perm = rng.permutation(2)
    q = Parameter(tuple(p.c[i] for i in perm), zeta * p.a)
    m1 = np.sort_complex(exact_cycles(spec, p, 2).multipliers())
    m2 = np.sort_complex(exact_cycles(spec, q, 2).multipliers())
    same_set(m1, m2, 1e-6)


def test_pern_potential_examples():
    assert pern_potential(S2, P0, 2, 0) == pytest.approx(math.log(4))
    assert pern_potential(S2, P0, 1, 0) == -math.inf
    assert pern_potential(S2, P0, 1, 3) == pytest.approx(math.log(3))


def test_table_matches_pointwise():
    slc = SliceSpec.line(2, 0, (-1, 1), (-1, 1), 8)
    coefs = coefficient_table(S2, slc.parameters(2))
    vals, defect, _ = pern_potential_table(coefs, 4, [0, 2j], snake_order(slc.shape))
    assert not defect.any()
    for i in (0, 17, 63):
        p = Parameter.from_vector(slc.parameters(2)[i])
        assert vals[i, 0] == pytest.approx(pern_potential(S2, p, 4, 0), abs=1e-8)
        assert vals[i, 1] == pytest.approx(pern_potential(S2, p, 4, 2j), abs=1e-8)


def test_csv_roundtrip(tmp_path):
    cs = exact_cycles(S2, Parameter((), 0.4j), 3)
    cs.to_csv(tmp_path / "c.csv")
    back = CycleSet.read_csv(tmp_path / "c.csv")
    assert back == cs.cycles


def test_pluriharmonic_off_the_locus():
    # Per_2(0) meets this line only at 0 and +-i sqrt 2
    slc = SliceSpec.line(2, 0, (0.5, 2.5), (-0.5, 0.5), 32)
    coefs = coefficient_table(S2, slc.parameters(2))
    vals, defect, _ = pern_potential_table(coefs, 2, [0], snake_order(slc.shape))
    assert not defect.any()
    mg = ddc_1d(Field(slc, vals[:, 0].reshape(slc.shape)))
    assert abs(mg.signed_total) < 1e-3


def test_scaled_potential_approaches_lyapunov():
    p = Parameter((), 2)
    L = lyapunov(S2, p)
    errs = [abs(pern_potential(S2, p, n, 0) / 2 ** n - L) for n in range(4, 10)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


LINE = SliceSpec.line(2, 0, (-2, 2), (-2, 2), 32)


@pytest.mark.parametrize("n,w,expected", [
    (1, 0, [0]),
    (2, 0, [1j * math.sqrt(2), -1j * math.sqrt(2)]),
    (1, 0.5, [math.sqrt(3 / 8), -math.sqrt(3 / 8)]),
])
def test_pern_locus_examples(n, w, expected):
    roots, res = pern_locus_1d(S2, LINE, n, w)
    same_set(roots, expected, 1e-8)
    assert max(res) < 1e-8


def test_pern_locus_period_three_centres():
    # P_a^3(0) = 0 with a != 0: a^2/2 is a period-3 centre of z^2 + c
    roots, _ = pern_locus_1d(S2, LINE, 3, 0)
    centres = np.roots([1, 2, 1, 1])  # c^3 + 2c^2 + c + 1 = 0
    expected = [s * np.sqrt(2 * c) for c in centres for s in (1, -1)]
    same_set(roots, expected, 1e-8)


def test_pern_locus_needs_line():
    plane = SliceSpec.plane(3, (0, 1), (((-1, 1), (-1, 1)),) * 2, 8)
    with pytest.raises(ValueError):
        pern_locus_1d(S3, plane, 1, 0)
