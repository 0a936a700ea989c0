"""Periodic cycles, multipliers and the Per_n(w) potential.

The potential used throughout is

    ell_{n,w}(c, a) = sum over exact period-n cycles of log|w - multiplier|,

the log-modulus of a polynomial in w whose zero set (in parameter space) is
Per_n(w).  It differs from log|p_n| of the classical Per_n polynomial by a
pluriharmonic term that vanishes after the d^{-n} rescaling; no attempt is
made to reproduce p_n's normalization.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _jit
from .family import FamilySpec, Parameter, coefficients, escape_radius_from_coefficients

log = logging.getLogger(__name__)

MAX_ROOTS = 20000
ABERTH_ITER = 2000
ROOT_TOL = 1e-13
MAP_TOL = 1e-6


class CycleCapError(ValueError):
    """d^n exceeds the desk-scale cap on simultaneous root finding."""


class CycleDefectError(RuntimeError):
    """Some roots of P^n(z) - z could not be resolved into cycles."""


@dataclass(frozen=True)
class Cycle:
    points: tuple
    period: int
    multiplier: complex


@dataclass
class CycleSet:
    parameter: Parameter
    period: int
    cycles: list = field(default_factory=list)
    defect: int = 0

    def exact(self) -> list:
        return [c for c in self.cycles if c.period == self.period]

    def count_by_period(self) -> dict:
        out: dict = {}
        for c in self.cycles:
            out[c.period] = out.get(c.period, 0) + 1
        return out

    def multipliers(self) -> np.ndarray:
        return np.array([c.multiplier for c in self.exact()], dtype=np.complex128)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["period", "points", "multiplier_re", "multiplier_im", "defect"])
            for cyc in self.cycles:
                pts = " ".join(f"{z.real!r}:{z.imag!r}" for z in cyc.points)
                wr.writerow([cyc.period, pts, repr(cyc.multiplier.real),
                             repr(cyc.multiplier.imag), self.defect])

    @staticmethod
    def read_csv(path) -> list:
        """Cycles back from :meth:`to_csv` (the parameter is not stored)."""
        cycles = []
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            next(rd)
            for row in rd:
                pts = tuple(complex(float(a), float(b))
                            for a, b in (tok.split(":") for tok in row[1].split()))
                cycles.append(Cycle(pts, int(row[0]), complex(float(row[2]), float(row[3]))))
        return cycles


def check_cap(d: int, n: int) -> int:
    if n < 1:
        raise ValueError(f"period must be >= 1, got {n}")
    N = d ** n
    if N > MAX_ROOTS:
        raise CycleCapError(f"d^n = {d}^{n} = {N} exceeds the cap of {MAX_ROOTS} roots")
    return N


def merge_tolerance(roots: np.ndarray) -> float:
    return 1e-7 * (1.0 + float(np.max(np.abs(roots)))) if roots.size else 1e-7


def _initial_circle(coef: np.ndarray, N: int) -> np.ndarray:
    r = 0.5 * escape_radius_from_coefficients(coef)
    k = np.arange(N)
    return r * np.exp(1j * (2 * np.pi * k / N + 0.4))


def _solve_roots(coef, n, init=None):
    """Roots of P^n(z) - z and per-root final Newton step sizes."""
    N = coef.shape[0] - 1
    N = N ** n
    roots = _initial_circle(coef, N) if init is None else np.array(init, dtype=np.complex128)
    _jit.aberth(coef, n, roots, ABERTH_ITER, ROOT_TOL)
    steps = _jit.newton_polish(coef, n, roots, 3, ROOT_TOL)
    return roots, steps


def periodic_points_from_coefficients(coef: np.ndarray, n: int):
    """Roots of P^n(z) - z with the count of unresolved ones."""
    coef = np.asarray(coef, dtype=np.complex128)
    check_cap(coef.shape[0] - 1, n)
    roots, steps = _solve_roots(coef, n)
    tol = 1e-6 * (1.0 + np.abs(roots))
    defect = int(np.sum(~(steps <= tol)))
    return _canonical(roots), defect


def _canonical(roots: np.ndarray) -> np.ndarray:
    return roots[np.lexsort((roots.imag, roots.real))]


def periodic_points(spec: FamilySpec, p: Parameter, n: int) -> np.ndarray:
    """All d^n roots of P^n(z) = z, sorted lexicographically.

    Raises :class:`CycleDefectError` if any root failed to converge; use
    :func:`exact_cycles` to get a defect count instead.
    """
    roots, defect = periodic_points_from_coefficients(coefficients(spec, p), n)
    if defect:
        raise CycleDefectError(f"{defect} of {roots.size} periodic points did not converge")
    return roots


def _group(coef, roots, steps, n):
    mt = merge_tolerance(roots)
    return _jit.group_orbits(coef, roots, n, steps, mt, MAP_TOL)


def exact_cycles(spec: FamilySpec, p: Parameter, n: int) -> CycleSet:
    """Orbits of all roots of P^n(z) = z, with multipliers.

    Every root lands either in some orbit of period m | n or in ``defect``,
    so sum_m m * #m-cycles + defect = d^n.  The exact period-n orbits are
    ``CycleSet.exact()``.
    """
    coef = coefficients(spec, p)
    check_cap(spec.d, n)
    roots, steps = _solve_roots(coef, n)
    roots_sorted = np.lexsort((roots.imag, roots.real))
    roots = roots[roots_sorted]
    steps = steps[roots_sorted]
    succ, cid, clen, bad = _group(coef, roots, steps, n)
    cycles = []
    for c in range(clen.shape[0]):
        members = np.flatnonzero(cid == c)
        start = members[0]  # lexicographically smallest point of the orbit
        orbit = [start]
        for _ in range(clen[c] - 1):
            orbit.append(succ[orbit[-1]])
        pts = tuple(complex(roots[i]) for i in orbit)
        mult = complex(np.prod(_derivative_from_coef(coef, np.array(pts))))
        cycles.append(Cycle(pts, int(clen[c]), mult))
    cycles.sort(key=lambda cy: (cy.period, cy.points[0].real, cy.points[0].imag))
    defect = int(np.sum(bad))
    if defect:
        log.warning("exact_cycles: %d unresolved roots at %s, n=%d", defect, p, n)
    return CycleSet(parameter=p, period=n, cycles=cycles, defect=defect)


def _derivative_from_coef(coef, z):
    return np.polyval(np.polyder(coef), z)


def pern_potential(spec: FamilySpec, p: Parameter, n: int, w: complex) -> float:
    """sum over exact n-cycles of log|w - multiplier|; -inf if some multiplier equals w."""
    cs = exact_cycles(spec, p, n)
    if cs.defect:
        raise CycleDefectError(f"{cs.defect} unresolved roots; potential undefined at {p}")
    return _log_product(cs.multipliers(), w)


def _log_product(mults: np.ndarray, w: complex) -> float:
    gaps = np.abs(w - mults)
    if np.any(gaps == 0):
        return -math.inf
    return float(np.sum(np.log(gaps)))


# ---------------------------------------------------------------------------
# grid sweeps
# ---------------------------------------------------------------------------

class CellSolver:
    """Periodic points cell by cell, continuing roots from the previous cell.

    Each new cell is reached by adaptive predictor-corrector tracking along
    the straight segment between coefficient vectors.  If the result does not
    validate (all roots converged, pairwise distinct, grouped into a clean
    permutation), the few broken roots are re-solved against the fixed good
    ones; failing that, Aberth runs warm-started from the tracked roots, and
    as a last resort from scratch.
    """

    def __init__(self, n: int, ws: Sequence[complex]):
        self.n = n
        self.ws = np.asarray(ws, dtype=np.complex128)
        self.prev_coef = None
        self.prev_roots = None
        self.stats = {"tracked": 0, "repaired": 0, "aberth": 0, "cold": 0, "defect_cells": 0}

    def _validate(self, coef, roots, steps):
        succ, cid, clen, bad = _group(coef, roots, steps, self.n)
        return succ, cid, clen, bad

    def solve(self, coef: np.ndarray):
        """Return (values per w, defect, multipliers of exact cycles)."""
        n = self.n
        result = None
        if self.prev_roots is not None:
            roots = self.prev_roots.copy()
            steps = _jit.track_adaptive(self.prev_coef, coef, roots, n, ROOT_TOL, 1e-5)
            g = self._validate(coef, roots, steps)
            if not g[3].any():
                result = (roots, g)
                self.stats["tracked"] += 1
            elif g[3].sum() <= max(8, roots.size // 8):
                # a handful of lost roots is cheaper to repair than to re-solve
                _jit.repair(coef, n, roots, steps, merge_tolerance(roots), 300, ROOT_TOL)
                steps = _jit.newton_polish(coef, n, roots, 3, ROOT_TOL)
                g = self._validate(coef, roots, steps)
                if not g[3].any():
                    result = (roots, g)
                    self.stats["repaired"] += 1
            if result is None:
                roots = _separate(roots, steps)
                _jit.aberth(coef, n, roots, ABERTH_ITER, ROOT_TOL)
                steps = _jit.newton_polish(coef, n, roots, 3, ROOT_TOL)
                g = self._validate(coef, roots, steps)
                self.stats["aberth"] += 1
                if not g[3].any():
                    result = (roots, g)
        if result is None:
            roots, steps = _solve_roots(coef, n)
            g = self._validate(coef, roots, steps)
            self.stats["cold"] += 1
            result = (roots, g)
        roots, (succ, cid, clen, bad) = result
        defect = int(bad.sum())
        out = np.empty(self.ws.shape[0])
        mult = _jit.cycle_log_products(coef, roots, succ, cid, clen, n, self.ws, out)
        if defect:
            self.stats["defect_cells"] += 1
            out[:] = np.nan
        else:
            self.prev_roots = roots
            self.prev_coef = coef.copy()
        return out, defect, mult[clen == n]


def _separate(roots, steps):
    """Replace broken roots and nudge near-duplicates apart before a warm Aberth restart."""
    roots = roots.copy()
    broken = ~np.isfinite(roots)
    if broken.any():
        k = np.flatnonzero(broken)
        r = np.nanmax(np.abs(roots[~broken])) if (~broken).any() else 1.0
        roots[k] = r * np.exp(1j * (2 * np.pi * k / roots.size + 0.4))
    order = np.lexsort((roots.imag, roots.real))
    gap = np.abs(np.diff(roots[order]))
    close = np.flatnonzero(gap < 1e-6 * (1 + np.abs(roots[order][1:])))
    if close.size:
        j = order[close + 1]
        golden = np.exp(2j * np.pi * 0.6180339887 * np.arange(1, j.size + 1))
        roots[j] += 1e-4 * (1 + np.abs(roots[j])) * golden
    return roots


def snake_order(shape: tuple) -> np.ndarray:
    """Flat indices of a 2-D (or flattened N-D) grid in boustrophedon order."""
    idx = np.arange(int(np.prod(shape))).reshape(shape[0], -1)
    idx[1::2] = idx[1::2, ::-1]
    return idx.ravel()


def pern_potential_table(coefs: np.ndarray, n: int, ws: Sequence[complex],
                         order: np.ndarray | None = None):
    """ell_{n,w} for each coefficient row and each w.

    Returns (values[N, len(ws)], defect[N], stats).  Rows with a nonzero defect
    get NaN.  ``order`` is the visiting order; consecutive rows should be
    neighbours so continuation pays off.
    """
    coefs = np.ascontiguousarray(coefs, dtype=np.complex128)
    check_cap(coefs.shape[1] - 1, n)
    N = coefs.shape[0]
    order = np.arange(N) if order is None else order
    solver = CellSolver(n, ws)
    vals = np.empty((N, len(ws)))
    defect = np.zeros(N, dtype=np.int64)
    for i in order:
        v, dfc, _ = solver.solve(coefs[i])
        vals[i] = v
        defect[i] = dfc
    return vals, defect, solver.stats


# ---------------------------------------------------------------------------
# Per_n(w) on one-dimensional slices
# ---------------------------------------------------------------------------

def _track_cycle(coef, point, n, steps=60):
    """Newton-polish one periodic point of period n; returns (point, multiplier, step)."""
    z = np.array([point], dtype=np.complex128)
    last = _jit.newton_polish(coef, n, z, steps, ROOT_TOL)
    orbit = [z[0]]
    for _ in range(n - 1):
        orbit.append(np.polyval(coef, orbit[-1]))
    mult = complex(np.prod(_derivative_from_coef(coef, np.array(orbit))))
    return complex(z[0]), mult, float(last[0])


def pern_locus_1d(spec: FamilySpec, slc, n: int, w: complex, seeds_per_cell: int = 1,
                  residual_tol: float = 1e-8, max_newton: int = 200):
    """Points of Per_n(w) on a complex line of parameters.

    Scans ``slc`` (a one-dimensional :class:`bifcurrents.grid.SliceSpec`) for
    local minima of |prod(w - multiplier)|, then solves w - multiplier(t) = 0 by
    Newton's method in the slice coordinate t, following the exact n-cycle
    whose multiplier is nearest to w and differentiating numerically.
    Returns the de-duplicated roots (as slice coordinates) lying inside the
    slice bounds, each with residual |w - multiplier| below ``residual_tol``.
    """
    from .grid import slice_coordinates  # grid depends on nothing here; avoid cycle at import

    if slc.m != 1:
        raise ValueError("pern_locus_1d needs a one-dimensional slice")
    w = complex(w)
    coords = slice_coordinates(slc)  # (nre, nim) complex
    params = slc.parameters(spec.d)
    from .family import coefficient_table
    coefs = coefficient_table(spec, params)
    order = snake_order(coords.shape)
    vals, defect, _ = pern_potential_table(coefs, n, [w], order)
    field = vals[:, 0].reshape(coords.shape)
    seeds = _local_minima(field)
    (x0, x1), (y0, y1) = slc.bounds[0]
    hx = (x1 - x0) / coords.shape[0]
    hy = (y1 - y0) / coords.shape[1]
    rng = np.random.default_rng(0)
    found = []
    for (i, j) in seeds:
        for k in range(seeds_per_cell):
            t = coords[i, j]
            if k:
                t = t + complex((rng.random() - 0.5) * hx, (rng.random() - 0.5) * hy)
            root = _newton_multiplier(spec, slc, n, w, t, residual_tol, max_newton)
            if root is None:
                continue
            t, res = root
            if not (x0 <= t.real <= x1 and y0 <= t.imag <= y1):
                continue
            if all(abs(t - u) > 1e-6 for u, _ in found):
                found.append((t, res))
    found.sort(key=lambda tr: (round(tr[0].real, 9), round(tr[0].imag, 9)))
    return [t for t, _ in found], [r for _, r in found]


def _local_minima(field: np.ndarray) -> list:
    f = np.where(np.isfinite(field), field, -np.inf)
    f = np.where(np.isnan(field), np.inf, f)
    pad = np.pad(f, 1, constant_values=np.inf)
    core = pad[1:-1, 1:-1]
    is_min = np.ones(field.shape, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            nb = pad[1 + di:pad.shape[0] - 1 + di, 1 + dj:pad.shape[1] - 1 + dj]
            is_min &= core <= nb
    is_min &= ~np.isnan(field)
    return [tuple(ix) for ix in np.argwhere(is_min)]


def _nearest_cycle_point(coef, n, w):
    cs_roots, steps = _solve_roots(coef, n)
    succ, cid, clen, bad = _group(coef, cs_roots, steps, n)
    best = None
    for c in range(clen.shape[0]):
        if clen[c] != n:
            continue
        members = np.flatnonzero(cid == c)
        mult = complex(np.prod(_derivative_from_coef(coef, cs_roots[members])))
        gap = abs(w - mult)
        if best is None or gap < best[0]:
            best = (gap, complex(cs_roots[members[0]]))
    return None if best is None else best[1]


def _exact_period_ok(coef, point, n):
    """True if the periodic point does not have a smaller period dividing n."""
    z = point
    orbit = [z]
    for _ in range(n - 1):
        z = np.polyval(coef, z)
        orbit.append(z)
    tol = 1e-6 * (1 + abs(point))
    return all(abs(orbit[m] - point) > tol for m in range(1, n) if n % m == 0)


def _alive(coef, point, step, n):
    return np.isfinite(step) and step <= 1e-6 * (1 + abs(point)) and _exact_period_ok(coef, point, n)


def _newton_multiplier(spec, slc, n, w, t, residual_tol, max_newton):
    from .family import coefficient_table

    def coef_at(tt):
        return coefficient_table(spec, slc.point(tt)[None, :])[0]

    point = _nearest_cycle_point(coef_at(t), n, w)
    if point is None:
        return None
    h = 1e-7
    cell = max(slc.spacing)
    prev_dt = None
    for _ in range(max_newton):
        coef = coef_at(t)
        point, mult, step = _track_cycle(coef, point, n)
        if not _alive(coef, point, step, n):
            log.info("pern_locus_1d: cycle lost near t=%s", t)
            return None
        res = abs(w - mult)
        if res == 0:
            break
        _, mp, _ = _track_cycle(coef_at(t + h), point, n)
        _, mm, _ = _track_cycle(coef_at(t - h), point, n)
        dm = (mp - mm) / (2 * h)
        if dm == 0 or not np.isfinite(abs(dm)):
            break  # flat or broken derivative: let the final residual decide
        dt = (mult - w) / dm
        # linear convergence ratio 1 - 1/k betrays a k-fold root; scale the step by k
        if prev_dt is not None and abs(prev_dt) > 0:
            ratio = abs(dt) / abs(prev_dt)
            if 0.3 < ratio < 0.95:
                dt = dt * min(4, max(1, round(1 / (1 - ratio))))
        if abs(dt) > cell:
            dt *= cell / abs(dt)
        # backtrack while the residual grows (multipliers can vary very fast)
        for _ in range(30):
            c_new = coef_at(t - dt)
            p_new, m_new, s_new = _track_cycle(c_new, point, n)
            if _alive(c_new, p_new, s_new, n) and abs(w - m_new) < res:
                break
            dt *= 0.5
        else:
            break
        prev_dt = dt
        t = t - dt
        point = p_new
        if abs(dt) < 1e-15 * (1 + abs(t)):
            break
        if abs(t) > 1e6:
            log.info("pern_locus_1d: Newton diverged")
            return None
    coef = coef_at(t)
    point, mult, _ = _track_cycle(coef, point, n)
    res = abs(w - mult)
    if res >= residual_tol or not _exact_period_ok(coef, point, n):
        log.info("pern_locus_1d: residual %.3g too large at t=%s", res, t)
        return None
    return t, res
