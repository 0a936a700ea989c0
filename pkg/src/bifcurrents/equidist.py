"""Convergence of d^{-n} ell_{n,w} to the Lyapunov exponent on parameter slices.

Errors are measured after an affine calibration: the median of
d^{-n} ell_{n,w} - L over cells deep in the escape locus is subtracted first.
The two potentials agree there in the limit, so the offset only removes the
per-n normalization of the cycle product (and the cycles of lower period that
are not counted in it).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cycles import check_cap, pern_potential_table, snake_order
from .family import FamilySpec, coefficient_table
from .grid import Field, SliceSpec, laplacian_masses
from .potential import G_table, lyapunov_table

WINSOR_PERCENTILE = 0.1
DEEP_FRACTION = 0.5


@dataclass
class ConvergenceReport:
    w: complex
    periods: list
    l1_errors: list
    measure_errors: list
    clipped_fraction: float
    clipped: list = field(default_factory=list)

    def __post_init__(self):
        if not len(self.periods) == len(self.l1_errors) == len(self.measure_errors):
            raise ValueError("periods and error sequences must have equal length")

    def step2_decreasing(self, start: int = 4) -> bool:
        e = dict(zip(self.periods, self.l1_errors))
        pairs = [(n, n + 2) for n in self.periods if n >= start and n + 2 in e]
        return bool(pairs) and all(e[b] < e[a] for a, b in pairs)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["n", "w_re", "w_im", "l1_error", "measure_error", "clipped_fraction"])
            clipped = self.clipped or [self.clipped_fraction] * len(self.periods)
            for n, e, m, c in zip(self.periods, self.l1_errors, self.measure_errors, clipped):
                wr.writerow([n, repr(self.w.real), repr(self.w.imag), repr(float(e)),
                             repr(float(m)), repr(float(c))])

    def summary(self) -> str:
        lines = [f"w = {self.w.real:g}{self.w.imag:+g}i"]
        for n, e, m in zip(self.periods, self.l1_errors, self.measure_errors):
            lines.append(f"  n={n:2d}  l1={e:.6g}  weak={m:.6g}")
        lines.append(f"  clipped fraction {self.clipped_fraction:.4%}")
        ok = self.step2_decreasing()
        lines.append("  verdict: " + ("e_{n+2} < e_n for all n >= 4" if ok
                                      else "step-2 decrease NOT observed"))
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

def _order(slc: SliceSpec) -> np.ndarray:
    # snake over the flattened grid: consecutive cells are neighbours along the last axis
    shape = slc.shape
    return snake_order((int(np.prod(shape[:-1])), shape[-1]))


def scaled_pern_fields(spec: FamilySpec, slc: SliceSpec, n: int, ws: Sequence[complex]) -> list:
    """d^{-n} ell_{n,w} on the slice for each w, from a single cycle sweep.

    Cells with unresolved roots come back NaN, exact hits of Per_n(w) as -inf.
    """
    check_cap(spec.d, n)
    coefs = coefficient_table(spec, slc.parameters(spec.d))
    vals, _, _ = pern_potential_table(coefs, n, list(ws), _order(slc))
    scale = float(spec.d) ** (-n)
    return [vals[:, k].reshape(slc.shape) * scale for k in range(len(ws))]


@dataclass(frozen=True)
class Reference:
    """Lyapunov exponent and the deep-escape mask on a slice."""

    L: np.ndarray
    deep: np.ndarray

    @classmethod
    def on(cls, spec: FamilySpec, slc: SliceSpec) -> "Reference":
        params = slc.parameters(spec.d)
        L = lyapunov_table(spec, params).reshape(slc.shape)
        Gv = G_table(spec, params).reshape(slc.shape)
        top = float(Gv.max())
        deep = Gv >= DEEP_FRACTION * top if top > 0 else np.zeros(slc.shape, dtype=bool)
        return cls(L, deep)


def calibration_offset(scaled: np.ndarray, ref: Reference) -> float:
    diff = scaled - ref.L
    ok = ref.deep & np.isfinite(diff)
    return float(np.median(diff[ok])) if ok.any() else 0.0


def winsorize(values: np.ndarray):
    """Clip the lower tail at the 0.1st percentile of finite values.

    Returns (clipped values with flagged cells left non-finite, mask of cells
    that were flagged or clipped).
    """
    finite = np.isfinite(values)
    out = values.copy()
    touched = ~finite
    if finite.any():
        lo = np.percentile(values[finite], WINSOR_PERCENTILE)
        low = finite & (values < lo)
        out[low] = lo
        touched = touched | low
    return out, touched


def _errors(scaled: np.ndarray, ref: Reference, slc: SliceSpec, testfns):
    calibrated = scaled - calibration_offset(scaled, ref)
    wins, touched = winsorize(calibrated)
    finite = np.isfinite(wins)
    l1 = float(np.mean(np.abs(wins[finite] - ref.L[finite]))) if finite.any() else math.nan
    clipped = float(touched.mean())
    weak = math.nan
    if slc.m == 1:
        weak = _weak_error(wins, ref.L, slc, testfns)
    return l1, weak, clipped


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def potential_l1(spec: FamilySpec, slc: SliceSpec, n: int, w: complex, tol: float = 1e-12):
    """Mean |d^{-n} ell_{n,w} - L| over non-flagged cells; returns (error, clipped_fraction)."""
    scaled = scaled_pern_fields(spec, slc, n, [w])[0]
    ref = Reference(lyapunov_table(spec, slc.parameters(spec.d), tol).reshape(slc.shape),
                    Reference.on(spec, slc).deep)
    l1, _, clipped = _errors(scaled, ref, slc, None)
    return l1, clipped


def bump(center: complex, radius: float) -> Callable:
    """Smooth compactly supported exp(-1/(1-r^2)) bump on a disc."""
    center = complex(center)

    def chi(t):
        r2 = np.abs(np.asarray(t) - center) ** 2 / radius ** 2
        out = np.zeros(np.shape(r2))
        inside = r2 < 1
        out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        return out

    chi.center, chi.radius = center, radius
    return chi


def default_testfns(slc: SliceSpec) -> list:
    """Three bumps: one at the slice centre and two halfway to the real-axis edges."""
    (x0, x1), (y0, y1) = slc.bounds[0]
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    half = 0.5 * min(x1 - x0, y1 - y0)
    rad = 0.5 * half
    return [bump(complex(cx - half / 2, cy), rad), bump(complex(cx, cy), rad),
            bump(complex(cx + half / 2, cy), rad)]


def _fill(values: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    out = values.copy()
    bad = ~np.isfinite(out)
    if bad.any():
        finite = ~bad
        lo = values[finite].min() if finite.any() else 0.0
        # -inf cells are zeros of the product: treat as the clipped floor; NaN falls back
        out[np.isneginf(values)] = lo
        nan = np.isnan(values)
        out[nan] = fallback[nan]
    return out


def _weak_error(scaled: np.ndarray, L: np.ndarray, slc: SliceSpec, testfns) -> float:
    hx, hy = slc.spacing
    diff = laplacian_masses(_fill(scaled, L), hx, hy) - laplacian_masses(L, hx, hy)
    coords = slc.coordinates()[0]
    fns = default_testfns(slc) if testfns is None else testfns
    best = 0.0
    for chi in fns:
        best = max(best, abs(float(np.sum(np.asarray(chi(coords), dtype=float) * diff))))
    return best


def measure_weak_error(spec: FamilySpec, slc: SliceSpec, n: int, w: complex,
                       testfns: Sequence[Callable] | None = None) -> float:
    """max over test functions of |<dd^c(d^{-n} ell_{n,w}) - dd^c L, chi>| on a 1-d slice.

    Test functions take the complex slice coordinate array and return real
    values; the default set is :func:`default_testfns`.
    """
    if slc.m != 1:
        raise ValueError("measure_weak_error needs a one-dimensional slice")
    scaled = scaled_pern_fields(spec, slc, n, [w])[0]
    L = lyapunov_table(spec, slc.parameters(spec.d)).reshape(slc.shape)
    return _weak_error(winsorize(scaled)[0], L, slc, testfns)


def pointwise_dominance(spec: FamilySpec, params: np.ndarray, n: int, w: complex) -> float:
    """Fraction of parameter rows with d^{-n} ell_{n,w} <= L + 0.2 log d d^{-n/2}.

    No calibration is applied.  -inf (a hit of Per_n(w)) counts as dominated;
    unresolved cells count as not dominated.
    """
    params = np.atleast_2d(np.asarray(params, dtype=np.complex128))
    check_cap(spec.d, n)
    coefs = coefficient_table(spec, params)
    vals, _, _ = pern_potential_table(coefs, n, [w])
    scaled = vals[:, 0] * float(spec.d) ** (-n)
    L = lyapunov_table(spec, params)
    slack = 0.2 * math.log(spec.d) * spec.d ** (-n / 2)
    with np.errstate(invalid="ignore"):
        ok = np.isneginf(scaled) | (scaled <= L + slack)
    return float(ok.mean())


def convergence_report(spec: FamilySpec, slc: SliceSpec, periods: Sequence[int],
                       ws: Sequence[complex], testfns=None, progress: Callable | None = None) -> list:
    """One :class:`ConvergenceReport` per w; each period is swept once for all w."""
    periods = [int(n) for n in periods]
    for n in periods:
        check_cap(spec.d, n)
    ws = [complex(w) for w in ws]
    ref = Reference.on(spec, slc)
    rows = {w: ([], [], []) for w in ws}
    for n in periods:
        fields = scaled_pern_fields(spec, slc, n, ws)
        for w, f in zip(ws, fields):
            l1, weak, clipped = _errors(f, ref, slc, testfns)
            rows[w][0].append(l1)
            rows[w][1].append(weak)
            rows[w][2].append(clipped)
        if progress is not None:
            progress(n)
    return [ConvergenceReport(w, list(periods), rows[w][0], rows[w][1],
                              max(rows[w][2]) if rows[w][2] else 0.0, rows[w][2])
            for w in ws]


def error_field(spec: FamilySpec, slc: SliceSpec, n: int, w: complex) -> Field:
    """|d^{-n} ell_{n,w} - L| after calibration, for plotting."""
    scaled = scaled_pern_fields(spec, slc, n, [w])[0]
    ref = Reference.on(spec, slc)
    calibrated = scaled - calibration_offset(scaled, ref)
    return Field(slc, np.abs(winsorize(calibrated)[0] - ref.L), f"error_n{n}")
