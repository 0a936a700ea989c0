"""Sampled fields on parameter slices and the discrete currents built from them.

Conventions
-----------
dd^c = (i/pi) d d-bar, so that dd^c log|z - z0| is the unit Dirac mass at z0.
In one complex variable this makes dd^c u = (1/2pi) Laplacian(u) dx dy; in two,
(dd^c u)^2 = 2 (2/pi)^2 det(d^2 u / dz_i dzbar_j) dV.  Every mass reported
here is relative to this normalization.

A slice of complex dimension m has 2m real axes, ordered
(axis0_re, axis0_im, axis1_re, axis1_im); field arrays use exactly that axis
order and cell-centred samples.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .family import Parameter

MIN_RESOLUTION = 8


class SliceError(ValueError):
    pass


class SampleError(RuntimeError):
    def __init__(self, index, cause):
        super().__init__(f"evaluation failed at cell {index}: {cause!r}")
        self.index = index
        self.cause = cause


@dataclass(frozen=True)
class SliceSpec:
    """An affine complex slice origin + sum_k t_k basis_k of parameter space.

    ``bounds[k] = ((re_min, re_max), (im_min, im_max))`` bounds t_k, and
    ``resolution`` holds one sample count per real axis.
    """

    m: int
    origin: tuple
    basis: tuple
    bounds: tuple
    resolution: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(complex(x) for x in self.origin))
        object.__setattr__(self, "basis", tuple(tuple(complex(x) for x in b) for b in self.basis))
        object.__setattr__(self, "bounds", tuple(
            (tuple(float(x) for x in re), tuple(float(x) for x in im)) for re, im in self.bounds))
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        self.validate()

    def validate(self):
        if self.m not in (1, 2):
            raise SliceError(f"slice dimension m must be 1 or 2, got {self.m}")
        if len(self.basis) != self.m or len(self.bounds) != self.m:
            raise SliceError("need one basis vector and one bounds pair per complex axis")
        if len(self.resolution) != 2 * self.m:
            raise SliceError(f"resolution needs {2 * self.m} entries (one per real axis)")
        for r in self.resolution:
            if r < MIN_RESOLUTION:
                raise SliceError(f"resolution must be >= {MIN_RESOLUTION} per axis, got {r}")
        for b in self.basis:
            if len(b) != len(self.origin):
                raise SliceError("basis vectors must match the origin's dimension")
        for (re, im) in self.bounds:
            if not (re[0] < re[1] and im[0] < im[1]):
                raise SliceError(f"empty bounds {re}, {im}")
        B = np.array(self.basis, dtype=np.complex128)
        if np.linalg.matrix_rank(B) < self.m:
            raise SliceError("basis vectors are linearly dependent")

    @classmethod
    def line(cls, d: int, axis: int, re, im, res, origin=None) -> "SliceSpec":
        """Coordinate line along parameter ``axis`` (a is the last axis)."""
        origin = np.zeros(d - 1, dtype=complex) if origin is None else origin
        e = np.zeros(d - 1, dtype=complex)
        e[axis] = 1
        res = (res, res) if np.isscalar(res) else res
        return cls(1, tuple(origin), (tuple(e),), ((re, im),), tuple(res))

    @classmethod
    def plane(cls, d: int, axes, bounds, res, origin=None) -> "SliceSpec":
        origin = np.zeros(d - 1, dtype=complex) if origin is None else origin
        basis = []
        for ax in axes:
            e = np.zeros(d - 1, dtype=complex)
            e[ax] = 1
            basis.append(tuple(e))
        res = (res,) * 4 if np.isscalar(res) else res
        return cls(2, tuple(origin), tuple(basis), tuple(bounds), tuple(res))

    @property
    def shape(self) -> tuple:
        return self.resolution

    @property
    def spacing(self) -> tuple:
        out = []
        for k, (re, im) in enumerate(self.bounds):
            out.append((re[1] - re[0]) / self.resolution[2 * k])
            out.append((im[1] - im[0]) / self.resolution[2 * k + 1])
        return tuple(out)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_centers(self) -> list:
        out = []
        for k, (re, im) in enumerate(self.bounds):
            for (lo, hi), n in ((re, self.resolution[2 * k]), (im, self.resolution[2 * k + 1])):
                h = (hi - lo) / n
                out.append(lo + (np.arange(n) + 0.5) * h)
        return out

    def coordinates(self) -> list:
        """Complex slice coordinates t_k at every cell centre, each of shape ``self.shape``."""
        axes = np.meshgrid(*self.axis_centers(), indexing="ij")
        return [axes[2 * k] + 1j * axes[2 * k + 1] for k in range(self.m)]

    def point(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.complex128))
        return np.asarray(self.origin) + t @ np.asarray(self.basis)

    def parameters(self, d: int | None = None) -> np.ndarray:
        """(ncells, d-1) parameter vectors in C order of ``self.shape``."""
        ts = np.stack([c.ravel() for c in self.coordinates()], axis=1)
        return np.asarray(self.origin)[None, :] + ts @ np.asarray(self.basis)


def slice_coordinates(slc: SliceSpec) -> np.ndarray:
    if slc.m != 1:
        raise SliceError("slice_coordinates is for one-dimensional slices")
    return slc.coordinates()[0]


@dataclass(frozen=True)
class Field:
    slice: SliceSpec
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != self.slice.shape:
            raise SliceError(f"field shape {v.shape} != slice resolution {self.slice.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def flagged(self) -> np.ndarray:
        return ~np.isfinite(self.values)

    def __add__(self, other: "Field") -> "Field":
        return Field(self.slice, self.values + other.values, f"{self.label}+{other.label}")


@dataclass(frozen=True)
class MeasureGrid:
    """Cell masses of a discrete current.

    ``density`` holds nonnegative cell masses after clipping, ``raw`` the
    signed masses before clipping and ``negative_mass`` the clipped total.
    """

    slice: SliceSpec
    density: np.ndarray
    negative_mass: float
    raw: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_raw(cls, slc: SliceSpec, raw: np.ndarray) -> "MeasureGrid":
        raw = np.asarray(raw, dtype=np.float64)
        neg = raw < 0
        density = np.where(neg, 0.0, raw)
        for a in (raw, density):
            a.setflags(write=False)
        return cls(slc, density, float(-raw[neg].sum()), raw)

    @property
    def total(self) -> float:
        return float(self.density.sum())

    @property
    def signed_total(self) -> float:
        return float(self.raw.sum())


def sample(slc: SliceSpec, f: Callable, d: int | None = None, parallel: bool = False,
           vectorized: bool = False, label: str = "", workers: int | None = None) -> Field:
    """Evaluate f on every cell centre of the slice.

    With ``vectorized=True``, f receives the whole (ncells, d-1) parameter
    array at once and must return ncells values; otherwise f is called with a
    :class:`Parameter` per cell.  Results do not depend on ``parallel``.
    """
    params = slc.parameters()
    if vectorized:
        vals = np.asarray(f(params), dtype=np.float64)
        return Field(slc, vals.reshape(slc.shape), label)

    def one(i):
        try:
            return float(f(Parameter.from_vector(params[i])))
        except Exception as exc:  # noqa: BLE001 - re-raised with the cell index
            raise SampleError(np.unravel_index(i, slc.shape), exc) from exc

    n = params.shape[0]
    if parallel and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            vals = list(ex.map(one, range(n), chunksize=max(1, n // 64)))
    else:
        vals = [one(i) for i in range(n)]
    return Field(slc, np.array(vals).reshape(slc.shape), label)


# ---------------------------------------------------------------------------
# dd^c in one variable
# ---------------------------------------------------------------------------

def laplacian_masses(u: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Five-point Laplacian times cell area over 2 pi; zero on the boundary ring."""
    out = np.zeros_like(u, dtype=np.float64)
    c = u[1:-1, 1:-1]
    lap = ((u[2:, 1:-1] - 2 * c + u[:-2, 1:-1]) / hx ** 2
           + (u[1:-1, 2:] - 2 * c + u[1:-1, :-2]) / hy ** 2)
    out[1:-1, 1:-1] = lap * (hx * hy) / (2 * math.pi)
    return out


def ddc_1d(fld: Field) -> MeasureGrid:
    if fld.slice.m != 1:
        raise SliceError("ddc_1d needs a one-dimensional slice")
    hx, hy = fld.slice.spacing
    return MeasureGrid.from_raw(fld.slice, laplacian_masses(fld.values, hx, hy))


# ---------------------------------------------------------------------------
# Monge-Ampere in two variables
# ---------------------------------------------------------------------------

def _odd_pad(u: np.ndarray, width: int) -> np.ndarray:
    """Pad every axis by point reflection through the edge value (keeps affine functions affine)."""
    for ax in range(u.ndim):
        n = u.shape[ax]
        w = min(width, n - 1)
        edge_lo = np.take(u, [0], axis=ax)
        edge_hi = np.take(u, [n - 1], axis=ax)
        lo = 2 * edge_lo - np.flip(np.take(u, np.arange(1, w + 1), axis=ax), axis=ax)
        hi = 2 * edge_hi - np.flip(np.take(u, np.arange(n - 1 - w, n - 1), axis=ax), axis=ax)
        u = np.concatenate([lo, u, hi], axis=ax)
        if w < width:
            # very coarse axes: extend linearly with the end slopes
            extra = width - w
            slope_lo = np.take(u, [1], axis=ax) - np.take(u, [0], axis=ax)
            slope_hi = np.take(u, [-1], axis=ax) - np.take(u, [-2], axis=ax)
            k = np.arange(extra, 0, -1).reshape([-1 if i == ax else 1 for i in range(u.ndim)])
            lo = np.take(u, [0], axis=ax) - slope_lo * k
            hi = np.take(u, [-1], axis=ax) + slope_hi * np.flip(k, axis=ax)
            u = np.concatenate([lo, u, hi], axis=ax)
    return u


def mollify(u: np.ndarray, sigmas, truncate: float = 3.0) -> np.ndarray:
    """Truncated Gaussian smoothing with sigma given in cells per axis."""
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), (u.ndim,))
    if np.all(sigmas == 0):
        return np.array(u, dtype=np.float64)
    radius = int(max(int(truncate * s + 0.5) for s in sigmas)) + 1
    padded = _odd_pad(np.asarray(u, dtype=np.float64), radius)
    sm = ndimage.gaussian_filter(padded, sigmas, truncate=truncate, mode="nearest")
    core = tuple(slice(radius, radius + n) for n in u.shape)
    return sm[core]


def complex_hessian_det(u: np.ndarray, h) -> np.ndarray:
    """det of the 2x2 matrix d^2u/dz_i dzbar_j by central differences (interior cells)."""
    hx1, hy1, hx2, hy2 = h

    def d2(ax, hh):
        sl_p = [slice(1, -1)] * 4
        sl_m = [slice(1, -1)] * 4
        sl_p[ax] = slice(2, None)
        sl_m[ax] = slice(None, -2)
        c = u[(slice(1, -1),) * 4]
        return (u[tuple(sl_p)] - 2 * c + u[tuple(sl_m)]) / hh ** 2

    def dmix(a, b, ha, hb):
        def sh(sa, sb):
            s = [slice(1, -1)] * 4
            s[a] = slice(2, None) if sa > 0 else slice(None, -2)
            s[b] = slice(2, None) if sb > 0 else slice(None, -2)
            return u[tuple(s)]
        return (sh(1, 1) - sh(1, -1) - sh(-1, 1) + sh(-1, -1)) / (4 * ha * hb)

    h11 = 0.25 * (d2(0, hx1) + d2(1, hy1))
    h22 = 0.25 * (d2(2, hx2) + d2(3, hy2))
    re12 = 0.25 * (dmix(0, 2, hx1, hx2) + dmix(1, 3, hy1, hy2))
    im12 = 0.25 * (dmix(0, 3, hx1, hy2) - dmix(1, 2, hy1, hx2))
    det = np.zeros(u.shape)
    det[(slice(1, -1),) * 4] = h11 * h22 - (re12 ** 2 + im12 ** 2)
    return det


MA_CONSTANT = 2.0 * (2.0 / math.pi) ** 2


def _ma_raw(u: np.ndarray, slc: SliceSpec, mollify_h: float | None) -> np.ndarray:
    h = slc.spacing
    mh = 2.0 * min(h) if mollify_h is None else float(mollify_h)
    if mh < min(h) * (1 - 1e-12) and mh != 0:
        raise ValueError(f"mollify_h={mh} is below the grid spacing {min(h)}")
    um = mollify(u, [mh / hh for hh in h])
    return MA_CONSTANT * complex_hessian_det(um, h) * slc.cell_volume


def monge_ampere_2d(fld: Field, mollify_h: float | None = None) -> MeasureGrid:
    """(dd^c u)^2 cell masses of the mollified field; negative cells are clipped."""
    if fld.slice.m != 2:
        raise SliceError("monge_ampere_2d needs a two-dimensional slice")
    return MeasureGrid.from_raw(fld.slice, _ma_raw(fld.values, fld.slice, mollify_h))


def mixed_wedge(u: Field, v: Field, mollify_h: float | None = None) -> MeasureGrid:
    """dd^c u ^ dd^c v by polarization: (MA(u+v) - MA(u) - MA(v)) / 2."""
    if u.slice != v.slice:
        raise SliceError("mixed_wedge needs both fields on the same slice")
    if u.slice.m != 2:
        raise SliceError("mixed_wedge needs a two-dimensional slice")
    s = u.slice
    raw = 0.5 * (_ma_raw(u.values + v.values, s, mollify_h)
                 - _ma_raw(u.values, s, mollify_h) - _ma_raw(v.values, s, mollify_h))
    return MeasureGrid.from_raw(s, raw)


# ---------------------------------------------------------------------------
# masses and sets
# ---------------------------------------------------------------------------

def region_mask(slc: SliceSpec, region) -> np.ndarray:
    """A boolean cell mask from a mask, None (everything) or a predicate on slice coordinates."""
    if region is None:
        return np.ones(slc.shape, dtype=bool)
    if callable(region):
        return np.broadcast_to(np.asarray(region(*slc.coordinates()), dtype=bool), slc.shape)
    mask = np.asarray(region, dtype=bool)
    if mask.shape != slc.shape:
        raise SliceError("region mask does not match the slice")
    return mask


def mass(mg: MeasureGrid, region=None, signed: bool = False) -> float:
    mask = region_mask(mg.slice, region)
    arr = mg.raw if signed else mg.density
    return float(arr[mask].sum())


def components(fld: Field, predicate: Callable = None) -> tuple:
    """Face-connected components of {predicate(value)}; ids 1.. in raster-scan order.

    Returns (labels, count).  Label 0 marks cells outside the set.
    """
    vals = fld.values
    mask = np.asarray(predicate(vals) if predicate is not None else vals, dtype=bool)
    return label_mask(mask)


def label_mask(mask: np.ndarray) -> tuple:
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    labels, count = ndimage.label(mask, structure=structure)
    # ndimage already numbers in scan order; renumber defensively by first occurrence
    if count:
        flat = labels.ravel()
        first = np.full(count + 1, flat.size, dtype=np.int64)
        nz = np.flatnonzero(flat)
        np.minimum.at(first, flat[nz], nz)
        rank = np.empty(count + 1, dtype=np.int64)
        rank[0] = 0
        rank[1 + np.argsort(first[1:], kind="stable")] = np.arange(1, count + 1)
        labels = rank[labels]
    return labels, int(count)


def mass_equality_check(u: Field, v: Field, K, collar: int = 2) -> tuple:
    """Total dd^c masses of u and v over the slice, given u = v off K and near the edge."""
    if u.slice != v.slice or u.slice.m != 1:
        raise SliceError("mass_equality_check needs two fields on the same 1-d slice")
    inside = region_mask(u.slice, K)
    must_agree = ~inside
    must_agree[:collar, :] = must_agree[-collar:, :] = True
    must_agree[:, :collar] = must_agree[:, -collar:] = True
    if not np.array_equal(u.values[must_agree], v.values[must_agree]):
        raise ValueError("u and v differ outside K or inside the boundary collar")
    return ddc_1d(u).signed_total, ddc_1d(v).signed_total


def boundary_cells(mask: np.ndarray) -> np.ndarray:
    """Cells of ``mask`` with a face neighbour outside it, plus their outside neighbours."""
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    inner = mask & ~ndimage.binary_erosion(mask, structure, border_value=1)
    outer = ~mask & ndimage.binary_dilation(mask, structure)
    return inner | outer


def within_cells(mask: np.ndarray, k: int) -> np.ndarray:
    """Cells within Chebyshev distance k (in cells) of ``mask``."""
    if k <= 0:
        return mask.copy()
    structure = np.ones((3,) * mask.ndim, dtype=bool)
    return ndimage.binary_dilation(mask, structure, iterations=k)
