"""Reading and writing sampled fields.

Binary layout (little-endian)::

    b"BIFG"  u32 version=1  u8 m
    per complex axis: f64 min_re, f64 max_re, f64 min_im, f64 max_im, u32 res_re, u32 res_im
    f64 values, row-major over (axis0_re, axis0_im[, axis1_re, axis1_im]); NaN = flagged cell

The binary file keeps bounds and values only; origin and basis come back as
the coordinate slice (origin 0, standard basis of C^m).
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .grid import Field, MeasureGrid, SliceSpec

MAGIC = b"BIFG"
VERSION = 1
_HEAD = struct.Struct("<4sIB")
_AXIS = struct.Struct("<ddddII")


class FieldFormatError(ValueError):
    def __init__(self, msg, offset):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


def _values(obj) -> tuple:
    if isinstance(obj, Field):
        return obj.slice, obj.values, obj.label
    if isinstance(obj, MeasureGrid):
        return obj.slice, obj.density, "measure"
    raise TypeError(f"cannot export {type(obj).__name__}")


def export(obj, path, format: str = "bin", *, cmap: str = "viridis", log_scale: bool = False) -> None:
    path = Path(path)
    slc, vals, label = _values(obj)
    if format == "bin":
        _write_bin(path, slc, vals)
    elif format == "csv":
        _write_csv(path, slc, vals)
    elif format == "png":
        _write_png(path, slc, vals, cmap, log_scale)
    else:
        raise ValueError(f"unknown format {format!r}; expected bin, csv or png")


def _write_bin(path, slc: SliceSpec, vals: np.ndarray) -> None:
    out = np.where(np.isfinite(vals), vals, np.nan).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, slc.m))
        for k, (re, im) in enumerate(slc.bounds):
            fh.write(_AXIS.pack(re[0], re[1], im[0], im[1],
                                slc.resolution[2 * k], slc.resolution[2 * k + 1]))
        fh.write(np.ascontiguousarray(out).tobytes(order="C"))


def import_field(path, label: str | None = None) -> Field:
    """Read a binary field written by :func:`export`."""
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise FieldFormatError("truncated header", len(data))
    magic, version, m = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FieldFormatError(f"unsupported version {version}", 4)
    if m not in (1, 2):
        raise FieldFormatError(f"bad slice dimension {m}", 8)
    off = _HEAD.size
    bounds, res = [], []
    for _ in range(m):
        if len(data) < off + _AXIS.size:
            raise FieldFormatError("truncated axis header", off)
        r0, r1, i0, i1, nr, ni = _AXIS.unpack_from(data, off)
        bounds.append(((r0, r1), (i0, i1)))
        res += [nr, ni]
        off += _AXIS.size
    count = int(np.prod(res))
    if len(data) - off != 8 * count:
        raise FieldFormatError(f"expected {8 * count} value bytes, found {len(data) - off}", off)
    vals = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(res)
    basis = tuple(tuple(1.0 if i == k else 0.0 for i in range(m)) for k in range(m))
    slc = SliceSpec(m, (0j,) * m, basis, tuple(bounds), tuple(res))
    return Field(slc, vals.astype(np.float64), Path(path).stem if label is None else label)


def _write_csv(path, slc: SliceSpec, vals: np.ndarray) -> None:
    names = []
    for k in range(slc.m):
        names += [f"axis{k}_re", f"axis{k}_im"]
    grids = np.meshgrid(*slc.axis_centers(), indexing="ij")
    cols = [g.ravel() for g in grids]
    flat = vals.ravel()
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(names + ["value"])
        for i in range(flat.size):
            wr.writerow([repr(float(c[i])) for c in cols] + [repr(float(flat[i]))])


def read_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _write_png(path, slc: SliceSpec, vals: np.ndarray, cmap: str, log_scale: bool) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    img = np.asarray(vals, dtype=float)
    if slc.m == 2:
        # marginal over the second complex axis
        img = np.nansum(np.where(np.isfinite(img), img, 0.0), axis=(2, 3))
    if log_scale:
        finite = img[np.isfinite(img)]
        lo = finite.min() if finite.size else 0.0
        img = np.log1p(img - lo)
    img = np.where(np.isfinite(img), img, np.nan)
    # rows = imaginary axis, top = largest imaginary part
    plt.imsave(path, np.flipud(img.T), cmap="gray" if cmap == "gray" else cmap, origin="upper")
