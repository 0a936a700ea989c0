import numpy as np
import pytest

from bifcurrents.fieldio import FieldFormatError, export, import_field, read_csv
from bifcurrents.grid import Field, SliceSpec, ddc_1d


@pytest.mark.parametrize("seed,m", [(0, 1), (1, 1), (2, 2)])
def test_bin_roundtrip(tmp_path, seed, m):
    rng = np.random.default_rng(seed)
    if m == 1:
        slc = SliceSpec.line(2, 0, (-1.5, 2), (0, 3), (8, 12))
    else:
        slc = SliceSpec.plane(3, (0, 1), (((-1, 1), (-2, 2)), ((0, 1), (0, 0.5))), (8, 9, 10, 11))
    vals = rng.standard_normal(slc.shape)
    vals.flat[3] = -np.inf
    f = Field(slc, vals, "x")
    path = tmp_path / "f.bifg"
    export(f, path)
    g = import_field(path)
    assert g.slice.bounds == slc.bounds and g.slice.resolution == slc.resolution
    expected = np.where(np.isfinite(vals), vals, np.nan)
    assert np.array_equal(g.values, expected, equal_nan=True)
    export(g, tmp_path / "g.bifg")
    assert (tmp_path / "g.bifg").read_bytes() == path.read_bytes()


def test_header_layout(tmp_path):
    slc = SliceSpec.line(2, 0, (0, 1), (0, 1), 8)
    export(Field(slc, np.zeros((8, 8))), tmp_path / "a.bifg")
    raw = (tmp_path / "a.bifg").read_bytes()
    assert raw[:4] == b"BIFG"
    assert int.from_bytes(raw[4:8], "little") == 1 and raw[8] == 1
    assert len(raw) == 9 + 40 + 64 * 8


def test_malformed(tmp_path):
    p = tmp_path / "bad.bifg"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(FieldFormatError) as e:
        import_field(p)
    assert e.value.offset == 0
    slc = SliceSpec.line(2, 0, (0, 1), (0, 1), 8)
    export(Field(slc, np.zeros((8, 8))), p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FieldFormatError) as e:
        import_field(p)
    assert e.value.offset == 49


def test_csv_and_png(tmp_path):
    slc = SliceSpec.line(2, 0, (0, 1), (0, 1), 8)
    t = slc.coordinates()[0]
    f = Field(slc, np.abs(t) ** 2)
    export(f, tmp_path / "a.csv", "csv")
    head = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert head == "axis0_re,axis0_im,value"
    tab = read_csv(tmp_path / "a.csv")
    np.testing.assert_allclose(tab[:, 0] ** 2 + tab[:, 1] ** 2, tab[:, 2])
    export(f, tmp_path / "a.png", "png")
    export(ddc_1d(f), tmp_path / "m.png", "png", log_scale=True, cmap="gray")
    assert (tmp_path / "a.png").read_bytes()[:4] == b"\x89PNG"
    with pytest.raises(ValueError):
        export(f, tmp_path / "a.x", "tiff")
