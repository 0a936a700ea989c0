"""Command-line front end.

    bifcurrents <subcommand> --config run.ini [--out DIR] [--threads N] [--dry-run] [--set sec.key=value]

The config is an INI file.  ``[run]`` holds ``degree`` and ``seed``, ``[slice]``
the parameter slice, and a section named after the subcommand holds its own
options.  Every run writes ``manifest.txt`` into the output directory; the
manifest is itself a config that reproduces the run.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import os
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__

COMMANDS = ("green", "mass", "pern", "equidist", "ma", "decompose", "connectivity")

DEFAULTS = {
    "green": {"quantity": "g", "index": "0", "tol": "1e-12"},
    "mass": {"indices": "all", "tol": "1e-12"},
    "pern": {"n": "2", "w": "0", "locus": "auto"},
    "equidist": {"n_min": "3", "n_max": "8", "w": "0", "png": "no"},
    "ma": {"mollify_h": "2", "tol_g": "1e-3"},
    "decompose": {"c": "", "a": "2", "dyn_resolution": "1024", "word_length": "8",
                  "num_words": "2000"},
    "connectivity": {"index": "0", "threshold": "1e-6"},
}


class ConfigError(ValueError):
    def __init__(self, field, msg):
        super().__init__(f"{field}: {msg}")
        self.field = field


@dataclass
class ExperimentConfig:
    command: str
    degree: int
    seed: int
    slice: object
    options: dict
    out: Path
    parser: configparser.ConfigParser


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _complex_list(text: str, field: str) -> list:
    text = text.strip()
    if not text:
        return []
    try:
        return [complex(x.strip().replace(" ", "").replace("i", "j")) for x in text.split(",")]
    except ValueError as exc:
        raise ConfigError(field, f"cannot parse complex list {text!r}") from exc


def _float_list(text: str, field: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(field, f"cannot parse number list {text!r}") from exc


def _int(sec, key, field=None) -> int:
    field = field or f"{sec.name}.{key}"
    try:
        return int(sec[key])
    except (KeyError, ValueError) as exc:
        raise ConfigError(field, f"expected an integer, got {sec.get(key)!r}") from exc


def _float(sec, key) -> float:
    try:
        return float(sec[key])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{sec.name}.{key}", f"expected a number, got {sec.get(key)!r}") from exc


def _build_slice(cp, degree):
    from .grid import SliceError, SliceSpec

    if not cp.has_section("slice"):
        return None
    sec = cp["slice"]
    try:
        axes = [int(x) for x in sec.get("axes", str(degree - 2)).split(",")]
        res = [int(float(x)) for x in sec.get("resolution", "64").split(",")]
    except ValueError as exc:
        raise ConfigError("slice", f"bad axes or resolution: {exc}") from exc
    m = len(axes)
    if any(a < 0 or a > degree - 2 for a in axes):
        raise ConfigError("slice.axes", f"parameter axes must lie in 0..{degree - 2}")
    origin = _complex_list(sec.get("origin", ""), "slice.origin") or [0j] * (degree - 1)
    if len(origin) != degree - 1:
        raise ConfigError("slice.origin", f"need {degree - 1} complex entries")
    bounds = []
    for k in range(m):
        suffix = "" if m == 1 else str(k)
        re = _float_list(sec.get(f"re{suffix}", "-3,3"), f"slice.re{suffix}")
        im = _float_list(sec.get(f"im{suffix}", "-3,3"), f"slice.im{suffix}")
        if len(re) != 2 or len(im) != 2:
            raise ConfigError(f"slice.re{suffix}", "bounds need exactly two numbers")
        bounds.append((tuple(re), tuple(im)))
    if len(res) == 1:
        res = res * (2 * m)
    basis = []
    for a in axes:
        e = [0j] * (degree - 1)
        e[a] = 1
        basis.append(tuple(e))
    try:
        return SliceSpec(m, tuple(origin), tuple(basis), tuple(bounds), tuple(res))
    except SliceError as exc:
        field = "slice.resolution" if "resolution" in str(exc) else "slice"
        raise ConfigError(field, str(exc)) from exc


def load_config(path, overrides=(), out=None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError("config", str(exc)) from exc
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError("--set", f"expected section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        sec, opt = key.rsplit(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp[sec][opt] = value
    return validate(cp, out)


def validate(cp: configparser.ConfigParser, out=None) -> ExperimentConfig:
    if not cp.has_section("run"):
        raise ConfigError("run", "missing [run] section")
    run = cp["run"]
    command = run.get("command", "").strip()
    if command not in COMMANDS:
        raise ConfigError("run.command", f"must be one of {', '.join(COMMANDS)}, got {command!r}")
    degree = _int(run, "degree")
    if degree < 2:
        raise ConfigError("run.degree", "degree must be >= 2")
    seed = _int(run, "seed") if "seed" in run else 0
    opts = dict(DEFAULTS[command])
    if cp.has_section(command):
        opts.update(cp[command])
    if not cp.has_section(command):
        cp.add_section(command)
    for k, v in opts.items():
        cp[command][k] = v
    slc = _build_slice(cp, degree)
    out_dir = Path(out if out is not None else run.get("out", "out"))
    cfg = ExperimentConfig(command, degree, seed, slc, opts, out_dir, cp)
    try:
        _check_command(cfg)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(command, f"bad option value: {exc}") from exc
    return cfg


def _check_command(cfg: ExperimentConfig) -> None:
    c, d, s, o = cfg.command, cfg.degree, cfg.slice, cfg.options
    needs_slice = c in ("green", "mass", "pern", "equidist", "ma", "connectivity")
    if needs_slice and s is None:
        raise ConfigError("slice", f"{c} needs a [slice] section")
    if c in ("mass", "connectivity", "equidist") and s.m != 1:
        raise ConfigError("slice.axes", f"{c} needs a one-dimensional slice")
    if c == "ma":
        if d != 3 or s.m != 2:
            raise ConfigError("slice.axes", "ma needs degree 3 and a two-dimensional slice")
    if c in ("green", "connectivity"):
        i = int(o["index"])
        if not 0 <= i <= d - 2:
            raise ConfigError(f"{c}.index", f"critical index must lie in 0..{d - 2}")
    if c == "green" and o["quantity"] not in ("g", "G", "L"):
        raise ConfigError("green.quantity", "must be g, G or L")
    if c in ("pern", "equidist"):
        from .cycles import MAX_ROOTS
        top = int(o["n"]) if c == "pern" else int(o["n_max"])
        low = int(o["n"]) if c == "pern" else int(o["n_min"])
        key = "pern.n" if c == "pern" else "equidist.n_max"
        if low < 1:
            raise ConfigError(key.replace("n_max", "n_min"), "period must be >= 1")
        if d ** top > MAX_ROOTS:
            raise ConfigError(key, f"d^n = {d ** top} exceeds the cap {MAX_ROOTS}")
        if c == "equidist" and low > top:
            raise ConfigError("equidist.n_min", "n_min must not exceed n_max")
        _complex_list(o["w"], f"{c}.w")
    if c == "decompose":
        cs = _complex_list(o["c"], "decompose.c")
        if len(cs) != d - 2:
            raise ConfigError("decompose.c", f"need {d - 2} marked critical points")
        _complex_list(o["a"], "decompose.a")
        if int(o["dyn_resolution"]) < 8:
            raise ConfigError("decompose.dyn_resolution", "resolution must be >= 8")


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def _write_table(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(x) if isinstance(x, float) else x for x in r])


def _fmt_c(z: complex) -> str:
    return repr(complex(z))


def _export_field(fld, out: Path, stem: str) -> list:
    from .fieldio import export
    export(fld, out / f"{stem}.bifg", "bin")
    export(fld, out / f"{stem}.csv", "csv")
    export(fld, out / f"{stem}.png", "png")
    return [f"{stem}.bifg", f"{stem}.csv", f"{stem}.png"]


def _cmd_green(cfg):
    from .family import FamilySpec
    from .grid import sample
    from .potential import G_table, critical_greens, lyapunov_table

    spec, o = FamilySpec(cfg.degree), cfg.options
    tol = float(o["tol"])
    q = o["quantity"]
    if q == "g":
        i = int(o["index"])
        f = lambda P: critical_greens(spec, P, tol)[:, i]  # noqa: E731
    elif q == "G":
        f = lambda P: G_table(spec, P, tol=tol)  # noqa: E731
    else:
        f = lambda P: lyapunov_table(spec, P, tol)  # noqa: E731
    fld = sample(cfg.slice, f, vectorized=True, label=q)
    return _export_field(fld, cfg.out, f"green_{q}")


def _cmd_mass(cfg):
    from .family import FamilySpec
    from .grid import ddc_1d, sample
    from .potential import critical_greens, lyapunov_table

    spec, o = FamilySpec(cfg.degree), cfg.options
    tol = float(o["tol"])
    idx = range(cfg.degree - 1) if o["indices"] == "all" else [int(x) for x in o["indices"].split(",")]
    rows = []
    for i in idx:
        fld = sample(cfg.slice, lambda P: critical_greens(spec, P, tol)[:, i], vectorized=True)
        mg = ddc_1d(fld)
        rows.append([f"T_{i}", mg.total, mg.signed_total, mg.negative_mass])
    fld = sample(cfg.slice, lambda P: lyapunov_table(spec, P, tol), vectorized=True)
    mg = ddc_1d(fld)
    rows.append(["T_bif", mg.total, mg.signed_total, mg.negative_mass])
    _write_table(cfg.out / "mass.csv", ["current", "mass", "signed_mass", "negative_mass"], rows)
    return ["mass.csv"]


def _cmd_pern(cfg):
    from .cycles import pern_locus_1d, pern_potential_table
    from .equidist import _order
    from .family import FamilySpec, coefficient_table
    from .grid import Field

    spec, o, slc = FamilySpec(cfg.degree), cfg.options, cfg.slice
    n = int(o["n"])
    ws = _complex_list(o["w"], "pern.w")
    coefs = coefficient_table(spec, slc.parameters(spec.d))
    vals, defect, _ = pern_potential_table(coefs, n, ws, _order(slc))
    files = []
    for k, w in enumerate(ws):
        files += _export_field(Field(slc, vals[:, k].reshape(slc.shape), f"ell_{n}"),
                               cfg.out, f"pern_n{n}_w{k}")
    want_locus = o["locus"] == "yes" or (o["locus"] == "auto" and slc.m == 1)
    if want_locus and slc.m == 1:
        rows = []
        for k, w in enumerate(ws):
            pts, res = pern_locus_1d(spec, slc, n, w)
            for t, r in zip(pts, res):
                p = slc.point(t)
                rows.append([k, _fmt_c(w), _fmt_c(t), " ".join(_fmt_c(x) for x in p), float(r)])
        _write_table(cfg.out / "locus.csv", ["w_index", "w", "t", "parameter", "residual"], rows)
        files.append("locus.csv")
    _write_table(cfg.out / "defect.csv", ["cells_with_defect"], [[int((defect > 0).sum())]])
    return files + ["defect.csv"]


def _cmd_equidist(cfg):
    from .equidist import convergence_report, error_field
    from .family import FamilySpec
    from .fieldio import export

    spec, o = FamilySpec(cfg.degree), cfg.options
    ws = _complex_list(o["w"], "equidist.w")
    periods = range(int(o["n_min"]), int(o["n_max"]) + 1)
    reps = convergence_report(spec, cfg.slice, periods, ws)
    rows = []
    for r in reps:
        clipped = r.clipped or [r.clipped_fraction] * len(r.periods)
        for n, e, m, c in zip(r.periods, r.l1_errors, r.measure_errors, clipped):
            rows.append([n, _fmt_c(r.w), float(e), float(m), float(c)])
    _write_table(cfg.out / "equidist.csv",
                 ["n", "w", "l1_error", "measure_error", "clipped_fraction"], rows)
    (cfg.out / "summary.txt").write_text("\n\n".join(r.summary() for r in reps) + "\n")
    files = ["equidist.csv", "summary.txt"]
    if o["png"] == "yes":
        for k, w in enumerate(ws):
            export(error_field(spec, cfg.slice, periods[-1], w), cfg.out / f"error_w{k}.png", "png")
            files.append(f"error_w{k}.png")
    return files


def _cmd_ma(cfg):
    from .family import FamilySpec
    from .grid import boundary_cells, mixed_wedge, monge_ampere_2d, sample, within_cells
    from .potential import critical_greens

    spec, o, slc = FamilySpec(cfg.degree), cfg.options, cfg.slice
    h = float(o["mollify_h"]) * min(slc.spacing)
    gc = critical_greens(spec, slc.parameters(spec.d))
    g0 = sample(slc, lambda P: gc[:, 0], vectorized=True, label="g0")
    g1 = sample(slc, lambda P: gc[:, 1], vectorized=True, label="g1")
    Gf = sample(slc, lambda P: gc.max(axis=1), vectorized=True, label="G")
    ma = monge_ampere_2d(Gf, h)
    wedge = mixed_wedge(g0, g1, h)
    near = within_cells(boundary_cells(Gf.values < float(o["tol_g"])), 2)
    rows = [["MA(G)", ma.total, ma.negative_mass, float(ma.density[near].sum())],
            ["mixed(g0,g1)", wedge.total, wedge.negative_mass, float(wedge.density[near].sum())]]
    _write_table(cfg.out / "ma.csv", ["measure", "mass", "negative_mass", "mass_near_boundary"], rows)
    return ["ma.csv"] + _export_field(Gf, cfg.out, "G")


def _cmd_decompose(cfg):
    from .family import FamilySpec, Parameter
    from .shift import decompose, decomposition_check

    spec, o = FamilySpec(cfg.degree), cfg.options
    p = Parameter(tuple(_complex_list(o["c"], "decompose.c")), _complex_list(o["a"], "decompose.a")[0])
    D = decompose(spec, p, int(o["dyn_resolution"]), cfg.seed)
    D.to_csv(cfg.out / "decomposition.csv")
    D.to_png(cfg.out / "masks.png")
    fns = {"re": lambda z: z.real, "im": lambda z: z.imag, "abs2": lambda z: np.abs(z) ** 2}
    rows = []
    for name, f in fns.items():
        err = decomposition_check(spec, p, [f], int(o["word_length"]), int(o["num_words"]),
                                  cfg.seed, decomp=D)
        rows.append([name, err])
    _write_table(cfg.out / "decomposition_check.csv", ["test_function", "error"], rows)
    return ["decomposition.csv", "masks.png", "decomposition_check.csv"]


def _cmd_connectivity(cfg):
    from .family import FamilySpec
    from .grid import components, sample
    from .potential import critical_greens

    spec, o = FamilySpec(cfg.degree), cfg.options
    i, thr = int(o["index"]), float(o["threshold"])
    fld = sample(cfg.slice, lambda P: critical_greens(spec, P)[:, i], vectorized=True)
    _, count = components(fld, lambda v: v > thr)
    _write_table(cfg.out / "connectivity.csv", ["index", "threshold", "components"], [[i, thr, count]])
    return ["connectivity.csv"]


RUNNERS = {
    "green": _cmd_green, "mass": _cmd_mass, "pern": _cmd_pern, "equidist": _cmd_equidist,
    "ma": _cmd_ma, "decompose": _cmd_decompose, "connectivity": _cmd_connectivity,
}


def manifest_text(cfg: ExperimentConfig, files=()) -> str:
    import numba
    import scipy

    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict({s: dict(cfg.parser[s]) for s in cfg.parser.sections() if s != "manifest"})
    cp["run"]["command"] = cfg.command
    cp["run"]["seed"] = str(cfg.seed)
    cp["manifest"] = {
        "bifcurrents": __version__, "python": platform.python_version(),
        "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__,
        "seed": str(cfg.seed), "outputs": ",".join(files),
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def run(cfg: ExperimentConfig) -> list:
    np.random.seed(cfg.seed)
    cfg.out.mkdir(parents=True, exist_ok=True)
    files = RUNNERS[cfg.command](cfg)
    (cfg.out / "manifest.txt").write_text(manifest_text(cfg, files))
    return files


def _set_threads(n):
    if n is None:
        env = os.environ.get("BIFCURRENTS_THREADS")
        n = int(env) if env else None
    if n is not None:
        if n < 1:
            raise ConfigError("threads", "must be >= 1")
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="bifcurrents", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True)
    ap.add_argument("--out")
    ap.add_argument("--threads", type=int)
    ap.add_argument("--dry-run", action="store_true")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = ap.parse_args(argv)
    try:
        overrides = [f"run.command={args.command}"] + args.set
        cfg = load_config(args.config, overrides, args.out)
        _set_threads(args.threads)
    except ConfigError as exc:
        print(f"bifcurrents: invalid config: {exc}", file=sys.stderr)
        return 2
    if args.dry_run:
        print(f"config ok: {cfg.command}, degree {cfg.degree}, output {cfg.out}")
        return 0
    try:
        files = run(cfg)
    except Exception as exc:  # noqa: BLE001 - reported with module context
        mod = getattr(exc, "__module__", None) or type(exc).__module__
        print(f"bifcurrents: {cfg.command} failed in {mod}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1
    print("\n".join(str(cfg.out / f) for f in files))
    return 0


if __name__ == "__main__":
    sys.exit(main())
