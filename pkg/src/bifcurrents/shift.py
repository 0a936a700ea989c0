"""Symbolic dynamics at escape parameters.

When some critical point escapes, U_0 = {g < d G} is a disc and its preimage
U_1 = {g < G} splits into components V_1..V_ell, each mapped onto U_0 by P
with some degree d_i.  Words over {1..ell} then index pieces of the
equilibrium measure: pulling delta_z back through V_{eps_{n-1}}, ..., V_{eps_0}
(in that order) gives a finite cloud, and averaging those clouds against the
product weights prod d_{eps_i}/d reproduces d^{-n} (P^n)^* delta_z exactly.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .family import FamilySpec, Parameter, coefficients, critical_points, escape_radius
from .grid import label_mask
from .potential import DomainError, G, green, green_table

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 1024
BOX_PADDING = 1.2
PINCH_RADIUS = 3.0  # pixels cut around critical points lying on {g = G}
LEVEL_TOL = 1e-9
MAX_RETRIES = 10
MAX_CLOUD = 100_000
RASTER_TOL = 1e-10
RASTER_ITER = 1024


class DecompositionError(RuntimeError):
    pass


class CloudError(RuntimeError):
    def __init__(self, msg, step=None):
        super().__init__(msg if step is None else f"pullback step {step}: {msg}")
        self.step = step


@dataclass(frozen=True)
class Component:
    """One piece V_i of U_1: pixel bounding box (rows i0:i1, cols j0:j1), cropped mask, degree."""

    bbox: tuple
    mask: np.ndarray
    degree: int


@dataclass(frozen=True)
class Raster:
    """Square pixel grid on the dynamical plane; pixel (i, j) is centred at x0 + (i+1/2)h + i(y0 + (j+1/2)h)."""

    x0: float
    y0: float
    h: float
    n: int

    def centres(self) -> np.ndarray:
        t = (np.arange(self.n) + 0.5) * self.h
        return (self.x0 + t)[:, None] + 1j * (self.y0 + t)[None, :]

    def index(self, z: np.ndarray):
        z = np.asarray(z)
        i = np.floor((z.real - self.x0) / self.h).astype(np.int64)
        j = np.floor((z.imag - self.y0) / self.h).astype(np.int64)
        inside = (i >= 0) & (i < self.n) & (j >= 0) & (j < self.n)
        return i, j, inside


@dataclass(frozen=True)
class BranchDecomposition:
    parameter: Parameter
    d: int
    G_value: float
    ell: int
    components: tuple
    q: int
    raster: Raster
    labels: np.ndarray   # 0 outside U_1, i on V_i
    grown: np.ndarray    # labels after a one-pixel dilation; -1 where dilations overlap
    u0: np.ndarray       # U_0 mask
    u1: np.ndarray       # U_1 mask (before the pinch cut)

    @property
    def degrees(self) -> tuple:
        return tuple(c.degree for c in self.components)

    def mask(self, i: int) -> np.ndarray:
        """Full-raster mask of V_i (1-based)."""
        return self.labels == i

    def locate(self, z) -> np.ndarray:
        """Component index (1..ell) of each point; 0 outside every mask, -1 if ambiguous."""
        i, j, inside = self.raster.index(z)
        out = np.zeros(np.shape(z), dtype=np.int64)
        ii, jj = np.where(inside, i, 0), np.where(inside, j, 0)
        lab = np.where(inside, self.labels[ii, jj], 0)
        grown = np.where(inside, self.grown[ii, jj], 0)
        out[...] = np.where(lab > 0, lab, grown)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["component", "degree", "i0", "i1", "j0", "j1", "pixels",
                         "G", "ell", "q", "d"])
            for k, c in enumerate(self.components, 1):
                wr.writerow([k, c.degree, *c.bbox, int(c.mask.sum()), repr(self.G_value),
                             self.ell, self.q, self.d])

    def to_png(self, path) -> None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        img = np.where(self.u0, 0.5, 0.0) + self.labels
        plt.imsave(path, np.flipud(img.T), cmap="viridis")


@dataclass(frozen=True)
class SymbolWord:
    symbols: tuple
    ell: int | None = None

    def __post_init__(self):
        syms = tuple(int(s) for s in self.symbols)
        object.__setattr__(self, "symbols", syms)
        top = self.ell if self.ell is not None else max(syms, default=1)
        if any(s < 1 or s > top for s in syms):
            raise ValueError(f"symbols must lie in 1..{top}, got {syms}")

    def __len__(self):
        return len(self.symbols)

    def shift(self) -> "SymbolWord":
        return SymbolWord(self.symbols[1:], self.ell)


@dataclass(frozen=True)
class WeightedCloud:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_1d(np.asarray(self.points, dtype=np.complex128))
        wts = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if pts.shape != wts.shape:
            raise ValueError("points and weights must have the same length")
        if (wts < 0).any() or abs(wts.sum() - 1) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    def integrate(self, f: Callable) -> float:
        return float(np.sum(self.weights * np.asarray(f(self.points), dtype=float)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["re", "im", "weight"])
            for z, w in zip(self.points, self.weights):
                wr.writerow([repr(float(z.real)), repr(float(z.imag)), repr(float(w))])


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------

def _raster(spec, p, resolution):
    half = BOX_PADDING * escape_radius(spec, p)
    ras = Raster(-half, -half, 2 * half / resolution, resolution)
    coef = coefficients(spec, p)
    zs = ras.centres().ravel()
    coefs = np.broadcast_to(coef, (zs.size, coef.size))
    g, _ = green_table(coefs, zs, RASTER_TOL, RASTER_ITER)
    return ras, g.reshape(resolution, resolution)


def _disc(ras: Raster, z: complex, radius_px: float) -> np.ndarray:
    c = ras.centres()
    return np.abs(c - z) <= radius_px * ras.h


def preimages(coef: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """All solutions of P(z) = y for each y, shape (len(ys), deg); companion eigenvalues then Newton."""
    ys = np.atleast_1d(np.asarray(ys, dtype=np.complex128))
    deg = coef.size - 1
    monic = coef[1:] / coef[0]
    comp = np.zeros((ys.size, deg, deg), dtype=np.complex128)
    comp[:, 0, :] = -monic
    comp[:, 0, -1] += ys / coef[0]
    if deg > 1:
        comp[:, np.arange(1, deg), np.arange(deg - 1)] = 1.0
    roots = np.linalg.eigvals(comp)
    dcoef = np.polyder(coef)
    for _ in range(3):
        f = np.polyval(coef, roots) - ys[:, None]
        df = np.polyval(dcoef, roots)
        step = np.where(df != 0, f / np.where(df != 0, df, 1), 0)
        roots = roots - step
    return roots


def _test_point(rng, ras, g, Gv):
    cand = np.flatnonzero(((g <= 0.5 * Gv) & (g > 0)).ravel())
    if cand.size == 0:
        cand = np.flatnonzero((g <= 0.5 * Gv).ravel())
    k = cand[rng.integers(cand.size)]
    i, j = np.unravel_index(k, g.shape)
    jitter = (rng.random(2) - 0.5) * ras.h
    return complex(ras.x0 + (i + 0.5) * ras.h + jitter[0], ras.y0 + (j + 0.5) * ras.h + jitter[1])


def decompose(spec: FamilySpec, p: Parameter, dyn_resolution: int = DEFAULT_RESOLUTION,
              rng_seed: int = 0) -> BranchDecomposition:
    """Split U_1 = {g < G} into its components and find the degree of P on each."""
    p = p.check(spec)
    d = spec.d
    Gv = G(spec, p)
    if not Gv > 0:
        raise DomainError("decompose needs an escape parameter (G > 0)")
    crit = critical_points(spec, p)
    gc = np.array([green(spec, p, c).value for c in crit])
    on_level = np.abs(gc - Gv) <= LEVEL_TOL * max(1.0, Gv)
    # a critical point strictly between the two regimes cannot be classified from pixels
    q = int(np.sum(gc < Gv * (1 - 1e-6)))
    if q + int(on_level.sum()) != len(crit):
        raise DecompositionError("critical point too close to the level {g = G}")

    ras, g = _raster(spec, p, dyn_resolution)
    u0 = g < d * Gv
    u1 = g < Gv
    cut = u1.copy()
    for c, lv in zip(crit, on_level):
        if lv:
            cut &= ~_disc(ras, c, PINCH_RADIUS)
    labels, count = label_mask(cut)

    rng = np.random.default_rng(rng_seed)
    coef = coefficients(spec, p)
    structure = ndimage.generate_binary_structure(2, 1)
    grown = np.zeros_like(labels)
    for k in range(1, count + 1):
        dil = ndimage.binary_dilation(labels == k, structure) & (labels == 0)
        grown = np.where(dil & (grown != 0), -1, np.where(dil & (grown == 0), k, grown))
    grown = np.where(labels > 0, labels, grown)

    for attempt in range(MAX_RETRIES):
        y = _test_point(rng, ras, g, Gv)
        roots = preimages(coef, np.array([y]))[0]
        i, j, inside = ras.index(roots)
        if not inside.all():
            continue
        lab = np.where(labels[i, j] > 0, labels[i, j], grown[i, j])
        if (lab <= 0).any():
            log.info("decompose: test point %s has a preimage off the masks, retrying", y)
            continue
        counts = np.bincount(lab, minlength=count + 1)[1:]
        break
    else:
        raise DecompositionError(f"no clean test point after {MAX_RETRIES} attempts")

    # pixel slivers carry no preimages; true components always do
    keep = [k + 1 for k in range(count) if counts[k] > 0]
    remap = np.zeros(count + 1, dtype=np.int64)
    remap[keep] = np.arange(1, len(keep) + 1)
    labels = remap[labels]
    grown = np.where(grown > 0, remap[np.maximum(grown, 0)], grown)
    if len(keep) < count:
        log.info("decompose: dropped %d pixel slivers", count - len(keep))

    comps = []
    for new, old in enumerate(keep, 1):
        m = labels == new
        ii, jj = np.nonzero(m)
        i0, i1, j0, j1 = ii.min(), ii.max() + 1, jj.min(), jj.max() + 1
        comps.append(Component((int(i0), int(i1), int(j0), int(j1)), m[i0:i1, j0:j1].copy(),
                               int(counts[old - 1])))
    for a in (labels, grown, u0, u1):
        a.setflags(write=False)
    return BranchDecomposition(p, d, float(Gv), len(comps), tuple(comps), q, ras,
                               labels, grown, u0, u1)


# ---------------------------------------------------------------------------
# the d-measure on words
# ---------------------------------------------------------------------------

def nu_weight_exact(decomp: BranchDecomposition, word: SymbolWord) -> Fraction:
    _check_word(decomp, word)
    out = Fraction(1)
    for s in word.symbols:
        out *= Fraction(decomp.degrees[s - 1], decomp.d)
    return out


def nu_weight(decomp: BranchDecomposition, word: SymbolWord) -> float:
    """prod d_{eps_i} / d^n."""
    return float(nu_weight_exact(decomp, word))


def _check_word(decomp, word):
    if any(s > decomp.ell for s in word.symbols):
        raise ValueError(f"word {word.symbols} uses symbols beyond ell={decomp.ell}")


def sample_nu(decomp: BranchDecomposition, length: int, rng_seed) -> SymbolWord:
    """A word with i.i.d. symbols, P(i) = d_i / d."""
    if length < 0:
        raise ValueError("length must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    probs = np.array(decomp.degrees, dtype=float) / decomp.d
    syms = rng.choice(decomp.ell, size=length, p=probs) + 1
    return SymbolWord(tuple(int(s) for s in syms), decomp.ell)


def all_words(ell: int, length: int):
    for syms in itertools.product(range(1, ell + 1), repeat=length):
        yield SymbolWord(syms, ell)


# ---------------------------------------------------------------------------
# clouds
# ---------------------------------------------------------------------------

def _check_start(spec, p, decomp, z0):
    gz = green(spec, p, z0)
    # rounding pushes orbits of repelling points in K off eventually; g at that level counts as 0
    if not (gz.escaped and gz.value > LEVEL_TOL):
        raise DomainError(f"z0={z0} lies in the filled Julia set")
    if decomp is not None and not gz.value < decomp.d * decomp.G_value:
        raise DomainError(f"z0={z0} lies outside U_0")


def mu_epsilon_cloud(spec: FamilySpec, p: Parameter, decomp: BranchDecomposition,
                     word: SymbolWord, z0: complex) -> WeightedCloud:
    """Pull delta_{z0} back through V_{eps_{n-1}}, then V_{eps_{n-2}}, ..., then V_{eps_0}."""
    _check_word(decomp, word)
    size = math.prod(decomp.degrees[s - 1] for s in word.symbols)
    if size > MAX_CLOUD:
        raise CloudError(f"cloud of {size} points exceeds the cap {MAX_CLOUD}")
    _check_start(spec, p, decomp, z0)
    coef = coefficients(spec, p)
    pts = np.array([complex(z0)])
    for step in range(len(word) - 1, -1, -1):
        s = word.symbols[step]
        roots = preimages(coef, pts).ravel()
        where = decomp.locate(roots)
        if (where == 0).any() or (where == -1).any():
            raise CloudError("a preimage falls outside every mask (raster too coarse)", step)
        chosen = roots[where == s]
        want = pts.size * decomp.degrees[s - 1]
        if chosen.size != want:
            raise CloudError(f"found {chosen.size} preimages in V_{s}, expected {want}", step)
        pts = chosen
    return WeightedCloud(pts, np.full(pts.size, 1.0 / pts.size))


def brolin_cloud(spec: FamilySpec, p: Parameter, n: int, z0: complex) -> WeightedCloud:
    """All d^n solutions of P^n(z) = z0 with equal weights."""
    if spec.d ** n > MAX_CLOUD:
        raise CloudError(f"d^n = {spec.d ** n} exceeds the cap {MAX_CLOUD}")
    _check_start(spec, p, None, z0)
    coef = coefficients(spec, p)
    pts = np.array([complex(z0)])
    for _ in range(n):
        pts = preimages(coef, pts).ravel()
    return WeightedCloud(pts, np.full(pts.size, 1.0 / pts.size))


def default_start(decomp: BranchDecomposition, rng_seed: int = 0) -> complex:
    """A random pixel centre of U_0 outside U_1, so G <= g(z0) < d G."""
    rng = np.random.default_rng(rng_seed)
    ring = decomp.u0 & ~decomp.u1 & ~ndimage.binary_dilation(decomp.u1)
    cand = np.flatnonzero(ring.ravel())
    if cand.size == 0:
        raise DecompositionError("U_0 minus U_1 is empty at this resolution")
    return complex(decomp.raster.centres().ravel()[cand[rng.integers(cand.size)]])


def decomposition_check(spec: FamilySpec, p: Parameter, testfns: Sequence[Callable],
                        word_length: int, num_words: int, rng_seed: int = 0,
                        decomp: BranchDecomposition | None = None, z0: complex | None = None,
                        dyn_resolution: int = DEFAULT_RESOLUTION) -> float:
    """max_f |E_nu[int f d(mu_eps cloud)] - int f d(brolin cloud)| at depth word_length.

    The nu-average is estimated by stratified sampling: words are grouped by
    their first k symbols, with k the largest depth such that ell^k <= num_words;
    each prefix contributes its exact nu mass times the mean over
    num_words // ell^k suffixes drawn i.i.d. from nu.  When every word fits in
    the budget (k = word_length) the average is exact.
    """
    if decomp is None:
        decomp = decompose(spec, p, dyn_resolution, rng_seed)
    if z0 is None:
        z0 = default_start(decomp, rng_seed)
    n = int(word_length)
    ell = decomp.ell
    k = 0
    while k < n and ell ** (k + 1) <= num_words:
        k += 1
    per_prefix = 1 if k == n else max(1, num_words // ell ** k)
    rng = np.random.default_rng(rng_seed)
    probs = np.array(decomp.degrees, dtype=float) / decomp.d
    cache: dict = {}

    def integrals(word):
        if word.symbols not in cache:
            cloud = mu_epsilon_cloud(spec, p, decomp, word, z0)
            cache[word.symbols] = np.array([cloud.integrate(f) for f in testfns])
        return cache[word.symbols]

    total = np.zeros(len(testfns))
    for prefix in all_words(ell, k):
        wt = nu_weight(decomp, prefix)
        if wt == 0:
            continue
        acc = np.zeros(len(testfns))
        for _ in range(per_prefix):
            suffix = tuple(int(s) for s in rng.choice(ell, size=n - k, p=probs) + 1)
            acc += integrals(SymbolWord(prefix.symbols + suffix, ell))
        total += wt * acc / per_prefix
    brolin = brolin_cloud(spec, p, n, z0)
    ref = np.array([brolin.integrate(f) for f in testfns])
    return float(np.max(np.abs(total - ref))) if len(testfns) else 0.0
