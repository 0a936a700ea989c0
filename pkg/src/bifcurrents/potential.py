"""Green functions, their critical maxima, the Lyapunov exponent and Bottcher coordinates."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _jit
from .family import (FamilySpec, Parameter, coefficient_table, coefficients,
                     critical_points, critical_table, escape_radii, escape_radius)

MAX_ITER = 2048
DEFAULT_TOL = 1e-12


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class GreenResult:
    value: float
    iterations: int
    escaped: bool


def green(spec: FamilySpec, p: Parameter, z: complex, tol: float = DEFAULT_TOL,
          max_iter: int = MAX_ITER) -> GreenResult:
    """g_{c,a}(z) = lim d^{-n} log max(1, |P^n(z)|), to absolute accuracy tol.

    Orbits that stay below the escape radius for ``max_iter`` steps are
    declared bounded (value 0, escaped False).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    coef = coefficients(spec, p)
    v, it, esc = _jit.green_point(coef, complex(z), escape_radius(spec, p), tol, max_iter)
    return GreenResult(float(v), int(it), bool(esc))


def green_table(coefs: np.ndarray, zs: np.ndarray, tol: float = DEFAULT_TOL,
                max_iter: int = MAX_ITER):
    """Row-wise Green values for coefficient rows and points; returns (values, escaped)."""
    coefs = np.ascontiguousarray(np.atleast_2d(coefs), dtype=np.complex128)
    zs = np.ascontiguousarray(np.broadcast_to(np.asarray(zs, dtype=np.complex128), (coefs.shape[0],)))
    n = coefs.shape[0]
    vals = np.empty(n)
    iters = np.empty(n, dtype=np.int64)
    esc = np.empty(n, dtype=np.bool_)
    _jit.green_batch(coefs, zs, escape_radii(coefs), tol, max_iter, vals, iters, esc)
    return vals, esc


def critical_greens(spec: FamilySpec, params: np.ndarray, tol: float = DEFAULT_TOL,
                    max_iter: int = MAX_ITER) -> np.ndarray:
    """(N, d-1) array of g_{c,a}(c_i) for parameter rows."""
    params = np.atleast_2d(np.asarray(params, dtype=np.complex128))
    coefs = coefficient_table(spec, params)
    crit = critical_table(spec, params)
    out = np.empty(crit.shape)
    for i in range(crit.shape[1]):
        out[:, i] = green_table(coefs, crit[:, i], tol, max_iter)[0]
    return out


def G(spec: FamilySpec, p: Parameter, tol: float = DEFAULT_TOL) -> float:
    """max_i g_{c,a}(c_i); zero exactly on the connectedness locus."""
    return max(green(spec, p, c, tol).value for c in critical_points(spec, p))


def G_I(spec: FamilySpec, p: Parameter, I: Sequence[int], tol: float = DEFAULT_TOL) -> float:
    """max of g_{c,a}(c_i) over the critical indices in I."""
    idx = check_indices(spec, I)
    crit = critical_points(spec, p)
    return max(green(spec, p, crit[i], tol).value for i in idx)


def check_indices(spec: FamilySpec, I: Sequence[int]) -> tuple:
    idx = tuple(int(i) for i in I)
    if not idx:
        raise ValueError("critical index set must be nonempty")
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise ValueError(f"critical indices must be strictly increasing, got {idx}")
    if idx[0] < 0 or idx[-1] > spec.d - 2:
        raise ValueError(f"critical indices must lie in 0..{spec.d - 2}, got {idx}")
    return idx


def lyapunov(spec: FamilySpec, p: Parameter, tol: float = DEFAULT_TOL) -> float:
    """L(c,a) = log d + sum_i g_{c,a}(c_i)."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    each = tol / (spec.d - 1)
    return math.log(spec.d) + sum(green(spec, p, c, each).value for c in critical_points(spec, p))


def lyapunov_table(spec: FamilySpec, params: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    return math.log(spec.d) + critical_greens(spec, params, tol / (spec.d - 1)).sum(axis=1)


def G_table(spec: FamilySpec, params: np.ndarray, I=None, tol: float = DEFAULT_TOL) -> np.ndarray:
    g = critical_greens(spec, params, tol)
    if I is not None:
        g = g[:, list(check_indices(spec, I))]
    return g.max(axis=1)


def bottcher(spec: FamilySpec, p: Parameter, z: complex, tol: float = DEFAULT_TOL) -> complex:
    """Bottcher coordinate psi(z) with psi(P(z)) = psi(z)^d and log|psi| = g.

    Normalized by psi(z) ~ d^{-1/(d-1)} z at infinity.  The orbit is pushed
    out until the product formula is in its asymptotic regime, then d-th
    roots are taken back along the orbit, each time choosing the branch
    closest to the asymptotic value d^{-1/(d-1)} z_k.
    """
    gz = green(spec, p, z, tol)
    Gp = G(spec, p, tol)
    if not gz.escaped or gz.value <= Gp:
        raise DomainError(f"z={z} is not in the basin where g > G (g={gz.value}, G={Gp})")
    d = spec.d
    coef = coefficients(spec, p)
    beta = d ** (-1.0 / (d - 1))
    s = float(np.sum(np.abs(coef[1:])) / abs(coef[0]))
    orbit = [complex(z)]
    # far enough out that every remaining factor is within tol of 1
    target = max(escape_radius(spec, p), 1e6 * (s + 1), 1.0 / tol)
    while abs(orbit[-1]) < target and len(orbit) < 200:
        orbit.append(complex(np.polyval(coef, orbit[-1])))
    far = orbit[-1]
    # psi(far) = beta * far * prod_k (d P(w_k) / w_k^d)^{d^{-k-1}}, all factors ~ 1
    psi = beta * far
    w = far
    scale = 1.0 / d
    rev = coef[::-1]
    for _ in range(60):
        # P(w) / w^d as a polynomial in 1/w, which cannot overflow
        ratio = d * complex(np.polyval(rev, 1.0 / w))
        if abs(ratio - 1) < 1e-17 or abs(w) > 1e100:
            break
        psi *= cmath.exp(scale * cmath.log(ratio))
        w = complex(np.polyval(coef, w))
        scale /= d
    for zk in reversed(orbit[:-1]):
        # choose among the d roots of psi the one nearest beta * zk
        r = cmath.exp(cmath.log(psi) / d)
        guess = beta * zk
        best = min((r * cmath.exp(2j * math.pi * j / d) for j in range(d)),
                   key=lambda x: abs(x - guess))
        psi = best
    return psi
