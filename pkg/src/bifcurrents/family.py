"""Critically marked polynomial family.

    P_{c,a}(z) = z^d/d + sum_{j=2}^{d-1} (-1)^{d-j} s_{d-j}(c) z^j / j + a^d

where s_k is the k-th elementary symmetric polynomial of the marked
critical points c = (c_1, ..., c_{d-2}).  With this normalization
P'(z) = z * prod(z - c_i), so the critical points are 0, c_1, ..., c_{d-2}.

A parameter is stored either as a :class:`Parameter` or, for batch work,
as a complex vector (c_1, ..., c_{d-2}, a) of length d - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class FamilySpec:
    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"degree must be an integer >= 2, got {self.d!r}")

    @property
    def dim(self) -> int:
        """Complex dimension of the parameter space."""
        return self.d - 1


@dataclass(frozen=True)
class Parameter:
    c: tuple = ()
    a: complex = 0j

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(complex(x) for x in self.c))
        object.__setattr__(self, "a", complex(self.a))

    def check(self, spec: FamilySpec) -> "Parameter":
        if len(self.c) != spec.d - 2:
            raise ValueError(
                f"degree {spec.d} needs {spec.d - 2} marked critical points, got {len(self.c)}"
            )
        return self

    def vector(self) -> np.ndarray:
        return np.array(self.c + (self.a,), dtype=np.complex128)

    @classmethod
    def from_vector(cls, v: Sequence[complex]) -> "Parameter":
        v = [complex(x) for x in v]
        return cls(c=tuple(v[:-1]), a=v[-1])


def coefficients(spec: FamilySpec, p: Parameter) -> np.ndarray:
    """Coefficients of P_{c,a}, highest degree first (length d + 1)."""
    p.check(spec)
    return coefficient_table(spec, p.vector()[None, :])[0]


def coefficient_table(spec: FamilySpec, params: np.ndarray) -> np.ndarray:
    """Vectorized :func:`coefficients` for an (N, d-1) array of parameter vectors."""
    d = spec.d
    params = np.atleast_2d(np.asarray(params, dtype=np.complex128))
    if params.shape[1] != d - 1:
        raise ValueError(f"parameter vectors must have length {d - 1}")
    n = params.shape[0]
    # prod(z - c_i), highest first: entry k is (-1)^k s_k(c)
    crit = np.zeros((n, d - 1), dtype=np.complex128)
    crit[:, 0] = 1.0
    for i in range(d - 2):
        ci = params[:, i]
        crit[:, 1:] = crit[:, 1:] - ci[:, None] * crit[:, :-1]
    coef = np.zeros((n, d + 1), dtype=np.complex128)
    # integrate z * prod(z - c_i): term (-1)^k s_k z^{d-1-k} -> z^{d-k}/(d-k)
    for k in range(d - 1):
        coef[:, k] = crit[:, k] / (d - k)
    coef[:, d] = params[:, -1] ** d
    return coef


def evaluate(spec: FamilySpec, p: Parameter, z):
    """P_{c,a}(z); z may be a scalar or an array."""
    return np.polyval(coefficients(spec, p), z)


def derivative(spec: FamilySpec, p: Parameter, z):
    """P'_{c,a}(z) = z * prod(z - c_i)."""
    p.check(spec)
    z = np.asarray(z, dtype=np.complex128)
    out = z.copy()
    for ci in p.c:
        out = out * (z - ci)
    return out[()] if out.ndim == 0 else out


def critical_points(spec: FamilySpec, p: Parameter) -> tuple:
    """(0, c_1, ..., c_{d-2}); index 0 is the critical point at the origin."""
    p.check(spec)
    return (0j,) + p.c


def escape_radius_from_coefficients(coef: np.ndarray) -> float:
    return float(escape_radii(np.asarray(coef)[None, :])[0])


def escape_radius(spec: FamilySpec, p: Parameter) -> float:
    """Radius R with |z| >= R  =>  |P(z)| >= 2|z|, and R >= 4 d^{1/(d-1)}."""
    return escape_radius_from_coefficients(coefficients(spec, p))


def escape_radii(coefs: np.ndarray) -> np.ndarray:
    """Row-wise escape radii for an (N, d+1) coefficient table.

    Uses R = max(4 d^{1/(d-1)}, 4 (1 + sum|coef|), (S + 2)/|lead|) where S sums the
    non-leading coefficient moduli.  The last term is what guarantees the
    doubling: for |z| >= R >= 1, |P(z)| >= |z|^{d-1} (|lead| |z| - S) >= 2|z|.
    """
    coefs = np.atleast_2d(coefs)
    d = coefs.shape[1] - 1
    lead = np.abs(coefs[:, 0])
    rest = np.sum(np.abs(coefs[:, 1:]), axis=1)
    coarse = np.maximum(4.0 * d ** (1.0 / (d - 1)), 4.0 * (1.0 + lead + rest))
    return np.maximum(coarse, (rest + 2.0) / lead)


def critical_table(spec: FamilySpec, params: np.ndarray) -> np.ndarray:
    """(N, d-1) array of critical points (0, c_1, ..., c_{d-2}) per parameter row."""
    params = np.atleast_2d(np.asarray(params, dtype=np.complex128))
    out = np.zeros((params.shape[0], spec.d - 1), dtype=np.complex128)
    out[:, 1:] = params[:, :-1]
    return out


def random_parameter(spec: FamilySpec, rng: np.random.Generator, scale: float = 1.0) -> Parameter:
    v = scale * (rng.standard_normal(spec.d - 1) + 1j * rng.standard_normal(spec.d - 1))
    return Parameter.from_vector(v)


def log_degree(spec: FamilySpec) -> float:
    return math.log(spec.d)


# alias kept for callers that use the short name; shadows the builtin only here
eval = evaluate  # noqa: A001
