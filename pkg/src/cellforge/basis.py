"""Integrated Legendre shape functions and their tensor-product extension.

One-dimensional modes on the reference interval [-1, 1]:

* ``N1 = (1 - xi) / 2`` and ``N2 = (1 + xi) / 2`` are the nodal modes,
* ``Nk = (P_{k-1} - P_{k-3}) / sqrt(4k - 6)`` for ``k >= 3`` are internal
  (bubble) modes that vanish at both ends.

Derivatives are analytic: ``Nk' = sqrt((2k - 3) / 2) * P_{k-2}``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

MAX_DEGREE = 20
_DOMAIN_TOL = 1e-12


class BasisIndexError(ValueError):
    """Raised for an invalid shape-function index or degree."""


def _check_domain(xi):
    xi = np.asarray(xi, dtype=float)
    if np.any(np.abs(xi) > 1.0 + _DOMAIN_TOL):
        raise ValueError("reference coordinate outside [-1, 1]")
    return xi


def legendre(k: int, xi):
    """Legendre polynomial ``P_k(xi)`` by the three-term recurrence."""
    if k < 0:
        raise BasisIndexError(f"Legendre index must be >= 0, got {k}")
    xi = _check_domain(xi)
    p_prev, p = np.ones_like(xi), xi.copy()
    if k == 0:
        return p_prev if p_prev.ndim else float(p_prev)
    for n in range(1, k):
        p_prev, p = p, ((2 * n + 1) * xi * p - n * p_prev) / (n + 1)
    return p if p.ndim else float(p)


def legendre_table(kmax: int, xi) -> np.ndarray:
    """Values ``P_0 .. P_kmax`` at every point; shape ``(npts, kmax + 1)``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.empty((xi.size, kmax + 1))
    out[:, 0] = 1.0
    if kmax >= 1:
        out[:, 1] = xi
    for n in range(1, kmax):
        out[:, n + 1] = ((2 * n + 1) * xi * out[:, n] - n * out[:, n - 1]) / (n + 1)
    return out


def integrated_legendre(k: int, xi):
    """Value and analytic derivative of the 1D mode ``N_k`` at ``xi``."""
    if k <= 0:
        raise BasisIndexError(f"shape-function index must be >= 1, got {k}")
    if k > MAX_DEGREE + 1:
        raise BasisIndexError(f"index {k} exceeds maximum degree {MAX_DEGREE}")
    xi = _check_domain(xi)
    vals, ders = integrated_legendre_table(k, np.atleast_1d(xi))
    v, d = vals[:, k - 1], ders[:, k - 1]
    if xi.ndim == 0:
        return float(v[0]), float(d[0])
    return v, d


def integrated_legendre_table(nmax: int, xi) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of ``N_1 .. N_nmax``.

    Returns two arrays of shape ``(npts, nmax)``; column ``k - 1`` holds mode k.
    No domain check is made so that callers can evaluate polynomial
    extensions slightly outside the reference cell.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    vals = np.empty((xi.size, nmax))
    ders = np.empty((xi.size, nmax))
    vals[:, 0] = 0.5 * (1.0 - xi)
    ders[:, 0] = -0.5
    if nmax >= 2:
        vals[:, 1] = 0.5 * (1.0 + xi)
        ders[:, 1] = 0.5
    if nmax >= 3:
        P = legendre_table(nmax - 1, xi)
        for k in range(3, nmax + 1):
            vals[:, k - 1] = (P[:, k - 1] - P[:, k - 3]) / np.sqrt(4.0 * k - 6.0)
            ders[:, k - 1] = np.sqrt((2.0 * k - 3.0) / 2.0) * P[:, k - 2]
    return vals, ders


@dataclass(frozen=True)
class ShapeFunction1D:
    """A single 1D mode identified by its index ``k >= 1``."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise BasisIndexError(f"shape-function index must be >= 1, got {self.k}")

    @property
    def is_nodal(self) -> bool:
        return self.k <= 2

    def __call__(self, xi):
        return integrated_legendre(self.k, xi)


@dataclass(frozen=True)
class TensorBasis:
    """Full tensor-product space of per-axis degrees on ``[-1, 1]^d``.

    Functions are enumerated lexicographically over the per-axis mode
    indices with the last axis varying fastest; ``indices[j]`` holds the
    1-based mode index on every axis for function ``j``.
    """

    degrees: tuple[int, ...]
    indices: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        degrees = tuple(int(p) for p in self.degrees)
        if not 1 <= len(degrees) <= 3:
            raise ValueError("dimension must be 1, 2 or 3")
        if any(p < 1 or p > MAX_DEGREE for p in degrees):
            raise BasisIndexError(f"degrees must lie in [1, {MAX_DEGREE}], got {degrees}")
        object.__setattr__(self, "degrees", degrees)
        idx = np.array(list(itertools.product(*[range(1, p + 2) for p in degrees])), dtype=int)
        object.__setattr__(self, "indices", idx.reshape(-1, len(degrees)))

    @property
    def dim(self) -> int:
        return len(self.degrees)

    @property
    def size(self) -> int:
        return int(np.prod([p + 1 for p in self.degrees]))

    def nodal_mask(self) -> np.ndarray:
        """True for functions built only from nodal 1D modes."""
        return np.all(self.indices <= 2, axis=1)


def tensor_values(indices: np.ndarray, tables, with_gradients: bool = True):
    """Combine per-axis 1D tables into tensor-product values and gradients.

    ``tables`` is a sequence of ``(vals, ders)`` pairs, one per axis, as
    returned by :func:`integrated_legendre_table`. Gradients are with
    respect to the coordinates the tables were evaluated in.
    """
    d = indices.shape[1]
    cols = [(tables[a][0][:, indices[:, a] - 1], tables[a][1][:, indices[:, a] - 1]) for a in range(d)]
    values = cols[0][0].copy()
    for a in range(1, d):
        values *= cols[a][0]
    if not with_gradients:
        return values, None
    grads = np.empty(values.shape + (d,))
    for a in range(d):
        g = cols[a][1].copy()
        for b in range(d):
            if b != a:
                g *= cols[b][0]
        grads[..., a] = g
    return values, grads


def eval_tensor_points(basis: TensorBasis, points) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate all functions at many points.

    Returns ``values`` of shape ``(npts, n)`` and reference gradients of shape
    ``(npts, n, d)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != basis.dim:
        raise ValueError("point dimension does not match basis dimension")
    _check_domain(pts)
    tables = [integrated_legendre_table(p + 1, pts[:, a]) for a, p in enumerate(basis.degrees)]
    return tensor_values(basis.indices, tables)


def eval_tensor(basis: TensorBasis, xi) -> tuple[np.ndarray, np.ndarray]:
    """Values (n,) and gradients (d, n) of every function at one point."""
    xi = np.asarray(xi, dtype=float).reshape(1, -1)
    values, grads = eval_tensor_points(basis, xi)
    return values[0], grads[0].T
