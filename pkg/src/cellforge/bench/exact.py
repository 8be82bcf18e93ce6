"""Closed-form reference solutions and error metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..quadrature import _gauss_1d

DISK_REFERENCE_ENERGY = 0.3398437370278343


def hyp2f1(a: float, b: float, c: float, z: float, max_terms: int = 5000) -> float:
    """Gauss hypergeometric series for ``|z| < 1``.

    Terms are summed until a geometric bound on the remaining tail drops
    below 1e-15.
    """
    if abs(z) >= 1.0:
        raise ValueError("hyp2f1 series needs |z| < 1")
    total = 1.0
    term = 1.0
    for n in range(max_terms):
        ratio = (a + n) * (b + n) / ((c + n) * (n + 1.0)) * z
        term *= ratio
        total += term
        r = abs(ratio)
        if r < 1.0 and abs(term) * r / (1.0 - r) < 1e-15 and n > 2:
            return total
    raise RuntimeError("hyp2f1 series did not converge")


def energy_error(approx: float, exact: float) -> float:
    """Relative energy-norm error in percent."""
    if exact <= 0:
        raise ValueError("exact energy must be positive")
    return math.sqrt(abs(approx - exact) / abs(exact)) * 100.0


# -- 1D bar with a kink in the stiffness -------------------------------------------

@dataclass(frozen=True)
class BarParams:
    a: float = 2.0 / 3.0
    b: float = 1.0
    t0: float = 1.0
    area: float = 1.0
    E0: float = 10.0
    dE: float = 90.0

    def stiffness(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < self.a, self.E0 + self.dE / self.a * (self.a - x), self.E0)


def _u_hat(x, p: BarParams):
    if p.dE == 0.0:
        return p.t0 * x / p.E0
    k = p.a * (p.dE + p.E0)
    return p.a * p.t0 / p.dE * (np.log(k) - np.log(k - p.dE * x))


def exact_bar1d(x, params: BarParams = BarParams()):
    """Displacement and strain of the bar at ``x`` (arrays or scalars)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > params.b):
        raise ValueError("x must lie in [0, b]")
    left = x < params.a
    ua = _u_hat(params.a, params)
    u = np.where(left, _u_hat(np.minimum(x, params.a), params), params.t0 * (x - params.a) / params.E0 + ua)
    eps = params.t0 / (params.area * params.stiffness(x))
    return u, eps


def exact_energy_bar1d(params: BarParams = BarParams(), panels: int = 10000, order: int = 8) -> float:
    """``a(u, u) = int E A (u')^2`` by composite Gauss quadrature of the exact strain."""
    xg, wg = _gauss_1d(order)
    total = 0.0
    for lo, hi in ((0.0, params.a), (params.a, params.b)):
        if hi <= lo:
            continue
        n = max(1, int(round(panels * (hi - lo) / params.b)))
        edges = np.linspace(lo, hi, n + 1)
        h = np.diff(edges)
        x = (edges[:-1, None] + 0.5 * (xg[None, :] + 1.0) * h[:, None]).ravel()
        w = (0.5 * h[:, None] * wg[None, :]).ravel()
        xm = np.minimum(x, params.b)
        _, eps = exact_bar1d(xm, params)
        E = params.stiffness(np.where(x < params.a, x, np.maximum(x, params.a)))
        total += float(np.sum(w * E * params.area * eps ** 2))
    return total


# -- 2D disk with radially graded stiffness ---------------------------------------

@dataclass(frozen=True)
class DiskParams:
    a: float = 2.0 / 3.0
    b: float = 3.0
    c: float = 2.0
    E0: float = 10.0
    dE: float = 90.0
    t0: float = 1.0

    def stiffness(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self.a, self.E0 + self.dE / self.a * (self.a - r), self.E0)


_HA = 0.5 * (3.0 - math.sqrt(5.0))
_HB = 0.5 * (3.0 + math.sqrt(5.0))


def _disk_constant(p: DiskParams) -> float:
    """Amplitude ``C`` of the inner solution ``u = C r F(zeta r)``.

    Fixed by ``sigma_rr(a) = t0``; the derivative of the hypergeometric
    factor brings in the series with shifted parameters and ``c = 4``.
    """
    z = p.dE / (p.dE + p.E0)
    f3 = hyp2f1(_HA, _HB, 3.0, z)
    f4 = hyp2f1(_HA + 1.0, _HB + 1.0, 4.0, z)
    alpha = 3.0 * p.E0 * (p.dE + p.E0) * f3
    beta = p.dE * p.E0 * f4
    return 3.0 * p.t0 * (p.dE + p.E0) / (alpha + beta)


def exact_disk2d(r, params: DiskParams = DiskParams()):
    """Radial displacement and its derivative at radius ``r``."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r < 0) or np.any(r > params.b):
        raise ValueError("r must lie in [0, b]")
    C = _disk_constant(params)
    zeta = params.dE / (params.a * (params.dE + params.E0))
    ua = C * params.a * hyp2f1(_HA, _HB, 3.0, zeta * params.a)
    A = (params.a * params.t0 + params.E0 * ua) / (2.0 * params.a * params.E0)
    B = params.a * (params.E0 * ua - params.t0 * params.a) / (2.0 * params.E0)
    u = np.empty_like(r)
    du = np.empty_like(r)
    for k, rk in enumerate(r):
        if rk < params.a:
            s = zeta * rk
            f3 = hyp2f1(_HA, _HB, 3.0, s)
            f4 = hyp2f1(_HA + 1.0, _HB + 1.0, 4.0, s)
            u[k] = C * rk * f3
            du[k] = C * (f3 + s * f4 / 3.0)
        else:
            u[k] = A * rk + B / rk
            du[k] = A - B / rk ** 2
    return u, du


def disk_stress(x, params: DiskParams = DiskParams()):
    """Cartesian stress ``(n, 3)`` as ``[s11, s22, s12]`` (zero Poisson ratio)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.hypot(x[:, 0], x[:, 1])
    u, du = exact_disk2d(r, params)
    E = params.stiffness(r)
    rs = np.where(r > 0, r, 1.0)
    srr = E * du
    stt = E * np.where(r > 0, u / rs, du)
    c, s = x[:, 0] / rs, x[:, 1] / rs
    return np.stack([srr * c * c + stt * s * s, srr * s * s + stt * c * c, (srr - stt) * c * s], axis=1)


def disk_traction(face_axis: int, params: DiskParams = DiskParams()):
    """Exact traction on the outer face ``x_axis = c`` of the quarter square."""

    def traction(x):
        sig = disk_stress(x, params)
        if face_axis == 0:
            return np.stack([sig[:, 0], sig[:, 2]], axis=1)
        return np.stack([sig[:, 2], sig[:, 1]], axis=1)

    return traction


def exact_energy_disk2d(params: DiskParams = DiskParams(), panels: int = 400, order: int = 10) -> float:
    """``int sigma : eps`` over the square ``[0, c]^2`` by polar composite quadrature."""
    xg, wg = _gauss_1d(order)

    def radial(lo, hi, n):
        edges = np.linspace(lo, hi, n + 1)
        h = np.diff(edges)
        return (edges[:-1, None] + 0.5 * (xg + 1.0) * h[:, None]).ravel(), (0.5 * h[:, None] * wg).ravel()

    def density(r):
        u, du = exact_disk2d(r, params)
        return params.stiffness(r) * (du ** 2 + (u / r) ** 2)

    c = params.c
    # quarter disk r < c, then the two corner regions c < r < c / cos(theta)
    r1, w1 = radial(0.0, params.a, panels)
    r2, w2 = radial(params.a, c, panels)
    inner = float(np.sum(w1 * r1 * density(r1)) + np.sum(w2 * r2 * density(r2))) * math.pi / 2.0
    th, wt = radial(0.0, math.pi / 4.0, panels)
    corner = 0.0
    for t, w in zip(th, wt):
        rmax = c / math.cos(t)
        rr, wr = radial(c, rmax, 8)
        corner += w * float(np.sum(wr * rr * density(rr)))
    return inner + 2.0 * corner
