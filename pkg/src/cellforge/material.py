"""Small-strain thermo-viscoplastic material kernel.

Symmetric second-order tensors are stored as Mandel 6-vectors
``[t11, t22, t33, sqrt2*t12, sqrt2*t23, sqrt2*t13]``. With this convention
the Euclidean dot product of two vectors equals the double contraction of
the tensors, fourth-order tensors become symmetric 6x6 matrices, and the
same representation serves stresses and strains.

All functions are vectorized over material points: tensors have shape
``(n, 6)`` and tangents ``(n, 6, 6)``. Units follow the rest of the
package: GPa for stresses and moduli, K for temperature, s for time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

SQRT2 = math.sqrt(2.0)
SQRT32 = math.sqrt(1.5)
T_ZERO_CELSIUS = 273.15

IDENTITY2 = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
IDENTITY4 = np.eye(6)
#: deviatoric projector P = I - (1/3) 1 (x) 1 in Mandel form
DEVIATORIC_PROJECTOR = IDENTITY4 - np.outer(IDENTITY2, IDENTITY2) / 3.0

NEWTON_MAX_ITER = 50
BISECTION_MAX_ITER = 200


class ReturnMappingError(RuntimeError):
    """Scalar consistency solve failed at a material point."""

    def __init__(self, message, q_trial, sigma_y, dt):
        super().__init__(f"{message} (q_trial={q_trial:.6g}, sigma_y={sigma_y:.6g}, dt={dt:.6g})")
        self.q_trial = q_trial
        self.sigma_y = sigma_y
        self.dt = dt


def to_mandel(tensor) -> np.ndarray:
    """Convert ``(..., 3, 3)`` symmetric tensors to Mandel vectors."""
    t = np.asarray(tensor, dtype=float)
    return np.stack([t[..., 0, 0], t[..., 1, 1], t[..., 2, 2],
                     SQRT2 * t[..., 0, 1], SQRT2 * t[..., 1, 2], SQRT2 * t[..., 0, 2]], axis=-1)


def from_mandel(vec) -> np.ndarray:
    """Convert Mandel vectors to ``(..., 3, 3)`` symmetric tensors."""
    v = np.asarray(vec, dtype=float)
    out = np.empty(v.shape[:-1] + (3, 3))
    out[..., 0, 0], out[..., 1, 1], out[..., 2, 2] = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = out[..., 1, 0] = v[..., 3] / SQRT2
    out[..., 1, 2] = out[..., 2, 1] = v[..., 4] / SQRT2
    out[..., 0, 2] = out[..., 2, 0] = v[..., 5] / SQRT2
    return out


def von_mises(stress) -> np.ndarray:
    """Equivalent stress ``sqrt(3/2) |dev(stress)|``."""
    s = np.atleast_2d(stress) @ DEVIATORIC_PROJECTOR
    return SQRT32 * np.linalg.norm(s, axis=1)


# -- temperature dependence ---------------------------------------------------

@dataclass(frozen=True)
class AtanFit:
    """Arctangent temperature fit.

    ``f(T) = base * (1 - 2 omega / (pi - 2 phi) * (atan(chi dT + atan(phi)) - phi))``
    with ``dT = T - T_ref``.
    """

    base: float
    omega: float = 0.0
    chi: float = 0.0
    phi: float = 0.0
    T_ref: float = 293.15

    def _scale(self):
        return 2.0 * self.omega / (math.pi - 2.0 * self.phi)

    def __call__(self, T):
        dT = np.asarray(T, dtype=float) - self.T_ref
        return self.base * (1.0 - self._scale() * (np.arctan(self.chi * dT + math.atan(self.phi)) - self.phi))

    def derivative(self, T):
        dT = np.asarray(T, dtype=float) - self.T_ref
        arg = self.chi * dT + math.atan(self.phi)
        return -self.base * self._scale() * self.chi / (1.0 + arg * arg)


def atan_interp(fit: AtanFit, T):
    return fit(T)


def _value(param, T):
    """Evaluate a constant or temperature fit."""
    if callable(param):
        return np.asarray(param(T), dtype=float)
    return np.full(np.shape(T), float(param))


@dataclass(frozen=True)
class PiecewiseTable:
    """Piecewise polynomial-plus-exponential function of temperature.

    Segment ``i`` covers ``[breaks[i], breaks[i+1])`` and evaluates
    ``sum_k poly[i][k] * s**k + exp_a[i] * exp(exp_b[i] * s)`` with
    ``s = T - breaks[i]``. Temperatures beyond the ends use the first or
    last segment.
    """

    breaks: tuple[float, ...]
    poly: tuple[tuple[float, ...], ...]
    exp_a: tuple[float, ...] = ()
    exp_b: tuple[float, ...] = ()

    def __post_init__(self):
        nseg = len(self.breaks) - 1
        if nseg < 1 or len(self.poly) != nseg:
            raise ValueError("need len(breaks) - 1 polynomial segments")
        if any(b1 <= b0 for b0, b1 in zip(self.breaks, self.breaks[1:])):
            raise ValueError("breaks must increase")
        for name in ("exp_a", "exp_b"):
            vals = getattr(self, name)
            if vals and len(vals) != nseg:
                raise ValueError(f"{name} needs one entry per segment")

    def __call__(self, T):
        T = np.asarray(T, dtype=float)
        seg = np.clip(np.searchsorted(self.breaks, T, side="right") - 1, 0, len(self.poly) - 1)
        out = np.zeros_like(T)
        for i, coeffs in enumerate(self.poly):
            sel = seg == i
            if not np.any(sel):
                continue
            s = T[sel] - self.breaks[i]
            val = np.polynomial.polynomial.polyval(s, coeffs)
            if self.exp_a:
                val = val + self.exp_a[i] * np.exp(self.exp_b[i] * s)
            out[sel] = val
        return out


# -- parameter blocks ---------------------------------------------------------

@dataclass(frozen=True)
class ElasticParams:
    """Isotropic elasticity from (E, nu) or from temperature fits of K and G."""

    E: float | None = None
    nu: float | None = None
    K: AtanFit | float | None = None
    G: AtanFit | float | None = None

    def __post_init__(self):
        if self.E is not None or self.nu is not None:
            if self.E is None or self.nu is None:
                raise ValueError("give both E and nu")
            if self.E <= 0 or not -1.0 < self.nu < 0.5:
                raise ValueError("need E > 0 and -1 < nu < 0.5")
        elif self.K is None or self.G is None:
            raise ValueError("give (E, nu) or (K, G)")

    def moduli(self, T) -> tuple[np.ndarray, np.ndarray]:
        """Bulk and shear modulus at temperatures ``T``."""
        T = np.asarray(T, dtype=float)
        if self.E is not None:
            K = self.E / (3.0 * (1.0 - 2.0 * self.nu))
            G = self.E / (2.0 * (1.0 + self.nu))
            return np.full(T.shape, K), np.full(T.shape, G)
        return _value(self.K, T), _value(self.G, T)


@dataclass(frozen=True)
class HardeningParams:
    """Isotropic hardening or softening law.

    ``sigma_y = sigma_y0(T) - Phi(T) * chi(ebar)`` with
    ``chi = (1 - r) * dsig * (exp(-ebar / ebar0) - 1) - r * H0 * ebar``.
    ``softening`` is the dimensionless temperature factor ``Phi``;
    ``None`` means ``Phi = 1``.
    """

    sigma_y0: AtanFit | float
    H0: float = 0.0
    delta_sigma_inf: float = 0.0
    ebar0: float = 1.0
    r_mix: float = 1.0
    softening: AtanFit | None = None

    def __post_init__(self):
        if self.ebar0 <= 0:
            raise ValueError("ebar0 must be positive")
        if not 0.0 <= self.r_mix <= 1.0:
            raise ValueError("r_mix must lie in [0, 1]")

    @classmethod
    def linear(cls, sigma_y0: float, H: float) -> "HardeningParams":
        """Isothermal linear hardening ``sigma_y0 + H * ebar``."""
        return cls(sigma_y0=sigma_y0, H0=H, r_mix=1.0)

    def _phi(self, T):
        return _value(self.softening, T) if self.softening is not None else np.ones(np.shape(T))

    def chi(self, ebar):
        ebar = np.asarray(ebar, dtype=float)
        return ((1.0 - self.r_mix) * self.delta_sigma_inf * np.expm1(-ebar / self.ebar0)
                - self.r_mix * self.H0 * ebar)

    def chi_slope(self, ebar):
        ebar = np.asarray(ebar, dtype=float)
        return (-(1.0 - self.r_mix) * self.delta_sigma_inf / self.ebar0 * np.exp(-ebar / self.ebar0)
                - self.r_mix * self.H0)


def yield_stress(h: HardeningParams, ebar, T):
    """Current yield stress (GPa)."""
    ebar = np.asarray(ebar, dtype=float)
    if np.any(ebar < 0):
        raise ValueError("accumulated plastic strain must be non-negative")
    T = np.broadcast_to(np.asarray(T, dtype=float), ebar.shape)
    return _value(h.sigma_y0, T) - h._phi(T) * h.chi(ebar)


def yield_slope(h: HardeningParams, ebar, T):
    """Hardening modulus ``d sigma_y / d ebar``."""
    ebar = np.asarray(ebar, dtype=float)
    T = np.broadcast_to(np.asarray(T, dtype=float), ebar.shape)
    return -h._phi(T) * h.chi_slope(ebar)


@dataclass(frozen=True)
class ViscoParams:
    """Perzyna overstress parameters: relaxation time ``mu`` (s), exponent ``m``."""

    mu: float
    m: float = 1.0

    def __post_init__(self):
        if self.mu <= 0 or self.m <= 0:
            raise ValueError("Perzyna parameters must be positive")


@dataclass(frozen=True)
class ThermalExpansion:
    """Volumetric thermal strain.

    ``mode="constant"``: ``gamma * (T - T0)``.
    ``mode="mean"``: ``gamma_m(T) (T - T0C) - gamma_m(T0) (T0 - T0C)`` with a
    mean coefficient ``gamma_m`` given as a constant or a table.
    """

    gamma: float | PiecewiseTable | AtanFit = 0.0
    mode: str = "constant"
    T_zero_celsius: float = T_ZERO_CELSIUS

    def __post_init__(self):
        if self.mode not in ("constant", "mean"):
            raise ValueError(f"unknown thermal expansion mode {self.mode!r}")

    def volumetric(self, T, T0) -> np.ndarray:
        T = np.asarray(T, dtype=float)
        T0 = np.broadcast_to(np.asarray(T0, dtype=float), T.shape)
        if self.mode == "constant":
            return _value(self.gamma, T) * (T - T0)
        Tc = self.T_zero_celsius
        return _value(self.gamma, T) * (T - Tc) - _value(self.gamma, T0) * (T0 - Tc)


def thermal_strain(exp: ThermalExpansion, T, T0) -> np.ndarray:
    """Thermal strain tensor(s) in Mandel form."""
    e = np.asarray(exp.volumetric(T, T0))
    return e[..., None] * IDENTITY2


@dataclass(frozen=True)
class Material:
    """Material definition consumed by the stress update.

    Without ``hardening`` the response is linear elastic; ``visco`` switches
    the plastic flow from rate-independent to Perzyna.
    """

    elastic: ElasticParams
    hardening: HardeningParams | None = None
    visco: ViscoParams | None = None
    expansion: ThermalExpansion | None = None
    T0: float = 293.15
    density: float | None = None

    @property
    def mode(self) -> str:
        if self.hardening is None:
            return "elastic"
        if self.visco is not None:
            return "viscoplastic"
        return "plastic"

    def with_visco(self, visco: ViscoParams | None) -> "Material":
        return replace(self, visco=visco)


@dataclass
class MaterialPointState:
    """History at many points: viscoplastic strain, accumulated strain, T."""

    eps_vp: np.ndarray
    ebar: np.ndarray
    T: np.ndarray = field(default=None)

    @classmethod
    def zeros(cls, n: int, T=293.15) -> "MaterialPointState":
        return cls(np.zeros((n, 6)), np.zeros(n), np.broadcast_to(np.asarray(T, dtype=float), (n,)).copy())

    def copy(self) -> "MaterialPointState":
        return MaterialPointState(self.eps_vp.copy(), self.ebar.copy(),
                                  None if self.T is None else self.T.copy())

    def __len__(self):
        return len(self.ebar)


def elastic_tangent(K, G) -> np.ndarray:
    K = np.atleast_1d(np.asarray(K, dtype=float))
    G = np.atleast_1d(np.asarray(G, dtype=float))
    return K[:, None, None] * np.outer(IDENTITY2, IDENTITY2) + 2.0 * G[:, None, None] * DEVIATORIC_PROJECTOR


@dataclass
class ReturnMapResult:
    stress: np.ndarray
    tangent: np.ndarray
    state: MaterialPointState
    dgamma: np.ndarray


def _overstress_factor(x, visco, dt):
    """Perzyna factor R(x) = 1 + (mu x / dt)^m and its derivative."""
    if visco is None:
        return np.ones_like(x), np.zeros_like(x)
    c = visco.mu / dt
    xs = np.maximum(x, 0.0)
    R = 1.0 + (c * xs) ** visco.m
    with np.errstate(divide="ignore", invalid="ignore"):
        dR = np.where(xs > 0, visco.m * c ** visco.m * xs ** (visco.m - 1.0), 0.0 if visco.m >= 1 else np.inf)
    if visco.m == 1.0:
        dR = np.full_like(x, c)
    return R, dR


def solve_consistency(q, ebar, T, G, h: HardeningParams, visco: ViscoParams | None, dt: float):
    """Solve the scalar consistency condition for the plastic multiplier.

    ``g(x) = q - 3 G x - sigma_y(ebar + x) R(x) = 0`` on ``[0, q / (3G)]``
    with Perzyna factor ``R`` (``R = 1`` when rate independent), by
    safeguarded Newton with a bisection fallback.

    Returns ``(x, hprime)`` where ``hprime = d(sigma_y R)/dx`` at the root.
    """
    q = np.asarray(q, dtype=float)
    lo = np.zeros_like(q)
    hi = q / (3.0 * G)

    def g_and_slope(x):
        sy = yield_stress(h, ebar + x, T)
        H = yield_slope(h, ebar + x, T)
        R, dR = _overstress_factor(x, visco, dt)
        hp = H * R + sy * dR
        return q - 3.0 * G * x - sy * R, -3.0 * G - hp, hp

    H0 = yield_slope(h, ebar, T)
    sy0 = yield_stress(h, ebar, T)
    x = np.clip((q - sy0) / (3.0 * G + np.maximum(H0, 0.0)), 0.0, hi)
    x = np.where(x <= 0.0, 0.5 * hi, x)
    scale = np.maximum(q, np.abs(sy0))
    done = np.zeros(q.shape, dtype=bool)
    for it in range(NEWTON_MAX_ITER + BISECTION_MAX_ITER):
        g, dg, hp = g_and_slope(x)
        lo = np.where(g > 0, x, lo)
        hi = np.where(g <= 0, x, hi)
        converged = np.abs(g) <= 1e-14 * scale
        done |= converged | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(hi, 1e-300))
        if np.all(done):
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - g / dg
        ok = (it < NEWTON_MAX_ITER) & np.isfinite(newton) & (newton > lo) & (newton < hi)
        x = np.where(done, x, np.where(ok, newton, 0.5 * (lo + hi)))
    else:
        bad = np.nonzero(~done)[0][0]
        sy_bad = float(np.atleast_1d(sy0)[bad])
        raise ReturnMappingError("plastic consistency solve did not converge",
                                 float(q[bad]), sy_bad, float(dt))
    _, _, hp = g_and_slope(x)
    return x, hp


def return_map(state: MaterialPointState, strain, T, dt: float, material: Material,
               K=None, G=None) -> ReturnMapResult:
    """Elastic predictor / plastic corrector update at many points.

    Parameters
    ----------
    state : history at the start of the step (not modified)
    strain : (n, 6) total strain at the end of the step
    T : (n,) temperature
    dt : time increment, used by the Perzyna law only
    material : constitutive parameters
    K, G : optional per-point moduli overriding ``material.elastic``

    Returns
    -------
    ReturnMapResult with stress, consistent tangent, trial state and the
    plastic multiplier increment.
    """
    eps = np.atleast_2d(np.asarray(strain, dtype=float))
    n = len(eps)
    T = np.broadcast_to(np.asarray(T, dtype=float), (n,))
    if K is None or G is None:
        Km, Gm = material.elastic.moduli(T)
        K = Km if K is None else np.broadcast_to(K, (n,))
        G = Gm if G is None else np.broadcast_to(G, (n,))
    K = np.asarray(K, dtype=float)
    G = np.asarray(G, dtype=float)
    eps_mech = eps - state.eps_vp
    if material.expansion is not None:
        eps_mech = eps_mech - thermal_strain(material.expansion, T, material.T0)
    vol = eps_mech @ IDENTITY2
    dev = eps_mech @ DEVIATORIC_PROJECTOR
    s_trial = 2.0 * G[:, None] * dev
    stress = K[:, None] * vol[:, None] * IDENTITY2 + s_trial
    tangent = elastic_tangent(K, G)
    new_state = MaterialPointState(state.eps_vp.copy(), state.ebar.copy(), T.copy())
    dgamma = np.zeros(n)
    if material.hardening is None:
        return ReturnMapResult(stress, tangent, new_state, dgamma)
    if material.visco is not None and dt <= 0:
        raise ValueError("rate-dependent update needs dt > 0")

    norm_s = np.linalg.norm(s_trial, axis=1)
    q = SQRT32 * norm_s
    sy = yield_stress(material.hardening, state.ebar, T)
    plastic = q - sy > 1e-14 * np.maximum(sy, 1e-300)
    if not np.any(plastic):
        return ReturnMapResult(stress, tangent, new_state, dgamma)

    idx = np.nonzero(plastic)[0]
    Gp, qp = G[idx], q[idx]
    x, hp = solve_consistency(qp, state.ebar[idx], T[idx], Gp, material.hardening, material.visco, dt)
    nhat = s_trial[idx] / norm_s[idx, None]
    stress[idx] -= (2.0 * Gp * x * SQRT32)[:, None] * nhat
    new_state.eps_vp[idx] += (x * SQRT32)[:, None] * nhat
    new_state.ebar[idx] += x
    dgamma[idx] = x
    nn = np.einsum("ni,nj->nij", nhat, nhat)
    a = 6.0 * Gp ** 2 * x / qp
    b = 6.0 * Gp ** 2 / (3.0 * Gp + hp)
    tangent[idx] -= a[:, None, None] * (DEVIATORIC_PROJECTOR - nn) + b[:, None, None] * nn
    return ReturnMapResult(stress, tangent, new_state, dgamma)
