"""Quadrature for uncut and cut cells.

All rules live in the reference coordinates ``[-1, 1]^d`` of the cell they
belong to; physical weights follow by multiplying with the Jacobian
determinant of the cell map. Every point carries the value of the penalty
indicator alpha so that the integrand weight is ``weight * alpha``.

Cut cells are integrated either by an adaptive space tree (recursive
bisection with Gauss rules on the leaves) or by non-negative moment
fitting: a sparse rule with non-negative weights that reproduces the
physical-domain moments of a polynomial basis.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .basis import MAX_DEGREE, TensorBasis, integrated_legendre_table, tensor_values
from .geometry import CellClassification, ImplicitDomain, classify_cell

_UNIT_ROUNDOFF = np.finfo(float).eps / 2


class NNLSConvergenceError(RuntimeError):
    """Lawson-Hanson iteration cap exceeded."""


@dataclass
class QuadratureRule:
    """Points in reference coordinates with weights and per-point alpha."""

    points: np.ndarray
    weights: np.ndarray
    alphas: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.alphas = np.asarray(self.alphas, dtype=float).ravel()
        if not len(self.points) == len(self.weights) == len(self.alphas):
            raise ValueError("points, weights and alphas must have equal length")

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_physical(self) -> int:
        return int(np.count_nonzero(self.alphas >= 1.0))

    @property
    def n_fictitious(self) -> int:
        return self.size - self.n_physical

    def measure(self) -> float:
        """Alpha-weighted measure in reference coordinates."""
        return float(np.sum(self.weights * self.alphas))

    def integrate(self, values) -> np.ndarray:
        return np.tensordot(self.weights * self.alphas, np.asarray(values), axes=(0, 0))

    @staticmethod
    def concatenate(rules) -> "QuadratureRule":
        rules = [r for r in rules if r.size]
        if not rules:
            raise ValueError("nothing to concatenate")
        return QuadratureRule(np.vstack([r.points for r in rules]),
                              np.concatenate([r.weights for r in rules]),
                              np.concatenate([r.alphas for r in rules]))


@functools.lru_cache(maxsize=None)
def _gauss_1d_cached(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def _gauss_1d(q: int) -> tuple[np.ndarray, np.ndarray]:
    if q < 1:
        raise ValueError("need at least one Gauss point")
    return _gauss_1d_cached(int(q))


def gauss_rule(q, d: int | None = None, alpha: float = 1.0) -> QuadratureRule:
    """Tensor Gauss-Legendre rule with ``q`` points per axis on ``[-1, 1]^d``.

    ``q`` may be an integer (with ``d``) or a per-axis tuple.
    """
    if np.ndim(q) == 0:
        if d is None:
            raise ValueError("dimension required for a scalar point count")
        q = (int(q),) * d
    q = tuple(int(v) for v in q)
    pts1d, w1d = zip(*[_gauss_1d(n) for n in q])
    grids = np.meshgrid(*pts1d, indexing="ij")
    wgrid = np.meshgrid(*w1d, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([w.ravel() for w in wgrid], axis=1), axis=1)
    return QuadratureRule(points, weights, np.full(len(weights), float(alpha)))


def _to_physical(lower, upper, ref):
    return lower + 0.5 * (ref + 1.0) * (upper - lower)


def _classify_batch(domain, lower, upper, lo_ref, size_ref, samples):
    """Vectorized sampling classification of many reference sub-boxes.

    Returns two boolean arrays: all samples inside, any sample inside.
    """
    d = lo_ref.shape[1]
    unit = np.stack(np.meshgrid(*[np.linspace(0.0, 1.0, samples)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    ref = lo_ref[:, None, :] + unit[None, :, :] * size_ref[:, None, :]
    flags = domain.contains(_to_physical(lower, upper, ref.reshape(-1, d))).reshape(len(lo_ref), -1)
    return flags.all(axis=1), flags.any(axis=1)


def ast_rule(lower, upper, domain: ImplicitDomain, alpha_fict: float, depth: int, q,
             axes=None, interfaces=(), samples: int | None = None,
             interface_depth: int | None = None) -> QuadratureRule:
    """Adaptive space-tree rule for the box ``[lower, upper]``.

    Sub-cells cut by ``domain`` (or by any of the ``interfaces``, which only
    trigger subdivision) are bisected up to ``depth`` levels; ``axes`` masks
    the axes that may be bisected. Leaves inside the domain get alpha 1,
    leaves outside get ``alpha_fict`` (and are dropped when it is zero), and
    cut leaves at full depth get per-point alpha.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = len(lower)
    qv = np.broadcast_to(np.asarray(q, dtype=int), (d,))
    base = gauss_rule(tuple(qv))
    axes = np.ones(d, dtype=bool) if axes is None else np.asarray(axes, dtype=bool)
    samples = samples or int(max(qv.max(), 2) + 2)
    interface_depth = depth if interface_depth is None else interface_depth
    max_depth = max(depth, interface_depth)

    lo_ref = -np.ones((1, d))
    size_ref = 2.0 * np.ones((1, d))
    pts, wts, alps = [], [], []

    def emit(lo, size, alpha_value=None):
        if len(lo) == 0:
            return
        p = lo[:, None, :] + 0.5 * (base.points[None, :, :] + 1.0) * size[:, None, :]
        w = base.weights[None, :] * np.prod(size / 2.0, axis=1)[:, None]
        p = p.reshape(-1, d)
        w = w.ravel()
        if alpha_value is None:
            a = np.where(domain.contains(_to_physical(lower, upper, p)), 1.0, alpha_fict)
        else:
            a = np.full(len(w), alpha_value)
        keep = a > 0
        pts.append(p[keep])
        wts.append(w[keep])
        alps.append(a[keep])

    for level in range(max_depth + 1):
        all_in, any_in = _classify_batch(domain, lower, upper, lo_ref, size_ref, samples)
        cut_dom = any_in & ~all_in
        cut_if = np.zeros(len(lo_ref), dtype=bool)
        for iface in interfaces:
            a_in, a_any = _classify_batch(iface, lower, upper, lo_ref, size_ref, samples)
            cut_if |= a_any & ~a_in
        split = (cut_dom & (level < depth)) | (cut_if & (level < interface_depth))
        done = ~split
        inside_leaf = done & all_in & ~cut_dom
        outside_leaf = done & ~any_in
        cut_leaf = done & cut_dom
        emit(lo_ref[inside_leaf], size_ref[inside_leaf], 1.0)
        if alpha_fict > 0:
            emit(lo_ref[outside_leaf], size_ref[outside_leaf], alpha_fict)
        emit(lo_ref[cut_leaf], size_ref[cut_leaf])
        if not split.any():
            break
        lo_s, size_s = lo_ref[split], size_ref[split]
        half = np.where(axes, size_s / 2.0, size_s)
        offsets = np.array(list(np.ndindex(*[2 if a else 1 for a in axes])), dtype=float)
        lo_ref = (lo_s[:, None, :] + offsets[None, :, :] * half[:, None, :]).reshape(-1, d)
        size_ref = np.repeat(half, len(offsets), axis=0)
    if not pts:
        return QuadratureRule(np.zeros((0, d)), np.zeros(0), np.zeros(0))
    return QuadratureRule(np.vstack(pts), np.concatenate(wts), np.concatenate(alps))


def basis_matrix(degrees, points, chunk: int = 20000) -> np.ndarray:
    """Values of the tensor integrated-Legendre set at points, shape (m, n)."""
    basis = TensorBasis(tuple(degrees))
    points = np.atleast_2d(points)
    out = np.empty((basis.size, len(points)))
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        tables = [integrated_legendre_table(deg + 1, p[:, a]) for a, deg in enumerate(basis.degrees)]
        out[:, s:s + chunk] = tensor_values(basis.indices, tables, with_gradients=False)[0].T
    return out


def integrate_basis(degrees, rule: QuadratureRule, chunk: int = 20000) -> np.ndarray:
    """``sum_i N_j(xi_i) w_i alpha_i`` for every moment-basis function j."""
    basis = TensorBasis(tuple(degrees))
    b = np.zeros(basis.size)
    wa = rule.weights * rule.alphas
    for s in range(0, rule.size, chunk):
        p = rule.points[s:s + chunk]
        tables = [integrated_legendre_table(deg + 1, p[:, a]) for a, deg in enumerate(basis.degrees)]
        vals = tensor_values(basis.indices, tables, with_gradients=False)[0]
        b += wa[s:s + chunk] @ vals
    return b


def compute_moments(lower, upper, domain: ImplicitDomain, degrees, depth: int, q=None,
                    axes=None) -> np.ndarray:
    """Physical-domain moments of the tensor basis of ``degrees``.

    The integral runs over the part of the cell inside ``domain`` in
    reference coordinates, evaluated by an adaptive space tree with alpha 0
    in the fictitious part.
    """
    degrees = tuple(int(p) for p in degrees)
    if q is None:
        q = tuple(p // 2 + 1 for p in degrees)
    rule = ast_rule(lower, upper, domain, 0.0, depth, q, axes=axes)
    return integrate_basis(degrees, rule)


class _PassiveQR:
    """QR factorization of the passive columns, updated column by column."""

    def __init__(self, A, b):
        self.A = A
        self.b = b
        self.m = A.shape[0]
        self.cols: list[int] = []
        self.Q = np.eye(self.m)
        self.R = np.zeros((self.m, 0))

    def insert(self, j: int):
        if len(self.cols) >= self.m:
            self.cols.append(j)
            return
        self.Q, self.R = scipy.linalg.qr_insert(self.Q, self.R, self.A[:, j], len(self.cols), which="col")
        self.cols.append(j)

    def remove(self, js):
        for j in sorted(js, key=self.cols.index, reverse=True):
            k = self.cols.index(j)
            self.cols.pop(k)
            if self.R.shape[1] > k:
                self.Q, self.R = scipy.linalg.qr_delete(self.Q, self.R, k, which="col")
        if self.R.shape[1] != len(self.cols):
            self._refactor()

    def _refactor(self):
        self.Q, self.R = scipy.linalg.qr(self.A[:, self.cols], mode="full")

    def solve(self) -> np.ndarray:
        z = np.zeros(self.A.shape[1])
        k = len(self.cols)
        if k == 0:
            return z
        cols = np.array(self.cols)
        R = self.R[:k, :k] if k <= self.m else None
        diag = np.abs(np.diag(R)) if R is not None else np.zeros(1)
        if R is None or diag.min() <= 1e-13 * max(diag.max(), 1e-300):
            z[cols] = np.linalg.lstsq(self.A[:, cols], self.b, rcond=None)[0]
        else:
            z[cols] = scipy.linalg.solve_triangular(R, (self.Q[:, :k].T @ self.b))
        return z


def nnls(A, b, tol: float | None = None, max_iter: int | None = None) -> np.ndarray:
    """Lawson-Hanson active-set solution of ``min ||Aw - b||, w >= 0``.

    Parameters
    ----------
    A : (m, n) array
    b : (m,) array
    tol : float, optional
        Threshold on the dual variable ``A^T (b - A w)`` below which a
        constraint stays active. By default it is roundoff-sized relative to
        the current residual, so the loop runs until the residual is
        orthogonal to every column in floating point.
    max_iter : int, optional
        Cap on the total number of passive-set updates, default ``10 n``.

    Returns
    -------
    w : (n,) array of non-negative weights.

    Raises
    ------
    NNLSConvergenceError
        When the iteration cap is exceeded.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite entries in NNLS data")
    colnorm = np.linalg.norm(A, axis=0).max(initial=0.0)
    rel_tol = 10.0 * max(m, n) * np.finfo(float).eps * colnorm
    max_iter = 10 * n if max_iter is None else max_iter
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    blocked = np.zeros(n, dtype=bool)
    qr = _PassiveQR(A, b)
    dual = A.T @ b
    residual = np.linalg.norm(b)
    iterations = 0
    bnorm = np.linalg.norm(b)
    while True:
        if residual <= 10.0 * max(m, n) * np.finfo(float).eps * bnorm:
            break  # already fitted to roundoff; more columns only add noise
        candidates = np.where(~passive & ~blocked, dual, -np.inf)
        t = int(np.argmax(candidates))  # first index wins ties
        threshold = rel_tol * residual if tol is None else tol
        if candidates[t] <= threshold:
            break
        passive[t] = True
        qr.insert(t)
        z = qr.solve()
        if z[t] <= 0.0:
            # the entering variable cannot move off its bound in floating point
            passive[t] = False
            qr.remove([t])
            blocked[t] = True
            continue
        while np.any(z[passive] <= 0.0):
            iterations += 1
            if iterations > max_iter:
                raise NNLSConvergenceError(f"Lawson-Hanson exceeded {max_iter} iterations")
            neg = passive & (z <= 0.0)
            step = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + step * (z - x)
            leave = passive & ((x <= 10 * np.finfo(float).eps * np.abs(x).max(initial=1.0)) | neg & (x <= 0))
            passive &= ~leave
            qr.remove(list(np.nonzero(leave)[0]))
            x[~passive] = 0.0
            z = qr.solve()
        x = z
        x[~passive] = 0.0
        blocked[:] = False
        r = b - A @ x
        residual = np.linalg.norm(r)
        dual = A.T @ r
        iterations += 1
        if iterations > max_iter:
            raise NNLSConvergenceError(f"Lawson-Hanson exceeded {max_iter} iterations")
    return x


@dataclass
class NnmfConfig:
    """Settings of the moment-fitting pipeline.

    ``moment_degree_factor`` scales the cell's degrees to obtain the moment
    basis; the default 2 makes the fitted rule exact for products of two
    shape functions (stiffness integrands). ``subcell_candidates`` enables
    the second candidate stage built from the moment space tree.
    """

    L_start: int = 3
    L_max: int = 6
    residual_constant: float = 1e6
    fallback_depth: int = 5
    moment_depth: int = 5
    moment_degree_factor: int = 2
    max_points_per_axis: int = 48
    max_candidates: int = 40000
    subcell_candidates: bool = True

    def __post_init__(self):
        if not 1 <= self.L_start <= self.L_max:
            raise ValueError("need 1 <= L_start <= L_max")
        if self.residual_constant <= 0:
            raise ValueError("residual constant must be positive")


@dataclass
class MomentFitProblem:
    A: np.ndarray
    b: np.ndarray

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


@dataclass
class FitInfo:
    scheme: str
    residual: float = float("nan")
    threshold: float = float("nan")
    L: int | None = None
    m: int = 0
    candidates: int = 0
    nonzero: int = 0


def moment_degrees(degrees, factor: int) -> tuple[int, ...]:
    return tuple(min(max(int(factor * p), 1), MAX_DEGREE) for p in degrees)


def candidate_grid(lower, upper, domain, start, needed: int, max_per_axis: int, max_total: int):
    """Smallest tensor Gauss grid (growing from ``start``) with > needed inside points."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    q = np.array(start, dtype=int)
    while True:
        if q.max() > max_per_axis or int(np.prod(q)) > max_total:
            return None
        grid = gauss_rule(tuple(q))
        mask = domain.contains(_to_physical(lower, upper, grid.points))
        if np.count_nonzero(mask) > needed:
            return grid.points[mask]
        q = q + 1


def nnmf_rule(lower, upper, domain: ImplicitDomain, alpha_fict: float, degrees,
              config: NnmfConfig | None = None, overlay_q=None, axes=None):
    """Non-negative moment-fitted rule for a cut cell.

    Candidate sets are tried in order: tensor Gauss grids sized by
    ``L * m`` for ``L = L_start .. L_max``, then (if enabled) the physical
    points of the space tree that produced the moments. The first fit whose
    residual is below the threshold wins; otherwise the cell falls back to a
    space-tree rule.

    Returns ``(rule, info)`` with ``info.scheme`` one of ``"nnmf"``,
    ``"nnmf-subcell"`` or ``"ast-fallback"``.
    """
    config = config or NnmfConfig()
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    degrees = tuple(int(p) for p in degrees)
    overlay_q = tuple(p + 1 for p in degrees) if overlay_q is None else tuple(overlay_q)
    mdeg = moment_degrees(degrees, config.moment_degree_factor)
    moment_rule = ast_rule(lower, upper, domain, 0.0, config.moment_depth,
                           tuple(p // 2 + 1 for p in mdeg), axes=axes)
    b = integrate_basis(mdeg, moment_rule)
    m = len(b)
    threshold = config.residual_constant * _UNIT_ROUNDOFF * np.linalg.norm(b) * m
    info = FitInfo("ast-fallback", m=m, threshold=threshold)

    def attempt(cand):
        A = basis_matrix(mdeg, cand)
        try:
            w = nnls(A, b)
        except NNLSConvergenceError:
            return None
        info.residual, info.candidates = float(np.linalg.norm(b - A @ w)), len(cand)
        return w if info.residual < threshold else None

    best = None
    for L in range(config.L_start, config.L_max + 1):
        cand = candidate_grid(lower, upper, domain, tuple(p // 2 + 1 for p in mdeg), L * m,
                              config.max_points_per_axis, config.max_candidates)
        if cand is None:
            break
        info.L = L
        w = attempt(cand)
        if w is not None:
            best, info.scheme = (cand, w), "nnmf"
            break
    if best is None and config.subcell_candidates and moment_rule.size:
        cand = moment_rule.points[:config.max_candidates]
        w = attempt(cand)
        if w is not None:
            best, info.scheme = (cand, w), "nnmf-subcell"
    if best is None:
        info.scheme = "ast-fallback"
        rule = ast_rule(lower, upper, domain, alpha_fict, config.fallback_depth, overlay_q, axes=axes)
        return rule, info
    cand, w = best
    keep = w > 0.0
    info.nonzero = int(np.count_nonzero(keep))
    physical = QuadratureRule(cand[keep], w[keep] * (1.0 - alpha_fict), np.ones(info.nonzero))
    if alpha_fict > 0:
        overlay = gauss_rule(overlay_q, alpha=alpha_fict)
        return QuadratureRule.concatenate([physical, overlay]), info
    return physical, info


# -- per-mesh rule construction --------------------------------------------------

@dataclass
class CellDiagnostics:
    cell: int
    classification: str
    scheme: str
    points: int
    physical: int
    fictitious: int
    residual: float = float("nan")


@dataclass
class QuadratureSettings:
    """How the cells of a mesh are integrated.

    ``scheme`` selects the cut-cell method (``"nnmf"`` or ``"ast"``).
    ``interfaces`` are material interfaces that trigger space-tree
    subdivision without changing alpha; ``interface_resolution`` sets the
    target absolute sub-cell size there.
    """

    scheme: str = "nnmf"
    ast_depth: int = 5
    ast_axes: tuple[bool, ...] | None = None
    nnmf: NnmfConfig = field(default_factory=NnmfConfig)
    gauss_extra: int = 0
    classify_samples: int | None = None
    interfaces: tuple[ImplicitDomain, ...] = ()
    interface_resolution: float | None = None

    def __post_init__(self):
        if self.scheme not in ("nnmf", "ast"):
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")


@dataclass
class RuleSet:
    rules: dict[int, QuadratureRule]
    diagnostics: list[CellDiagnostics]

    def stats(self) -> dict[str, int]:
        total = sum(r.size for r in self.rules.values())
        physical = sum(r.n_physical for r in self.rules.values())
        return {"total": total, "physical": physical, "fictitious": total - physical}

    def write_diagnostics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell", "classification", "scheme", "points", "residual"])
            for dg in self.diagnostics:
                writer.writerow([dg.cell, dg.classification, dg.scheme, dg.points,
                                 "" if math.isnan(dg.residual) else f"{dg.residual:.6e}"])


def build_rules(mesh, dofmap, domain: ImplicitDomain, alpha_fict: float,
                settings: QuadratureSettings | None = None, cache: dict | None = None) -> RuleSet:
    """Quadrature rule for every leaf that touches the physical domain.

    Cells outside the domain are discarded. ``cache`` (keyed by level, index
    and degrees) lets refinement cycles reuse rules of unchanged cells.
    """
    settings = settings or QuadratureSettings()
    rules: dict[int, QuadratureRule] = {}
    diagnostics: list[CellDiagnostics] = []
    for leaf in mesh.leaves:
        cell = mesh.cells[leaf]
        pmax = dofmap.leaf_functions(leaf).max_degrees(mesh, leaf)
        key = (cell.level, cell.index, pmax, settings.scheme)
        if cache is not None and key in cache:
            rule, dg = cache[key]
        else:
            rule, dg = _cell_rule(mesh, leaf, pmax, domain, alpha_fict, settings)
            if cache is not None:
                cache[key] = (rule, dg)
        dg = CellDiagnostics(leaf, dg.classification, dg.scheme, dg.points, dg.physical,
                             dg.fictitious, dg.residual)
        diagnostics.append(dg)
        if rule is not None:
            rules[leaf] = rule
    return RuleSet(rules, diagnostics)


def _cell_rule(mesh, leaf, pmax, domain, alpha_fict, settings: QuadratureSettings):
    lo, hi = mesh.bounds(leaf)
    q = tuple(p + 1 + settings.gauss_extra for p in pmax)
    samples = settings.classify_samples or (max(pmax) + 3)
    cls = classify_cell(domain, lo, hi, samples)
    cut_iface = any(classify_cell(iface, lo, hi, samples) is CellClassification.CUT
                    for iface in settings.interfaces)
    residual = float("nan")
    if cls is CellClassification.OUTSIDE:
        return None, CellDiagnostics(leaf, cls.value, "discarded", 0, 0, 0)
    if cls is CellClassification.INSIDE and not cut_iface:
        rule = gauss_rule(q)
        scheme = "gauss"
    elif cls is CellClassification.INSIDE or settings.scheme == "ast":
        iface_depth = settings.ast_depth
        if cut_iface and settings.interface_resolution:
            h = float(np.max(hi - lo))
            iface_depth = max(0, int(math.ceil(math.log2(h / settings.interface_resolution))))
        depth = settings.ast_depth if cls is CellClassification.CUT else 0
        rule = ast_rule(lo, hi, domain, alpha_fict, depth, q, axes=settings.ast_axes,
                        interfaces=settings.interfaces if cut_iface else (),
                        interface_depth=iface_depth)
        scheme = "ast"
    else:
        rule, info = nnmf_rule(lo, hi, domain, alpha_fict, pmax, settings.nnmf, overlay_q=q,
                               axes=settings.ast_axes)
        scheme, residual = info.scheme, info.residual
    return rule, CellDiagnostics(leaf, cls.value, scheme, rule.size, rule.n_physical,
                                 rule.n_fictitious, residual)
