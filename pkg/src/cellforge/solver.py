"""Assembly, boundary conditions and the incremental Newton driver.

A :class:`Discretization` bundles a mesh, its DOF map, the quadrature rules
of all active leaves and the basis evaluated at those rules. Mechanical
problems use Mandel strain vectors (see :mod:`cellforge.material`):
``[e11]`` in 1D (uniaxial stress), ``[e11, e22, sqrt2 e12]`` in 2D (plane
strain) and the full six components in 3D.

Dirichlet data are imposed strongly on faces of the embedding box by an L2
projection onto the modes whose component lies in the face.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import CellClassification, ImplicitDomain, classify_cell
from .material import (IDENTITY2, Material, MaterialPointState, ReturnMappingError, elastic_tangent,
                       return_map, thermal_strain)
from .mesh import DofMap, MultiLevelMesh
from .quadrature import RuleSet, gauss_rule

SQRT2 = math.sqrt(2.0)
_PLANE_STRAIN = np.array([0, 1, 3])
_CACHE_BUDGET = 60_000_000  # doubles kept for cached basis evaluations


class LinearSolveError(RuntimeError):
    """Factorization failed or the system is not positive definite."""


class NewtonDivergence(RuntimeError):
    def __init__(self, step, residual, message="Newton iteration diverged"):
        super().__init__(f"{message} at step {step} (residual {residual:.3e})")
        self.step = step
        self.residual = residual


# -- discretization -------------------------------------------------------------------

@dataclass
class Block:
    """Integration data of one leaf cell."""

    leaf: int
    ids: np.ndarray          # scalar ids (nf,)
    xi: np.ndarray           # reference points (nq, d)
    x: np.ndarray            # physical points (nq, d)
    weights: np.ndarray      # physical weights w * det J (nq,)
    alphas: np.ndarray       # (nq,)
    offset: int              # first global quadrature-point index
    _N: np.ndarray | None = None
    _dN: np.ndarray | None = None

    @property
    def nq(self) -> int:
        return len(self.weights)


class Discretization:
    """Mesh, DOF map and evaluated quadrature of all active leaves."""

    def __init__(self, mesh: MultiLevelMesh, dofmap: DofMap, rules: RuleSet, domain: ImplicitDomain,
                 alpha_fict: float, cache: bool = True):
        self.mesh = mesh
        self.dofmap = dofmap
        self.rules = rules
        self.domain = domain
        self.alpha_fict = alpha_fict
        self.blocks: list[Block] = []
        offset = 0
        budget = _CACHE_BUDGET if cache else 0
        for leaf in sorted(rules.rules):
            rule = rules.rules[leaf]
            if rule.size == 0:
                continue
            lo, hi = mesh.bounds(leaf)
            h = hi - lo
            x = lo + 0.5 * (rule.points + 1.0) * h
            blk = Block(leaf, dofmap.leaf_functions(leaf).ids, rule.points, x,
                        rule.weights * float(np.prod(h / 2.0)), rule.alphas, offset)
            size = blk.nq * len(blk.ids) * (mesh.dim + 1)
            if size <= budget:
                blk._N, blk._dN, _ = dofmap.evaluate(leaf, rule.points)
                budget -= size
            self.blocks.append(blk)
            offset += blk.nq
        self.nq = offset

    @property
    def dim(self) -> int:
        return self.mesh.dim

    def basis(self, blk: Block):
        if blk._N is not None:
            return blk._N, blk._dN
        N, dN, _ = self.dofmap.evaluate(blk.leaf, blk.xi)
        return N, dN

    def points(self) -> np.ndarray:
        return np.vstack([b.x for b in self.blocks]) if self.blocks else np.zeros((0, self.dim))

    def alphas(self) -> np.ndarray:
        return np.concatenate([b.alphas for b in self.blocks]) if self.blocks else np.zeros(0)

    def interpolate(self, scalar_dofs) -> np.ndarray:
        """Values of a scalar field (same mesh) at every quadrature point."""
        out = np.zeros(self.nq)
        for blk in self.blocks:
            N, _ = self.basis(blk)
            out[blk.offset:blk.offset + blk.nq] = N @ np.asarray(scalar_dofs)[blk.ids]
        return out

    def quad_stats(self) -> dict[str, int]:
        return self.rules.stats()

    def unsupported(self) -> np.ndarray:
        """Field ids whose support lies only in discarded cells (held at zero)."""
        used = np.zeros(self.dofmap.ndofs // self.dofmap.ncomp, dtype=bool)
        for blk in self.blocks:
            used[blk.ids] = True
        return self.dofmap.vector_ids(np.flatnonzero(~used))


def build_discretization(mesh, dofmap, domain, alpha_fict, settings=None, cache=None) -> Discretization:
    from .quadrature import build_rules
    rules = build_rules(mesh, dofmap, domain, alpha_fict, settings, cache)
    return Discretization(mesh, dofmap, rules, domain, alpha_fict)


# -- strain-displacement operators ---------------------------------------------------

def n_strain(dim: int) -> int:
    return {1: 1, 2: 3, 3: 6}[dim]


def b_matrix(dN: np.ndarray) -> np.ndarray:
    """Strain-displacement matrices ``(nq, nstr, nf * d)`` for interleaved dofs."""
    nq, nf, d = dN.shape
    B = np.zeros((nq, n_strain(d), nf * d))
    if d == 1:
        B[:, 0, :] = dN[:, :, 0]
    elif d == 2:
        B[:, 0, 0::2] = dN[:, :, 0]
        B[:, 1, 1::2] = dN[:, :, 1]
        B[:, 2, 0::2] = dN[:, :, 1] / SQRT2
        B[:, 2, 1::2] = dN[:, :, 0] / SQRT2
    else:
        dx, dy, dz = dN[:, :, 0], dN[:, :, 1], dN[:, :, 2]
        B[:, 0, 0::3] = dx
        B[:, 1, 1::3] = dy
        B[:, 2, 2::3] = dz
        B[:, 3, 0::3] = dy / SQRT2
        B[:, 3, 1::3] = dx / SQRT2
        B[:, 4, 1::3] = dz / SQRT2
        B[:, 4, 2::3] = dy / SQRT2
        B[:, 5, 0::3] = dz / SQRT2
        B[:, 5, 2::3] = dx / SQRT2
    return B


def embed_strain(eps: np.ndarray, dim: int) -> np.ndarray:
    """Lift reduced strains to Mandel 6-vectors (plane strain in 2D)."""
    out = np.zeros((len(eps), 6))
    if dim == 3:
        return eps.copy()
    if dim == 2:
        out[:, _PLANE_STRAIN] = eps
        return out
    out[:, 0] = eps[:, 0]
    return out


def reduce_response(stress: np.ndarray, tangent: np.ndarray, dim: int):
    if dim == 3:
        return stress, tangent
    if dim == 2:
        return stress[:, _PLANE_STRAIN], tangent[:, _PLANE_STRAIN][:, :, _PLANE_STRAIN]
    raise ValueError("1D mechanics uses the uniaxial elastic path")


# -- boundary data ------------------------------------------------------------------

def face_rule(mesh: MultiLevelMesh, leaf: int, axis: int, side: int, q):
    """Gauss points on a leaf face in leaf reference coordinates plus physical weights."""
    d = mesh.dim
    lo, hi = mesh.bounds(leaf)
    h = hi - lo
    others = [a for a in range(d) if a != axis]
    if d == 1:
        xi = np.array([[-1.0 if side == 0 else 1.0]])
        return xi, np.ones(1)
    qv = np.broadcast_to(np.asarray(q, dtype=int), (d,))
    g = gauss_rule(tuple(qv[others]))
    xi = np.empty((g.size, d))
    xi[:, others] = g.points
    xi[:, axis] = -1.0 if side == 0 else 1.0
    return xi, g.weights * float(np.prod(h[others] / 2.0))


FACE_DEPTH = 6


def physical_face_rule(mesh: MultiLevelMesh, leaf: int, axis: int, side: int, q,
                       domain: ImplicitDomain | None, depth: int = FACE_DEPTH):
    """Face rule restricted to the physical part of a leaf face.

    Cut portions of the face are bisected up to ``depth`` times; sub-faces
    at full depth keep their points with an inside indicator.
    """
    xi, w = face_rule(mesh, leaf, axis, side, q)
    if domain is None or mesh.dim == 1:
        return (xi, w) if domain is None else (xi, w * domain.contains(_face_x(mesh, leaf, xi)))
    lo, hi = mesh.bounds(leaf)
    others = [a for a in range(mesh.dim) if a != axis]
    fixed = -1.0 if side == 0 else 1.0

    def physical(rlo, rhi):
        a = np.full(mesh.dim, fixed)
        b = np.full(mesh.dim, fixed)
        a[others], b[others] = rlo, rhi
        return lo + 0.5 * (a + 1.0) * (hi - lo), lo + 0.5 * (b + 1.0) * (hi - lo)

    pts, wts = [], []
    stack = [(np.full(len(others), -1.0), np.full(len(others), 1.0), 0)]
    while stack:
        rlo, rhi, level = stack.pop()
        cls = classify_cell(domain, *physical(rlo, rhi))
        if cls is CellClassification.OUTSIDE:
            continue
        if cls is CellClassification.CUT and level < depth:
            mid = 0.5 * (rlo + rhi)
            for corner in np.ndindex(*(2,) * len(others)):
                c = np.array(corner)
                stack.append((np.where(c, mid, rlo), np.where(c, rhi, mid), level + 1))
            continue
        scale = 0.5 * (rhi - rlo)
        sub = xi.copy()
        sub[:, others] = rlo + (xi[:, others] + 1.0) * scale
        sw = w * float(np.prod(scale))
        if cls is CellClassification.CUT:
            sw = sw * domain.contains(_face_x(mesh, leaf, sub))
        pts.append(sub)
        wts.append(sw)
    if not pts:
        return xi[:0], w[:0]
    return np.concatenate(pts), np.concatenate(wts)


def _face_x(mesh, leaf, xi):
    lo, hi = mesh.bounds(leaf)
    return lo + 0.5 * (xi + 1.0) * (hi - lo)


def project_face(dofmap: DofMap, axis: int, side: int, func, extra: int = 2):
    """L2 projection of scalar face data onto the face modes.

    Returns ``(scalar ids, coefficients)``; modes not listed vanish on the face.
    """
    mesh = dofmap.mesh
    ids = dofmap.face_ids(axis, side)
    where = {int(g): k for k, g in enumerate(ids)}
    M = np.zeros((len(ids), len(ids)))
    rhs = np.zeros(len(ids))
    for leaf in dofmap.face_leaves(axis, side):
        funcs = dofmap.leaf_functions(leaf)
        pmax = funcs.max_degrees(mesh, leaf)
        xi, w = face_rule(mesh, leaf, axis, side, tuple(p + 1 + extra for p in pmax))
        N, _, lids = dofmap.evaluate(leaf, xi, with_gradients=False)
        keep = [k for k, g in enumerate(lids) if int(g) in where]
        if not keep:
            continue
        loc = np.array([where[int(lids[k])] for k in keep])
        Nf = N[:, keep]
        lo, hi = mesh.bounds(leaf)
        x = lo + 0.5 * (xi + 1.0) * (hi - lo)
        g = np.broadcast_to(np.asarray(func(x) if callable(func) else func, dtype=float), (len(x),))
        M[np.ix_(loc, loc)] += Nf.T @ (w[:, None] * Nf)
        rhs[loc] += Nf.T @ (w * g)
    if len(ids) == 0:
        return ids, np.zeros(0)
    coef = np.linalg.solve(M, rhs)
    return ids, coef


FACE_NAMES = {"x-": (0, 0), "x+": (0, 1), "y-": (1, 0), "y+": (1, 1), "z-": (2, 0), "z+": (2, 1)}


def parse_face(face) -> tuple[int, int]:
    if isinstance(face, str):
        if face not in FACE_NAMES:
            raise ValueError(f"unknown face {face!r}; use one of {sorted(FACE_NAMES)}")
        return FACE_NAMES[face]
    axis, side = face
    return int(axis), int(side)


@dataclass
class DirichletBC:
    """Prescribed value of one field component on a box face.

    ``value`` is a number or a function of physical points ``(n, d)``; with
    ``ramp`` the value grows linearly over the load increments.
    """

    face: str | tuple[int, int]
    component: int
    value: float | object = 0.0
    ramp: bool = True


@dataclass
class Traction:
    """Surface load on a box face: constant vector or function of points returning ``(n, d)``."""

    face: str | tuple[int, int]
    value: object


@dataclass
class LoadProgram:
    """Incremental loading.

    ``rate`` (length per second) converts the increment of the largest
    ramped displacement into the time step; ``dt`` sets it directly.
    """

    increments: int = 1
    dirichlet: list[DirichletBC] = field(default_factory=list)
    tractions: list[Traction] = field(default_factory=list)
    body_force: tuple[float, ...] | None = None
    rate: float | None = None
    dt: float | None = None
    monitors: dict[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        if self.increments < 1:
            raise ValueError("need at least one increment")
        if self.rate is not None and self.rate <= 0:
            raise ValueError("rate must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")

    def time_step(self) -> float:
        if self.dt is not None:
            return self.dt
        if self.rate is not None:
            amp = max((abs(float(bc.value)) for bc in self.dirichlet
                       if bc.ramp and not callable(bc.value)), default=0.0)
            if amp == 0.0:
                raise ValueError("rate given but no ramped displacement to derive dt from")
            return amp / self.increments / self.rate
        return 1.0


@dataclass
class NewtonConfig:
    """Newton settings; ``line_search`` caps backtracking halvings per iteration (0 = off)."""

    tol: float = 1e-8
    abs_floor: float = 1e-14
    max_iter: int = 50
    divergence_factor: float = 1e4
    line_search: int = 6

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class StepRecord:
    step: int
    load_factor: float
    time: float
    u: np.ndarray
    reactions: dict[str, float]
    iterations: int
    residuals: list[float]


@dataclass
class AnalysisResult:
    steps: list[StepRecord]
    quad_stats: dict[str, int]
    wall_time: float
    states: MaterialPointState
    discretization: Discretization

    @property
    def u(self) -> np.ndarray:
        return self.steps[-1].u


# -- linear algebra ---------------------------------------------------------------------

def linear_solve(K, r, rtol: float = 1e-10) -> np.ndarray:
    """Sparse direct solve of an SPD system with a residual check.

    Uses a symmetric-mode LU factorization with fill-reducing ordering on
    ``K + K^T`` and no off-diagonal pivoting; the pivots are then the
    ``D`` of an ``L D L^T`` factorization, so a non-positive pivot reveals
    a matrix that is not positive definite.
    """
    r = np.asarray(r, dtype=float)
    if r.size == 0:
        return r.copy()
    K = sp.csc_matrix(K)
    try:
        lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise LinearSolveError(f"factorization failed ({exc}); the system is singular, "
                               "consider a larger alpha_fict or more Dirichlet constraints") from exc
    pivots = lu.U.diagonal()
    if np.any(pivots <= 0) or not np.all(np.isfinite(pivots)):
        raise LinearSolveError("non-positive pivot: stiffness matrix is not positive definite; "
                               "consider a larger alpha_fict")
    x = lu.solve(r)
    rnorm = np.linalg.norm(r)
    for _ in range(3):
        res = r - K @ x
        if np.linalg.norm(res) <= rtol * rnorm:
            break
        x += lu.solve(res)
    else:
        if np.linalg.norm(r - K @ x) > rtol * rnorm:
            raise LinearSolveError("linear solve residual above tolerance after refinement")
    return x


class _Accumulator:
    """Chunked COO accumulation into a CSR matrix."""

    def __init__(self, n, chunk=4_000_000):
        self.n = n
        self.chunk = chunk
        self.rows, self.cols, self.vals = [], [], []
        self.count = 0
        self.total = sp.csr_matrix((n, n))

    def add(self, ids, Ke):
        r = np.repeat(ids, len(ids))
        c = np.tile(ids, len(ids))
        self.rows.append(r)
        self.cols.append(c)
        self.vals.append(Ke.ravel())
        self.count += len(r)
        if self.count >= self.chunk:
            self._flush()

    def _flush(self):
        if self.rows:
            self.total = self.total + sp.csr_matrix(
                (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
                shape=(self.n, self.n))
        self.rows, self.cols, self.vals, self.count = [], [], [], 0

    def matrix(self):
        self._flush()
        return self.total


# -- mechanics -----------------------------------------------------------------------------

@dataclass
class MechanicsSetup:
    """Per-point material data of a mechanical problem.

    ``moduli`` optionally maps physical points ``(n, d)`` to ``(E, nu)``
    arrays, overriding the material's elastic constants (graded materials).
    """

    material: Material
    temperature: np.ndarray | None = None
    moduli: object = None


class Mechanics:
    """Internal force and tangent of a displacement field."""

    def __init__(self, disc: Discretization, setup: MechanicsSetup):
        if disc.dofmap.ncomp != disc.dim:
            raise ValueError("mechanics needs a vector DOF map with one component per axis")
        self.disc = disc
        self.setup = setup
        mat = setup.material
        n = disc.nq
        T = setup.temperature if setup.temperature is not None else np.full(n, mat.T0)
        self.T = np.asarray(T, dtype=float)
        if setup.moduli is not None:
            E, nu = setup.moduli(disc.points())
            E = np.broadcast_to(np.asarray(E, dtype=float), (n,))
            nu = np.broadcast_to(np.asarray(nu, dtype=float), (n,))
            self.K = E / (3.0 * (1.0 - 2.0 * nu))
            self.G = E / (2.0 * (1.0 + nu))
            self.E = E
        else:
            self.K, self.G = mat.elastic.moduli(self.T)
            self.E = 9.0 * self.K * self.G / (3.0 * self.K + self.G)
        self.alphas = disc.alphas()
        self.physical = self.alphas >= 1.0
        if disc.dim == 1 and mat.hardening is not None:
            raise ValueError("1D mechanics supports linear elasticity only")
        self.elastic_material = Material(mat.elastic, None, None, mat.expansion, mat.T0)

    def strains(self, u) -> np.ndarray:
        disc = self.disc
        eps = np.zeros((disc.nq, n_strain(disc.dim)))
        for blk in disc.blocks:
            _, dN = disc.basis(blk)
            vids = disc.dofmap.vector_ids(blk.ids)
            eps[blk.offset:blk.offset + blk.nq] = b_matrix(dN) @ u[vids]
        return eps

    def response(self, eps, states: MaterialPointState, dt: float):
        """Stress, tangent (reduced) and trial states at all points."""
        d = self.disc.dim
        n = len(eps)
        if d == 1:
            sig = self.E[:, None] * eps
            if self.setup.material.expansion is not None:
                eth = thermal_strain(self.setup.material.expansion, self.T, self.setup.material.T0)[:, 0]
                sig = self.E[:, None] * (eps - eth[:, None])
            return sig, self.E[:, None, None].copy(), states.copy()
        eps6 = embed_strain(eps, d)
        stress = np.zeros((n, 6))
        tangent = np.zeros((n, 6, 6))
        trial = states.copy()
        phys = np.nonzero(self.physical)[0]
        fict = np.nonzero(~self.physical)[0]
        for sel, mat in ((phys, self.setup.material), (fict, self.elastic_material)):
            if len(sel) == 0:
                continue
            st = MaterialPointState(states.eps_vp[sel], states.ebar[sel], self.T[sel])
            res = return_map(st, eps6[sel], self.T[sel], dt, mat, self.K[sel], self.G[sel])
            stress[sel] = res.stress
            tangent[sel] = res.tangent
            trial.eps_vp[sel] = res.state.eps_vp
            trial.ebar[sel] = res.state.ebar
        s, C = reduce_response(stress, tangent, d)
        return s, C, trial

    def internal(self, u, states: MaterialPointState, dt: float):
        """Internal force vector, point tangents and trial states."""
        disc = self.disc
        f = np.zeros(disc.dofmap.ndofs)
        eps = self.strains(u)
        sig, C, trial = self.response(eps, states, dt)
        for blk in disc.blocks:
            _, dN = disc.basis(blk)
            B = b_matrix(dN)
            sl = slice(blk.offset, blk.offset + blk.nq)
            wa = blk.weights * blk.alphas
            vids = disc.dofmap.vector_ids(blk.ids)
            f[vids] += np.einsum("qsi,qs->i", B, sig[sl] * wa[:, None])
        return f, C, trial

    def stiffness(self, C) -> sp.csr_matrix:
        """Tangent matrix from point tangents ``C``."""
        disc = self.disc
        acc = _Accumulator(disc.dofmap.ndofs)
        for blk in disc.blocks:
            _, dN = disc.basis(blk)
            B = b_matrix(dN)
            sl = slice(blk.offset, blk.offset + blk.nq)
            wa = blk.weights * blk.alphas
            CB = np.einsum("qst,qti->qsi", C[sl] * wa[:, None, None], B)
            Ke = B.reshape(-1, B.shape[2]).T @ CB.reshape(-1, B.shape[2])
            acc.add(disc.dofmap.vector_ids(blk.ids), 0.5 * (Ke + Ke.T))
        return acc.matrix()

    def assemble(self, u, states: MaterialPointState, dt: float, tangent: bool = True):
        """Internal force vector, tangent matrix and trial states."""
        f, C, trial = self.internal(u, states, dt)
        return f, (self.stiffness(C) if tangent else None), trial


def assemble(disc: Discretization, material: Material, states: MaterialPointState, u,
             temperature=None, dt: float = 1.0, moduli=None):
    """Internal force and tangent stiffness of the displacement ``u``."""
    mech = Mechanics(disc, MechanicsSetup(material, temperature, moduli))
    f, K, _ = mech.assemble(np.asarray(u, dtype=float), states, dt)
    return f, K


def traction_vector(dofmap: DofMap, traction: Traction, domain: ImplicitDomain | None = None,
                    extra: int = 2) -> np.ndarray:
    """Load vector of a face traction restricted to the physical part of the face."""
    mesh = dofmap.mesh
    axis, side = parse_face(traction.face)
    nc = dofmap.ncomp
    f = np.zeros(dofmap.ndofs)
    for leaf in dofmap.face_leaves(axis, side):
        funcs = dofmap.leaf_functions(leaf)
        pmax = funcs.max_degrees(mesh, leaf)
        xi, w = physical_face_rule(mesh, leaf, axis, side, tuple(p + 1 + extra for p in pmax), domain)
        if len(w) == 0:
            continue
        x = _face_x(mesh, leaf, xi)
        N, _, ids = dofmap.evaluate(leaf, xi, with_gradients=False)
        t = traction.value(x) if callable(traction.value) else np.broadcast_to(
            np.asarray(traction.value, dtype=float), (len(x), nc))
        vids = dofmap.vector_ids(ids)
        f[vids] += (N.T @ (w[:, None] * t)).ravel()
    return f


def body_vector(disc: Discretization, body) -> np.ndarray:
    f = np.zeros(disc.dofmap.ndofs)
    body = np.asarray(body, dtype=float)
    for blk in disc.blocks:
        N, _ = disc.basis(blk)
        wa = blk.weights * blk.alphas
        vids = disc.dofmap.vector_ids(blk.ids)
        f[vids] += np.outer(N.T @ wa, body).ravel()
    return f


def _dirichlet_data(dofmap: DofMap, bcs):
    """Constrained field ids with their full (unramped) and fixed parts."""
    nc = dofmap.ncomp
    values: dict[int, tuple[float, bool]] = {}
    for bc in bcs:
        axis, side = parse_face(bc.face)
        ids, coef = project_face(dofmap, axis, side, bc.value)
        for g, c in zip(ids, coef):
            values[int(g) * nc + bc.component] = (float(c), bc.ramp)
    keys = np.array(sorted(values), dtype=int)
    vals = np.array([values[k][0] for k in keys])
    ramp = np.array([values[k][1] for k in keys], dtype=bool)
    return keys, vals, ramp


def face_unit_coefficients(dofmap: DofMap, face, component: int):
    """Field ids and coefficients of the unit trace on a face for one component."""
    axis, side = parse_face(face)
    ids, coef = project_face(dofmap, axis, side, 1.0)
    return ids * dofmap.ncomp + component, coef


def run_load_steps(disc: Discretization, setup: MechanicsSetup, program: LoadProgram,
                   newton: NewtonConfig | None = None, domain: ImplicitDomain | None = None,
                   callback=None) -> AnalysisResult:
    """Incremental-iterative solution of the mechanical problem.

    Each increment ramps the prescribed values and surface loads by
    ``step / increments`` and iterates Newton steps on the free DOFs until
    the residual drops below ``tol * max(reference, floor)``. Material
    states are committed only after convergence.
    """
    newton = newton or NewtonConfig()
    t0 = time.perf_counter()
    mech = Mechanics(disc, setup)
    dofmap = disc.dofmap
    n = dofmap.ndofs
    domain = domain if domain is not None else disc.domain
    cids, cvals, cramp = _dirichlet_data(dofmap, program.dirichlet)
    free = np.setdiff1d(np.arange(n), np.union1d(cids, disc.unsupported()))
    f_load = np.zeros(n)
    for tr in program.tractions:
        f_load += traction_vector(dofmap, tr, domain)
    if program.body_force is not None:
        f_load += body_vector(disc, program.body_force)
    monitors = {name: face_unit_coefficients(dofmap, face, comp)
                for name, (face, comp) in program.monitors.items()}
    dt = program.time_step()
    states = MaterialPointState.zeros(disc.nq, mech.T)
    u = np.zeros(n)
    steps: list[StepRecord] = []
    f_int, C, _ = mech.internal(u, states, dt)
    for step in range(1, program.increments + 1):
        lam = step / program.increments
        target = np.where(cramp, lam * cvals, cvals)
        f_ext = lam * f_load
        ref_ext = np.linalg.norm(f_ext[free])
        residuals: list[float] = []
        # predictor: tangent of the last converged state, prescribed increment as load
        du_c = target - u[cids]
        r = f_ext - f_int
        K = mech.stiffness(C)
        rhs = r[free] - K[free][:, cids] @ du_c
        ref = ref_ext if ref_ext > 0 else float(np.linalg.norm(rhs))
        u[cids] = target
        if np.any(rhs) or np.any(du_c):
            u[free] += linear_solve(K[free][:, free], rhs)
        iterations = 1
        pending = None
        while True:
            if pending is not None:
                f_int, C, trial = pending
                pending = None
            else:
                try:
                    f_int, C, trial = mech.internal(u, states, dt)
                except ReturnMappingError as exc:
                    raise NewtonDivergence(step, residuals[-1] if residuals else float("nan"),
                                           f"material update failed: {exc}") from exc
            r = f_ext - f_int
            norm = float(np.linalg.norm(r[free]))
            residuals.append(norm)
            if norm <= newton.tol * max(ref, newton.abs_floor):
                break
            if iterations >= newton.max_iter:
                raise NewtonDivergence(step, norm, "Newton iteration limit reached")
            if ref > 0 and norm > newton.divergence_factor * ref:
                raise NewtonDivergence(step, norm)
            K = mech.stiffness(C)
            du = linear_solve(K[free][:, free], r[free])
            u[free] += du
            iterations += 1
            # backtrack while the residual grows; the last trial is kept regardless
            step_len = 1.0
            for _ in range(newton.line_search):
                try:
                    pending = mech.internal(u, states, dt)
                    trial_norm = float(np.linalg.norm((f_ext - pending[0])[free]))
                except ReturnMappingError:
                    pending, trial_norm = None, float("inf")
                if trial_norm < norm:
                    break
                pending = None
                step_len *= 0.5
                u[free] -= step_len * du
        states = trial
        reactions = {name: float(f_int[ids] @ coef) for name, (ids, coef) in monitors.items()}
        rec = StepRecord(step, lam, step * dt, u.copy(), reactions, iterations, residuals)
        steps.append(rec)
        if callback is not None:
            callback(rec)
    return AnalysisResult(steps, disc.quad_stats(), time.perf_counter() - t0, states, disc)


def strain_energy(disc: Discretization, setup: MechanicsSetup, u) -> float:
    """``0.5 * u . K u`` evaluated by quadrature (linear elastic)."""
    mech = Mechanics(disc, setup)
    eps = mech.strains(np.asarray(u, dtype=float))
    sig, _, _ = mech.response(eps, MaterialPointState.zeros(disc.nq, mech.T), 1.0)
    wa = np.concatenate([b.weights * b.alphas for b in disc.blocks])
    return 0.5 * float(np.sum(wa * np.sum(sig * eps, axis=1)))
