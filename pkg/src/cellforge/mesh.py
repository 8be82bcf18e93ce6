"""Multi-level hp overlay meshes on a Cartesian grid.

A base grid of level-0 cells is refined by isotropic bisection into
``2**d`` children per cell. Each level carries its own integrated Legendre
basis; the composed field on a leaf is the sum of the active functions of
the leaf and all of its ancestors.

Topological components are addressed per level by an integer multi-index
``c = 2 * i + e`` where ``i`` is a cell index at that level and
``e[a] in {0, 1, 2}``: even entries sit on a grid line of the axis, odd
entries span a cell along it. A vertex has only even entries, the cell
interior only odd ones.

Two rules decide which components carry shape functions on levels
``k >= 1``:

* continuity: components on the boundary of the level-k region (away from
  the embedding box boundary) carry nothing, so every overlay vanishes on
  its own rim;
* independence: components whose adjacent level-k cells are all refined
  carry nothing, because the finer overlay spans those modes.
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass, field

import numpy as np

from .basis import MAX_DEGREE, integrated_legendre_table, tensor_values

DEFAULT_MAX_DEPTH = 14


class MeshError(ValueError):
    """Raised for invalid mesh operations."""


@dataclass(frozen=True)
class GridSpec:
    """Cartesian base grid: origin, per-axis cell size and cell counts."""

    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        spacing = tuple(float(v) for v in self.spacing)
        counts = tuple(int(v) for v in self.counts)
        if not (len(origin) == len(spacing) == len(counts)) or not 1 <= len(counts) <= 3:
            raise MeshError("origin, spacing and counts must share a dimension in 1..3")
        if any(h <= 0 for h in spacing):
            raise MeshError("spacing must be positive")
        if any(n < 1 for n in counts):
            raise MeshError("counts must be >= 1")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_box(cls, lower, upper, counts) -> "GridSpec":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        counts = np.asarray(counts, dtype=int)
        return cls(tuple(lower), tuple((upper - lower) / counts), tuple(counts))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.origin) + np.array(self.spacing) * np.array(self.counts)


@dataclass
class Cell:
    id: int
    level: int
    index: tuple[int, ...]
    parent: int | None
    children: list[int] = field(default_factory=list)
    degrees: tuple[int, ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children


def scheduled_degrees(base: tuple[int, ...], level: int, schedule: str, floor: int = 2) -> tuple[int, ...]:
    """Per-axis degrees of a refinement level.

    ``"reduce"`` lowers the degree by one per level down to ``floor`` (never
    raising a base degree already below it); ``"constant"`` keeps the base.
    """
    if schedule == "constant":
        return tuple(base)
    if schedule == "reduce":
        return tuple(min(p, max(p - level, floor)) for p in base)
    raise MeshError(f"unknown degree schedule {schedule!r}")


class MultiLevelMesh:
    """Hierarchy of cells produced by repeated isotropic bisection."""

    def __init__(self, grid: GridSpec, degrees, schedule: str = "reduce",
                 max_depth: int = DEFAULT_MAX_DEPTH, degree_floor: int = 2):
        degrees = tuple(int(p) for p in np.broadcast_to(np.asarray(degrees, dtype=int), (grid.dim,)))
        if any(p < 1 or p > MAX_DEGREE for p in degrees):
            raise MeshError(f"degrees must lie in [1, {MAX_DEGREE}]")
        scheduled_degrees(degrees, 0, schedule)
        self.grid = grid
        self.base_degrees = degrees
        self.schedule = schedule
        self.max_depth = int(max_depth)
        self.degree_floor = int(degree_floor)
        self.cells: list[Cell] = []
        self._lookup: dict[tuple[int, tuple[int, ...]], int] = {}

    # -- construction -------------------------------------------------
    def _add_cell(self, level, index, parent) -> int:
        cid = len(self.cells)
        self.cells.append(Cell(cid, level, tuple(index), parent, [], self.degrees_at(level)))
        self._lookup[(level, tuple(index))] = cid
        return cid

    def copy(self) -> "MultiLevelMesh":
        return copy.deepcopy(self)

    # -- queries ------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.grid.dim

    def degrees_at(self, level: int) -> tuple[int, ...]:
        return scheduled_degrees(self.base_degrees, level, self.schedule, self.degree_floor)

    def lookup(self, level: int, index) -> int | None:
        return self._lookup.get((level, tuple(index)))

    def level_counts(self, level: int) -> np.ndarray:
        return np.array(self.grid.counts) * 2 ** level

    def cell_size(self, cid: int) -> np.ndarray:
        return np.array(self.grid.spacing) / 2 ** self.cells[cid].level

    def bounds(self, cid: int) -> tuple[np.ndarray, np.ndarray]:
        cell = self.cells[cid]
        h = self.cell_size(cid)
        lo = np.array(self.grid.origin) + np.array(cell.index) * h
        return lo, lo + h

    def ancestors(self, cid: int) -> list[int]:
        """Chain from the level-0 root down to ``cid`` inclusive."""
        chain = [cid]
        while self.cells[chain[-1]].parent is not None:
            chain.append(self.cells[chain[-1]].parent)
        return chain[::-1]

    @property
    def leaves(self) -> list[int]:
        return [c.id for c in self.cells if c.is_leaf]

    @property
    def depth(self) -> int:
        return max(c.level for c in self.cells)

    def find_leaf(self, x, tol: float = 1e-12) -> int:
        """Leaf cell containing the physical point ``x``."""
        x = np.asarray(x, dtype=float)
        lower, upper = self.grid.lower, self.grid.upper
        span = upper - lower
        if np.any(x < lower - tol * span) or np.any(x > upper + tol * span):
            raise MeshError(f"point {x} outside the embedding box")
        rel = (x - lower) / np.array(self.grid.spacing)
        idx = np.clip(np.floor(rel).astype(int), 0, np.array(self.grid.counts) - 1)
        cid = self.lookup(0, idx)
        while self.cells[cid].children:
            lo, hi = self.bounds(cid)
            bits = (x >= 0.5 * (lo + hi)).astype(int)
            child_index = 2 * np.array(self.cells[cid].index) + bits
            cid = self.lookup(self.cells[cid].level + 1, child_index)
        return cid

    def on_box_face(self, cid: int, axis: int, side: int) -> bool:
        cell = self.cells[cid]
        if side == 0:
            return cell.index[axis] == 0
        return cell.index[axis] == self.level_counts(cell.level)[axis] - 1

    def neighbor(self, cid: int, axis: int, side: int):
        """Classify what lies across one face of a leaf.

        Returns ``("boundary", None)``, ``("same", id)`` for a same-level
        cell (leaf or refined) or ``("coarser", id)`` with the leaf covering
        the region when no same-level cell exists there.
        """
        if self.on_box_face(cid, axis, side):
            return "boundary", None
        cell = self.cells[cid]
        index = list(cell.index)
        index[axis] += 1 if side == 1 else -1
        level = cell.level
        nid = self.lookup(level, index)
        if nid is not None:
            return "same", nid
        while nid is None:
            index = [i // 2 for i in index]
            level -= 1
            nid = self.lookup(level, index)
        return "coarser", nid


def build_base_mesh(spec: GridSpec, degrees, schedule: str = "reduce",
                    max_depth: int = DEFAULT_MAX_DEPTH) -> MultiLevelMesh:
    """Level-0 mesh tiling the embedding box."""
    mesh = MultiLevelMesh(spec, degrees, schedule, max_depth)
    for index in itertools.product(*[range(n) for n in spec.counts]):
        mesh._add_cell(0, index, None)
    return mesh


def refine_cells(mesh: MultiLevelMesh, targets) -> MultiLevelMesh:
    """Bisect every target leaf into ``2**d`` children; returns a new mesh."""
    targets = sorted(set(int(t) for t in targets))
    new = mesh.copy()
    for t in targets:
        if t < 0 or t >= len(new.cells):
            raise MeshError(f"unknown cell id {t}")
        cell = new.cells[t]
        if cell.children:
            raise MeshError(f"cell {t} is not a leaf")
        if cell.level + 1 > new.max_depth:
            raise MeshError(f"refining cell {t} exceeds the maximum depth {new.max_depth}")
        for bits in itertools.product((0, 1), repeat=new.dim):
            child_index = tuple(2 * i + b for i, b in zip(cell.index, bits))
            cell.children.append(new._add_cell(cell.level + 1, child_index, t))
    return new


def coarsen_cells(mesh: MultiLevelMesh, parents) -> MultiLevelMesh:
    """Remove the children of each parent (children must all be leaves).

    Cell ids are renumbered compactly, preserving their relative order.
    """
    parents = set(int(p) for p in parents)
    removed = set()
    for p in parents:
        children = mesh.cells[p].children
        if not children:
            raise MeshError(f"cell {p} has no children to remove")
        if any(mesh.cells[c].children for c in children):
            raise MeshError(f"cell {p} has refined children")
        removed.update(children)
    new = MultiLevelMesh(mesh.grid, mesh.base_degrees, mesh.schedule, mesh.max_depth, mesh.degree_floor)
    remap = {}
    for cell in mesh.cells:
        if cell.id in removed:
            continue
        remap[cell.id] = len(remap)
    for cell in mesh.cells:
        if cell.id in removed:
            continue
        parent = None if cell.parent is None else remap[cell.parent]
        children = [] if cell.id in parents else [remap[c] for c in cell.children]
        new.cells.append(Cell(remap[cell.id], cell.level, cell.index, parent, children, cell.degrees))
        new._lookup[(cell.level, cell.index)] = remap[cell.id]
    return new


# -- degree-of-freedom activation -----------------------------------------

def _component_of_mode(k: np.ndarray) -> np.ndarray:
    """Map 1D mode indices to component offsets e in {0, 1, 2}."""
    return np.where(k == 1, 0, np.where(k == 2, 2, 1))


@dataclass
class _LocalTable:
    """Per-degree-tuple description of the cell's full tensor space."""

    indices: np.ndarray   # (nf, d) 1-based mode indices
    offsets: np.ndarray   # (nf, d) component offsets e
    mode: np.ndarray      # (nf,) mode number inside its component


def _local_table(degrees: tuple[int, ...]) -> _LocalTable:
    idx = np.array(list(itertools.product(*[range(1, p + 2) for p in degrees])), dtype=int)
    idx = idx.reshape(-1, len(degrees))
    e = _component_of_mode(idx)
    mode = np.zeros(len(idx), dtype=int)
    for a, p in enumerate(degrees):
        internal = e[:, a] == 1
        mode = np.where(internal, mode * (p - 1) + (idx[:, a] - 3), mode)
    return _LocalTable(idx, e, mode)


@dataclass
class LeafFunctions:
    """Active functions supported on a leaf, grouped by contributing cell."""

    groups: list[tuple[int, np.ndarray, np.ndarray]]  # (cell id, indices, scalar ids)

    @property
    def ids(self) -> np.ndarray:
        if not self.groups:
            return np.zeros(0, dtype=int)
        return np.concatenate([g[2] for g in self.groups])

    def max_degrees(self, mesh: MultiLevelMesh, leaf: int) -> tuple[int, ...]:
        degs = np.array(mesh.cells[leaf].degrees)
        for cid, _, _ in self.groups:
            degs = np.maximum(degs, mesh.cells[cid].degrees)
        return tuple(int(p) for p in degs)


class DofMap:
    """Global numbering of the active modes of a multi-level mesh.

    Scalar ids run over active components sorted by ``(level, c)``; a field
    with ``ncomp`` components uses interleaved ids ``s * ncomp + comp``.
    """

    def __init__(self, mesh: MultiLevelMesh, ncomp: int = 1):
        self.mesh = mesh
        self.ncomp = int(ncomp)
        self.inactive: set[tuple[int, tuple[int, ...]]] = set()
        self.components: dict[tuple[int, tuple[int, ...]], tuple[int, int]] = {}
        self._tables: dict[tuple[int, ...], _LocalTable] = {}
        self._leaf_cache: dict[int, LeafFunctions] = {}
        self._activate()

    # -- activation ---------------------------------------------------
    def _activate(self):
        mesh = self.mesh
        d = mesh.dim
        offsets = list(itertools.product((0, 1, 2), repeat=d))
        all_components: set[tuple[int, tuple[int, ...]]] = set()
        by_level: dict[int, list[Cell]] = {}
        for cell in mesh.cells:
            by_level.setdefault(cell.level, []).append(cell)
            base = [2 * i for i in cell.index]
            for e in offsets:
                all_components.add((cell.level, tuple(b + o for b, o in zip(base, e))))

        inactive = set()
        for level, cells in by_level.items():
            if level == 0:
                continue
            nlev = mesh.level_counts(level)
            for cell in cells:
                for axis in range(d):
                    for side in (0, 1):
                        nb = list(cell.index)
                        nb[axis] += 1 if side else -1
                        if nb[axis] < 0 or nb[axis] >= nlev[axis]:
                            continue
                        if mesh.lookup(level, nb) is not None:
                            continue
                        ranges = []
                        for b in range(d):
                            if b == axis:
                                ranges.append((2 * cell.index[b] + 2 * side,))
                            else:
                                ranges.append(tuple(2 * cell.index[b] + o for o in (0, 1, 2)))
                        for c in itertools.product(*ranges):
                            inactive.add((level, c))

        for key in all_components:
            if key in inactive:
                continue
            level, c = key
            cand = []
            for ca in c:
                cand.append(((ca - 1) // 2,) if ca % 2 else (ca // 2 - 1, ca // 2))
            adjacent = [mesh.lookup(level, idx) for idx in itertools.product(*cand)]
            adjacent = [a for a in adjacent if a is not None]
            if adjacent and all(mesh.cells[a].children for a in adjacent):
                inactive.add(key)

        self.inactive = inactive
        offset = 0
        for key in sorted(all_components - inactive):
            level, c = key
            degs = mesh.degrees_at(level)
            nmodes = 1
            for ca, p in zip(c, degs):
                if ca % 2:
                    nmodes *= p - 1
            if nmodes <= 0:
                continue
            self.components[key] = (offset, nmodes)
            offset += nmodes
        self.n_scalar = offset

    # -- queries ------------------------------------------------------
    @property
    def ndofs(self) -> int:
        return self.n_scalar * self.ncomp

    def is_active(self, level: int, c) -> bool:
        return (level, tuple(c)) in self.components

    def table(self, degrees: tuple[int, ...]) -> _LocalTable:
        if degrees not in self._tables:
            self._tables[degrees] = _local_table(degrees)
        return self._tables[degrees]

    def cell_functions(self, cid: int) -> tuple[np.ndarray, np.ndarray]:
        """Active local mode indices of one cell and their scalar ids."""
        cell = self.mesh.cells[cid]
        tab = self.table(cell.degrees)
        base = 2 * np.array(cell.index)
        comps = base + tab.offsets
        keep, ids = [], []
        for j, c in enumerate(map(tuple, comps)):
            entry = self.components.get((cell.level, c))
            if entry is not None:
                keep.append(j)
                ids.append(entry[0] + tab.mode[j])
        keep = np.array(keep, dtype=int)
        return tab.indices[keep].reshape(-1, self.mesh.dim), np.array(ids, dtype=int)

    def leaf_functions(self, leaf: int) -> LeafFunctions:
        if leaf not in self._leaf_cache:
            if self.mesh.cells[leaf].children:
                raise MeshError(f"cell {leaf} is not a leaf")
            groups = []
            for cid in self.mesh.ancestors(leaf):
                idx, ids = self.cell_functions(cid)
                if len(ids):
                    groups.append((cid, idx, ids))
            self._leaf_cache[leaf] = LeafFunctions(groups)
        return self._leaf_cache[leaf]

    def vector_ids(self, scalar_ids: np.ndarray) -> np.ndarray:
        """Interleaved field ids ``s * ncomp + comp`` in local order."""
        scalar_ids = np.asarray(scalar_ids, dtype=int)
        return (scalar_ids[:, None] * self.ncomp + np.arange(self.ncomp)[None, :]).ravel()

    def evaluate(self, leaf: int, xi, with_gradients: bool = True):
        """Basis on a leaf at reference points ``xi`` of that leaf.

        Returns ``(N, dN, ids)`` with ``N`` of shape ``(npts, nf)``, physical
        gradients ``dN`` of shape ``(npts, nf, d)`` and scalar ids ``(nf,)``.
        """
        mesh = self.mesh
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        lo_leaf, hi_leaf = mesh.bounds(leaf)
        x = lo_leaf + 0.5 * (xi + 1.0) * (hi_leaf - lo_leaf)
        funcs = self.leaf_functions(leaf)
        values, grads = [], []
        for cid, idx, _ in funcs.groups:
            lo, hi = mesh.bounds(cid)
            h = hi - lo
            ref = 2.0 * (x - lo) / h - 1.0
            degs = mesh.cells[cid].degrees
            tables = [integrated_legendre_table(degs[a] + 1, ref[:, a]) for a in range(mesh.dim)]
            v, g = tensor_values(idx, tables, with_gradients)
            values.append(v)
            if with_gradients:
                grads.append(g * (2.0 / h))
        npts = xi.shape[0]
        if not values:
            N = np.zeros((npts, 0))
            dN = np.zeros((npts, 0, mesh.dim)) if with_gradients else None
        else:
            N = np.concatenate(values, axis=1)
            dN = np.concatenate(grads, axis=1) if with_gradients else None
        return N, dN, funcs.ids

    def face_ids(self, axis: int, side: int) -> np.ndarray:
        """Scalar ids of modes whose component lies on a box face."""
        ids = []
        for (level, c), (offset, nmodes) in self.components.items():
            limit = 0 if side == 0 else 2 * self.mesh.level_counts(level)[axis]
            if c[axis] == limit:
                ids.extend(range(offset, offset + nmodes))
        return np.array(sorted(ids), dtype=int)

    def face_leaves(self, axis: int, side: int) -> list[int]:
        return [cid for cid in self.mesh.leaves if self.mesh.on_box_face(cid, axis, side)]


def activate_dofs(mesh: MultiLevelMesh, ncomp: int = 1) -> DofMap:
    """Apply the activation rules and number the active modes."""
    return DofMap(mesh, ncomp)


def physical_to_reference(mesh: MultiLevelMesh, cid: int, x) -> np.ndarray:
    lo, hi = mesh.bounds(cid)
    return 2.0 * (np.asarray(x, dtype=float) - lo) / (hi - lo) - 1.0


def reference_to_physical(mesh: MultiLevelMesh, cid: int, xi) -> np.ndarray:
    lo, hi = mesh.bounds(cid)
    return lo + 0.5 * (np.asarray(xi, dtype=float) + 1.0) * (hi - lo)


def eval_field(dofmap: DofMap, dofs, points):
    """Composed field values and gradients at many physical points.

    Returns ``values`` of shape ``(npts, ncomp)`` and ``gradients`` of shape
    ``(npts, ncomp, d)``.
    """
    mesh = dofmap.mesh
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dofs = np.asarray(dofs, dtype=float)
    nc = dofmap.ncomp
    values = np.zeros((len(pts), nc))
    grads = np.zeros((len(pts), nc, mesh.dim))
    leaf_of = np.array([mesh.find_leaf(p) for p in pts], dtype=int)
    for leaf in np.unique(leaf_of):
        sel = np.nonzero(leaf_of == leaf)[0]
        xi = np.clip(physical_to_reference(mesh, leaf, pts[sel]), -1.0, 1.0)
        N, dN, ids = dofmap.evaluate(leaf, xi)
        coef = dofs.reshape(-1, nc)[ids]            # (nf, nc)
        values[sel] = N @ coef
        grads[sel] = np.einsum("qfd,fc->qcd", dN, coef)
    return values, grads


def eval_solution(dofmap: DofMap, dofs, x):
    """Value ``(ncomp,)`` and gradient ``(ncomp, d)`` at one point."""
    values, grads = eval_field(dofmap, dofs, np.asarray(x, dtype=float).reshape(1, -1))
    return values[0], grads[0]
