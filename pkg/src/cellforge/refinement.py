"""Gradient-jump indicator, fixed-fraction marking and the refinement loop."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .geometry import ImplicitDomain
from .mesh import DofMap, MultiLevelMesh, coarsen_cells, physical_to_reference, refine_cells
from .solver import face_rule

FACE_NUDGE = 1e-9


@dataclass
class IndicatorField:
    """Per-leaf indicator values and the boundary measures used to normalize them."""

    eta: dict[int, float]
    measure: dict[int, float]

    def values(self) -> np.ndarray:
        return np.array([self.eta[c] for c in sorted(self.eta)])

    def argmax(self) -> int:
        best = max(self.eta.values())
        return min(c for c, v in self.eta.items() if v == best)


def _face_points(mesh, leaf, axis, side, q):
    xi, w = face_rule(mesh, leaf, axis, side, q)
    lo, hi = mesh.bounds(leaf)
    return xi, w, lo + 0.5 * (xi + 1.0) * (hi - lo)


def kelly_indicator(dofmap: DofMap, dofs, domain: ImplicitDomain, extra: int = 0) -> IndicatorField:
    """Squared gradient jumps over interior faces inside the physical domain.

    Each face is integrated on the trace of its finer side with Gauss
    order ``p + 1`` and credited to both adjacent leaves. The sum is
    divided by the physical part of the leaf boundary (all faces, measured
    by the inside fraction of the face points) before the square root.
    """
    mesh = dofmap.mesh
    d = mesh.dim
    nc = dofmap.ncomp
    coef = np.asarray(dofs, dtype=float).reshape(-1, nc)
    leaves = mesh.leaves
    jump2: dict[int, float] = defaultdict(float)
    measure: dict[int, float] = {}

    def grads(leaf, xi):
        _, dN, ids = dofmap.evaluate(leaf, xi)
        return np.einsum("qfd,fc->qcd", dN, coef[ids])

    for leaf in leaves:
        pmax = dofmap.leaf_functions(leaf).max_degrees(mesh, leaf)
        q = tuple(p + 1 + extra for p in pmax)
        lo, hi = mesh.bounds(leaf)
        total = 0.0
        for axis in range(d):
            for side in (0, 1):
                xi, w, x = _face_points(mesh, leaf, axis, side, q)
                inside = domain.contains(x)
                # nudged into the leaf so faces on the domain boundary survive roundoff
                probe = x.copy()
                probe[:, axis] -= (2 * side - 1) * FACE_NUDGE * (hi - lo)[axis]
                total += float(np.sum(w * domain.contains(probe)))
                kind, nb = mesh.neighbor(leaf, axis, side)
                if kind == "boundary" or not np.any(inside):
                    continue
                if kind == "same" and (mesh.cells[nb].children or side == 0):
                    continue
                if kind == "coarser":
                    pnb = dofmap.leaf_functions(nb).max_degrees(mesh, nb)
                    xi, w, x = _face_points(mesh, leaf, axis, side,
                                            tuple(max(a, b + 1 + extra) for a, b in zip(q, pnb)))
                    inside = domain.contains(x)
                xn = np.clip(physical_to_reference(mesh, nb, x), -1.0, 1.0)
                xn[:, axis] = -1.0 if side == 1 else 1.0
                diff = grads(leaf, xi) - grads(nb, xn)
                val = float(np.sum(w * inside * np.sum(diff ** 2, axis=(1, 2))))
                jump2[leaf] += val
                jump2[nb] += val
        measure[leaf] = total
    eta = {}
    for leaf in leaves:
        m = measure[leaf]
        eta[leaf] = math.sqrt(jump2.get(leaf, 0.0) / m) if m > 0 else 0.0
    return IndicatorField(eta, measure)


def _count(fraction: float, n: int) -> int:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fractions must lie in [0, 1]")
    return min(n, int(math.ceil(fraction * n - 1e-9)))


def mark_cells(field: IndicatorField, refine_fraction: float, coarsen_fraction: float = 0.0,
               mesh: MultiLevelMesh | None = None):
    """Fixed-fraction marking.

    Returns the leaves to refine (top fraction by indicator, ties broken by
    lower id) and the parents whose children may be merged (every child a
    leaf in the bottom fraction). Coarsening needs ``mesh``.
    """
    cells = sorted(field.eta)
    n = len(cells)
    by_desc = sorted(cells, key=lambda c: (-field.eta[c], c))
    refine = set(by_desc[:_count(refine_fraction, n)])
    coarsen: set[int] = set()
    k = _count(coarsen_fraction, n)
    if k and mesh is not None:
        by_asc = sorted(cells, key=lambda c: (field.eta[c], c))
        low = set(by_asc[:k]) - refine
        parents = {mesh.cells[c].parent for c in low if mesh.cells[c].parent is not None}
        for p in sorted(parents):
            children = mesh.cells[p].children
            if all(c in low and not mesh.cells[c].children for c in children):
                coarsen.add(p)
    return refine, coarsen


def mark_max(field: IndicatorField, rtol: float = 1e-9) -> set[int]:
    """All cells whose indicator ties the maximum within ``rtol``."""
    best = max(field.eta.values())
    return {c for c, v in field.eta.items() if v >= best * (1.0 - rtol)}


@dataclass
class CycleOutcome:
    """What an analysis hands back to the refinement loop."""

    dofmap: DofMap
    dofs: np.ndarray
    domain: ImplicitDomain
    error_pct: float = float("nan")
    payload: object = None


@dataclass
class CycleRecord:
    cycle: int
    dofs: int
    eta_min: float
    eta_max: float
    refined: int
    coarsened: int
    error_pct: float
    payload: object = field(default=None, repr=False)


CYCLE_HEADER = ["cycle", "dofs", "eta_min", "eta_max", "refined", "coarsened", "error_pct"]


def refinement_workflow(mesh: MultiLevelMesh, analyze, cycles: int, refine_fraction: float = 0.2,
                        coarsen_fraction: float = 0.0, marking: str = "fraction", callback=None):
    """Analyse, mark and rebuild for ``cycles`` rounds (``cycles + 1`` analyses).

    ``analyze(mesh, cycle)`` returns a :class:`CycleOutcome`; every cycle
    starts from a fresh state on the new mesh. ``marking`` is
    ``"fraction"`` or ``"max"`` (refine all cells tied at the maximum).
    """
    if cycles < 0:
        raise ValueError("cycle count must be non-negative")
    if marking not in ("fraction", "max"):
        raise ValueError(f"unknown marking {marking!r}")
    records: list[CycleRecord] = []
    for cycle in range(cycles + 1):
        out = analyze(mesh, cycle)
        refined = coarsened = 0
        eta_min = eta_max = float("nan")
        if cycle < cycles:
            ind = kelly_indicator(out.dofmap, out.dofs, out.domain)
            vals = ind.values()
            eta_min, eta_max = float(vals.min()), float(vals.max())
            if marking == "max":
                refine, coarsen = mark_max(ind), set()
            else:
                refine, coarsen = mark_cells(ind, refine_fraction, coarsen_fraction, mesh)
            refine = {c for c in refine if mesh.cells[c].level < mesh.max_depth}
            refined, coarsened = len(refine), len(coarsen)
            new_mesh = refine_cells(mesh, refine)
            if coarsen:
                new_mesh = coarsen_cells(new_mesh, coarsen)
        rec = CycleRecord(cycle, out.dofmap.ndofs, eta_min, eta_max, refined, coarsened,
                          out.error_pct, out.payload)
        records.append(rec)
        if callback is not None:
            callback(rec)
        if cycle < cycles:
            mesh = new_mesh
    return records


def write_cycle_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CYCLE_HEADER)
        for r in records:
            writer.writerow([r.cycle, r.dofs, f"{r.eta_min:.6e}", f"{r.eta_max:.6e}", r.refined,
                             r.coarsened, f"{r.error_pct:.6e}"])
