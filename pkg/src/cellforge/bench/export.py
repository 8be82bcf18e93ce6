"""Legacy ASCII VTK export of cell-wise field samples."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ..mesh import DofMap

# VTK cell types and corner orderings in reference coordinates
_VTK_TYPE = {1: 3, 2: 9, 3: 12}
_CORNERS = {
    1: [(-1,), (1,)],
    2: [(-1, -1), (1, -1), (1, 1), (-1, 1)],
    3: [(-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
        (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)],
}


def _nearest(points: np.ndarray | None, values, targets: np.ndarray) -> np.ndarray:
    if points is None or values is None or len(points) == 0:
        return np.zeros(len(targets))
    _, idx = cKDTree(points).query(targets)
    return np.asarray(values, dtype=float)[idx]


def export_fields(dofmap: DofMap, u, path, states=None, points=None, temperature=None) -> Path:
    """Write one unstructured-grid cell per leaf with its ``2^d`` corners.

    Point data: displacement vector and magnitude (evaluated at the
    corners), accumulated plastic strain and temperature (nearest
    quadrature point to each corner). ``points`` are the quadrature points
    that ``states`` and ``temperature`` refer to.
    """
    mesh = dofmap.mesh
    d = mesh.dim
    nc = dofmap.ncomp
    coef = np.asarray(u, dtype=float).reshape(-1, nc)
    corners = np.array(_CORNERS[d], dtype=float)
    xyz, disp = [], []
    leaves = mesh.leaves
    for leaf in leaves:
        lo, hi = mesh.bounds(leaf)
        N, _, ids = dofmap.evaluate(leaf, corners, with_gradients=False)
        xyz.append(lo + 0.5 * (corners + 1.0) * (hi - lo))
        disp.append(N @ coef[ids])
    xyz = np.vstack(xyz)
    disp = np.vstack(disp)
    pad = np.zeros((len(xyz), 3))
    pad[:, :d] = xyz
    vec = np.zeros((len(xyz), 3))
    vec[:, :min(nc, 3)] = disp[:, :3]
    ebar = _nearest(points, None if states is None else states.ebar, xyz)
    temp = _nearest(points, temperature, xyz)
    npc = 2 ** d
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\ncellforge fields\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(pad)} double\n")
        np.savetxt(fh, pad, fmt="%.10e")
        fh.write(f"CELLS {len(leaves)} {len(leaves) * (npc + 1)}\n")
        conn = np.arange(len(pad)).reshape(-1, npc)
        np.savetxt(fh, np.hstack([np.full((len(leaves), 1), npc), conn]), fmt="%d")
        fh.write(f"CELL_TYPES {len(leaves)}\n")
        np.savetxt(fh, np.full(len(leaves), _VTK_TYPE[d]), fmt="%d")
        fh.write(f"CELL_DATA {len(leaves)}\nSCALARS level int 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, [mesh.cells[c].level for c in leaves], fmt="%d")
        fh.write(f"POINT_DATA {len(pad)}\nVECTORS displacement double\n")
        np.savetxt(fh, vec, fmt="%.10e")
        for name, values in (("displacement_magnitude", np.linalg.norm(disp, axis=1)),
                             ("accumulated_plastic_strain", ebar), ("temperature", temp)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, values, fmt="%.10e")
    return path


def read_vtk(path) -> dict:
    """Minimal reader for files written by :func:`export_fields`."""
    tokens = Path(path).read_text().split()
    out: dict = {"point_data": {}}
    i = 0
    section = None
    while i < len(tokens):
        tok = tokens[i]
        if tok == "POINTS":
            n = int(tokens[i + 1])
            out["points"] = np.array(tokens[i + 3:i + 3 + 3 * n], dtype=float).reshape(n, 3)
            i += 3 + 3 * n
        elif tok == "CELLS":
            ncell, size = int(tokens[i + 1]), int(tokens[i + 2])
            out["n_cells"] = ncell
            i += 3 + size
        elif tok == "CELL_TYPES":
            n = int(tokens[i + 1])
            out["cell_types"] = np.array(tokens[i + 2:i + 2 + n], dtype=int)
            i += 2 + n
        elif tok == "CELL_DATA":
            section = "cell"
            i += 2
        elif tok == "POINT_DATA":
            section = "point"
            out["n_points"] = int(tokens[i + 1])
            i += 2
        elif tok == "VECTORS":
            n = out["n_points"]
            out["point_data"][tokens[i + 1]] = np.array(tokens[i + 3:i + 3 + 3 * n], dtype=float).reshape(n, 3)
            i += 3 + 3 * n
        elif tok == "SCALARS":
            n = out["n_points"] if section == "point" else out["n_cells"]
            vals = np.array(tokens[i + 6:i + 6 + n], dtype=float)
            if section == "point":
                out["point_data"][tokens[i + 1]] = vals
            else:
                out.setdefault("cell_data", {})[tokens[i + 1]] = vals
            i += 6 + n
        else:
            i += 1
    return out
