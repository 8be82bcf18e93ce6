"""Implicit descriptions of the physical domain inside the embedding box.

Every domain answers a vectorized inside test on an array of points of
shape ``(npts, d)``. Only the boolean test is needed; curved boundaries are
resolved by the quadrature, not by surface reconstruction.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ALPHA_FICT_DEFAULT = 1e-8


def _points(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


class ImplicitDomain:
    """Base class; subclasses implement :meth:`contains`."""

    def contains(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x) -> np.ndarray:
        return self.contains(_points(x))

    def __or__(self, other):
        return Union((self, other))

    def __and__(self, other):
        return Intersection((self, other))

    def __sub__(self, other):
        return Difference(self, other)


@dataclass(frozen=True)
class Everywhere(ImplicitDomain):
    """The whole embedding box."""

    def contains(self, x):
        return np.ones(len(x), dtype=bool)


@dataclass(frozen=True)
class HalfSpace(ImplicitDomain):
    """Points with ``normal . x <= offset``."""

    normal: tuple[float, ...]
    offset: float

    def contains(self, x):
        return x @ np.asarray(self.normal, dtype=float) <= self.offset


@dataclass(frozen=True)
class Ball(ImplicitDomain):
    """Closed ball (disk in 2D, interval in 1D)."""

    center: tuple[float, ...]
    radius: float

    def contains(self, x):
        r2 = np.sum((x - np.asarray(self.center, dtype=float)) ** 2, axis=1)
        return r2 <= self.radius ** 2


@dataclass(frozen=True)
class Cylinder(ImplicitDomain):
    """Infinite circular cylinder whose axis is parallel to a coordinate axis."""

    center: tuple[float, ...]
    radius: float
    axis: int = 2

    def contains(self, x):
        keep = [a for a in range(x.shape[1]) if a != self.axis]
        c = np.asarray(self.center, dtype=float)[keep]
        return np.sum((x[:, keep] - c) ** 2, axis=1) <= self.radius ** 2


@dataclass(frozen=True)
class Box(ImplicitDomain):
    """Axis-aligned closed box."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def contains(self, x):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        return np.all((x >= lo) & (x <= hi), axis=1)


@dataclass(frozen=True)
class Complement(ImplicitDomain):
    child: ImplicitDomain

    def contains(self, x):
        return ~self.child.contains(x)


@dataclass(frozen=True)
class Union(ImplicitDomain):
    children: tuple[ImplicitDomain, ...]

    def contains(self, x):
        out = np.zeros(len(x), dtype=bool)
        for c in self.children:
            out |= c.contains(x)
        return out


@dataclass(frozen=True)
class Intersection(ImplicitDomain):
    children: tuple[ImplicitDomain, ...]

    def contains(self, x):
        out = np.ones(len(x), dtype=bool)
        for c in self.children:
            out &= c.contains(x)
        return out


@dataclass(frozen=True)
class Difference(ImplicitDomain):
    base: ImplicitDomain
    cut: ImplicitDomain

    def contains(self, x):
        return self.base.contains(x) & ~self.cut.contains(x)


@dataclass(frozen=True)
class HoleListPlate(ImplicitDomain):
    """Box minus circular through-holes given as ``(x, y, r)`` rows.

    Holes are open disks in the x-y plane extruded along any further axes,
    so points on a hole rim belong to the plate.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    holes: tuple[tuple[float, float, float], ...]

    def contains(self, x):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        out = np.all((x >= lo) & (x <= hi), axis=1)
        for cx, cy, r in self.holes:
            out &= (x[:, 0] - cx) ** 2 + (x[:, 1] - cy) ** 2 >= r * r
        return out


@dataclass(frozen=True, eq=False)
class VoxelDomain(ImplicitDomain):
    """Nearest-voxel lookup in a density raster; inside where density >= threshold.

    ``density`` is indexed ``[i, j, k]`` along x, y, z. Points outside the
    raster are outside the domain.
    """

    density: np.ndarray
    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    threshold: int = 128

    def contains(self, x):
        dens = np.asarray(self.density)
        rel = (x - np.asarray(self.origin)) / np.asarray(self.spacing)
        idx = np.floor(rel).astype(int)
        dims = np.array(dens.shape)
        # points exactly on the far face belong to the last voxel
        idx = np.where(np.isclose(rel, dims), dims - 1, idx)
        valid = np.all((idx >= 0) & (idx < dims), axis=1)
        out = np.zeros(len(x), dtype=bool)
        if np.any(valid):
            vals = dens[tuple(idx[valid].T)]
            out[valid] = vals >= self.threshold
        return out


def inside(domain: ImplicitDomain, x) -> bool | np.ndarray:
    """Inside test for one point (returns bool) or many (returns array)."""
    x = np.asarray(x, dtype=float)
    res = domain.contains(_points(x))
    return bool(res[0]) if x.ndim == 1 else res


@dataclass(frozen=True)
class AlphaField:
    """Penalty indicator: 1 in the physical domain, ``alpha_fict`` outside."""

    alpha_fict: float = ALPHA_FICT_DEFAULT

    def __post_init__(self):
        if not 1e-16 <= self.alpha_fict <= 1e-8:
            raise ValueError(f"alpha_fict must lie in [1e-16, 1e-8], got {self.alpha_fict}")


def alpha(field: AlphaField, domain: ImplicitDomain, x):
    x = np.asarray(x, dtype=float)
    res = np.where(domain.contains(_points(x)), 1.0, field.alpha_fict)
    return float(res[0]) if x.ndim == 1 else res


class CellClassification(enum.Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    CUT = "cut"


def sample_grid(lower, upper, s: int) -> np.ndarray:
    """``s`` evenly spaced samples per axis including the corners."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    axes = [np.linspace(lo, hi, s) for lo, hi in zip(lower, upper)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


def classify_cell(domain: ImplicitDomain, lower, upper, s: int = 5) -> CellClassification:
    """Classify a box by sampling ``s`` points per axis (corners included)."""
    if s < 2:
        raise ValueError("need at least 2 samples per axis")
    flags = domain.contains(sample_grid(lower, upper, s))
    if flags.all():
        return CellClassification.INSIDE
    if not flags.any():
        return CellClassification.OUTSIDE
    return CellClassification.CUT


# -- file formats -----------------------------------------------------------

def write_voxels(path, density: np.ndarray, spacing, origin=None, threshold: int = 128) -> tuple[Path, Path]:
    """Write a raw little-endian uint8 raster and its text header.

    The raster is stored with the x index varying fastest. Returns the raw
    and header paths (``<path>.raw`` and ``<path>.hdr``).
    """
    path = Path(path)
    density = np.asarray(density, dtype=np.uint8)
    origin = tuple(origin) if origin is not None else (0.0,) * density.ndim
    raw, hdr = path.with_suffix(".raw"), path.with_suffix(".hdr")
    raw.write_bytes(np.ascontiguousarray(density.transpose()).astype("<u1").tobytes())
    lines = [
        "dims " + " ".join(str(n) for n in density.shape),
        "spacing " + " ".join(repr(float(h)) for h in spacing),
        "origin " + " ".join(repr(float(o)) for o in origin),
        f"threshold {int(threshold)}",
        f"data {raw.name}",
    ]
    hdr.write_text("\n".join(lines) + "\n")
    return raw, hdr


def read_voxels(header_path) -> VoxelDomain:
    """Load a raster written by :func:`write_voxels`."""
    header_path = Path(header_path)
    meta = {}
    for line in header_path.read_text().splitlines():
        parts = line.split()
        if parts:
            meta[parts[0]] = parts[1:]
    for key in ("dims", "spacing"):
        if key not in meta:
            raise ValueError(f"voxel header missing '{key}'")
    dims = tuple(int(v) for v in meta["dims"])
    spacing = tuple(float(v) for v in meta["spacing"])
    origin = tuple(float(v) for v in meta.get("origin", ["0"] * len(dims)))
    threshold = int(meta.get("threshold", ["128"])[0])
    raw = header_path.parent / (meta["data"][0] if "data" in meta else header_path.with_suffix(".raw").name)
    data = np.frombuffer(raw.read_bytes(), dtype="<u1")
    if data.size != int(np.prod(dims)):
        raise ValueError(f"voxel file holds {data.size} values, header expects {int(np.prod(dims))}")
    density = data.reshape(dims[::-1]).transpose()
    return VoxelDomain(np.ascontiguousarray(density), origin, spacing, threshold)


def write_hole_list(path, holes) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "r"])
        for row in holes:
            writer.writerow([repr(float(v)) for v in row])


def read_hole_list(path) -> tuple[tuple[float, float, float], ...]:
    holes = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() == "x":
                continue
            holes.append(tuple(float(v) for v in row[:3]))
    return tuple(holes)


def random_hole_layout(count: int, lower, upper, r_min: float, r_max: float,
                       seed: int, gap: float = 0.05, max_tries: int = 100000):
    """Non-overlapping random holes fully inside the x-y rectangle.

    Holes keep a clearance ``gap`` to each other and to the plate edges.
    """
    rng = np.random.default_rng(seed)
    lower = np.asarray(lower, dtype=float)[:2]
    upper = np.asarray(upper, dtype=float)[:2]
    holes: list[tuple[float, float, float]] = []
    tries = 0
    while len(holes) < count:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"could only place {len(holes)} of {count} holes")
        r = rng.uniform(r_min, r_max)
        c = rng.uniform(lower + r + gap, upper - r - gap)
        if all((c[0] - x) ** 2 + (c[1] - y) ** 2 >= (r + q + gap) ** 2 for x, y, q in holes):
            holes.append((float(c[0]), float(c[1]), float(r)))
    return tuple(holes)
