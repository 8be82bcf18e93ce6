"""Benchmark presets.

Each preset is a plain run configuration (see :mod:`cellforge.bench.config`)
so that ``bench <case>`` and ``run <config>`` share one code path. Units
are mm, GPa, K and s throughout.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ..geometry import Box, Cylinder, ImplicitDomain, Union
from .exact import BarParams, DiskParams

PRESETS = ("bar1d-kink", "disk2d", "plate-hole", "t-beam", "porous-plate", "voxel-block")

# aluminium plate, linear hardening
PLATE_MATERIAL = {"E": 70.0, "nu": 0.3, "hardening": {"sigma_y0": 0.243, "H0": 0.2, "r_mix": 1.0}}

# 16MnCr5 temperature fits (K, G in GPa; softening factor dimensionless)
STEEL_MATERIAL = {
    "K": {"base": 163.1952, "omega": 0.8592410, "chi": 4.509029e-3, "phi": -1.338357},
    "G": {"base": 80.89153, "omega": 0.1265276, "chi": 2.136860e-3, "phi": -1.071127},
    "hardening": {
        "sigma_y0": 0.35,
        "H0": 1.897765,
        "delta_sigma_inf": 206.3425,
        "ebar0": 2.784959e-2,
        "r_mix": 1.0,
        "softening": {"base": 1.0, "omega": -39.22882, "chi": -9.042314e-3, "phi": -1.461198},
    },
    "visco": {"mu": 0.1, "m": 1.0},
    "expansion": {"gamma": 1.108358e-5, "mode": "mean"},
    "T0": 293.15,
}

CELSIUS = 273.15


@dataclass(frozen=True)
class TBeam(ImplicitDomain):
    """T-section beam along x with circular web openings.

    The flange spans the full width on top; the web is centred in z.
    """

    length: float = 1000.0
    height: float = 150.0
    width: float = 100.0
    flange: float = 20.0
    web: float = 20.0
    hole_radius: float = 45.0
    hole_y: float = 65.0
    hole_x: tuple[float, ...] = (100.0, 250.0, 400.0, 550.0, 700.0, 850.0)

    def contains(self, x):
        top = Box((0.0, self.height - self.flange, 0.0), (self.length, self.height, self.width))
        z0 = 0.5 * (self.width - self.web)
        web = Box((0.0, 0.0, z0), (self.length, self.height, z0 + self.web))
        inside = Union((top, web)).contains(x)
        for hx in self.hole_x:
            inside &= ~Cylinder((hx, self.hole_y, 0.0), self.hole_radius, axis=2).contains(x)
        return inside


def bar1d_kink(cycles: int = 14, degree: int = 15, quadrature: str = "ast") -> dict:
    p = BarParams()
    return {
        "name": "bar1d-kink",
        "geometry": {"type": "box"},
        "mesh": {"lower": [0.0], "upper": [p.b], "counts": [1], "degrees": [degree],
                 "schedule": "reduce", "max_depth": 14},
        "quadrature": {"scheme": quadrature, "interface_resolution": 1e-7},
        "material": {"E": p.E0, "nu": 0.0, "graded": "bar1d-kink"},
        "load": {"increments": 1, "dirichlet": [{"face": "x-", "component": 0, "value": 0.0}],
                 "tractions": [{"face": "x+", "value": [p.t0]}],
                 "monitors": {"support": {"face": "x-", "component": 0}}},
        "refinement": {"cycles": cycles, "marking": "max", "indicator_step": "last"},
        "reference": {"energy": "bar1d-kink"},
    }


def disk2d(cycles: int = 8, quadrature: str = "ast") -> dict:
    d = DiskParams()
    return {
        "name": "disk2d",
        "geometry": {"type": "box"},
        "mesh": {"lower": [0.0, 0.0], "upper": [d.c, d.c], "counts": [5, 5], "degrees": [7, 7],
                 "schedule": "reduce", "max_depth": 12},
        "quadrature": {"scheme": quadrature, "interface_resolution": 1e-3},
        "material": {"E": d.E0, "nu": 0.0, "graded": "disk2d"},
        "load": {"increments": 1,
                 "dirichlet": [{"face": "x-", "component": 0, "value": 0.0},
                               {"face": "y-", "component": 1, "value": 0.0}],
                 "tractions": [{"face": "x+", "value": "disk2d-exact"},
                               {"face": "y+", "value": "disk2d-exact"}]},
        "refinement": {"cycles": cycles, "refine_fraction": 0.3, "coarsen_fraction": 0.2,
                       "marking": "fraction", "indicator_step": "last"},
        "reference": {"energy": "disk2d"},
    }


def plate_hole(cycles: int = 0, quadrature: str = "nnmf", rate: float | None = None,
               mu: float = 500.0, m: float = 1.0, increments: int = 10, u_bar: float = 0.5) -> dict:
    cfg = {
        "name": "plate-hole",
        "geometry": {"type": "holes", "holes": [[0.0, 0.0, 5.0]]},
        "mesh": {"lower": [0.0, 0.0, 0.0], "upper": [10.0, 18.0, 0.5], "counts": [4, 8, 1],
                 "degrees": [3, 3, 2], "schedule": "constant", "max_depth": 3},
        "quadrature": {"scheme": quadrature, "ast_depth": 5, "ast_axes": [True, True, False]},
        "material": copy.deepcopy(PLATE_MATERIAL),
        "load": {"increments": increments,
                 "dirichlet": [{"face": "x-", "component": 0, "value": 0.0},
                               {"face": "y-", "component": 1, "value": 0.0},
                               {"face": "z-", "component": 2, "value": 0.0},
                               {"face": "y+", "component": 1, "value": u_bar}],
                 "monitors": {"top": {"face": "y+", "component": 1},
                              "bottom": {"face": "y-", "component": 1}}},
        "refinement": {"cycles": cycles, "refine_fraction": 0.2, "indicator_step": "first"},
    }
    if rate is not None:
        cfg["material"]["visco"] = {"mu": mu, "m": m}
        cfg["load"]["rate"] = rate
    return cfg


def t_beam(cycles: int = 1, quadrature: str = "nnmf", paper_scale: bool = False) -> dict:
    counts = [40, 6, 4] if paper_scale else [20, 3, 2]
    return {
        "name": "t-beam",
        "geometry": {"type": "t-beam"},
        "mesh": {"lower": [0.0, 0.0, 0.0], "upper": [1000.0, 150.0, 100.0], "counts": counts,
                 "degrees": [2, 2, 2], "schedule": "constant", "max_depth": 2},
        "quadrature": {"scheme": quadrature, "ast_depth": 4},
        "material": copy.deepcopy(PLATE_MATERIAL),
        "load": {"increments": 10,
                 "dirichlet": [{"face": "x-", "component": 0, "value": 0.0},
                               {"face": "x-", "component": 1, "value": 0.0},
                               {"face": "x-", "component": 2, "value": 0.0},
                               {"face": "x+", "component": 1, "value": 50.0}],
                 "monitors": {"tip": {"face": "x+", "component": 1}}},
        "refinement": {"cycles": cycles, "refine_fraction": 0.2, "indicator_step": "first"},
    }


def porous_plate(cycles: int = 1, quadrature: str = "nnmf", rate: float = 1e-3,
                 paper_scale: bool = False, seed: int = 16) -> dict:
    h = 10.0
    counts = [10, 10, 1] if paper_scale else [8, 8, 1]
    return {
        "name": "porous-plate",
        "seed": seed,
        "geometry": {"type": "holes", "random_holes": {"count": 40, "r_min": 0.25, "r_max": 0.55, "gap": 0.1}},
        "mesh": {"lower": [0.0, 0.0, 0.0], "upper": [10.0, h, 0.75], "counts": counts,
                 "degrees": [2, 2, 2], "schedule": "constant", "max_depth": 2},
        "quadrature": {"scheme": quadrature, "ast_depth": 5, "ast_axes": [True, True, False]},
        "material": copy.deepcopy(STEEL_MATERIAL),
        "thermal": {"kappa": 43.34265,
                    "dirichlet": [
                        {"face": "x-", "value": {"sin": {"amplitude": 20.0, "offset": 500.0 + CELSIUS,
                                                         "height": h, "axis": 1}}},
                        {"face": "x+", "value": {"sin": {"amplitude": 5.0, "offset": 500.0 + CELSIUS,
                                                         "height": h, "axis": 1}}}]},
        "load": {"increments": 10, "rate": rate,
                 "dirichlet": [{"face": "x-", "component": 0, "value": 0.0},
                               {"face": "y-", "component": 1, "value": 0.0},
                               {"face": "z-", "component": 2, "value": 0.0},
                               {"face": "y+", "component": 1, "value": 0.02}],
                 "monitors": {"top": {"face": "y+", "component": 1}}},
        "refinement": {"cycles": cycles, "refine_fraction": 0.2, "indicator_step": "first"},
    }


def voxel_block(raster: str, cycles: int = 0, quadrature: str = "nnmf") -> dict:
    return {
        "name": "voxel-block",
        "geometry": {"type": "voxels", "path": raster},
        "mesh": {"lower": [0.0, 0.0, 0.0], "upper": [4.0, 4.0, 4.0], "counts": [4, 4, 4],
                 "degrees": [2, 2, 2], "schedule": "constant", "max_depth": 2},
        "quadrature": {"scheme": quadrature, "ast_depth": 4},
        "material": copy.deepcopy(PLATE_MATERIAL),
        "load": {"increments": 5,
                 "dirichlet": [{"face": "z-", "component": 0, "value": 0.0},
                               {"face": "z-", "component": 1, "value": 0.0},
                               {"face": "z-", "component": 2, "value": 0.0},
                               {"face": "z+", "component": 2, "value": -0.02}],
                 "monitors": {"top": {"face": "z+", "component": 2}}},
        "refinement": {"cycles": cycles, "refine_fraction": 0.2, "indicator_step": "first"},
    }


def make_voxel_raster(shape=(32, 32, 32), pores: int = 6, seed: int = 7) -> np.ndarray:
    """Density raster of a block with random spherical pores (255 solid, 0 void)."""
    rng = np.random.default_rng(seed)
    n = np.array(shape)
    grid = np.stack(np.meshgrid(*[np.arange(k) + 0.5 for k in shape], indexing="ij"), axis=-1)
    density = np.full(shape, 255, dtype=np.uint8)
    for _ in range(pores):
        r = rng.uniform(0.08, 0.16) * n.min()
        c = rng.uniform(r + 1, n - r - 1)
        density[np.sum((grid - c) ** 2, axis=-1) <= r * r] = 0
    return density


def preset_config(name: str, **options) -> dict:
    """Configuration of a named preset; ``options`` are preset parameters."""
    builders = {"bar1d-kink": bar1d_kink, "disk2d": disk2d, "plate-hole": plate_hole,
                "t-beam": t_beam, "porous-plate": porous_plate, "voxel-block": voxel_block}
    if name not in builders:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    options = {k: v for k, v in options.items() if v is not None}
    return builders[name](**options)
