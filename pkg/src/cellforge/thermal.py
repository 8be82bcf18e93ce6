"""Stationary heat conduction on the embedded domain.

The temperature lives on the same multi-level mesh as the displacement
(scalar DOF map). Conductivity may depend on temperature; the nonlinearity
is resolved by Picard iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import DofMap, eval_solution
from .solver import (Discretization, LinearSolveError, _Accumulator, linear_solve,
                     parse_face, physical_face_rule, project_face)

PICARD_TOL = 1e-8
PICARD_MAX_ITER = 50


class ThermalError(RuntimeError):
    pass


def sin_profile(amplitude: float, offset: float, height: float, axis: int = 1, origin: float = 0.0):
    """Face data ``amplitude * sin(pi (x_axis - origin) / height) + offset``."""

    def profile(x):
        return amplitude * np.sin(math.pi * (x[:, axis] - origin) / height) + offset

    return profile


@dataclass
class TemperatureBC:
    """Prescribed temperature on a box face: a number or a function of points."""

    face: str | tuple[int, int]
    value: float | object


@dataclass
class HeatFlux:
    """Outward normal heat flux on a box face (positive = heat leaving)."""

    face: str | tuple[int, int]
    value: float


@dataclass
class ThermalProblem:
    """Conductivity, source, boundary data.

    ``kappa`` is a number or a callable of temperature (e.g. a
    :class:`~cellforge.material.PiecewiseTable`).
    """

    kappa: float | object = 1.0
    source: float | object = 0.0
    dirichlet: list[TemperatureBC] = field(default_factory=list)
    flux: list[HeatFlux] = field(default_factory=list)
    initial: float | None = None

    def __post_init__(self):
        dfaces = {parse_face(bc.face) for bc in self.dirichlet}
        qfaces = {parse_face(f.face) for f in self.flux}
        if dfaces & qfaces:
            raise ValueError("a face cannot carry both a prescribed temperature and a flux")


def _kappa_at(problem: ThermalProblem, T):
    if callable(problem.kappa):
        return np.asarray(problem.kappa(T), dtype=float)
    return np.full(np.shape(T), float(problem.kappa))


def assemble_thermal(disc: Discretization, problem: ThermalProblem, T_qp):
    """Conduction matrix and load vector for conductivities at ``T_qp``."""
    n = disc.dofmap.ndofs
    kap = _kappa_at(problem, T_qp)
    acc = _Accumulator(n)
    f = np.zeros(n)
    for blk in disc.blocks:
        N, dN = disc.basis(blk)
        sl = slice(blk.offset, blk.offset + blk.nq)
        wa = blk.weights * blk.alphas
        Ke = np.einsum("qid,q,qjd->ij", dN, wa * kap[sl], dN)
        acc.add(blk.ids, 0.5 * (Ke + Ke.T))
        src = problem.source(blk.x) if callable(problem.source) else problem.source
        f[blk.ids] += N.T @ (wa * np.broadcast_to(np.asarray(src, dtype=float), (blk.nq,)))
    mesh = disc.mesh
    dofmap = disc.dofmap
    for flux in problem.flux:
        axis, side = parse_face(flux.face)
        for leaf in dofmap.face_leaves(axis, side):
            pmax = dofmap.leaf_functions(leaf).max_degrees(mesh, leaf)
            xi, w = physical_face_rule(mesh, leaf, axis, side, tuple(p + 1 for p in pmax), disc.domain)
            if len(w) == 0:
                continue
            Nf, _, ids = dofmap.evaluate(leaf, xi, with_gradients=False)
            f[ids] -= flux.value * (Nf.T @ w)
    return acc.matrix(), f


def _dirichlet(dofmap: DofMap, bcs):
    values: dict[int, float] = {}
    for bc in bcs:
        axis, side = parse_face(bc.face)
        ids, coef = project_face(dofmap, axis, side, bc.value)
        for g, c in zip(ids, coef):
            values[int(g)] = float(c)
    keys = np.array(sorted(values), dtype=int)
    return keys, np.array([values[k] for k in keys])


def solve_thermal(disc: Discretization, problem: ThermalProblem, tol: float = PICARD_TOL,
                  max_iter: int = PICARD_MAX_ITER) -> np.ndarray:
    """Temperature DOF vector of the stationary problem."""
    dofmap = disc.dofmap
    if dofmap.ncomp != 1:
        raise ValueError("thermal analysis needs a scalar DOF map")
    if not problem.dirichlet:
        raise ThermalError("no Dirichlet face: the constant temperature mode is unconstrained")
    n = dofmap.ndofs
    cids, cvals = _dirichlet(dofmap, problem.dirichlet)
    free = np.setdiff1d(np.arange(n), np.union1d(cids, disc.unsupported()))
    T = np.zeros(n)
    T[cids] = cvals
    nonlinear = callable(problem.kappa)
    if nonlinear:
        T0 = problem.initial if problem.initial is not None else float(np.mean(cvals)) if len(cvals) else 0.0
        T_qp = np.full(disc.nq, T0)
    else:
        T_qp = np.zeros(disc.nq)
    change = float("inf")
    for _ in range(max_iter if nonlinear else 1):
        K, f = assemble_thermal(disc, problem, T_qp)
        rhs = f[free] - K[free][:, cids] @ cvals
        try:
            Tf = linear_solve(K[free][:, free], rhs)
        except LinearSolveError as exc:
            raise ThermalError(f"singular conduction matrix: an unconstrained constant "
                               f"temperature mode remains ({exc})") from exc
        if not nonlinear:
            T[free] = Tf
            return T
        prev = T.copy()
        T[free] = Tf
        change = float(np.max(np.abs(T - prev)))
        T_qp = disc.interpolate(T)
        if change < tol * max(float(np.max(np.abs(prev))), 1e-300):
            return T
    raise ThermalError(f"Picard iteration did not converge (last change {change:.3e})")


def temperature_at(dofmap: DofMap, T, x) -> float:
    """Temperature at one physical point."""
    value, _ = eval_solution(dofmap, T, x)
    return float(value[0])
