"""Turn a run configuration into analyses and output files."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import (Ball, Box, Difference, HalfSpace, HoleListPlate, ImplicitDomain, Intersection,
                        random_hole_layout, read_hole_list, read_voxels)
from ..material import (AtanFit, ElasticParams, HardeningParams, Material, PiecewiseTable,
                        ThermalExpansion, ViscoParams)
from ..mesh import GridSpec, activate_dofs, build_base_mesh
from ..quadrature import NnmfConfig, QuadratureSettings, build_rules
from ..refinement import CycleOutcome, refinement_workflow, write_cycle_csv
from ..solver import (DirichletBC, Discretization, LoadProgram, MechanicsSetup, NewtonConfig, Traction,
                      body_vector, run_load_steps, traction_vector)
from ..thermal import HeatFlux, TemperatureBC, ThermalProblem, sin_profile, solve_thermal
from .cases import TBeam
from .exact import (DISK_REFERENCE_ENERGY, BarParams, DiskParams, disk_traction, energy_error,
                    exact_energy_bar1d)

REACTION_HEADER = ["cycle", "step", "time", "monitor", "u", "force", "iterations"]
NEWTON_HEADER = ["cycle", "step", "iteration", "residual"]
ERROR_HEADER = ["cycle", "dofs", "err_pct"]
QUADSTATS_HEADER = ["cycle", "scheme", "total", "physical", "fictitious"]


# -- config -> objects ---------------------------------------------------------------

def _path(value: str, base_dir) -> Path:
    p = Path(value)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


def build_domain(cfg: dict, base_dir=None) -> ImplicitDomain:
    geo = cfg["geometry"]
    lower = tuple(float(v) for v in cfg["mesh"]["lower"])
    upper = tuple(float(v) for v in cfg["mesh"]["upper"])
    box = Box(lower, upper)
    kind = geo["type"]
    if kind == "box":
        return box
    if kind == "holes":
        holes = [tuple(h) for h in geo.get("holes", [])]
        rnd = geo.get("random_holes")
        if rnd:
            holes += random_hole_layout(rnd["count"], lower, upper, rnd["r_min"], rnd["r_max"],
                                        seed=cfg.get("seed", 0), gap=rnd.get("gap", 0.05))
        return HoleListPlate(lower, upper, tuple(holes))
    if kind == "hole-file":
        return HoleListPlate(lower, upper, read_hole_list(_path(geo["path"], base_dir)))
    if kind == "t-beam":
        return TBeam()
    if kind == "voxels":
        return read_voxels(_path(geo["path"], base_dir))
    if kind == "ball-cut":
        ball = Ball(tuple(geo["center"]), geo["radius"])
        return Intersection((box, ball)) if geo.get("keep", "outside") == "inside" else Difference(box, ball)
    if kind == "half-space":
        return Intersection((box, HalfSpace(tuple(geo["normal"]), geo.get("offset", 0.0))))
    raise ValueError(f"unknown geometry type {kind!r}")


def _scalar_or_fit(value):
    if isinstance(value, dict):
        return AtanFit(**value)
    return float(value)


def _table(value):
    if isinstance(value, dict):
        return PiecewiseTable(tuple(value["breaks"]), tuple(tuple(c) for c in value["poly"]),
                              tuple(value.get("exp_a", ())), tuple(value.get("exp_b", ())))
    return float(value)


def build_material(cfg: dict) -> Material:
    m = cfg["material"]
    if "K" in m or "G" in m:
        elastic = ElasticParams(K=_scalar_or_fit(m["K"]), G=_scalar_or_fit(m["G"]))
    else:
        elastic = ElasticParams(E=m.get("E", 1.0), nu=m.get("nu", 0.0))
    hardening = None
    if "hardening" in m:
        h = dict(m["hardening"])
        h["sigma_y0"] = _scalar_or_fit(h["sigma_y0"])
        if "softening" in h:
            h["softening"] = AtanFit(**h["softening"])
        hardening = HardeningParams(**h)
    visco = ViscoParams(**m["visco"]) if "visco" in m else None
    expansion = None
    if "expansion" in m:
        expansion = ThermalExpansion(_table(m["expansion"]["gamma"]), m["expansion"].get("mode", "constant"))
    return Material(elastic, hardening, visco, expansion, m.get("T0", 293.15))


def graded_moduli(cfg: dict):
    """``(moduli(x), interfaces)`` of a graded benchmark material, or ``(None, ())``."""
    kind = cfg["material"].get("graded")
    nu = float(cfg["material"].get("nu", 0.0))
    if kind == "bar1d-kink":
        p = BarParams()
        return (lambda x: (p.stiffness(x[:, 0]), nu)), (HalfSpace((1.0,), p.a),)
    if kind == "disk2d":
        d = DiskParams()
        return (lambda x: (d.stiffness(np.hypot(x[:, 0], x[:, 1])), nu)), (Ball((0.0, 0.0), d.a),)
    return None, ()


def build_quadrature(cfg: dict) -> QuadratureSettings:
    q = cfg["quadrature"]
    _, interfaces = graded_moduli(cfg)
    axes = q.get("ast_axes")
    return QuadratureSettings(scheme=q["scheme"], ast_depth=q["ast_depth"],
                              ast_axes=tuple(axes) if axes is not None else None,
                              nnmf=NnmfConfig(**q.get("nnmf", {})), gauss_extra=q.get("gauss_extra", 0),
                              interfaces=interfaces, interface_resolution=q.get("interface_resolution"))


def build_mesh(cfg: dict):
    m = cfg["mesh"]
    spec = GridSpec.from_box(m["lower"], m["upper"], m["counts"])
    kwargs = {"schedule": m.get("schedule", "reduce")}
    if "max_depth" in m:
        kwargs["max_depth"] = m["max_depth"]
    return build_base_mesh(spec, tuple(m["degrees"]), **kwargs)


def _face_value(value):
    if isinstance(value, dict):
        return sin_profile(**value["sin"])
    return float(value)


def build_thermal(cfg: dict) -> ThermalProblem | None:
    t = cfg.get("thermal")
    if not t:
        return None
    return ThermalProblem(kappa=_table(t.get("kappa", 1.0)), source=float(t.get("source", 0.0)),
                          dirichlet=[TemperatureBC(b["face"], _face_value(b["value"])) for b in t["dirichlet"]],
                          flux=[HeatFlux(f["face"], float(f["value"])) for f in t.get("flux", [])])


def build_load(cfg: dict) -> LoadProgram:
    ld = cfg["load"]
    tractions = []
    for tr in ld.get("tractions", []):
        value = tr["value"]
        if value == "disk2d-exact":
            value = disk_traction(0 if tr["face"].startswith("x") else 1)
        tractions.append(Traction(tr["face"], value))
    return LoadProgram(
        increments=ld["increments"],
        dirichlet=[DirichletBC(b["face"], b["component"], b.get("value", 0.0), b.get("ramp", True))
                   for b in ld.get("dirichlet", [])],
        tractions=tractions,
        body_force=tuple(ld["body_force"]) if "body_force" in ld else None,
        rate=ld.get("rate"), dt=ld.get("dt"),
        monitors={k: (v["face"], v["component"]) for k, v in ld.get("monitors", {}).items()})


def reference_energy(cfg: dict) -> float | None:
    ref = cfg.get("reference", {}).get("energy")
    if ref is None:
        return None
    if ref == "bar1d-kink":
        return exact_energy_bar1d()
    if ref == "disk2d":
        return DISK_REFERENCE_ENERGY
    return float(ref)


# -- analysis ------------------------------------------------------------------------------

@dataclass
class CycleData:
    """Everything one cycle produced, kept for output writing."""

    cycle: int
    dofs: int
    quad: dict
    steps: list
    energy: float | None
    error_pct: float
    wall_time: float
    rules: object = None
    fields: "FieldData | None" = None


@dataclass
class FieldData:
    """Final converged fields of a cycle (input of the field export)."""

    dofmap: object
    u: np.ndarray
    states: object
    points: np.ndarray
    temperature: np.ndarray | None = None


@dataclass
class RunResult:
    config: dict
    cycles: list[CycleData] = field(default_factory=list)
    records: list = field(default_factory=list)

    @property
    def errors(self) -> list[float]:
        return [c.error_pct for c in self.cycles]


class Analysis:
    """Callable used by the refinement loop: one full analysis per mesh."""

    def __init__(self, cfg: dict, base_dir=None, keep_fields: bool = True):
        self.cfg = cfg
        self.domain = build_domain(cfg, base_dir)
        self.material = build_material(cfg)
        self.moduli, _ = graded_moduli(cfg)
        self.settings = build_quadrature(cfg)
        self.thermal = build_thermal(cfg)
        self.program = build_load(cfg)
        self.newton = NewtonConfig(**cfg["newton"])
        self.alpha = cfg["quadrature"]["alpha_fict"]
        self.reference = reference_energy(cfg)
        self.indicator_step = cfg["refinement"]["indicator_step"]
        self.keep_fields = keep_fields
        self.rule_cache: dict = {}
        self.cycles: list[CycleData] = []

    def __call__(self, mesh, cycle: int) -> CycleOutcome:
        t0 = time.perf_counter()
        dim = mesh.dim
        dofmap = activate_dofs(mesh, dim)
        rules = build_rules(mesh, dofmap, self.domain, self.alpha, self.settings, self.rule_cache)
        disc = Discretization(mesh, dofmap, rules, self.domain, self.alpha)
        T_qp = T = None
        if self.thermal is not None:
            sdisc = Discretization(mesh, activate_dofs(mesh, 1), rules, self.domain, self.alpha, cache=False)
            T = solve_thermal(sdisc, self.thermal)
            T_qp = sdisc.interpolate(T)
            del sdisc
        setup = MechanicsSetup(self.material, T_qp, self.moduli)
        res = run_load_steps(disc, setup, self.program, self.newton, self.domain)
        energy = err = float("nan")
        if self.reference is not None:
            f = sum((traction_vector(dofmap, tr, self.domain) for tr in self.program.tractions),
                    np.zeros(dofmap.ndofs))
            if self.program.body_force is not None:
                f = f + body_vector(disc, self.program.body_force)
            energy = float(f @ res.u)
            err = energy_error(energy, self.reference)
        fields = None
        if self.keep_fields:
            fields = FieldData(dofmap, res.u, res.states, disc.points(), T_qp)
        data = CycleData(cycle, dofmap.ndofs, rules.stats(), res.steps, energy, err,
                         time.perf_counter() - t0, rules, fields)
        self.cycles.append(data)
        u_ind = res.steps[0].u if self.indicator_step == "first" else res.steps[-1].u
        return CycleOutcome(dofmap, u_ind, self.domain, err, data)


def run_config(cfg: dict, base_dir=None, out_dir=None, callback=None) -> RunResult:
    """Run a parsed configuration; write outputs when ``out_dir`` is given."""
    analysis = Analysis(cfg, base_dir, keep_fields=bool(cfg["outputs"].get("vtk")))
    ref = cfg["refinement"]
    mesh = build_mesh(cfg)
    records = refinement_workflow(mesh, analysis, ref["cycles"], ref["refine_fraction"],
                                  ref["coarsen_fraction"], ref["marking"], callback)
    result = RunResult(cfg, analysis.cycles, records)
    if out_dir is not None:
        write_outputs(result, out_dir, analysis)
    return result


def quadrature_counts(cfg: dict, base_dir=None, schemes=("ast", "nnmf")) -> list[dict]:
    """Point counts of the initial mesh for each quadrature scheme."""
    domain = build_domain(cfg, base_dir)
    mesh = build_mesh(cfg)
    dofmap = activate_dofs(mesh, 1)
    rows = []
    for scheme in schemes:
        local = dict(cfg)
        local["quadrature"] = dict(cfg["quadrature"], scheme=scheme)
        rules = build_rules(mesh, dofmap, domain, cfg["quadrature"]["alpha_fict"], build_quadrature(local))
        rows.append({"cycle": 0, "scheme": scheme, **rules.stats()})
    return rows


# -- outputs --------------------------------------------------------------------------------

def _monitor_displacement(program: LoadProgram, face, comp, lam: float) -> float:
    for bc in program.dirichlet:
        if bc.face == face and bc.component == comp and not callable(bc.value):
            return lam * float(bc.value) if bc.ramp else float(bc.value)
    return float("nan")


def write_outputs(result: RunResult, out_dir, analysis: Analysis | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    program = analysis.program if analysis is not None else build_load(cfg)
    paths = {name: out / f"{name}.csv" for name in ("reactions", "newton", "errors", "quadstats", "refinement")}
    with open(paths["reactions"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REACTION_HEADER)
        for c in result.cycles:
            for s in c.steps:
                for name, force in s.reactions.items():
                    face, comp = program.monitors[name]
                    disp = _monitor_displacement(program, face, comp, s.load_factor)
                    w.writerow([c.cycle, s.step, f"{s.time:.6e}", name, f"{disp:.6e}", f"{force:.10e}",
                                s.iterations])
    with open(paths["newton"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(NEWTON_HEADER)
        for c in result.cycles:
            for s in c.steps:
                for i, r in enumerate(s.residuals):
                    w.writerow([c.cycle, s.step, i, f"{r:.6e}"])
    with open(paths["errors"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ERROR_HEADER)
        for c in result.cycles:
            w.writerow([c.cycle, c.dofs, "" if math.isnan(c.error_pct) else f"{c.error_pct:.10e}"])
    with open(paths["quadstats"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(QUADSTATS_HEADER)
        for c in result.cycles:
            w.writerow([c.cycle, cfg["quadrature"]["scheme"], c.quad["total"], c.quad["physical"],
                        c.quad["fictitious"]])
    write_cycle_csv(result.records, paths["refinement"])
    outputs = cfg["outputs"]
    if outputs.get("diagnostics"):
        for c in result.cycles:
            if c.rules is not None:
                p = out / f"quadrature_cycle{c.cycle}.csv"
                c.rules.write_diagnostics(p)
                paths[p.stem] = p
    if outputs.get("vtk"):
        from .export import export_fields
        for c in result.cycles:
            if c.fields is None:
                continue
            p = out / f"fields_cycle{c.cycle}.vtk"
            f = c.fields
            export_fields(f.dofmap, f.u, p, states=f.states, points=f.points, temperature=f.temperature)
            paths[p.stem] = p
    if outputs.get("plot"):
        from .report import render_plots
        paths.update(render_plots(out))
    return paths
