"""Command line interface: ``cellforge run|bench|quadstats``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from ..geometry import write_voxels
from ..solver import LinearSolveError, NewtonDivergence
from ..thermal import ThermalError
from .cases import PRESETS, make_voxel_raster, preset_config
from .config import ConfigError, load_config, parse_config
from .runner import quadrature_counts, run_config

PFEM_HEADER = ["p", "dofs", "err_pct"]


def _progress(record):
    err = "" if math.isnan(record.error_pct) else f"{record.error_pct:.6e}"
    print(f"cycle={record.cycle},dofs={record.dofs},refined={record.refined},"
          f"coarsened={record.coarsened},err_pct={err}", flush=True)


def _apply_overrides(cfg: dict, args) -> dict:
    outputs = dict(cfg.get("outputs", {}))
    if getattr(args, "out", None):
        outputs["dir"] = args.out
    if getattr(args, "plot", False):
        outputs["plot"] = True
    if getattr(args, "vtk", False):
        outputs["vtk"] = True
    cfg["outputs"] = outputs
    return cfg


def _execute(cfg: dict, base_dir=None) -> int:
    out = Path(cfg["outputs"]["dir"])
    result = run_config(cfg, base_dir=base_dir, out_dir=out, callback=_progress)
    last = result.cycles[-1]
    print(f"done: {len(result.cycles)} analyses, final dofs {last.dofs}, output in {out}")
    return 0


def p_sweep(degrees, out_path=None) -> list[tuple[int, int, float]]:
    """Global p-refinement of the one-element kink bar."""
    rows = []
    for p in degrees:
        cfg = parse_config(preset_config("bar1d-kink", cycles=0, degree=p, quadrature="ast"))
        res = run_config(cfg)
        rows.append((p, res.cycles[0].dofs, res.cycles[0].error_pct))
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PFEM_HEADER)
            for p, n, e in rows:
                w.writerow([p, n, f"{e:.10e}"])
    return rows


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    cfg = _apply_overrides(cfg, args)
    return _execute(cfg, base_dir=Path(args.config).resolve().parent)


def cmd_bench(args) -> int:
    options = {"cycles": args.cycles, "quadrature": args.quadrature}
    if args.rate is not None:
        options["rate"] = args.rate
    if args.paper_scale:
        options["paper_scale"] = True
    out = Path(args.out or f"out/{args.case}")
    out.mkdir(parents=True, exist_ok=True)
    if args.case == "voxel-block":
        _, hdr = write_voxels(out / "block", make_voxel_raster(), spacing=(0.125, 0.125, 0.125))
        options["raster"] = str(hdr.resolve())
    try:
        cfg = preset_config(args.case, **options)
    except TypeError as exc:
        raise ConfigError(f"option not supported by preset {args.case}: {exc}") from exc
    cfg = parse_config(cfg)
    cfg = _apply_overrides(cfg, args)
    cfg["outputs"]["dir"] = str(out)
    code = _execute(cfg)
    if args.case == "bar1d-kink":
        p_sweep(range(2, 21), out / "pfem.csv")
        print(f"global p sweep written to {out / 'pfem.csv'}")
    return code


def cmd_quadstats(args) -> int:
    if args.target in PRESETS:
        extra = {}
        if args.target == "voxel-block":
            out = Path(args.out or "out/voxel-block")
            out.mkdir(parents=True, exist_ok=True)
            _, hdr = write_voxels(out / "block", make_voxel_raster(), spacing=(0.125, 0.125, 0.125))
            extra["raster"] = str(hdr.resolve())
        cfg, base = parse_config(preset_config(args.target, **extra)), None
    else:
        cfg, base = load_config(args.target), Path(args.target).resolve().parent
    rows = quadrature_counts(cfg, base)
    ast = next(r["total"] for r in rows if r["scheme"] == "ast")
    print("cycle,scheme,total,physical,fictitious,reduction_pct")
    for r in rows:
        red = 100.0 * (1.0 - r["total"] / ast) if ast else float("nan")
        print(f"{r['cycle']},{r['scheme']},{r['total']},{r['physical']},{r['fictitious']},{red:.2f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "quadstats.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle", "scheme", "total", "physical", "fictitious"])
            for r in rows:
                w.writerow([r["cycle"], r["scheme"], r["total"], r["physical"], r["fictitious"]])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cellforge", description="Finite cell analyses and benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a JSON configuration")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides outputs.dir)")
    run.add_argument("--plot", action="store_true", help="render PNG figures next to the CSV files")
    run.add_argument("--vtk", action="store_true", help="write field files")
    run.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench", help="run a benchmark preset")
    bench.add_argument("case", choices=PRESETS)
    bench.add_argument("--quadrature", choices=("nnmf", "ast"))
    bench.add_argument("--cycles", type=int)
    bench.add_argument("--rate", type=float, help="prescribed displacement rate [mm/s]")
    bench.add_argument("--out")
    bench.add_argument("--plot", action="store_true")
    bench.add_argument("--vtk", action="store_true")
    bench.add_argument("--paper-scale", action="store_true", help="use the full-size 3D meshes")
    bench.set_defaults(func=cmd_bench)

    qs = sub.add_parser("quadstats", help="quadrature point counts of AST and NNMF on the initial mesh")
    qs.add_argument("target", help="configuration file or preset name")
    qs.add_argument("--out")
    qs.set_defaults(func=cmd_quadstats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NewtonDivergence, LinearSolveError, ThermalError, ValueError, RuntimeError) as exc:
        print(f"analysis failed: {exc}", file=sys.stderr)
        return 1


run_cli = main

if __name__ == "__main__":
    sys.exit(main())
