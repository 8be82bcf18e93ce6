"""Run-configuration loading and validation.

A configuration is one JSON document checked against the schema shipped
next to this module (``config.schema.json``). Unknown keys are errors.
"""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema

DEFAULTS = {
    "seed": 0,
    "quadrature": {"scheme": "nnmf", "alpha_fict": 1e-8, "ast_depth": 5, "gauss_extra": 0},
    "material": {"T0": 293.15},
    "load": {"increments": 1, "dirichlet": [], "tractions": [], "monitors": {}},
    "newton": {"tol": 1e-8, "abs_floor": 1e-14, "max_iter": 50, "divergence_factor": 1e4,
               "line_search": 6},
    "refinement": {"cycles": 0, "refine_fraction": 0.2, "coarsen_fraction": 0.0, "marking": "fraction",
                   "indicator_step": "first"},
    "outputs": {"dir": "out", "vtk": False, "plot": False, "diagnostics": True},
}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


def load_schema() -> dict:
    text = resources.files("cellforge.bench").joinpath("config.schema.json").read_text()
    return json.loads(text)


def _describe(err: jsonschema.ValidationError) -> tuple[str, str | None]:
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            return f"unknown key '{extra[0]}' in {where}", extra[0]
    return f"{where}: {err.message}", None


def validate_config(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(e.absolute_path), str(e.absolute_path)))
    if errors:
        # report unknown keys first: they are the most common mistake
        errors.sort(key=lambda e: e.validator != "additionalProperties")
        message, key = _describe(errors[0])
        raise ConfigError(message, key)
    dim = len(cfg["mesh"]["counts"])
    for name in ("lower", "upper", "degrees"):
        if len(cfg["mesh"][name]) != dim:
            raise ConfigError(f"mesh/{name} must have {dim} entries", name)
    if any(u <= lo for lo, u in zip(cfg["mesh"]["lower"], cfg["mesh"]["upper"])):
        raise ConfigError("mesh/upper must exceed mesh/lower", "upper")
    faces = {"x": 0, "y": 1, "z": 2}
    for section in ("load", "thermal"):
        for bc in cfg.get(section, {}).get("dirichlet", []):
            if faces[bc["face"][0]] >= dim:
                raise ConfigError(f"face {bc['face']} does not exist in {dim}D", "face")
            if bc.get("component", 0) >= dim:
                raise ConfigError(f"component {bc['component']} does not exist in {dim}D", "component")


def merge_defaults(cfg: dict) -> dict:
    out = copy.deepcopy(cfg)
    for key, value in DEFAULTS.items():
        if isinstance(value, dict):
            merged = copy.deepcopy(value)
            merged.update(out.get(key, {}))
            out[key] = merged
        else:
            out.setdefault(key, value)
    return out


def parse_config(cfg: dict) -> dict:
    """Validate a configuration dictionary and fill in defaults."""
    validate_config(cfg)
    return merge_defaults(cfg)


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(cfg)
