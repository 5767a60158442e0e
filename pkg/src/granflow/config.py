"""TOML run configuration: parsing, validation, canonical form and hashing.

Schema (every key optional unless noted; defaults are injected on load)::

    [grid]      nx, ny (required), nz, lx, ly, lz
    [rheology]  nu_star, delta_star, q_star, q_exponent, reg_n
    [slip]      s_star, beta_star, gamma_star
    [time]      dt, t_end
    [solver]    picard_tol, picard_max, poisson_tol, picard_floor, cfl_limit,
                linear_solver ("direct" | "cg"), advection_scheme ("upwind" | "central")
    [physics]   alpha_drag, rho_s, rho_f, permeability, include_ps_rate,
                freeze_velocity, freeze_pore_pressure
    [forcing.body_force]     kind + parameters
    [forcing.lithostatic]    kind + parameters
    [forcing.porosity]       kind + parameters
    [initial.velocity]       kind + parameters
    [initial.pore_pressure]  kind + parameters
    [output]    run_id, snapshot_every, write_vtk

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass

from . import closures
from .closures import FieldSpec
from .fields import Grid
from .rheology import RheologyParams, SlipParams
from .solver import SimConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(Exception):
    pass


class ConfigParseError(ConfigError):
    pass


class ConfigValidationError(ConfigError):
    pass


DEFAULTS = {
    "grid": {"nx": None, "ny": None, "nz": None, "lx": 1.0, "ly": 1.0, "lz": 1.0},
    "rheology": {"nu_star": 0.5, "delta_star": 0.0, "q_star": 1.0, "q_exponent": 2.0, "reg_n": 64},
    "slip": {"s_star": 0.0, "beta_star": 0.0, "gamma_star": 1.0},
    "time": {"dt": 1e-3, "t_end": 1e-2},
    "solver": {"picard_tol": 1e-8, "picard_max": 200, "poisson_tol": 1e-10, "picard_floor": 1e-12,
               "cfl_limit": 0.5, "linear_solver": "direct", "advection_scheme": "upwind"},
    "physics": {"alpha_drag": 1.0, "rho_s": 1.0, "rho_f": 1.0, "permeability": 1.0,
                "include_ps_rate": False, "freeze_velocity": False, "freeze_pore_pressure": False},
    "forcing": {"body_force": {"kind": "zero"}, "lithostatic": {"kind": "constant", "value": 0.0},
                "porosity": {"kind": "constant", "phi0": 0.3}},
    "initial": {"velocity": {"kind": "zero"}, "pore_pressure": {"kind": "constant", "value": 0.0}},
    "output": {"run_id": "", "snapshot_every": 0, "write_vtk": True},
}

_SPEC_SECTIONS = {"forcing": ("body_force", "lithostatic", "porosity"),
                  "initial": ("velocity", "pore_pressure")}

_TYPES = {
    "grid": {"nx": int, "ny": int, "nz": int, "lx": float, "ly": float, "lz": float},
    "rheology": {"nu_star": float, "delta_star": float, "q_star": float, "q_exponent": float, "reg_n": int},
    "slip": {"s_star": float, "beta_star": float, "gamma_star": float},
    "time": {"dt": float, "t_end": float},
    "solver": {"picard_tol": float, "picard_max": int, "poisson_tol": float, "picard_floor": float,
               "cfl_limit": float, "linear_solver": str, "advection_scheme": str},
    "physics": {"alpha_drag": float, "rho_s": float, "rho_f": float, "permeability": float,
                "include_ps_rate": bool, "freeze_velocity": bool, "freeze_pore_pressure": bool},
    "output": {"run_id": str, "snapshot_every": int, "write_vtk": bool},
}


def _coerce(section, key, value):
    typ = _TYPES[section][key]
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigValidationError(f"[{section}] {key} must be a boolean")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigValidationError(f"[{section}] {key} must be an integer")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigValidationError(f"[{section}] {key} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigValidationError(f"[{section}] {key} must be a string")
    return value


def _spec_table(section, name, table):
    if not isinstance(table, dict):
        raise ConfigValidationError(f"[{section}.{name}] must be a table")
    if "kind" not in table or not isinstance(table["kind"], str):
        raise ConfigValidationError(f"[{section}.{name}] needs a string 'kind'")
    out = {"kind": table["kind"]}
    for k, v in table.items():
        if k == "kind":
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigValidationError(f"[{section}.{name}] {k} must be a number")
        out[k] = float(v)
    return out


def canonicalize(raw: dict) -> dict:
    """Validate ``raw`` and return it with every default filled in explicitly."""
    if not isinstance(raw, dict):
        raise ConfigValidationError("configuration must be a table")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigValidationError(f"unknown sections {sorted(unknown)}")
    canon = copy.deepcopy(DEFAULTS)
    for section, table in raw.items():
        if not isinstance(table, dict):
            raise ConfigValidationError(f"[{section}] must be a table")
        if section in _SPEC_SECTIONS:
            extra = set(table) - set(_SPEC_SECTIONS[section])
            if extra:
                raise ConfigValidationError(f"[{section}] unknown keys {sorted(extra)}")
            for name, sub in table.items():
                canon[section][name] = _spec_table(section, name, sub)
            continue
        extra = set(table) - set(DEFAULTS[section])
        if extra:
            raise ConfigValidationError(f"[{section}] unknown keys {sorted(extra)}")
        for key, value in table.items():
            canon[section][key] = _coerce(section, key, value)
    for key in ("nx", "ny"):
        if canon["grid"][key] is None:
            raise ConfigValidationError(f"[grid] {key} is required")
    if canon["grid"]["nz"] is None:
        del canon["grid"]["nz"]
        del canon["grid"]["lz"]
    build_sim_config(canon)  # semantic validation
    return canon


def _field_spec(table):
    return FieldSpec(table["kind"], {k: v for k, v in table.items() if k != "kind"})


def build_sim_config(canon: dict) -> SimConfig:
    try:
        g = canon["grid"]
        if "nz" in g:
            grid = Grid((g["nx"], g["ny"], g["nz"]), (g["lx"], g["ly"], g["lz"]))
        else:
            grid = Grid((g["nx"], g["ny"]), (g["lx"], g["ly"]))
        cfg = SimConfig(
            grid=grid,
            rheology=RheologyParams(**canon["rheology"]),
            slip=SlipParams(**canon["slip"]),
            dt=canon["time"]["dt"], t_end=canon["time"]["t_end"],
            body_force_spec=_field_spec(canon["forcing"]["body_force"]),
            lithostatic_spec=_field_spec(canon["forcing"]["lithostatic"]),
            porosity_spec=_field_spec(canon["forcing"]["porosity"]),
            **canon["solver"], **canon["physics"],
        )
        # exercise the generators once so bad kinds/parameters fail at load time
        closures.body_force(cfg.body_force_spec, grid, 0.0)
        closures.lithostatic(cfg.lithostatic_spec, grid, 0.0)
        closures.porosity(cfg.porosity_spec)
        initial_fields(canon, grid)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigValidationError(str(exc)) from exc
    if canon["output"]["snapshot_every"] < 0:
        raise ConfigValidationError("[output] snapshot_every must be >= 0")
    return cfg


def initial_fields(canon: dict, grid: Grid):
    v0 = closures.initial_velocity(_field_spec(canon["initial"]["velocity"]), grid)
    pf0 = closures.initial_pore_pressure(_field_spec(canon["initial"]["pore_pressure"]), grid)
    return v0, pf0


def config_hash(canon: dict) -> str:
    """SHA-256 of the canonical JSON form (sorted keys), stable under key reordering."""
    text = json.dumps(canon, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class LoadedConfig:
    path: str
    canonical: dict
    sim: SimConfig
    digest: str


def load_config(path) -> LoadedConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigParseError(f"config file not found: {path}") from exc
    except OSError as exc:
        raise ConfigParseError(f"cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"invalid TOML in {path}: {exc}") from exc
    canon = canonicalize(raw)
    return LoadedConfig(str(path), canon, build_sim_config(canon), config_hash(canon))


def _spec_dict(spec: FieldSpec):
    return {"kind": spec.kind, **{k: float(v) for k, v in spec.params.items()}}


def sim_config_to_dict(cfg: SimConfig, v_spec: FieldSpec, pf_spec: FieldSpec, run_id="") -> dict:
    """Canonical dictionary describing ``cfg`` (inverse of :func:`build_sim_config`)."""
    g = cfg.grid
    grid = {"nx": g.shape[0], "ny": g.shape[1], "lx": g.lengths[0], "ly": g.lengths[1]}
    if g.dim == 3:
        grid.update(nz=g.shape[2], lz=g.lengths[2])
    r, s = cfg.rheology, cfg.slip
    raw = {
        "grid": grid,
        "rheology": {"nu_star": r.nu_star, "delta_star": r.delta_star, "q_star": r.q_star,
                     "q_exponent": r.q_exponent, "reg_n": r.reg_n},
        "slip": {"s_star": s.s_star, "beta_star": s.beta_star, "gamma_star": s.gamma_star},
        "time": {"dt": cfg.dt, "t_end": cfg.t_end},
        "solver": {k: getattr(cfg, k) for k in DEFAULTS["solver"]},
        "physics": {k: getattr(cfg, k) for k in DEFAULTS["physics"]},
        "forcing": {"body_force": _spec_dict(cfg.body_force_spec),
                    "lithostatic": _spec_dict(cfg.lithostatic_spec),
                    "porosity": _spec_dict(cfg.porosity_spec)},
        "initial": {"velocity": _spec_dict(v_spec), "pore_pressure": _spec_dict(pf_spec)},
        "output": {"run_id": run_id},
    }
    return canonicalize(json.loads(json.dumps(raw)))
