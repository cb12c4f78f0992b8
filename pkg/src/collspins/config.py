"""Run configuration: a versioned YAML document checked against a JSON schema."""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import yaml

from .liouville import BlochState
from .model import SpinSystem, chain, cubic_lattice, hexagonal_rings, square_lattice
from .odeint import IntegratorConfig
from .runner import METHODS

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Configuration file is unreadable, malformed or inconsistent."""


_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_COUNT = {"type": "integer", "minimum": 1}


def _params(required: dict, optional: dict | None = None) -> dict:
    props = dict(required)
    props.update(optional or {})
    return {"type": "object", "properties": props, "required": sorted(required), "additionalProperties": False}


_GEOMETRY_PARAMS = {
    "chain": _params({"n": _COUNT, "d": _POS_NUM}),
    "square": _params({"nx": _COUNT, "ny": _COUNT, "d": _POS_NUM}),
    "cubic": _params({"nx": _COUNT, "ny": _COUNT, "nz": _COUNT, "d": _POS_NUM}),
    "hexagonal": _params({"nrings": {"type": "integer", "minimum": 0}, "d": _POS_NUM}),
    "explicit": _params(
        {
            "positions": {
                "type": "array",
                "minItems": 1,
                "items": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
            }
        }
    ),
}

_METHOD = {"enum": list(METHODS)}
_METHOD_LIST = {"type": "array", "items": _METHOD, "minItems": 1, "uniqueItems": True}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "geometry"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "params"],
            "properties": {"kind": {"enum": list(_GEOMETRY_PARAMS)}, "params": {"type": "object"}},
            "allOf": [
                {"if": {"properties": {"kind": {"const": k}}}, "then": {"properties": {"params": p}}}
                for k, p in _GEOMETRY_PARAMS.items()
            ],
        },
        "dipole": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["theta"],
            "properties": {
                "theta": {"type": "number", "minimum": 0, "maximum": float(np.pi)},
                "phi": {"type": "number"},
            },
        },
        "method": _METHOD,
        "time": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"t_end": _POS_NUM, "n_out": {"type": "integer", "minimum": 2}},
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rtol": _POS_NUM,
                "atol": _POS_NUM,
                "max_steps": _COUNT,
                "initial_step": {"oneOf": [_POS_NUM, {"type": "null"}]},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "compare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "methods": _METHOD_LIST,
                "reducer": {"oneOf": [{"const": "full"}, {"type": "integer", "minimum": 0}]},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axis"],
            "properties": {
                "axis": {"enum": ["distance", "theta", "N"]},
                "values": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "range": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["start", "stop", "num"],
                    "properties": {
                        "start": {"type": "number"},
                        "stop": {"type": "number"},
                        "num": _COUNT,
                        "scale": {"enum": ["linear", "log"]},
                    },
                },
                "methods": _METHOD_LIST,
                "reducer": {"oneOf": [{"enum": ["full", "central"]}, {"type": "integer", "minimum": 0}]},
                "fit": {"type": "boolean"},
                "fit_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "reference_n": _COUNT,
            },
            "oneOf": [{"required": ["values"]}, {"required": ["range"]}],
        },
        "benchmark": {
            "type": "object",
            "additionalProperties": False,
            "required": ["ns"],
            "properties": {
                "ns": {"type": "array", "items": _COUNT, "minItems": 1},
                "repeats": _COUNT,
            },
        },
    },
}

_DEFAULT_TIME = {"t_end": 5.0, "n_out": 201}
_DEFAULT_COMPARE = {"methods": ["independent", "meanfield", "mpc"], "reducer": "full"}


# PyYAML follows YAML 1.1 and reads "1e-8" as a string; accept it as a float
class _Loader(yaml.SafeLoader):
    pass


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+][0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


@dataclass(frozen=True)
class RunConfig:
    geometry: dict
    dipole: tuple = (0.0, 0.0, 1.0)
    theta: float = float(np.pi / 2)
    phi: float = 0.0
    method: str = "mpc"
    t_end: float = 5.0
    n_out: int = 201
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    seed: int = 0
    compare: dict | None = None
    sweep: dict | None = None
    benchmark: dict | None = None

    # ------------------------------------------------------------------
    @classmethod
    def from_dict(cls, doc: Any) -> "RunConfig":
        try:
            jsonschema.validate(doc, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        time = {**_DEFAULT_TIME, **doc.get("time", {})}
        init = doc.get("initial", {"theta": float(np.pi / 2)})
        dip = tuple(float(x) for x in doc.get("dipole", (0.0, 0.0, 1.0)))
        try:
            integ = IntegratorConfig(**doc.get("integrator", {}))
        except ValueError as exc:
            raise ConfigError(f"invalid integrator settings: {exc}") from None
        cfg = cls(
            geometry=copy.deepcopy(doc["geometry"]),
            dipole=dip,
            theta=float(init["theta"]),
            phi=float(init.get("phi", 0.0)),
            method=doc.get("method", "mpc"),
            t_end=float(time["t_end"]),
            n_out=int(time["n_out"]),
            integrator=integ,
            seed=int(doc.get("seed", 0)),
            compare={**_DEFAULT_COMPARE, **doc["compare"]} if "compare" in doc else None,
            sweep=copy.deepcopy(doc.get("sweep")),
            benchmark=copy.deepcopy(doc.get("benchmark")),
        )
        cfg.sweep_values()  # surface bad ranges at load time
        return cfg

    def to_dict(self) -> dict:
        ic = self.integrator
        integ = {"rtol": ic.rtol, "atol": ic.atol, "max_steps": ic.max_steps}
        if ic.initial_step is not None:
            integ["initial_step"] = ic.initial_step
        doc = {
            "version": CONFIG_VERSION,
            "geometry": copy.deepcopy(self.geometry),
            "dipole": list(self.dipole),
            "initial": {"theta": self.theta, "phi": self.phi},
            "method": self.method,
            "time": {"t_end": self.t_end, "n_out": self.n_out},
            "integrator": integ,
            "seed": self.seed,
        }
        for key in ("compare", "sweep", "benchmark"):
            val = getattr(self, key)
            if val is not None:
                doc[key] = copy.deepcopy(val)
        return doc

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    # ------------------------------------------------------------------
    def t_out(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_out)

    def initial_state(self) -> BlochState:
        return BlochState(self.theta, self.phi)

    def positions(self) -> np.ndarray:
        kind, p = self.geometry["kind"], self.geometry["params"]
        if kind == "chain":
            return chain(p["n"], p["d"])
        if kind == "square":
            return square_lattice(p["nx"], p["ny"], p["d"])
        if kind == "cubic":
            return cubic_lattice(p["nx"], p["ny"], p["nz"], p["d"])
        if kind == "hexagonal":
            return hexagonal_rings(p["nrings"], p["d"])
        return np.asarray(p["positions"], dtype=float)

    def system(self) -> SpinSystem:
        return SpinSystem(self.positions(), dipole=np.asarray(self.dipole))

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def with_axis(self, axis: str, value) -> "RunConfig":
        """Copy with one sweep axis set to ``value``."""
        geo = copy.deepcopy(self.geometry)
        if axis == "theta":
            if not 0.0 <= value <= np.pi:
                raise ConfigError(f"theta value {value} outside [0, pi]")
            return replace(self, theta=float(value))
        if axis == "distance":
            if "d" not in geo["params"]:
                raise ConfigError("distance sweeps need a lattice geometry with a spacing d")
            if not value > 0:
                raise ConfigError(f"distance value {value} must be positive")
            geo["params"]["d"] = float(value)
        elif axis == "N":
            if geo["kind"] != "chain":
                raise ConfigError("N sweeps are defined for chain geometries")
            if int(value) != value or value < 1:
                raise ConfigError(f"N value {value} must be a positive integer")
            geo["params"]["n"] = int(value)
        else:
            raise ConfigError(f"unknown sweep axis {axis!r}")
        return replace(self, geometry=geo)

    def sweep_values(self) -> list:
        sw = self.sweep
        if sw is None:
            return []
        if "values" in sw:
            vals = [float(v) for v in sw["values"]]
        else:
            r = sw["range"]
            scale = r.get("scale", "linear")
            if scale == "log":
                if not (r["start"] > 0 and r["stop"] > 0):
                    raise ConfigError("log ranges need positive start and stop")
                vals = np.geomspace(r["start"], r["stop"], r["num"]).tolist()
            else:
                vals = np.linspace(r["start"], r["stop"], r["num"]).tolist()
        if sw["axis"] == "N":
            if any(v != int(v) or v < 1 for v in vals):
                raise ConfigError("N sweep values must be positive integers")
            vals = [int(v) for v in vals]
        for v in vals:
            self.with_axis(sw["axis"], v)
        return sorted(set(vals))


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def parse_config(text: str) -> RunConfig:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    return RunConfig.from_dict(doc)
