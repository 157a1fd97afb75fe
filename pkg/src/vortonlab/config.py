"""Scenario files: JSON schema, defaults, dotted overrides and located diagnostics."""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass
from importlib import resources

import jsonschema

from .kernels import KernelSpec

__all__ = [
    "COMMANDS",
    "SCHEMA",
    "ConfigError",
    "Scenario",
    "apply_override",
    "load_scenario",
    "preset_names",
    "preset_text",
]

COMMANDS = ("simulate", "reduce2", "contours", "field", "flowmap", "converge", "cloudcompare", "check")


class ConfigError(ValueError):
    """Invalid scenario; the message names the field and, when known, the line."""


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 2, "maxItems": 3}
_points = {"type": "array", "items": _vec, "minItems": 1}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_ipair = {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 2, "maxItems": 2}


def _params(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


PARAM_SCHEMAS = {
    "simulate": _params(
        {
            "positions": _points,
            "momenta": _points,
            "T": _pos,
            "n_out": {"type": "integer", "minimum": 2},
            "tol": _pos,
            "method": {"enum": ["adaptive", "rk4_fixed"]},
            "dt": {"oneOf": [_pos, {"type": "null"}]},
        },
        ["positions", "momenta"],
    ),
    "reduce2": _params(
        {
            "deltaP": _vec,
            "deltam": _vec,
            "mbar_y": {"type": "array", "items": _num, "minItems": 1},
            "T": _pos,
            "n_out": {"type": "integer", "minimum": 2},
            "tol": _pos,
        }
    ),
    "contours": _params(
        {"omega": _nonneg, "rho_range": _pair, "dm_range": _pair, "grid_shape": _ipair}
    ),
    "field": _params(
        {
            "kind": {"enum": ["vortons", "collapse", "euler_dipole"]},
            "extent": _pos,
            "resolution": {"type": "integer", "minimum": 2},
            "positions": _points,
            "momenta": _points,
            "coeffs": _pair,
            "plane_z": _num,
        }
    ),
    "flowmap": _params(
        {
            "positions": _points,
            "momenta": _points,
            "t0": {"oneOf": [_num, {"type": "null"}]},
            "t1": {"oneOf": [_num, {"type": "null"}]},
            "extent": _pos,
            "shape": _ipair,
            "tol": _pos,
        },
        ["positions", "momenta"],
    ),
    "converge": _params(
        {
            "preset": {"enum": ["vortex-pair", "single-blob"]},
            "initial_grid": {"type": ["string", "null"]},
            "N": {"type": "integer", "minimum": 8},
            "L": _pos,
            "T": _nonneg,
            "study": {"enum": ["eps", "eta"]},
            "schedule": {"oneOf": [{"type": "array", "items": _pair, "minItems": 2}, {"type": "null"}]},
            "dt": {"oneOf": [_pos, {"type": "null"}]},
            "k": {"type": "integer", "minimum": 0},
            "n_boot": {"type": "integer", "minimum": 1},
        }
    ),
    "cloudcompare": _params(
        {
            "preset": {"enum": ["vortex-pair", "single-blob"]},
            "n": {"type": "integer", "minimum": 1},
            "levels": {"type": "integer", "minimum": 1},
            "rule": {"enum": ["midpoint_lattice", "random_stratified"]},
            "T": _pos,
            "grid_N": {"type": "integer", "minimum": 8},
            "grid_L": _pos,
            "probe_stride": {"type": "integer", "minimum": 1},
            "tol": _pos,
        }
    ),
    "check": _params({}),
}

KERNEL_SCHEMA = {
    "type": "object",
    "properties": {
        "n": {"enum": [2, 3]},
        "eps": _nonneg,
        "eta": _nonneg,
        "p": {"type": "integer", "minimum": 1},
        "normalization": {"enum": ["operator", "unit_peak", "unit_mass"]},
        "gaussian_limit": {"type": "boolean"},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "vorton-lab scenario",
    "type": "object",
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "kernel": KERNEL_SCHEMA,
        "params": {"type": "object"},
    },
    "required": ["command"],
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"command": {"const": c}}}, "then": {"properties": {"params": s}}}
        for c, s in PARAM_SCHEMAS.items()
    ],
}

DEFAULT_KERNEL = {"n": 3, "eps": 0.0, "eta": 1.0, "p": 3, "normalization": "unit_peak", "gaussian_limit": False}

# planar grid-backed commands default to operator-normalized n=2 kernels
KERNEL_OVERRIDES = {
    "converge": {"n": 2, "normalization": "operator"},
    "cloudcompare": {"n": 2, "eta": 0.5, "normalization": "operator"},
}

DEFAULT_PARAMS = {
    "simulate": {"T": 20.0, "n_out": 101, "tol": 1e-10, "method": "adaptive", "dt": None},
    "reduce2": {
        "deltaP": [5.0, 0.0, 0.0],
        "deltam": [-3.0, 0.5, 0.0],
        "mbar_y": [float(y) for y in range(11)],
        "T": 20.0,
        "n_out": 401,
        "tol": 1e-10,
    },
    "contours": {"omega": 1.0, "rho_range": [0.05, 6.0], "dm_range": [0.05, 6.0], "grid_shape": [120, 120]},
    "field": {"kind": "vortons", "extent": 3.0, "resolution": 41, "coeffs": [1.0, 2.0], "plane_z": 0.0},
    "flowmap": {"t0": None, "t1": None, "extent": 3.0, "shape": [31, 31], "tol": 1e-9},
    "converge": {
        "preset": "vortex-pair",
        "initial_grid": None,
        "N": 256,
        "L": 2 * math.pi,
        "T": 1.0,
        "study": "eps",
        "schedule": None,
        "dt": None,
        "k": 2,
        "n_boot": 200,
    },
    "cloudcompare": {
        "preset": "single-blob",
        "n": 16,
        "levels": 3,
        "rule": "midpoint_lattice",
        "T": 1.0,
        "grid_N": 512,
        "grid_L": 24.0,
        "probe_stride": 4,
        "tol": 1e-9,
    },
    "check": {},
}


def _locate(text: str | None, path) -> str:
    """'line N' of the innermost key on ``path`` found in ``text``, or ''."""
    if not text:
        return ""
    pos = 0
    found = False
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            break
        pos, found = m.start(), True
    return f"line {text.count(chr(10), 0, pos) + 1}" if found else ""


def _dotted(path) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def _validate(doc: dict, text: str | None, source: str):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if not errors:
        return
    # prefer the deepest error: it names the offending field
    err = max(errors, key=lambda e: len(e.absolute_path))
    path = list(err.absolute_path)
    if err.validator == "additionalProperties":
        extra = re.findall(r"'([^']+)'", err.message)
        if extra:
            path = path + [extra[0]]
    where = _locate(text, path)
    loc = f"{source}: {where}: " if where else f"{source}: "
    raise ConfigError(f"{loc}field '{_dotted(path)}': {err.message}")


@dataclass(frozen=True)
class Scenario:
    command: str
    kernel: dict
    params: dict
    seed: int = 0
    description: str = ""

    @classmethod
    def from_dict(cls, doc: dict, *, text: str | None = None, source: str = "<config>") -> "Scenario":
        _validate(doc, text, source)
        command = doc["command"]
        kernel = dict(DEFAULT_KERNEL)
        kernel.update(KERNEL_OVERRIDES.get(command, {}))
        kernel.update(doc.get("kernel", {}))
        params = copy.deepcopy(DEFAULT_PARAMS[command])
        params.update(copy.deepcopy(doc.get("params", {})))
        for key in PARAM_SCHEMAS[command]["required"]:
            if key not in params:
                raise ConfigError(f"{source}: field 'params.{key}' is required for {command}")
        sc = cls(command, kernel, params, int(doc.get("seed", 0)), doc.get("description", ""))
        try:
            sc.kernel_spec()
        except ValueError as exc:
            where = _locate(text, ["kernel"])
            raise ConfigError(f"{source}: {where + ': ' if where else ''}field 'kernel': {exc}") from None
        return sc

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "description": self.description,
            "seed": self.seed,
            "kernel": dict(self.kernel),
            "params": copy.deepcopy(self.params),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def kernel_spec(self) -> KernelSpec:
        k = self.kernel
        return KernelSpec(
            n=int(k["n"]), eps=float(k["eps"]), eta=float(k["eta"]), p=int(k["p"]),
            normalization=k["normalization"], gaussian_limit=bool(k["gaussian_limit"]),
        )


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(doc: dict, assignment: str) -> None:
    """Set a dotted path ``a.b.c=value`` in ``doc``; the value is read as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"--set {assignment!r}: expected key=value")
    key, raw = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"--set {assignment!r}: empty key")
    node = doc
    for p in parts[:-1]:
        if isinstance(node, list):
            try:
                node = node[int(p)]
            except (ValueError, IndexError):
                raise ConfigError(f"--set {assignment!r}: '{p}' is not a valid list index") from None
            continue
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, (dict, list)):
            raise ConfigError(f"--set {assignment!r}: '{p}' is not an object")
        node = nxt
    last = parts[-1]
    value = _parse_value(raw)
    if isinstance(node, list):
        try:
            node[int(last)] = value
        except (ValueError, IndexError):
            raise ConfigError(f"--set {assignment!r}: '{last}' is not a valid list index") from None
    else:
        node[last] = value


def preset_names() -> list[str]:
    files = resources.files("vortonlab").joinpath("scenarios").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".json"))


def preset_text(name: str) -> str:
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return resources.files("vortonlab").joinpath("scenarios", f"{name}.json").read_text()


def load_scenario(text: str, *, source: str = "<string>", overrides=(), command: str | None = None) -> Scenario:
    """Parse, apply ``--set`` overrides, validate and fill defaults."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: line 1: the scenario must be a JSON object")
    if command is not None:
        if "command" in doc and doc["command"] != command:
            where = _locate(text, ["command"])
            raise ConfigError(
                f"{source}: {where + ': ' if where else ''}field 'command': file is for {doc['command']!r}, not {command!r}"
            )
        doc["command"] = command
    for o in overrides:
        apply_override(doc, o)
    return Scenario.from_dict(doc, text=text, source=source)
