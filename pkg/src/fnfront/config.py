"""Run configuration: JSON schema validation and construction of problem objects."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import jsonschema

from .expressions import ExpressionError
from .geometry import GridError, SpaceTimeGrid
from .operators import FORMS, OperatorError, OperatorSpec
from .problem import DirichletSpec, ForcingSpec, ProblemError, ProblemSpec, ReactionProfile
from .solver import SolverOptions


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_EXPR = {"type": ["string", "number"]}
_MATRIX = {"type": "array", "items": {"type": "array", "items": _EXPR}}

SCHEMA = {
    "type": "object",
    "required": ["grid", "operator", "problem"],
    "additionalProperties": False,
    "properties": {
        "grid": {
            "type": "object",
            "required": ["dim", "nx", "nt", "T"],
            "additionalProperties": False,
            "properties": {
                "dim": {"enum": [1, 2]},
                "nx": {"type": "integer", "minimum": 3},
                "nt": {"type": "integer", "minimum": 2},
                "T": _POS,
                "extent": _POS,
                "parabolic_scaling_factor": _POS,
            },
        },
        "operator": {
            "type": "object",
            "required": ["lambda", "Lambda"],
            "additionalProperties": False,
            "properties": {
                "form": {"enum": list(FORMS)},
                "lambda": _POS,
                "Lambda": _POS,
                "matrix": _MATRIX,
                "family": {"type": "array", "items": _MATRIX},
            },
        },
        "problem": {
            "type": "object",
            "required": ["forcing", "dirichlet"],
            "additionalProperties": False,
            "properties": {
                "reaction": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "profile": {"type": "string"},
                        "amplitude": {"type": "number", "minimum": 0, "maximum": 1},
                    },
                },
                "forcing": {
                    "type": "object",
                    "required": ["expr", "c0", "c1"],
                    "additionalProperties": False,
                    "properties": {"expr": _EXPR, "c0": _POS, "c1": _POS, "grad_bound": _NUM},
                },
                "dirichlet": {
                    "type": "object",
                    "required": ["expr"],
                    "additionalProperties": False,
                    "properties": {"expr": _EXPR},
                },
                "eps": _POS,
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "outer_tol": _POS,
                "inner_tol": _POS,
                "max_inner": {"type": "integer", "minimum": 1},
                "max_outer": {"type": "integer", "minimum": 1},
                "one_phase": {"type": "boolean"},
                "resolution_guard": {"type": "boolean"},
                "l_guess": {"type": ["number", "null"]},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps": {"type": "array", "items": _POS, "minItems": 1},
                "threads": {"type": "integer", "minimum": 1},
            },
        },
        "audit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "margin": {"type": ["number", "null"]},
                "radii": {"type": "array", "items": _POS},
                "R": _POS,
                "t0": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dump_fields": {"type": "boolean"}},
        },
        "seed": {"type": "integer"},
    },
}


@dataclass
class RunConfig:
    raw: dict
    problem: ProblemSpec
    solver: SolverOptions
    eps_list: list
    threads: int
    audit: dict
    seed: int
    dump_fields: bool

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def eps(self) -> float:
        return self.problem.eps if self.problem.eps is not None else self.eps_list[-1]


def config_hash(raw: dict) -> str:
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _line_of(text: str, path) -> int | None:
    """Best-effort line number of the last key in ``path`` within ``text``."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return None
    pos = 0
    for key in keys:
        i = text.find(f'"{key}"', pos)
        if i < 0:
            return None
        pos = i
    return text.count("\n", 0, pos) + 1


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            field = "/".join(str(p) for p in e.absolute_path) or "<root>"
            line = _line_of(text, e.absolute_path)
            where = f"{source}:{line}" if line else source
            msgs.append(f"{where}: field '{field}': {e.message}")
        raise ConfigError("\n".join(msgs))
    return build_config(raw, source)


def build_config(raw: dict, source: str = "<config>") -> RunConfig:
    raw = copy.deepcopy(raw)
    try:
        grid = SpaceTimeGrid.from_config(raw["grid"])
        op = OperatorSpec.from_config(raw["operator"], grid.dim)
        if op.matrix_dim not in (None, grid.dim):
            raise ConfigError(f"{source}: field 'operator': matrix size does not match grid dim")
        pb = raw["problem"]
        rb = pb.get("reaction", {})
        reaction = ReactionProfile(rb.get("profile", "default"), float(rb.get("amplitude", 1.0)))
        problem = ProblemSpec(grid, op, reaction, ForcingSpec.from_config(pb["forcing"]),
                              DirichletSpec.from_config(pb["dirichlet"]), pb.get("eps"))
    except ConfigError:
        raise
    except (GridError, OperatorError, ProblemError, ExpressionError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    sweep = raw.get("sweep", {})
    eps_list = [float(e) for e in sweep.get("eps", [problem.eps or 0.1])]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError(f"{source}: field 'sweep/eps': must be strictly decreasing")
    audit = {"margin": None, "radii": None, "R": None, "t0": None, **raw.get("audit", {})}
    return RunConfig(
        raw=raw,
        problem=problem,
        solver=SolverOptions.from_config(raw.get("solver")),
        eps_list=eps_list,
        threads=int(sweep.get("threads", 1)),
        audit=audit,
        seed=int(raw.get("seed", 0)),
        dump_fields=bool(raw.get("output", {}).get("dump_fields", False)),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def demo_config_text() -> str:
    return resources.files("fnfront").joinpath("data/demo.json").read_text(encoding="utf-8")


def demo_config() -> RunConfig:
    return parse_config(demo_config_text(), "demo.json")
