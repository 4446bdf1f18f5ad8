"""Scenario documents: schema, validation and construction of schedules."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .caralg import FockSpace, LatticeGeometry, build_fock
from .exprs import ExpressionError, parse_operator
from .interaction import Interaction, InteractionError, LipschitzPotential
from .schedule import (Ramp, Schedule, default_observables, density_interaction, staggered_hopping,
                       staggered_potential, uniform_hopping)

SCHEMA_VERSION = "1"

_RAMP = {
    "oneOf": [
        {"type": "number"},
        {"type": "object", "required": ["kind"], "additionalProperties": False,
         "properties": {"kind": {"enum": ["constant", "linear", "smoothstep", "sinusoid"]},
                        "value": {"type": "number"}, "start": {"type": "number"}, "stop": {"type": "number"},
                        "slope": {"type": "number"}, "t_start": {"type": "number"}, "t_stop": {"type": "number"},
                        "offset": {"type": "number"}, "amplitude": {"type": "number"},
                        "omega": {"type": "number"}, "phase": {"type": "number"}}},
    ]
}
_TERM = {"type": "object", "required": ["sites", "expr"], "additionalProperties": False,
         "properties": {"sites": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
                        "expr": {"type": "string"}}}
_PART = {
    "type": "object", "additionalProperties": False,
    "properties": {"builtin": {"enum": ["uniform_hopping", "staggered_hopping", "density_interaction",
                                        "staggered_potential"]},
                   "terms": {"type": "array", "minItems": 1, "items": _TERM},
                   "ramp": _RAMP},
    "oneOf": [{"required": ["builtin"]}, {"required": ["terms"]}],
}
_POTENTIAL = {
    "type": "object", "additionalProperties": False,
    "properties": {"field": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                   "origin": {"type": "array", "items": {"type": "number"}},
                   "values": {"type": "array", "items": {"type": "number"}},
                   "lipschitz_constant": {"type": "number", "exclusiveMinimum": 0},
                   "ramp": _RAMP},
    "oneOf": [{"required": ["field"]}, {"required": ["values"]}],
}
_GRID = {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}}
_ORDERS = {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0, "maximum": 4}}
_SWEEP = {
    "type": "object", "required": ["kind"],
    "properties": {
        "kind": {"enum": ["adiabatic", "neass", "lr", "spectral", "cancellation"]},
        "orders": _ORDERS, "eta": _GRID, "epsilon": {"oneOf": [_GRID, {"type": "number", "minimum": 0, "maximum": 1}]},
        "t0": {"type": "number"}, "t1": {"type": "number"}, "t": {"type": "number"},
        "times": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
        "distances": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "site": {"type": "integer", "minimum": 0},
        "samples": {"type": "integer", "minimum": 1},
        "eta_check": _GRID,
        "assert": {"type": "boolean"},
    },
    "additionalProperties": False,
}
SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["name", "geometry", "model", "interval", "sweeps"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "geometry": {
            "type": "object", "required": ["kind"], "additionalProperties": False,
            "properties": {"kind": {"enum": ["chain", "rectangle"]},
                           "length": {"type": "integer", "minimum": 2, "maximum": 14},
                           "lx": {"type": "integer", "minimum": 1}, "ly": {"type": "integer", "minimum": 1},
                           "flavors": {"type": "integer", "minimum": 1, "maximum": 2}},
        },
        "sizes": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 2, "maximum": 14}},
        "model": {
            "type": "object", "required": ["hamiltonian"], "additionalProperties": False,
            "properties": {"hamiltonian": {"type": "array", "minItems": 1, "items": _PART},
                           "perturbation": {"type": "array", "items": _PART},
                           "potential": {"type": "array", "items": _POTENTIAL}},
        },
        "interval": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}},
        "region": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "gap": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "order": {"type": "integer", "minimum": 0, "maximum": 4},
        "observables": {
            "oneOf": [{"const": "default"},
                      {"type": "array", "minItems": 1,
                       "items": {"type": "object", "required": ["name", "expr"], "additionalProperties": False,
                                 "properties": {"name": {"type": "string"}, "expr": {"type": "string"}}}}]},
        "sweeps": {"type": "array", "minItems": 1, "items": _SWEEP},
        "seed": {"type": "integer", "minimum": 0},
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                           for k in ("integrator", "floor", "slope", "cancellation", "spectral")},
        },
    },
}

DEFAULT_TOLERANCES = {"integrator": 1e-11, "floor": 1e-12, "slope": 0.3, "cancellation": 1e-9, "spectral": 1e-10}


class ScenarioError(ValueError):
    """Schema or semantic validation failure; ``pointer`` names the offending key."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer or "/"


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


@dataclass
class Scenario:
    doc: dict
    source: Path | None = None

    @property
    def name(self) -> str:
        return self.doc["name"]

    @property
    def seed(self) -> int:
        return int(self.doc.get("seed", 0))

    @property
    def order(self) -> int:
        return int(self.doc.get("order", 2))

    @property
    def tolerances(self) -> dict[str, float]:
        return {**DEFAULT_TOLERANCES, **self.doc.get("tolerances", {})}

    @property
    def sizes(self) -> list[int | None]:
        return list(self.doc.get("sizes", [None]))

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.doc, sort_keys=True).encode()).hexdigest()

    def geometry(self, size: int | None = None) -> LatticeGeometry:
        g = self.doc["geometry"]
        flavors = g.get("flavors", 1)
        if g["kind"] == "chain":
            return LatticeGeometry.chain(size or g.get("length", 8), flavors)
        return LatticeGeometry.rectangle(g["lx"], g["ly"], flavors)

    def build(self, size: int | None = None) -> tuple[Schedule, dict[str, np.ndarray]]:
        """The schedule and the named observables for one lattice size."""
        geo = self.geometry(size)
        space = build_fock(geo)
        model = self.doc["model"]
        parts = [self._part(p, space, f"/model/hamiltonian/{k}") for k, p in enumerate(model["hamiltonian"])]
        pert = [self._part(p, space, f"/model/perturbation/{k}") for k, p in enumerate(model.get("perturbation", []))]
        pot = [self._potential(p, space, f"/model/potential/{k}") for k, p in enumerate(model.get("potential", []))]
        region = self.doc.get("region")
        if region is not None:
            bad = [s for s in region if s >= geo.n_sites]
            if bad:
                raise ScenarioError(f"sites {bad} are outside the lattice", "/region")
            region = frozenset(region)
        sch = Schedule(space, parts, pert, pot, interval=tuple(self.doc["interval"]), region=region,
                       gap=self.doc.get("gap"), name=self.name)
        return sch, self._observables(space)

    def _part(self, part, space: FockSpace, ptr: str):
        ramp = Ramp.from_spec(part.get("ramp", 1.0))
        if "builtin" in part:
            builders = {"uniform_hopping": uniform_hopping, "staggered_hopping": staggered_hopping,
                        "density_interaction": density_interaction, "staggered_potential": staggered_potential}
            if space.geometry.dimension != 1 and part["builtin"] != "staggered_potential":
                raise ScenarioError("hopping and density builtins need a chain geometry", ptr + "/builtin")
            return ramp, builders[part["builtin"]](space)
        terms = {}
        for k, term in enumerate(part["terms"]):
            tptr = f"{ptr}/terms/{k}"
            bad = [s for s in term["sites"] if s >= space.geometry.n_sites]
            if bad:
                raise ScenarioError(f"sites {bad} are outside the lattice", tptr + "/sites")
            try:
                mat = parse_operator(term["expr"], space)
            except ExpressionError as exc:
                raise ScenarioError(str(exc), tptr + "/expr") from None
            key = frozenset(term["sites"])
            terms[key] = terms[key] + mat if key in terms else mat
        try:
            inter = Interaction(space, terms, validate=True)
        except InteractionError as exc:
            raise ScenarioError(str(exc), ptr + "/terms") from None
        return ramp, inter

    def _potential(self, part, space: FockSpace, ptr: str):
        ramp = Ramp.from_spec(part.get("ramp", 1.0))
        if "field" in part:
            if len(part["field"]) != space.geometry.dimension:
                raise ScenarioError("field needs one component per lattice dimension", ptr + "/field")
            pot = LipschitzPotential.linear(space, part["field"], part.get("origin"))
        else:
            if len(part["values"]) != space.geometry.n_sites:
                raise ScenarioError("values needs one entry per site", ptr + "/values")
            pot = LipschitzPotential(part["values"], part.get("lipschitz_constant"))
            if not pot.check(space):
                raise ScenarioError("values violate the declared Lipschitz constant", ptr + "/lipschitz_constant")
        return ramp, pot

    def _observables(self, space: FockSpace) -> dict[str, np.ndarray]:
        obs = self.doc.get("observables", "default")
        if obs == "default":
            if space.geometry.dimension != 1:
                raise ScenarioError("default observables need a chain geometry", "/observables")
            return default_observables(space)
        out = {}
        for k, o in enumerate(obs):
            try:
                out[o["name"]] = parse_operator(o["expr"], space)
            except ExpressionError as exc:
                raise ScenarioError(str(exc), f"/observables/{k}/expr") from None
        return out

    def plan(self) -> list[dict]:
        """Resolved grid points per sweep, without computing anything."""
        out = []
        for k, sw in enumerate(self.doc["sweeps"]):
            out.append({"index": k, "kind": sw["kind"], "points": len(sweep_points(self, sw))})
        return out


def sweep_points(scenario: Scenario, sweep: dict) -> list[dict]:
    pts = []
    for size in scenario.sizes:
        kind = sweep["kind"]
        if kind == "adiabatic":
            eps = sweep.get("epsilon", 0.0)
            for n in sweep.get("orders", [scenario.order]):
                for eta in sweep["eta"]:
                    pts.append({"size": size, "n": n, "eta": eta, "epsilon": eps})
        elif kind == "neass":
            for n in sweep.get("orders", [scenario.order]):
                for e in sweep["epsilon"]:
                    pts.append({"size": size, "n": n, "epsilon": e})
        else:
            pts.append({"size": size})
    return pts


def validate(doc: dict) -> Scenario:
    """Schema plus semantic validation; raises :class:`ScenarioError` with a JSON pointer."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise ScenarioError(err.message, _pointer(err.absolute_path))
    a, b = doc["interval"]
    if not b > a:
        raise ScenarioError("interval must satisfy t1 > t0", "/interval")
    for k, sw in enumerate(doc["sweeps"]):
        ptr = f"/sweeps/{k}"
        need = {"adiabatic": ["eta"], "neass": ["epsilon"], "lr": ["times", "distances"]}.get(sw["kind"], [])
        for key in need:
            if key not in sw:
                raise ScenarioError(f"'{key}' is required for {sw['kind']} sweeps", ptr)
        if sw["kind"] == "neass" and not isinstance(sw["epsilon"], list):
            raise ScenarioError("neass sweeps need an epsilon grid", ptr + "/epsilon")
        for key in ("t0", "t1", "t"):
            if key in sw and not a <= sw[key] <= b:
                raise ScenarioError(f"{key} = {sw[key]} lies outside the interval", f"{ptr}/{key}")
    sc = Scenario(copy.deepcopy(doc))
    for size in sc.sizes:
        sc.build(size)
    return sc


def load(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg} (line {exc.lineno})") from None
    sc = validate(doc)
    sc.source = path
    return sc


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package."""
    return Path(str(resources.files("neass") / "scenarios" / f"{name}.json"))
