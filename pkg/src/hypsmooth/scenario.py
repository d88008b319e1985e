"""Scenario files: one JSON document describing a system, its boundary law,
domain and run configuration.  Validated against the shipped schema before
any numerics run."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .boundary import ClassicalTrace, DissipativeNonlinear, LinearReflection, PopulationModel
from .expr import compile_expression
from .solver import SolveConfig
from .system import FullStrip, HalfStrip, HyperbolicSystem, PeriodicStrip

__all__ = ["ScenarioError", "Scenario", "load_scenario", "scenario_schema"]


class ScenarioError(ValueError):
    """Invalid scenario; ``pointer`` is the JSON pointer of the offending node."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


def scenario_schema() -> dict:
    text = resources.files("hypsmooth").joinpath("schema/scenario.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _pointer(path) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in path)


def validate(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(scenario_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if err is not None:
        raise ScenarioError(err.message, _pointer(err.absolute_path))
    sys_ = doc["system"]
    n, m = sys_["n"], sys_["m"]
    if m > n:
        raise ScenarioError(f"m={m} exceeds n={n}", "/system/m")
    for key in ("a", "f", "initial"):
        node = sys_.get(key) if key != "initial" else doc.get("initial")
        if node is not None and len(node) != n:
            where = f"/system/{key}" if key != "initial" else "/initial"
            raise ScenarioError(f"expected {n} entries, got {len(node)}", where)
    if "b" in sys_:
        if len(sys_["b"]) != n:
            raise ScenarioError(f"expected {n} rows, got {len(sys_['b'])}", "/system/b")
        for i, row in enumerate(sys_["b"]):
            if len(row) != n:
                raise ScenarioError(f"expected {n} entries, got {len(row)}", f"/system/b/{i}")


@dataclass
class Scenario:
    doc: dict
    source: str | None = None

    @property
    def digest(self) -> str:
        canon = json.dumps(self.doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    @property
    def seed(self) -> int:
        return int(self.doc.get("seed", 0))

    def section(self, name: str) -> dict:
        return dict(self.doc.get(name, {}))

    def domain(self):
        d = self.doc.get("domain", {"kind": "half"})
        if d["kind"] == "half":
            return HalfStrip(float(d.get("T", 0.0)))
        return PeriodicStrip() if d["kind"] == "periodic" else FullStrip()

    def system(self) -> HyperbolicSystem:
        s = self.doc["system"]
        bnd = self.doc.get("boundary", {})
        if bnd.get("type") == "population":
            return self.population().system(self.domain())
        return HyperbolicSystem.build(s["n"], s["m"], s["a"], s.get("b"), s.get("f"), self.domain())

    def boundary(self):
        bnd = self.doc.get("boundary")
        if bnd is None:
            raise ScenarioError("this command needs a boundary law", "/boundary")
        n = self.doc["system"]["n"]
        kind = bnd["type"]
        try:
            if kind == "classical":
                return ClassicalTrace(tuple(compile_expression(h, ("t",)) for h in bnd["h"]))
            if kind == "reflection":
                m = self.doc["system"]["m"]
                r0 = np.asarray(bnd["r0"], dtype=float).reshape(m, n - m)
                r1 = np.asarray(bnd["r1"], dtype=float).reshape(n - m, m)
                return LinearReflection(r0, r1)
            if kind == "dissipative":
                names = tuple(f"z{k + 1}" for k in range(n))
                fns = [compile_expression(h, names) for h in bnd["h"]]

                def h(z, fns=fns):
                    z = np.asarray(z, dtype=float)
                    return np.stack([np.broadcast_to(fn(*z), z.shape[1:]) for fn in fns])

                return DissipativeNonlinear(h, self.doc["system"]["m"])
            if kind == "population":
                return self.population().boundary()
        except ValueError as exc:
            raise ScenarioError(str(exc), "/boundary") from None
        raise ScenarioError(f"unknown boundary type {kind!r}", "/boundary/type")

    def population(self) -> PopulationModel:
        bnd = self.doc.get("boundary", {})
        if bnd.get("type") != "population":
            raise ScenarioError("population runs need a population boundary", "/boundary/type")
        return PopulationModel(float(bnd["mu"]), compile_expression(bnd["gamma"], ("x",)),
                               compile_expression(bnd["h"], ("z",)))

    def initial(self):
        init = self.doc.get("initial")
        if init is None:
            return None
        return [compile_expression(p, ("x",)) for p in init]

    def solve_config(self, **overrides) -> SolveConfig:
        s = self.section("solver")
        kw = {k: s[k] for k in ("nx", "nt", "tol", "max_iter", "relax", "interp") if k in s}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return SolveConfig(**kw)

    @property
    def t_end(self) -> float:
        return float(self.section("solver").get("t_end", 2.0))


def load_scenario(path_or_doc) -> Scenario:
    """Load and validate a scenario from a path, JSON text or dict."""
    source = None
    if isinstance(path_or_doc, dict):
        doc = path_or_doc
    else:
        p = Path(path_or_doc)
        source = str(p)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario: {exc.strerror}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    validate(doc)
    return Scenario(doc, source)
