"""JSON experiment configs.

A config is validated against :data:`SCHEMA` (unknown keys are rejected) and
then cross-checked; every problem is collected before anything is raised.
Type and shape problems become :class:`SchemaViolation`, bad numeric values
:class:`ValueOutOfRange`.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

from jsonschema import Draft202012Validator

from .dynamics import FiniteElement, Nonlinearity, SchemeConfig, SpectralGalerkin
from .ergodic import TestFunctional
from .errors import InvalidConfig, SchemaViolation, ValueOutOfRange
from .fem import FemOperator, build_mesh
from .spectral import SpectralField

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj({
    "variant": {"enum": ["spectral", "fem"]},
    "M": _NONNEG_INT,
    "uniform_n": _POS_INT,
    "h": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    "mesh": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
    "tau": _POS,
    "tau0": _POS,
    "steps": _POS_INT,
    "burn_in": _NONNEG_INT,
    "seed": _NONNEG_INT,
    "replicas": _POS_INT,
    "nonlinearity": {"oneOf": [
        {"type": "null"},
        _obj({"kind": {"const": "sine"}, "amplitude": {"type": "number"}, "frequency": {"type": "number"}},
             ["kind"]),
        _obj({"kind": {"const": "constant"}, "value": {"type": "number"}}, ["kind", "value"]),
        _obj({"kind": {"const": "zero"}}, ["kind"]),
    ]},
    "functional": {"oneOf": [
        _obj({"kind": {"const": "cos_inner"}, "mode": _NONNEG_INT, "amplitude": {"type": "number"}}, ["kind"]),
        _obj({"kind": {"const": "exp_neg_sq"}, "scale": _POS}, ["kind"]),
        _obj({"kind": {"const": "second_moment"}}, ["kind"]),
        _obj({"kind": {"const": "constant"}, "value": {"type": "number"}}, ["kind", "value"]),
    ]},
    "initial": {"oneOf": [
        {"type": "null"},
        _obj({"mode": _NONNEG_INT, "amplitude": {"type": "number"}}, ["mode"]),
    ]},
    "simulate": _obj({"every_step": {"type": "boolean"}}),
    "bench": _obj({
        "taus": {"type": "array", "items": _POS},
        "meshes": {"type": "array", "items": _POS_INT},
        "replicas": _POS_INT,
    }),
    "oracle": _obj({
        "laws": {"type": "array", "items": {"enum": [
            "continuous", "discrete_time_spectral", "fem_continuous_time", "fem_fully_discrete"]}},
        "truncation": {"oneOf": [{"type": "null"}, _POS_INT]},
    }),
    "poisson": _obj({
        "M": {"type": "integer", "minimum": 0, "maximum": 3},
        "points": {"type": "array", "items": {"type": "array", "items": {"type": "number"}, "minItems": 1}},
        "delta": _POS,
        "T_max": _POS,
        "dt": _POS,
        "substeps": _POS_INT,
        "replicas": _POS_INT,
    }),
}, ["variant", "tau", "steps", "seed"])

_RANGE_KEYWORDS = {"minimum", "maximum", "exclusiveMinimum", "exclusiveMaximum"}

DEFAULTS = {
    "M": 64,
    "uniform_n": 63,
    "tau0": 1.0,
    "replicas": 1,
    "nonlinearity": None,
    "functional": {"kind": "cos_inner", "mode": 0},
    "initial": None,
    "simulate": {"every_step": False},
    "bench": {"taus": [0.2, 0.1, 0.05, 0.025, 0.0125], "meshes": [15, 31, 63, 127, 255], "replicas": 1},
    "oracle": {"laws": None, "truncation": None},
    "poisson": {"M": 0, "points": [[-1.0], [0.0], [1.0]], "delta": 0.05, "T_max": 2.0, "dt": 0.01,
                "substeps": 10, "replicas": 10_000},
}


def _path(parts):
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _issues(err):
    """Map one jsonschema error to config issues, descending into oneOf branches."""
    path = list(err.absolute_path)
    if err.validator == "oneOf" and err.context:
        # report every error of the branch whose "kind"/type matched, if one did
        branches = {}
        for e in err.context:
            branches.setdefault(e.relative_schema_path[0], []).append(e)
        for errs in branches.values():
            if not any(e.validator in ("type", "const", "required") for e in errs):
                return [i for e in errs for i in _issues(e)]
    if err.validator == "additionalProperties":
        known = set(err.schema.get("properties", {}))
        return [SchemaViolation(_path(path + [k]), "unknown key")
                for k in sorted(err.instance) if k not in known]
    if err.validator in _RANGE_KEYWORDS:
        return [ValueOutOfRange(_path(path), err.message)]
    return [SchemaViolation(_path(path), err.message)]


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated config with defaults filled in; ``data`` is the plain dict."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self):
        return self.data["seed"]

    def with_seed(self, seed):
        d = copy.deepcopy(self.data)
        d["seed"] = int(seed)
        return ExperimentConfig(d)

    def variant(self):
        d = self.data
        if d["variant"] == "spectral":
            return SpectralGalerkin(d["M"])
        return FiniteElement(self.operator())

    def operator(self, uniform_n=None):
        d = self.data
        if uniform_n is not None:
            return FemOperator(build_mesh(uniform_n=uniform_n))
        if "mesh" in d:
            return FemOperator(build_mesh(interior_points=d["mesh"]))
        if "h" in d:
            return FemOperator(build_mesh(uniform_n=round(1.0 / d["h"]) - 1))
        return FemOperator(build_mesh(uniform_n=d["uniform_n"]))

    def nonlinearity(self):
        nl = self.data["nonlinearity"]
        if nl is None or nl["kind"] == "zero":
            return None
        if nl["kind"] == "sine":
            return Nonlinearity.sine(nl.get("amplitude", 1.0), nl.get("frequency", 1.0))
        return Nonlinearity.constant(nl["value"])

    def functional(self):
        f = self.data["functional"]
        kind = f["kind"]
        if kind == "cos_inner":
            k = f.get("mode", 0)
            c = SpectralField.unit(k, k + 1).coeffs * f.get("amplitude", 1.0)
            return TestFunctional.cos_inner(SpectralField(c), name=f"cos_inner(e_{k})")
        if kind == "exp_neg_sq":
            return TestFunctional.exp_neg_sq(f.get("scale", 1.0))
        if kind == "second_moment":
            return TestFunctional.second_moment()
        return TestFunctional.constant(f["value"])

    def initial(self):
        init = self.data["initial"]
        if init is None:
            return None
        k = init["mode"]
        return SpectralField(SpectralField.unit(k, k + 1).coeffs * init.get("amplitude", 1.0))

    def scheme(self, variant=None) -> SchemeConfig:
        d = self.data
        return SchemeConfig(
            variant=variant or self.variant(),
            tau=d["tau"],
            steps=d["steps"],
            burn_in=d["burn_in"],
            nonlinearity=self.nonlinearity(),
            initial=self.initial(),
            seed=d["seed"],
            functional=self.functional(),
            tau0=d["tau0"],
        )


def _fill(d):
    out = copy.deepcopy(d)
    for k, v in DEFAULTS.items():
        if isinstance(v, dict) and k not in ("functional",):
            merged = dict(v)
            merged.update(out.get(k) or {})
            out[k] = merged
        elif k not in out:
            out[k] = copy.deepcopy(v)
    if "burn_in" not in out:
        out["burn_in"] = out["steps"] // 10
    return out


def _cross_checks(d):
    issues = []
    if d["burn_in"] >= d["steps"]:
        issues.append(ValueOutOfRange("burn_in", f"must be below steps={d['steps']}"))
    if d["tau"] > d["tau0"]:
        issues.append(ValueOutOfRange("tau", f"exceeds the step-size cap tau0={d['tau0']}"))
    if "mesh" in d:
        pts = d["mesh"]
        if any(b <= a for a, b in zip(pts, pts[1:])):
            issues.append(ValueOutOfRange("mesh", "interior points must be strictly increasing"))
    dim = d["poisson"]["M"] + 1
    for i, p in enumerate(d["poisson"]["points"]):
        if len(p) != dim:
            issues.append(SchemaViolation(f"poisson.points[{i}]", f"expected {dim} coordinates, got {len(p)}"))
    return issues


def parse_config(raw) -> ExperimentConfig:
    """Parse UTF-8 JSON (bytes or str) into a validated :class:`ExperimentConfig`.

    Raises :class:`InvalidConfig` listing every problem found.
    """
    if isinstance(raw, (bytes, bytearray)):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InvalidConfig([SchemaViolation("", f"not UTF-8: {exc}")]) from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InvalidConfig([SchemaViolation("", f"not valid JSON: {exc}")]) from exc
    issues = []
    for err in sorted(Draft202012Validator(SCHEMA).iter_errors(data), key=lambda e: list(map(str, e.absolute_path))):
        issues.extend(_issues(err))
    filled = None
    try:
        filled = _fill(data)
        issues.extend(_cross_checks(filled))
    except (TypeError, KeyError, AttributeError):
        # shape already reported by the schema pass
        pass
    if issues:
        raise InvalidConfig(issues)
    return ExperimentConfig(filled)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return parse_config(fh.read())
