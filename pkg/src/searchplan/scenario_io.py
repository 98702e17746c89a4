"""Reading and writing scenario files (JSON, ``"schema": 1``).

Unknown keys are rejected at every level so a typo never silently changes an
experiment. See README.md for the full schema.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .core import (
    GENERIC_FAMILIES,
    CircularNormal,
    DiscreteDistribution,
    ExponentialDetection,
    ExponentialPerLocation,
    GenericRegularDetection,
    GridDensity,
    LinearEffort,
    Scenario,
    TableEffort,
    Uniform1D,
)

SCHEMA_VERSION = 1


class ScenarioFormatError(ValueError):
    """The file is not a well-formed scenario document."""


def _keys(obj: Any, where: str, required: set[str], optional: set[str] = frozenset()):
    if not isinstance(obj, Mapping):
        raise ScenarioFormatError(f"{where}: expected an object, got {type(obj).__name__}")
    missing = required - obj.keys()
    if missing:
        raise ScenarioFormatError(f"{where}: missing keys {sorted(missing)}")
    unknown = obj.keys() - required - set(optional)
    if unknown:
        raise ScenarioFormatError(f"{where}: unknown keys {sorted(unknown)}")


def _num(v, where) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioFormatError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _cell_map(obj, where) -> dict[int, float]:
    if not isinstance(obj, Mapping):
        raise ScenarioFormatError(f"{where}: expected an object of cell -> value")
    try:
        return {int(k): _num(v, f"{where}[{k}]") for k, v in obj.items()}
    except ValueError as exc:
        if isinstance(exc, ScenarioFormatError):
            raise
        raise ScenarioFormatError(f"{where}: cell keys must be integers") from None


def _distribution(obj):
    _keys(obj, "distribution", {"type", "params"})
    kind, p = obj["type"], obj["params"]
    if kind == "discrete":
        _keys(p, "distribution.params", {"masses"})
        return DiscreteDistribution(_cell_map(p["masses"], "masses"))
    if kind == "circular_normal":
        _keys(p, "distribution.params", {"sigma"}, {"n_radial", "n_angular", "truncation"})
        return CircularNormal(
            _num(p["sigma"], "sigma"),
            int(p.get("n_radial", 300)),
            int(p.get("n_angular", 64)),
            _num(p.get("truncation", 6.0), "truncation"),
        )
    if kind == "uniform1d":
        _keys(p, "distribution.params", {"a", "b"}, {"n_cells"})
        return Uniform1D(_num(p["a"], "a"), _num(p["b"], "b"), int(p.get("n_cells", 2000)))
    if kind == "grid":
        _keys(p, "distribution.params", {"lower", "upper", "density"}, {"coords"})
        try:
            return GridDensity(
                np.asarray(p["lower"], dtype=float),
                np.asarray(p["upper"], dtype=float),
                np.asarray(p["density"], dtype=float),
                p.get("coords", "cartesian"),
            )
        except (TypeError, ValueError) as exc:
            raise ScenarioFormatError(f"distribution.params: {exc}") from None
    raise ScenarioFormatError(f"unknown distribution type {kind!r}")


def _detection(obj):
    if not isinstance(obj, Mapping) or "type" not in obj:
        raise ScenarioFormatError("detection: expected an object with a 'type'")
    kind = obj["type"]
    if kind == "exp_homogeneous":
        _keys(obj, "detection", {"type", "rate"})
        return ExponentialDetection(_num(obj["rate"], "rate"))
    if kind == "exp_per_location":
        _keys(obj, "detection", {"type"}, {"rates", "breaks", "levels"})
        if "rates" in obj:
            if "breaks" in obj or "levels" in obj:
                raise ScenarioFormatError("detection: give either rates or breaks/levels")
            return ExponentialPerLocation(_cell_map(obj["rates"], "rates"))
        if "levels" not in obj:
            raise ScenarioFormatError("detection: exp_per_location needs rates or levels")
        return ExponentialPerLocation.piecewise(
            [_num(b, "breaks") for b in obj.get("breaks", [])],
            [_num(v, "levels") for v in obj["levels"]],
        )
    if kind == "generic":
        _keys(obj, "detection", {"type", "family"}, {"params"})
        family = GENERIC_FAMILIES.get(obj["family"])
        if family is None:
            raise ScenarioFormatError(
                f"unknown generic family {obj['family']!r}; known: {sorted(GENERIC_FAMILIES)}"
            )
        params = obj.get("params", {})
        try:
            return family(**{k: _num(v, k) for k, v in params.items()})
        except TypeError as exc:
            raise ScenarioFormatError(f"detection.params: {exc}") from None
    raise ScenarioFormatError(f"unknown detection type {kind!r}")


def _effort(obj):
    if not isinstance(obj, Mapping) or "type" not in obj:
        raise ScenarioFormatError("effort: expected an object with a 'type'")
    if obj["type"] == "linear":
        _keys(obj, "effort", {"type", "rate"}, {"offset"})
        return LinearEffort(_num(obj["rate"], "rate"), _num(obj.get("offset", 0.0), "offset"))
    if obj["type"] == "table":
        _keys(obj, "effort", {"type", "knots"})
        try:
            knots = tuple((_num(t, "knot t"), _num(e, "knot E")) for t, e in obj["knots"])
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioFormatError):
                raise
            raise ScenarioFormatError("effort.knots: expected [[t, E], ...]") from None
        return TableEffort(knots)
    raise ScenarioFormatError(f"unknown effort type {obj['type']!r}")


def _location(v):
    if v is None:
        return None
    if isinstance(v, bool):
        raise ScenarioFormatError("true_location: expected a cell id or coordinates")
    if isinstance(v, int):
        return v
    if isinstance(v, float):
        return v
    if isinstance(v, list) and all(isinstance(c, (int, float)) for c in v):
        return tuple(float(c) for c in v)
    raise ScenarioFormatError(f"true_location: cannot interpret {v!r}")


def _area(v):
    if v is None or isinstance(v, Mapping):
        if isinstance(v, Mapping):
            _keys(v, "area", {"type"}, {"bounds"})
        return v
    if isinstance(v, list):
        try:
            return frozenset(int(c) for c in v)
        except (TypeError, ValueError):
            raise ScenarioFormatError("area: expected a list of cell ids") from None
    raise ScenarioFormatError(f"area: cannot interpret {v!r}")


def scenario_from_dict(doc: Mapping) -> Scenario:
    _keys(
        doc,
        "scenario",
        {"schema", "area", "distribution", "detection", "effort", "true_location"},
        {"cost"},
    )
    if doc["schema"] != SCHEMA_VERSION:
        raise ScenarioFormatError(f"unsupported schema {doc['schema']!r} (expected 1)")
    return Scenario(
        distribution=_distribution(doc["distribution"]),
        detection=_detection(doc["detection"]),
        effort=_effort(doc["effort"]),
        true_location=_location(doc["true_location"]),
        area=_area(doc["area"]),
        cost=doc.get("cost", "identity"),
    )


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioFormatError(f"cannot read {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return scenario_from_dict(doc)


def distribution_to_dict(dist) -> dict:
    if isinstance(dist, DiscreteDistribution):
        return {"type": "discrete", "params": {"masses": {str(k): v for k, v in dist.masses.items()}}}
    if isinstance(dist, CircularNormal):
        return {
            "type": "circular_normal",
            "params": {
                "sigma": dist.sigma,
                "n_radial": dist.n_radial,
                "n_angular": dist.n_angular,
                "truncation": dist.truncation,
            },
        }
    if isinstance(dist, Uniform1D):
        return {"type": "uniform1d", "params": {"a": dist.a, "b": dist.b, "n_cells": dist.n_cells}}
    return {
        "type": "grid",
        "params": {
            "coords": dist.coords,
            "lower": dist.lower.tolist(),
            "upper": dist.upper.tolist(),
            "density": dist.density.tolist(),
        },
    }


def _detection_to_dict(det) -> dict:
    if isinstance(det, ExponentialDetection):
        return {"type": "exp_homogeneous", "rate": det.rate}
    if isinstance(det, ExponentialPerLocation):
        if det.rates is not None:
            return {"type": "exp_per_location", "rates": {str(k): v for k, v in det.rates.items()}}
        return {"type": "exp_per_location", "breaks": list(det.breaks), "levels": list(det.levels)}
    if isinstance(det, GenericRegularDetection) and det.family is not None:
        family, params = det.family
        return {"type": "generic", "family": family, "params": dict(params)}
    raise TypeError(f"cannot serialize detection model {det!r}")


def _effort_to_dict(e) -> dict:
    if isinstance(e, LinearEffort):
        return {"type": "linear", "rate": e.rate, "offset": e.offset}
    return {"type": "table", "knots": [list(k) for k in e.knots]}


def scenario_to_dict(s: Scenario) -> dict:
    area = s.area
    if isinstance(area, (set, frozenset)):
        area = sorted(area)
    loc = s.true_location
    if isinstance(loc, tuple):
        loc = list(loc)
    return {
        "schema": SCHEMA_VERSION,
        "area": area,
        "distribution": distribution_to_dict(s.distribution),
        "detection": _detection_to_dict(s.detection),
        "effort": _effort_to_dict(s.effort),
        "true_location": loc,
        "cost": s.cost,
    }


def scenario_hash(s: Scenario) -> str:
    """Short content hash of a scenario, stable across runs."""
    text = json.dumps(scenario_to_dict(s), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
