"""Scenario files: YAML documents checked against a JSON schema.

Validation errors carry the line of the offending node so the CLI can point
at it. Named SLA presets and static layouts may be referenced by name and
extended per file.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Any, Dict, List, Optional, Tuple

import jsonschema
import yaml

from .model import (
    SLA_PRESETS,
    STATIC_LAYOUTS,
    CloudPricing,
    ContainerLayout,
    LayoutBounds,
    QueryClass,
    SlaSpec,
    TreePlanProfile,
    UnsatisfiableBounds,
)
from .simulator import Phase, SimConfig

_pos = {"type": "number", "exclusiveMinimum": 0}
_int_list = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}
_sla = {
    "type": "object",
    "additionalProperties": False,
    "required": ["alpha", "gamma"],
    "properties": {"alpha": _pos, "gamma": _pos},
}

SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["classes", "initial_layout"],
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "mode": {"type": "string", "pattern": r"^(elastic|static(:[A-Za-z0-9_-]+)?)$"},
        "epoch": _pos,
        "horizon": _pos,
        "history_window": _pos,
        "concurrent_ops_per_container": {"type": "integer", "minimum": 1},
        "arc": {"type": "integer", "minimum": 1},
        "partitions": {"type": "integer", "minimum": 1},
        "replication": {"type": "integer", "minimum": 1},
        "data_size": {"type": "number", "minimum": 0},
        "rank_mode": {"enum": ["compress", "height"]},
        "pricing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"quantum": _pos, "quantum_cost": _pos, "net_speed": _pos},
        },
        "slas": {"type": "object", "additionalProperties": _sla},
        "layouts": {"type": "object", "additionalProperties": _int_list},
        "initial_layout": {"oneOf": [{"type": "string"}, _int_list]},
        "bounds": {
            "type": "object",
            "additionalProperties": False,
            "required": ["min", "max"],
            "properties": {"min": _int_list, "max": _int_list},
        },
        "classes": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "required": ["sla", "plan"],
                "properties": {
                    "sla": {"oneOf": [{"type": "string"}, _sla]},
                    "plan": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["op_count", "op_cpu"],
                        "properties": {
                            "op_count": _int_list,
                            "op_cpu": {"type": "array", "items": {"type": "number", "minimum": 0}},
                            "op_out_bytes": {"type": "array", "items": {"type": "number", "minimum": 0}},
                        },
                    },
                },
            },
        },
        "phases": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["duration", "class", "lambda"],
                "properties": {"duration": {"type": "number", "minimum": 0}, "class": {"type": "string"},
                               "lambda": _pos},
            },
        },
        "arrivals": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["time", "class"],
                "properties": {"time": {"type": "number", "minimum": 0}, "class": {"type": "string"}},
            },
        },
    },
}


class ScenarioError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.line = line

    def render(self, source: str) -> str:
        where = f"{source}:{self.line}" if self.line else source
        return f"{where}: {self}"


def _node_at(root: yaml.Node, path) -> yaml.Node:
    node = root
    for key in path:
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == str(key):
                    node = v
                    break
            else:
                return node
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            return node
    return node


def _key_line(root: yaml.Node, path, key: str) -> Optional[int]:
    node = _node_at(root, path)
    if isinstance(node, yaml.MappingNode):
        for k, _ in node.value:
            if k.value == key:
                return k.start_mark.line + 1
    return node.start_mark.line + 1


def _schema_error(err: jsonschema.ValidationError, root: yaml.Node) -> ScenarioError:
    path = list(err.absolute_path)
    where = "/".join(str(p) for p in path) or "<root>"
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            return ScenarioError(f"unknown key {extra[0]!r} in {where}", _key_line(root, path, extra[0]))
    return ScenarioError(f"{where}: {err.message}", _node_at(root, path).start_mark.line + 1)


def parse_mode(mode: str) -> Tuple[str, Optional[str]]:
    """``elastic`` | ``static`` | ``static:<layout name>`` -> (mode, layout name)."""
    if mode == "elastic":
        return "elastic", None
    if mode == "static":
        return "static", None
    if mode.startswith("static:"):
        return "static", mode.split(":", 1)[1]
    raise ScenarioError(f"unknown mode {mode!r}")


def load_text(text: str, mode_override: Optional[str] = None, seed_override: Optional[int] = None) -> SimConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"malformed YAML: {exc}", mark.line + 1 if mark else None) from None
    if root is None:
        raise ScenarioError("empty scenario", 1)
    data = yaml.safe_load(text)
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(list(e.absolute_path)), str(e.message)))
    if errors:
        raise _schema_error(errors[0], root)
    return _build(data, root, mode_override, seed_override)


def load(path: str, mode_override: Optional[str] = None, seed_override: Optional[int] = None) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return load_text(fh.read(), mode_override, seed_override)


def _line(root, *path) -> int:
    return _node_at(root, path).start_mark.line + 1


def _build(data: dict, root, mode_override, seed_override) -> SimConfig:
    slas = dict(SLA_PRESETS)
    for name, spec in data.get("slas", {}).items():
        slas[name] = SlaSpec(spec["alpha"], spec["gamma"])
    layouts = dict(STATIC_LAYOUTS)
    for name, levels in data.get("layouts", {}).items():
        layouts[name] = ContainerLayout(tuple(levels))

    def layout_ref(ref, *path) -> ContainerLayout:
        if isinstance(ref, str):
            if ref not in layouts:
                raise ScenarioError(f"unknown layout {ref!r}", _line(root, *path))
            return layouts[ref]
        return ContainerLayout(tuple(ref))

    classes: Dict[str, QueryClass] = {}
    for cid, spec in data["classes"].items():
        sla_ref = spec["sla"]
        if isinstance(sla_ref, str):
            if sla_ref not in slas:
                raise ScenarioError(f"unknown SLA {sla_ref!r}", _line(root, "classes", cid, "sla"))
            sla = slas[sla_ref]
        else:
            sla = SlaSpec(sla_ref["alpha"], sla_ref["gamma"])
        plan = spec["plan"]
        try:
            profile = TreePlanProfile(tuple(plan["op_count"]), tuple(plan["op_cpu"]),
                                      tuple(plan.get("op_out_bytes", ())))
        except ValueError as exc:
            raise ScenarioError(f"class {cid!r}: {exc}", _line(root, "classes", cid, "plan")) from None
        classes[cid] = QueryClass(cid, sla, profile)

    phases: List[Phase] = []
    for i, ph in enumerate(data.get("phases", [])):
        if ph["class"] not in classes:
            raise ScenarioError(f"unknown query class {ph['class']!r}", _line(root, "phases", i, "class"))
        phases.append(Phase(float(ph["duration"]), ph["class"], float(ph["lambda"])))
    arrivals = []
    for i, a in enumerate(data.get("arrivals", [])):
        if a["class"] not in classes:
            raise ScenarioError(f"unknown query class {a['class']!r}", _line(root, "arrivals", i, "class"))
        arrivals.append((float(a["time"]), a["class"]))

    mode, static_name = parse_mode(mode_override or data.get("mode", "elastic"))
    initial = layout_ref(data["initial_layout"], "initial_layout")
    if static_name is not None:
        if static_name not in layouts:
            raise ScenarioError(f"unknown static layout {static_name!r}", _line(root, "mode"))
        initial = layouts[static_name]

    bounds = None
    if "bounds" in data:
        b = data["bounds"]
        if len(b["min"]) != len(b["max"]):
            raise UnsatisfiableBounds("bounds min and max differ in height")
        bounds = LayoutBounds(tuple(b["min"]), tuple(b["max"]))

    pricing = CloudPricing(**data.get("pricing", {}))
    kwargs = {k: data[k] for k in ("epoch", "horizon", "history_window", "concurrent_ops_per_container",
                                   "arc", "partitions", "replication", "data_size", "rank_mode") if k in data}
    cfg = SimConfig(classes=classes, phases=phases, initial_layout=initial, bounds=bounds, pricing=pricing,
                    mode=mode, seed=data.get("seed", 0) if seed_override is None else seed_override,
                    fixed_arrivals=tuple(arrivals), **kwargs)
    return cfg


def with_overrides(cfg: SimConfig, **changes) -> SimConfig:
    return replace(cfg, **changes)
