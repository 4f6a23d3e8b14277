"""Scenario files: the single input describing a simulation experiment.

A scenario is a JSON document with explicit units in its field names
(``*_ms``, ``*_mb``, ``*_mc``, ``*_rps``, ``*_s``). Loading validates the
document against a schema plus semantic rules and fills documented
defaults; every problem is reported with its field path in one pass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .placement import FunctionSpec
from .sim.workload import (
    FixedWorkload,
    MigrationWorkload,
    RampWorkload,
    TraceWorkload,
)
from .topology import DelayMatrix, NodeDescriptor

__all__ = [
    "FORMAT_VERSION",
    "DemandModel",
    "GpuRuntime",
    "SimFunction",
    "ControlConfig",
    "Scenario",
    "ScenarioValidationError",
    "load_scenario",
    "parse_scenario",
]

FORMAT_VERSION = 1


class ScenarioValidationError(Exception):
    """Carries every validation problem found, with field paths."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class DemandModel:
    """Per-request CPU work in core-milliseconds.

    ``constant`` uses the mean as-is; ``lognormal`` draws sizes with the
    given log-space sigma around the same mean. ``noise_*`` adds a stationary
    non-controllable disturbance (clamped at zero) to every request,
    modeling external dependencies such as database round trips.
    """

    dist: str  # "constant" | "lognormal"
    mean_core_ms: float
    sigma_log: float = 0.0
    noise_mean_ms: float = 0.0
    noise_sigma_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.dist not in ("constant", "lognormal"):
            raise ValueError(f"unknown demand dist {self.dist!r}")
        if self.mean_core_ms <= 0:
            raise ValueError("mean_core_ms must be > 0")

    @property
    def nominal_core_s(self) -> float:
        return (self.mean_core_ms + self.noise_mean_ms) / 1000.0


@dataclass(frozen=True)
class GpuRuntime:
    """GPU execution profile: fixed service time at a fixed per-request share."""

    service_time_ms: float
    request_cores_mc: float

    def __post_init__(self) -> None:
        if self.service_time_ms <= 0 or self.request_cores_mc <= 0:
            raise ValueError("GPU runtime values must be > 0")

    @property
    def nominal_core_s(self) -> float:
        return (self.request_cores_mc / 1000.0) * (self.service_time_ms / 1000.0)


@dataclass(frozen=True)
class SimFunction:
    spec: FunctionSpec
    demand: DemandModel
    gpu: GpuRuntime | None
    setpoint_ms: float

    @property
    def name(self) -> str:
        return self.spec.name


@dataclass(frozen=True)
class ControlConfig:
    node_period_s: float = 5.0
    community_period_s: float = 60.0
    topology_period_s: float = 600.0
    epsilon: float = 0.05
    prop_gain: float = 50.0
    int_gain: float = 100.0
    min_cores_mc: float = 50.0
    max_cores_mc: float | None = None  # None: the hosting node's capacity
    per_request_cap_mc: float = 1000.0
    cpu_planning_utilization: float = 0.5
    gpu_planning_utilization: float = 0.8
    retry_window_s: float | None = None  # None: one node period
    max_community_size: int | None = None  # None: the whole node count
    max_delay_ms: float | None = None  # None: the delay matrix maximum
    slpa_iterations: int = 20
    label_threshold: float = 0.3


@dataclass(frozen=True)
class Scenario:
    nodes: list[NodeDescriptor]
    delays: DelayMatrix
    functions: list[SimFunction]
    workloads: list
    control: ControlConfig
    duration_s: float
    seed: int
    warnings: tuple[str, ...] = ()

    def function_map(self) -> dict[str, SimFunction]:
        return {f.name: f for f in self.functions}

    def node_map(self) -> dict[str, NodeDescriptor]:
        return {n.id: n for n in self.nodes}


_NUMBER = {"type": "number"}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_NON_NEGATIVE = {"type": "number", "minimum": 0}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["format_version", "duration_s", "nodes", "delays_ms", "functions", "workload"],
    "additionalProperties": False,
    "properties": {
        "format_version": {"const": FORMAT_VERSION},
        "duration_s": _POSITIVE,
        "seed": {"type": "integer"},
        "nodes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "cpu_capacity_mc", "cpu_memory_mb"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "area": {"type": "string"},
                    "cpu_capacity_mc": _POSITIVE,
                    "cpu_memory_mb": _POSITIVE,
                    "gpu_capacity_mc": _NON_NEGATIVE,
                    "gpu_memory_mb": _NON_NEGATIVE,
                },
            },
        },
        "delays_ms": {
            "type": "array",
            "items": {"type": "array", "items": _NUMBER},
        },
        "functions": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "cpu_memory_mb", "max_net_delay_ms", "required_rt_ms", "cpu_demand"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "cpu_memory_mb": _POSITIVE,
                    "max_net_delay_ms": _NON_NEGATIVE,
                    "required_rt_ms": _POSITIVE,
                    "cold_start_ms": _NON_NEGATIVE,
                    "graceful_termination_ms": _NON_NEGATIVE,
                    "setpoint_ms": _POSITIVE,
                    "cpu_demand": {
                        "type": "object",
                        "required": ["dist", "mean_core_ms"],
                        "additionalProperties": False,
                        "properties": {
                            "dist": {"enum": ["constant", "lognormal"]},
                            "mean_core_ms": _POSITIVE,
                            "sigma_log": _NON_NEGATIVE,
                            "noise_mean_ms": _NON_NEGATIVE,
                            "noise_sigma_ms": _NON_NEGATIVE,
                        },
                    },
                    "gpu": {
                        "type": "object",
                        "required": ["memory_mb", "service_time_ms", "request_cores_mc"],
                        "additionalProperties": False,
                        "properties": {
                            "memory_mb": _POSITIVE,
                            "service_time_ms": _POSITIVE,
                            "request_cores_mc": _POSITIVE,
                        },
                    },
                },
            },
        },
        "workload": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["type", "function"],
                "properties": {
                    "type": {"enum": ["fixed", "trace", "ramp", "migration"]},
                    "function": {"type": "string"},
                },
            },
        },
        "control": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "node_period_s": _POSITIVE,
                "community_period_s": _POSITIVE,
                "topology_period_s": _POSITIVE,
                "epsilon": _NON_NEGATIVE,
                "prop_gain": _NUMBER,
                "int_gain": _NUMBER,
                "min_cores_mc": _POSITIVE,
                "max_cores_mc": _POSITIVE,
                "per_request_cap_mc": _POSITIVE,
                "cpu_planning_utilization": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "gpu_planning_utilization": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "retry_window_s": _POSITIVE,
                "max_community_size": {"type": "integer", "minimum": 1},
                "max_delay_ms": _POSITIVE,
                "slpa_iterations": {"type": "integer", "minimum": 1},
                "label_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
    },
}

_WORKLOAD_FIELDS = {
    "fixed": {"type", "function", "node", "rate_rps"},
    "trace": {"type", "function", "node", "segments"},
    "ramp": {"type", "function", "node", "area", "start_users", "users_per_s", "max_users", "think_time_ms"},
    "migration": {"type", "function", "users", "from_area", "to_area", "move_start_s", "move_duration_s", "think_time_ms"},
}


def load_scenario(path: str | Path) -> Scenario:
    """Load, validate, and default-fill a scenario file.

    Raises :class:`ScenarioValidationError` listing every schema and
    semantic problem with its field path. Non-fatal oddities (a GPU-capable
    function in a topology without GPU nodes) become warnings attached to
    the returned scenario.
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioValidationError([f"cannot read scenario {path}: {exc}"]) from exc
    return parse_scenario(document)


def parse_scenario(document: dict) -> Scenario:
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    problems = [
        f"{_json_path(err)}: {err.message}" for err in validator.iter_errors(document)
    ]
    if problems:
        raise ScenarioValidationError(sorted(problems))

    problems = []
    warnings: list[str] = []

    nodes: list[NodeDescriptor] = []
    node_ids: list[str] = []
    areas: dict[str, list[str]] = {}
    for idx, raw in enumerate(document["nodes"]):
        gpu_cap = raw.get("gpu_capacity_mc", 0.0)
        gpu_mem = raw.get("gpu_memory_mb", 0.0)
        if (gpu_cap > 0) != (gpu_mem > 0):
            problems.append(
                f"nodes[{idx}]: gpu_capacity_mc and gpu_memory_mb must be both zero or both positive"
            )
            continue
        if raw["id"] in node_ids:
            problems.append(f"nodes[{idx}].id: duplicate node id {raw['id']!r}")
            continue
        node = NodeDescriptor(
            id=raw["id"],
            cpu_capacity=raw["cpu_capacity_mc"],
            cpu_memory=raw["cpu_memory_mb"],
            gpu_capacity=gpu_cap,
            gpu_memory=gpu_mem,
            area=raw.get("area", ""),
        )
        nodes.append(node)
        node_ids.append(node.id)
        areas.setdefault(node.area, []).append(node.id)

    delays = None
    rows = document["delays_ms"]
    if len(rows) != len(node_ids) or any(len(r) != len(node_ids) for r in rows):
        problems.append("delays_ms: matrix must be square over the node list")
    else:
        for a in range(len(rows)):
            for b in range(len(rows)):
                v = rows[a][b]
                if not math.isfinite(v) or v < 0:
                    problems.append(f"delays_ms[{a}][{b}]: must be finite and >= 0, got {v}")
                elif a == b and v != 0:
                    problems.append(f"delays_ms[{a}][{b}]: diagonal must be 0, got {v}")
        if not problems:
            delays = DelayMatrix.from_rows(node_ids, rows)

    has_gpu_node = any(n.has_gpu for n in nodes)
    functions: list[SimFunction] = []
    fn_names: set[str] = set()
    for idx, raw in enumerate(document["functions"]):
        if raw["name"] in fn_names:
            problems.append(f"functions[{idx}].name: duplicate function name {raw['name']!r}")
            continue
        fn_names.add(raw["name"])
        gpu_raw = raw.get("gpu")
        spec = FunctionSpec(
            name=raw["name"],
            cpu_memory_mb=raw["cpu_memory_mb"],
            max_net_delay_ms=raw["max_net_delay_ms"],
            required_rt_ms=raw["required_rt_ms"],
            cold_start_ms=raw.get("cold_start_ms", 0.0),
            graceful_termination_ms=raw.get("graceful_termination_ms", 10_000.0),
            gpu_memory_mb=gpu_raw["memory_mb"] if gpu_raw else None,
        )
        demand_raw = raw["cpu_demand"]
        demand = DemandModel(
            dist=demand_raw["dist"],
            mean_core_ms=demand_raw["mean_core_ms"],
            sigma_log=demand_raw.get("sigma_log", 0.0),
            noise_mean_ms=demand_raw.get("noise_mean_ms", 0.0),
            noise_sigma_ms=demand_raw.get("noise_sigma_ms", 0.0),
        )
        gpu = (
            GpuRuntime(gpu_raw["service_time_ms"], gpu_raw["request_cores_mc"])
            if gpu_raw
            else None
        )
        if gpu and not has_gpu_node:
            warnings.append(
                f"functions[{idx}] ({spec.name}): GPU-capable but no node has a GPU; "
                "all requests will run on CPU instances"
            )
        functions.append(
            SimFunction(
                spec=spec,
                demand=demand,
                gpu=gpu,
                setpoint_ms=raw.get("setpoint_ms", spec.required_rt_ms / 2.0),
            )
        )

    workloads: list = []
    for idx, raw in enumerate(document["workload"]):
        kind = raw.get("type")
        prefix = f"workload[{idx}]"
        extra = set(raw) - _WORKLOAD_FIELDS.get(kind, set(raw))
        if extra:
            problems.append(f"{prefix}: unknown fields for type {kind!r}: {sorted(extra)}")
            continue
        if raw["function"] not in fn_names:
            problems.append(f"{prefix}.function: unknown function {raw['function']!r}")
            continue
        try:
            workloads.append(_parse_workload(kind, raw, prefix, node_ids, areas, problems))
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"{prefix}: {exc}")
    workloads = [w for w in workloads if w is not None]

    control = _parse_control(document.get("control", {}), len(node_ids), rows)

    if control.community_period_s < control.node_period_s or (
        control.topology_period_s < control.community_period_s
    ):
        problems.append(
            "control: periods must satisfy node_period_s <= community_period_s <= topology_period_s"
        )

    if problems:
        raise ScenarioValidationError(problems)

    return Scenario(
        nodes=nodes,
        delays=delays,
        functions=functions,
        workloads=workloads,
        control=control,
        duration_s=document["duration_s"],
        seed=document.get("seed", 0),
        warnings=tuple(warnings),
    )


def _parse_workload(kind, raw, prefix, node_ids, areas, problems):
    def resolve_nodes(spec_prefix: str, node=None, area=None) -> tuple[str, ...] | None:
        if node is not None:
            if node not in node_ids:
                problems.append(f"{spec_prefix}: unknown node {node!r}")
                return None
            return (node,)
        if area is not None:
            members = areas.get(area)
            if not members:
                problems.append(f"{spec_prefix}: unknown area {area!r}")
                return None
            return tuple(sorted(members))
        problems.append(f"{spec_prefix}: needs a node or area")
        return None

    if kind == "fixed":
        targets = resolve_nodes(f"{prefix}.node", node=raw["node"])
        if targets is None:
            return None
        return FixedWorkload(raw["function"], targets[0], raw["rate_rps"])
    if kind == "trace":
        targets = resolve_nodes(f"{prefix}.node", node=raw["node"])
        if targets is None:
            return None
        segments = tuple((seg["start_s"], seg["rate_rps"]) for seg in raw["segments"])
        return TraceWorkload(raw["function"], targets[0], segments)
    if kind == "ramp":
        targets = resolve_nodes(prefix, node=raw.get("node"), area=raw.get("area"))
        if targets is None:
            return None
        return RampWorkload(
            function=raw["function"],
            nodes=targets,
            start_users=raw["start_users"],
            users_per_s=raw["users_per_s"],
            max_users=raw["max_users"],
            think_time_ms=raw["think_time_ms"],
        )
    if kind == "migration":
        src = resolve_nodes(f"{prefix}.from_area", area=raw["from_area"])
        dst = resolve_nodes(f"{prefix}.to_area", area=raw["to_area"])
        if src is None or dst is None:
            return None
        return MigrationWorkload(
            function=raw["function"],
            users=raw["users"],
            from_nodes=src,
            to_nodes=dst,
            move_start_s=raw["move_start_s"],
            move_duration_s=raw["move_duration_s"],
            think_time_ms=raw["think_time_ms"],
        )
    problems.append(f"{prefix}.type: unknown workload type {kind!r}")
    return None


def _parse_control(raw: dict, node_count: int, delay_rows) -> ControlConfig:
    defaults = ControlConfig()
    max_delay = raw.get("max_delay_ms")
    if max_delay is None:
        max_delay = max((v for row in delay_rows for v in row), default=0.0)
    mcs = raw.get("max_community_size")
    if mcs is None:
        mcs = max(1, node_count)
    return ControlConfig(
        node_period_s=raw.get("node_period_s", defaults.node_period_s),
        community_period_s=raw.get("community_period_s", defaults.community_period_s),
        topology_period_s=raw.get("topology_period_s", defaults.topology_period_s),
        epsilon=raw.get("epsilon", defaults.epsilon),
        prop_gain=raw.get("prop_gain", defaults.prop_gain),
        int_gain=raw.get("int_gain", defaults.int_gain),
        min_cores_mc=raw.get("min_cores_mc", defaults.min_cores_mc),
        max_cores_mc=raw.get("max_cores_mc"),
        per_request_cap_mc=raw.get("per_request_cap_mc", defaults.per_request_cap_mc),
        cpu_planning_utilization=raw.get(
            "cpu_planning_utilization", defaults.cpu_planning_utilization
        ),
        gpu_planning_utilization=raw.get(
            "gpu_planning_utilization", defaults.gpu_planning_utilization
        ),
        retry_window_s=raw.get("retry_window_s"),
        max_community_size=mcs,
        max_delay_ms=max_delay,
        slpa_iterations=raw.get("slpa_iterations", defaults.slpa_iterations),
        label_threshold=raw.get("label_threshold", defaults.label_threshold),
    )


def _json_path(err: jsonschema.ValidationError) -> str:
    parts = ["$"]
    for p in err.absolute_path:
        if isinstance(p, int):
            parts.append(f"[{p}]")
        else:
            parts.append(f".{p}")
    return "".join(parts)
