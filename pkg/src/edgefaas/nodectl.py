"""Node-level vertical scaling.

One PI controller per function instance converts the gap between desired
and measured handling time (queue + execution) into a core allocation; a
per-node contention manager scales the requested allocations down
proportionally when their sum exceeds the node's capacity.

The integral state is reconstructed from the currently granted allocation
each step, so the controller stays consistent even after the contention
manager has clipped a previous request (anti-windup by reconstruction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .placement import FunctionSpec

__all__ = [
    "PiControllerState",
    "AllocationRequest",
    "NodeAllocation",
    "compute_instance_cores",
    "resolve_contention",
    "default_setpoint",
]


@dataclass(frozen=True)
class PiControllerState:
    """Controller memory for one function instance.

    ``setpoint_ms`` is the desired handling time; the error signal lives in
    1/seconds, so the gains are millicores per unit of inverse-seconds error.
    """

    setpoint_ms: float
    prop_gain: float = 50.0
    int_gain: float = 100.0
    min_cores: float = 50.0
    max_cores: float = 1_000_000.0
    prev_error: float = 0.0

    def __post_init__(self) -> None:
        if self.setpoint_ms <= 0:
            raise ValueError("setpoint_ms must be > 0")
        if not (0 < self.min_cores <= self.max_cores):
            raise ValueError("need 0 < min_cores <= max_cores")
        if not (math.isfinite(self.prop_gain) and math.isfinite(self.int_gain)):
            raise ValueError("gains must be finite")


@dataclass(frozen=True)
class AllocationRequest:
    instance_id: str
    desired_cores: float


@dataclass(frozen=True)
class NodeAllocation:
    granted: dict[str, float]


def compute_instance_cores(
    state: PiControllerState,
    qe_measured_ms: float | None,
    current_cores: float,
) -> tuple[PiControllerState, float]:
    """One PI step: desired millicores from the measured handling time.

    The error is the difference of inverse times (1/setpoint - 1/measured,
    in 1/s). The integral term is rebuilt from the granted allocation, the
    proportional term added, and the result clamped to the core bounds.

    A window without completions has no measurement; the controller then
    holds the current allocation and leaves its error memory untouched.
    """
    if qe_measured_ms is None:
        return state, min(max(current_cores, state.min_cores), state.max_cores)
    if qe_measured_ms <= 0:
        raise ValueError("qe_measured_ms must be > 0")
    err = 1000.0 / state.setpoint_ms - 1000.0 / qe_measured_ms
    int_old = current_cores - state.int_gain * state.prev_error
    integral = int_old + state.int_gain * err
    prop = state.prop_gain * err
    desired = max(state.min_cores, min(state.max_cores, integral + prop))
    return replace(state, prev_error=err), desired


def resolve_contention(
    requests: list[AllocationRequest], capacity_mc: float
) -> NodeAllocation:
    """Fit the requested allocations into the node's capacity.

    Requests that fit are granted unchanged. Otherwise every request is
    scaled by ``capacity / sum(desired)`` and floored to whole millicores,
    with the leftover millicores handed out by largest remainder (ties to
    the lowest instance id), so the grand total never exceeds capacity.
    """
    if capacity_mc <= 0:
        raise ValueError("capacity_mc must be > 0")
    total = sum(r.desired_cores for r in requests)
    if total <= capacity_mc:
        return NodeAllocation({r.instance_id: r.desired_cores for r in requests})

    scale = capacity_mc / total
    floors: dict[str, float] = {}
    remainders: list[tuple[float, str]] = []
    for r in requests:
        share = r.desired_cores * scale
        floors[r.instance_id] = float(math.floor(share))
        remainders.append((share - math.floor(share), r.instance_id))
    leftover = int(math.floor(capacity_mc) - sum(floors.values()))
    remainders.sort(key=lambda t: (-t[0], t[1]))
    for _, instance_id in remainders[:leftover]:
        floors[instance_id] += 1.0
    return NodeAllocation(floors)


def default_setpoint(spec: FunctionSpec) -> float:
    """Handling-time target: half of the function's required response time."""
    return spec.required_rt_ms / 2.0
