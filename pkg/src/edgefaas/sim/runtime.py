"""Function instance runtimes: processor-sharing CPUs and slotted GPUs.

A CPU instance serves all accepted requests simultaneously under
egalitarian processor sharing: each in-flight request receives
``min(allocated / n, per_request_cap)`` millicores. A GPU instance serves
requests at a fixed service time with a concurrency limit derived from its
GPU share; excess requests wait in FIFO order.

Progress is advanced lazily between events, which is exact because shares
only change at events (arrivals, completions, allocation updates).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

from .metrics import STATUS_IN_FLIGHT, RequestRecord

__all__ = [
    "COLD_STARTING",
    "READY",
    "DRAINING",
    "ActiveRequest",
    "InstanceRuntime",
    "advance_instance",
]

COLD_STARTING = "cold_starting"
READY = "ready"
DRAINING = "draining"

_DONE_EPS = 1e-6  # core-ms (CPU) / ms (GPU) below which a request is complete


@dataclass
class ActiveRequest:
    record: RequestRecord
    remaining: float  # CPU: core-ms of work left; GPU: ms of service left


class InstanceRuntime:
    """Mutable state of one deployed function instance."""

    def __init__(
        self,
        instance_id: str,
        function: str,
        node: str,
        resource_kind: str,
        allocated_mc: float,
        now_ms: float,
        per_request_cap_mc: float = 1000.0,
        gpu_request_mc: float = 0.0,
        gpu_service_time_ms: float = 0.0,
        state: str = READY,
        ready_at_ms: float | None = None,
    ):
        self.instance_id = instance_id
        self.function = function
        self.node = node
        self.resource_kind = resource_kind
        self.allocated_mc = float(allocated_mc)
        self.per_request_cap_mc = per_request_cap_mc
        self.gpu_request_mc = gpu_request_mc
        self.gpu_service_time_ms = gpu_service_time_ms
        self.state = state
        self.ready_at_ms = ready_at_ms
        self.drain_deadline_ms: float | None = None
        self.in_service: list[ActiveRequest] = []
        self.queue: deque[ActiveRequest] = deque()
        self.last_advance_ms = now_ms
        self.version = 0  # bumps whenever scheduled completions go stale

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.function, self.node, self.resource_kind)

    @property
    def is_gpu(self) -> bool:
        return self.resource_kind == "GPU"

    @property
    def in_flight_count(self) -> int:
        return len(self.in_service) + len(self.queue)

    def gpu_slots(self) -> int:
        if self.gpu_request_mc <= 0:
            return 0
        return int(self.allocated_mc // self.gpu_request_mc)

    def cpu_share_mc(self) -> float:
        n = len(self.in_service)
        if n == 0:
            return 0.0
        return min(self.allocated_mc / n, self.per_request_cap_mc)

    def add_request(self, record: RequestRecord, now_ms: float) -> None:
        """Accept a delivered request; the caller must have advanced to now."""
        record.instance_arrival_ms = now_ms
        record.status = STATUS_IN_FLIGHT
        record.executing_node = self.node
        record.resource_kind = self.resource_kind
        if self.is_gpu:
            active = ActiveRequest(record, self.gpu_service_time_ms)
            if len(self.in_service) < self.gpu_slots():
                record.service_start_ms = now_ms
                self.in_service.append(active)
            else:
                self.queue.append(active)
        else:
            record.service_start_ms = now_ms
            self.in_service.append(ActiveRequest(record, record.demand_core_ms))
        self.version += 1

    def set_allocation(self, granted_mc: float, now_ms: float) -> None:
        """Apply a new allocation; the caller must have advanced to now."""
        self.allocated_mc = float(granted_mc)
        if self.is_gpu:
            self._promote(now_ms)
        self.version += 1

    def advance(self, dt_ms: float, now_ms: float) -> list[RequestRecord]:
        """Progress in-flight work by ``dt_ms`` and pop finished requests."""
        if dt_ms < 0:
            raise ValueError("cannot advance backwards")
        completed: list[RequestRecord] = []
        if dt_ms > 0 and self.in_service:
            if self.is_gpu:
                for active in self.in_service:
                    active.remaining -= dt_ms
            else:
                rate = self.cpu_share_mc() / 1000.0  # core-ms of work per ms
                for active in self.in_service:
                    active.remaining -= rate * dt_ms
                    active.record.consumed_core_ms += rate * dt_ms
        still: list[ActiveRequest] = []
        for active in self.in_service:
            if active.remaining <= _DONE_EPS:
                active.record.completion_ms = now_ms
                completed.append(active.record)
            else:
                still.append(active)
        if len(still) != len(self.in_service):
            self.in_service = still
            self.version += 1
        if self.is_gpu:
            self._promote(now_ms)
        self.last_advance_ms = now_ms
        return completed

    def _promote(self, now_ms: float) -> None:
        while self.queue and len(self.in_service) < self.gpu_slots():
            active = self.queue.popleft()
            active.record.service_start_ms = now_ms
            self.in_service.append(active)
            self.version += 1

    def next_completion_in_ms(self) -> float | None:
        """Time until the earliest in-service request finishes, if any."""
        if not self.in_service:
            return None
        least = min(a.remaining for a in self.in_service)
        if self.is_gpu:
            return max(least, 0.0)
        rate = self.cpu_share_mc() / 1000.0
        if rate <= 0:
            return None  # no cores granted; work is stalled until allocation
        return max(least / rate, 0.0)


def advance_instance(
    instance: InstanceRuntime, dt_ms: float, now_ms: float
) -> list[RequestRecord]:
    """Advance one instance by ``dt_ms`` ending at ``now_ms``.

    Returns the records of requests that finished during the interval
    (stamped with ``completion_ms = now_ms``; shares are constant between
    events, so the earliest finisher defines the event time).
    """
    if dt_ms <= 0 and instance.last_advance_ms == now_ms:
        return instance.advance(0.0, now_ms)
    return instance.advance(dt_ms, now_ms)
