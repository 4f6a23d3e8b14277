"""Request records, measurement windows, and the end-of-run report.

Every request is tracked from arrival to completion (or timeout) and its
response time decomposes exactly as forwarding delay + waiting + execution
(``RT = D + Q + E``). Windows aggregate the records the node controllers
need: arrival rates by ingress node, handling times and observed usage by
executing node, and violation counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = [
    "STATUS_PENDING",
    "STATUS_IN_FLIGHT",
    "STATUS_COMPLETED",
    "STATUS_TIMED_OUT",
    "RequestRecord",
    "WindowEntry",
    "MetricsWindow",
    "FunctionSummary",
    "AllocationSample",
    "CapacityAuditRow",
    "MetricsReport",
    "collect_window",
    "percentile",
]

STATUS_PENDING = "pending"
STATUS_IN_FLIGHT = "in_flight"
STATUS_COMPLETED = "completed"
STATUS_TIMED_OUT = "timed_out"


@dataclass
class RequestRecord:
    """One request's lifecycle timestamps (all in simulated milliseconds)."""

    rid: int
    function: str
    ingress: str
    arrival_ms: float
    executing_node: str | None = None
    resource_kind: str | None = None
    dispatch_ms: float | None = None
    instance_arrival_ms: float | None = None
    service_start_ms: float | None = None
    completion_ms: float | None = None
    net_delay_ms: float = 0.0
    demand_core_ms: float = 0.0
    consumed_core_ms: float = 0.0
    status: str = STATUS_PENDING

    @property
    def queue_ms(self) -> float:
        """Time spent waiting: parked at the ingress plus queued at the instance."""
        if self.service_start_ms is None or self.dispatch_ms is None:
            return 0.0
        parked = self.dispatch_ms - self.arrival_ms
        queued = self.service_start_ms - (self.instance_arrival_ms or self.dispatch_ms)
        return parked + queued

    @property
    def exec_ms(self) -> float:
        if self.completion_ms is None or self.service_start_ms is None:
            return 0.0
        return self.completion_ms - self.service_start_ms

    @property
    def rt_ms(self) -> float:
        """Response time, by construction exactly D + Q + E."""
        return self.net_delay_ms + self.queue_ms + self.exec_ms

    def violated(self, required_rt_ms: float) -> bool:
        if self.status == STATUS_TIMED_OUT:
            return True
        return self.status == STATUS_COMPLETED and self.rt_ms > required_rt_ms


@dataclass
class WindowEntry:
    """Aggregates for one (function, node) cell of a measurement window."""

    arrivals: int = 0
    lambda_rps: float = 0.0
    completions: int = 0
    qe_sum_ms: float = 0.0
    cpu_completions: int = 0
    cpu_qe_sum_ms: float = 0.0
    u_sum_core_s: float = 0.0
    u_count: int = 0
    rt_sum_ms: float = 0.0
    rt_sumsq: float = 0.0
    rt_count: int = 0
    d_sum_ms: float = 0.0
    violations: int = 0
    timeouts: int = 0

    @property
    def qe_mean_ms(self) -> float | None:
        return self.qe_sum_ms / self.completions if self.completions else None

    @property
    def cpu_qe_mean_ms(self) -> float | None:
        return self.cpu_qe_sum_ms / self.cpu_completions if self.cpu_completions else None

    @property
    def u_mean_core_s(self) -> float | None:
        return self.u_sum_core_s / self.u_count if self.u_count else None


@dataclass
class MetricsWindow:
    start_ms: float
    end_ms: float
    entries: dict[tuple[str, str], WindowEntry] = field(default_factory=dict)

    def entry(self, fn: str, node: str) -> WindowEntry:
        return self.entries.setdefault((fn, node), WindowEntry())


def collect_window(
    records: list[RequestRecord],
    start_ms: float,
    end_ms: float,
    required_rt_ms: dict[str, float],
) -> MetricsWindow:
    """Aggregate the records touching the window [start, end).

    Arrival counts (and the ingress-side response-time stats) key on the
    ingress node; handling times and observed usage key on the executing
    node, which is what the per-instance controllers act on. An empty cell
    leaves its handling-time mean unavailable so controllers hold their
    allocation.
    """
    if end_ms <= start_ms:
        raise ValueError("window end must be after start")
    window = MetricsWindow(start_ms, end_ms)
    span_s = (end_ms - start_ms) / 1000.0
    for rec in records:
        if start_ms <= rec.arrival_ms < end_ms:
            entry = window.entry(rec.function, rec.ingress)
            entry.arrivals += 1
        if rec.status == STATUS_COMPLETED and rec.completion_ms is not None and (
            start_ms <= rec.completion_ms < end_ms
        ):
            exec_entry = window.entry(rec.function, rec.executing_node)
            qe = rec.queue_ms + rec.exec_ms
            exec_entry.completions += 1
            exec_entry.qe_sum_ms += qe
            if rec.resource_kind == "CPU":
                exec_entry.cpu_completions += 1
                exec_entry.cpu_qe_sum_ms += qe
                exec_entry.u_sum_core_s += rec.consumed_core_ms / 1000.0
                exec_entry.u_count += 1
            ingress_entry = window.entry(rec.function, rec.ingress)
            rt = rec.rt_ms
            ingress_entry.rt_sum_ms += rt
            ingress_entry.rt_sumsq += rt * rt
            ingress_entry.rt_count += 1
            ingress_entry.d_sum_ms += rec.net_delay_ms
            if rt > required_rt_ms.get(rec.function, math.inf):
                ingress_entry.violations += 1
        if rec.status == STATUS_TIMED_OUT and rec.completion_ms is not None and (
            start_ms <= rec.completion_ms < end_ms
        ):
            entry = window.entry(rec.function, rec.ingress)
            entry.timeouts += 1
            entry.violations += 1
    for entry in window.entries.values():
        entry.lambda_rps = entry.arrivals / span_s
    return window


def percentile(values: list[float], fraction: float) -> float:
    """Rank-based percentile: the smallest value covering ``fraction`` of the data."""
    if not values:
        raise ValueError("percentile of empty data")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    ordered = sorted(values)
    rank = math.ceil(fraction * len(ordered))
    return ordered[rank - 1]


@dataclass(frozen=True)
class FunctionSummary:
    function: str
    requests: int
    completed: int
    timed_out: int
    violations: int
    violation_rate_pct: float
    rt_mean_ms: float
    rt_std_ms: float
    rt_p99_ms: float
    network_rate_pct: float
    mean_allocated_mc: float


@dataclass(frozen=True)
class AllocationSample:
    t_ms: float
    node: str
    function: str
    resource_kind: str
    instance_id: str
    granted_mc: float


@dataclass(frozen=True)
class CapacityAuditRow:
    t_ms: float
    node: str
    resource_kind: str
    granted_mc: float
    capacity_mc: float


@dataclass
class MetricsReport:
    duration_s: float
    seed: int
    summaries: list[FunctionSummary]
    windows: list[MetricsWindow]
    allocations: list[AllocationSample]
    capacity_audit: list[CapacityAuditRow]
    events: list[dict]
    requests: list[RequestRecord]
    conservation: dict[str, int]


def build_summaries(
    records: list[RequestRecord],
    required_rt_ms: dict[str, float],
    allocations: list[AllocationSample],
    functions: list[str],
) -> list[FunctionSummary]:
    tick_times = sorted({s.t_ms for s in allocations})
    alloc_by_fn: dict[str, float] = {f: 0.0 for f in functions}
    for s in allocations:
        if s.resource_kind == "CPU" and s.function in alloc_by_fn:
            alloc_by_fn[s.function] += s.granted_mc

    summaries = []
    for fn in sorted(functions):
        finished = [r for r in records if r.function == fn and r.status in (STATUS_COMPLETED, STATUS_TIMED_OUT)]
        completed = [r for r in finished if r.status == STATUS_COMPLETED]
        timed_out = len(finished) - len(completed)
        rts = [r.rt_ms for r in completed]
        violations = sum(1 for r in finished if r.violated(required_rt_ms[fn]))
        rt_sum = sum(rts)
        d_sum = sum(r.net_delay_ms for r in completed)
        mean = rt_sum / len(rts) if rts else 0.0
        var = sum((v - mean) ** 2 for v in rts) / len(rts) if rts else 0.0
        summaries.append(
            FunctionSummary(
                function=fn,
                requests=len(finished),
                completed=len(completed),
                timed_out=timed_out,
                violations=violations,
                violation_rate_pct=100.0 * violations / len(finished) if finished else 0.0,
                rt_mean_ms=mean,
                rt_std_ms=math.sqrt(var),
                rt_p99_ms=percentile(rts, 0.99) if rts else 0.0,
                network_rate_pct=100.0 * d_sum / rt_sum if rt_sum > 0 else 0.0,
                mean_allocated_mc=alloc_by_fn[fn] / len(tick_times) if tick_times else 0.0,
            )
        )
    return summaries
