"""Deterministic discrete-event simulation of the three-level control stack.

Continuous time with an ordered event heap; processor-sharing progress is
advanced lazily between events, which is exact because per-request shares
change only at events. Entries are keyed ``(time, priority, sequence)``, so
identical scenario and seed replay the exact same trajectory and produce a
byte-identical report.

The loop hosts the three controllers at their periods: node controllers
(PI + contention) every node period, community controllers (two-step
placement) every community period, and topology repartitioning every
topology period. Placement activations follow the deployment protocol:
created instances cold-start, routing swaps only when every referenced
instance is ready, and replaced instances drain gracefully afterwards.
"""

from __future__ import annotations

import heapq
import math
import random
import zlib
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .. import nodectl
from ..placement import (
    RESOURCE_CPU,
    RESOURCE_GPU,
    CommunityControllerConfig,
    CommunitySnapshot,
    PlacementInfeasibleError,
    TwoStepResult,
    UsageProfile,
    WorkloadSnapshot,
    solve_two_step,
)
from ..milp import SolverConfig
from ..topology import Community, CommunityParams, resolve_overlaps, slpa_partition, validate_partition

if TYPE_CHECKING:  # imported lazily to avoid a cycle with the scenario loader
    from ..scenario import Scenario, SimFunction
from .metrics import (
    STATUS_COMPLETED,
    STATUS_IN_FLIGHT,
    STATUS_PENDING,
    STATUS_TIMED_OUT,
    AllocationSample,
    CapacityAuditRow,
    MetricsReport,
    RequestRecord,
    build_summaries,
    collect_window,
)
from .runtime import COLD_STARTING, DRAINING, READY, InstanceRuntime, advance_instance
from .workload import (
    FixedWorkload,
    MigrationWorkload,
    RampWorkload,
    TraceWorkload,
    initial_rates,
)

__all__ = ["Simulation", "run", "route_request"]

_EWMA_ALPHA = 0.3

# Event priorities: fixed processing order for simultaneous events.
_P_READY = 0
_P_SWAP = 1
_P_DELIVER = 2
_P_COMPLETE = 3
_P_MOVE = 4
_P_ARRIVAL = 5
_P_RETRY = 6
_P_DRAIN = 7
_P_NODE = 8
_P_COMMUNITY = 9
_P_TOPOLOGY = 10
_P_END = 11


def _derive_seed(base: int, tag: str) -> int:
    return (base * 1_000_003 + zlib.crc32(tag.encode())) % (2**63)


def route_request(
    ingress: str,
    function: str,
    row: list[tuple[float, str, str]],
    rng: random.Random,
) -> tuple[str, str] | None:
    """Sample an execution target from a combined routing row.

    ``row`` lists ``(probability, resource_kind, node)`` entries, GPU targets
    first; the probabilities must sum to at most 1. A draw beyond the row's
    total mass means the request is unserved (the caller parks and retries).
    """
    total = sum(p for p, _, _ in row)
    if total > 1.0 + 1e-9:
        raise ValueError(
            f"routing row for ({function}, {ingress}) sums to {total} > 1"
        )
    pick = rng.random()
    acc = 0.0
    for prob, kind, node in row:
        acc += prob
        if pick < acc:
            return (kind, node)
    return None


@dataclass
class _UserState:
    uid: int
    function: str
    node: str
    think_ms: float
    active: bool = False


@dataclass
class _CommunityState:
    index: int
    nodes: tuple[str, ...]
    target: dict[str, dict[tuple[str, str], bool]] = field(
        default_factory=lambda: {RESOURCE_CPU: {}, RESOURCE_GPU: {}}
    )
    routing: dict[tuple[str, str], list[tuple[float, str, str]]] = field(default_factory=dict)
    arrival_counts: dict[tuple[str, str], int] = field(default_factory=dict)
    version: int = 0
    pending_version: int = 0


class Simulation:
    """One scenario run. Build, call :meth:`run`, read the report."""

    def __init__(self, scenario: Scenario):
        problems = []
        if scenario.duration_s <= 0:
            problems.append("duration_s must be > 0")
        if problems:
            raise ValueError("; ".join(problems))
        self.scenario = scenario
        self.control = scenario.control
        self.functions: dict[str, SimFunction] = scenario.function_map()
        self.nodes = scenario.node_map()
        self.delays = scenario.delays
        self.horizon_ms = scenario.duration_s * 1000.0
        self.node_period_ms = self.control.node_period_s * 1000.0
        self.community_period_ms = self.control.community_period_s * 1000.0
        self.topology_period_ms = self.control.topology_period_s * 1000.0
        self.retry_window_ms = (
            self.control.retry_window_s * 1000.0
            if self.control.retry_window_s is not None
            else self.node_period_ms
        )
        self.required_rt = {f.name: f.spec.required_rt_ms for f in scenario.functions}

        seed = scenario.seed
        self._rng_route = random.Random(_derive_seed(seed, "route"))
        self._rng_demand = random.Random(_derive_seed(seed, "demand"))
        self._rng_think = random.Random(_derive_seed(seed, "think"))
        self._wl_rngs = [
            random.Random(_derive_seed(seed, f"workload:{i}"))
            for i in range(len(scenario.workloads))
        ]

        self.t_ms = 0.0
        self._seq = 0
        self._heap: list[tuple[float, int, int, str, tuple]] = []

        self.instances: dict[str, InstanceRuntime] = {}
        self.active_instance: dict[tuple[str, str, str], str] = {}
        self._generation: dict[tuple[str, str, str], int] = {}
        self.pi_states: dict[str, nodectl.PiControllerState] = {}

        self.records: list[RequestRecord] = []
        self._window_records: dict[int, RequestRecord] = {}
        self._qe_acc: dict[str, list[float]] = {}
        self._parked: dict[int, RequestRecord] = {}
        self._record_user: dict[int, int] = {}
        self.users: list[_UserState] = []

        self.usage_ewma: dict[tuple[str, str], float] = {}
        self.windows = []
        self.allocations: list[AllocationSample] = []
        self.capacity_audit: list[CapacityAuditRow] = []
        self.events: list[dict] = []

        self.communities: list[_CommunityState] = []
        self.node_community: dict[str, int] = {}

        self.controller_config = CommunityControllerConfig(
            epsilon=self.control.epsilon,
            control_period_s=self.control.community_period_s,
            cpu_planning_utilization=self.control.cpu_planning_utilization,
            gpu_planning_utilization=self.control.gpu_planning_utilization,
        )
        self.solver_config = SolverConfig()

    # ------------------------------------------------------------------
    # Event plumbing
    # ------------------------------------------------------------------

    def _push(self, t_ms: float, prio: int, kind: str, payload: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t_ms, prio, self._seq, kind, payload))

    def _log(self, event: str, **payload) -> None:
        entry = {"t_ms": self.t_ms, "event": event}
        entry.update(payload)
        self.events.append(entry)

    # ------------------------------------------------------------------
    # Setup
    # ------------------------------------------------------------------

    def _partition(self) -> list[Community]:
        params = CommunityParams(
            max_community_size=self.control.max_community_size or len(self.nodes),
            max_delay=self.control.max_delay_ms
            if self.control.max_delay_ms is not None
            else max(self.delays.get(i, j) for i in self.nodes for j in self.nodes),
            iterations=self.control.slpa_iterations,
            label_threshold=self.control.label_threshold,
            rng_seed=self.scenario.seed,
        )
        raw = slpa_partition(sorted(self.nodes), self.delays, params)
        disjoint = resolve_overlaps(raw, self.delays, params)
        violations = validate_partition(disjoint, self.delays, params)
        if violations:
            raise RuntimeError(f"partition violates its own bounds: {violations}")
        return disjoint

    def _install_communities(self, communities: list[Community]) -> None:
        ordered = sorted(communities, key=lambda c: c.sorted_members())
        old = {idx: c for idx, c in enumerate(self.communities)}
        self.communities = []
        self.node_community = {}
        for idx, comm in enumerate(ordered):
            state = _CommunityState(index=idx, nodes=comm.sorted_members())
            # Carry placement targets for nodes that remain in this community.
            for prev in old.values():
                for kind in (RESOURCE_CPU, RESOURCE_GPU):
                    for (f, j), on in prev.target[kind].items():
                        if on and j in state.nodes:
                            state.target[kind][(f, j)] = True
                for key, row in prev.routing.items():
                    if key[1] in state.nodes:
                        state.routing[key] = row
            self.communities.append(state)
            for n in state.nodes:
                self.node_community[n] = idx
        self._log("partition", communities=[list(c.nodes) for c in self.communities])

    def _bootstrap(self) -> None:
        self._install_communities(self._partition())
        rates = initial_rates(self.scenario.workloads)
        for comm in self.communities:
            lam = {
                (f, i): r for (f, i), r in sorted(rates.items()) if i in comm.nodes
            }
            result = self._solve_community(comm, lam)
            if result is not None:
                self._apply_result(comm, result, warm=True)

        # Workload drivers.
        for idx, program in enumerate(self.scenario.workloads):
            if isinstance(program, (FixedWorkload, TraceWorkload)):
                nxt = self._next_open_arrival_ms(idx, program, 0.0)
                if nxt is not None:
                    self._push(nxt, _P_ARRIVAL, "open_arrival", (idx,))
            elif isinstance(program, RampWorkload):
                for u in range(program.max_users):
                    user = _UserState(
                        uid=len(self.users),
                        function=program.function,
                        node=program.nodes[u % len(program.nodes)],
                        think_ms=program.think_time_ms,
                    )
                    self.users.append(user)
                    self._push(
                        program.activation_s(u) * 1000.0, _P_ARRIVAL,
                        "user_activate", (user.uid,),
                    )
            elif isinstance(program, MigrationWorkload):
                rng = self._wl_rngs[idx]
                for u in range(program.users):
                    user = _UserState(
                        uid=len(self.users),
                        function=program.function,
                        node=program.from_nodes[u % len(program.from_nodes)],
                        think_ms=program.think_time_ms,
                    )
                    self.users.append(user)
                    self._push(0.0, _P_ARRIVAL, "user_activate", (user.uid,))
                    move_ms = (
                        program.move_start_s + rng.random() * program.move_duration_s
                    ) * 1000.0
                    dest = program.to_nodes[u % len(program.to_nodes)]
                    self._push(move_ms, _P_MOVE, "user_move", (user.uid, dest))

        k = 1
        while k * self.node_period_ms <= self.horizon_ms:
            self._push(k * self.node_period_ms, _P_NODE, "node_tick", ())
            k += 1
        k = 1
        while k * self.community_period_ms <= self.horizon_ms:
            self._push(k * self.community_period_ms, _P_COMMUNITY, "community_tick", ())
            k += 1
        k = 1
        while k * self.topology_period_ms <= self.horizon_ms:
            self._push(k * self.topology_period_ms, _P_TOPOLOGY, "topology_tick", ())
            k += 1
        self._push(self.horizon_ms, _P_END, "end", ())

    # ------------------------------------------------------------------
    # Community control
    # ------------------------------------------------------------------

    def _usage_snapshot(self, comm: _CommunityState) -> UsageProfile:
        cpu: dict[tuple[str, str], float] = {}
        gpu: dict[tuple[str, str], float] = {}
        for fname, fn in sorted(self.functions.items()):
            for j in comm.nodes:
                cpu[(fname, j)] = self.usage_ewma.get(
                    (fname, j), fn.demand.nominal_core_s
                )
                if fn.gpu is not None and self.nodes[j].has_gpu:
                    gpu[(fname, j)] = fn.gpu.nominal_core_s
        return UsageProfile(cpu=cpu, gpu=gpu)

    def _solve_community(
        self, comm: _CommunityState, lam: dict[tuple[str, str], float]
    ) -> TwoStepResult | None:
        snapshot = CommunitySnapshot(
            community=comm.nodes,
            nodes={j: self.nodes[j] for j in comm.nodes},
            delays=self.delays,
            functions=[f.spec for _, f in sorted(self.functions.items())],
            workload=WorkloadSnapshot(lam),
            usage=self._usage_snapshot(comm),
        )
        try:
            result = solve_two_step(
                snapshot,
                previous_gpu=comm.target[RESOURCE_GPU],
                previous_cpu=comm.target[RESOURCE_CPU],
                config=self.controller_config,
                solver_config=self.solver_config,
            )
        except PlacementInfeasibleError as exc:
            self._log(
                "placement_infeasible",
                community=comm.index,
                resource_kind=exc.resource_kind,
                step=exc.step,
                constraint_class=exc.constraint_class,
                detail=exc.detail,
            )
            return None
        for kind, plan in ((RESOURCE_GPU, result.gpu_plan), (RESOURCE_CPU, result.cpu_plan)):
            self._log(
                "placement",
                community=comm.index,
                resource_kind=kind,
                report=result.reports[kind],
                plan={
                    "creations": plan.creations,
                    "deletions": plan.deletions,
                    "migrations": plan.migrations,
                    "node_creations": {f: list(v) for f, v in plan.node_creations.items()},
                    "node_deletions": {f: list(v) for f, v in plan.node_deletions.items()},
                },
            )
        return result

    def _planned_load_cores(self, report: dict, fname: str, j: str) -> float:
        total = 0.0
        routing = report.get("routing", {}).get(fname, {})
        lam = report.get("lambda_rps", {}).get(fname, {})
        usage = report.get("usage_core_s", {}).get(fname, {})
        for i, row in routing.items():
            frac = row.get(j, 0.0)
            if frac > 0:
                total += frac * lam.get(i, 0.0) * usage.get(j, 0.0)
        return total

    def _apply_result(self, comm: _CommunityState, result: TwoStepResult, warm: bool = False) -> None:
        """Create missing instances and schedule the routing swap.

        The swap waits for every newly created instance; deletions begin only
        at the swap so old instances keep serving through the transition. A
        newer result supersedes a pending one wholesale.
        """
        comm.version += 1
        comm.pending_version = comm.version
        comm.target[RESOURCE_GPU] = {
            k: v for k, v in result.gpu.deployed.items() if v
        }
        comm.target[RESOURCE_CPU] = {
            k: v for k, v in result.cpu.deployed.items() if v
        }

        ready_deadline = self.t_ms
        for kind, solution in ((RESOURCE_GPU, result.gpu), (RESOURCE_CPU, result.cpu)):
            report = result.reports[kind]
            for (fname, j), on in sorted(solution.deployed.items()):
                if not on:
                    continue
                key = (fname, j, kind)
                existing = self.active_instance.get(key)
                if existing is not None and self.instances[existing].state != DRAINING:
                    continue
                fn = self.functions[fname]
                gen = self._generation.get(key, 0) + 1
                self._generation[key] = gen
                instance_id = f"{fname}@{j}/{kind}#{gen}"
                cold_ms = 0.0 if warm else fn.spec.cold_start_ms
                if kind == RESOURCE_CPU:
                    planned = self._planned_load_cores(report, fname, j) * 1000.0
                    alloc = min(
                        max(planned, self.control.min_cores_mc),
                        self._max_cores(j),
                    )
                else:
                    alloc = 0.0  # GPU shares are assigned at activation
                inst = InstanceRuntime(
                    instance_id=instance_id,
                    function=fname,
                    node=j,
                    resource_kind=kind,
                    allocated_mc=alloc,
                    now_ms=self.t_ms,
                    per_request_cap_mc=self.control.per_request_cap_mc,
                    gpu_request_mc=fn.gpu.request_cores_mc if fn.gpu else 0.0,
                    gpu_service_time_ms=fn.gpu.service_time_ms if fn.gpu else 0.0,
                    state=READY if cold_ms <= 0 else COLD_STARTING,
                    ready_at_ms=self.t_ms + cold_ms,
                )
                self.instances[instance_id] = inst
                self.active_instance[key] = instance_id
                if kind == RESOURCE_CPU:
                    self.pi_states[instance_id] = nodectl.PiControllerState(
                        setpoint_ms=fn.setpoint_ms,
                        prop_gain=self.control.prop_gain,
                        int_gain=self.control.int_gain,
                        min_cores=self.control.min_cores_mc,
                        max_cores=self._max_cores(j),
                    )
                self._log(
                    "instance_created",
                    instance=instance_id,
                    function=fname,
                    node=j,
                    resource_kind=kind,
                    ready_at_ms=inst.ready_at_ms,
                )
                if cold_ms > 0:
                    self._push(inst.ready_at_ms, _P_READY, "instance_ready", (instance_id,))
                else:
                    self._log("instance_ready", instance=instance_id)

        # The swap must wait for every instance the new routing references,
        # including ones still cold-starting from a superseded plan.
        for kind in (RESOURCE_GPU, RESOURCE_CPU):
            for (fname, j), on in comm.target[kind].items():
                if not on:
                    continue
                instance_id = self.active_instance.get((fname, j, kind))
                if instance_id is None:
                    continue
                inst = self.instances[instance_id]
                if inst.state == COLD_STARTING and inst.ready_at_ms is not None:
                    ready_deadline = max(ready_deadline, inst.ready_at_ms)

        payload = (comm.index, comm.version, result)
        if ready_deadline <= self.t_ms:
            self._routing_swap(payload)
        else:
            self._push(ready_deadline, _P_SWAP, "routing_swap", payload)

    def _max_cores(self, node: str) -> float:
        cap = self.nodes[node].cpu_capacity
        if self.control.max_cores_mc is not None:
            return min(cap, self.control.max_cores_mc)
        return cap

    def _routing_swap(self, payload: tuple) -> None:
        comm_index, version, result = payload
        comm = self.communities[comm_index]
        if version != comm.pending_version:
            return  # superseded by a newer placement

        rows: dict[tuple[str, str], list[tuple[float, str, str]]] = {}
        gpu_routing = result.gpu.routing
        cpu_routing = result.cpu.routing
        served = result.gpu.served_fraction
        keys = sorted(
            {(f, i) for (f, i, _) in gpu_routing} | {(f, i) for (f, i, _) in cpu_routing}
        )
        for f, i in keys:
            row: list[tuple[float, str, str]] = []
            for j in sorted({jj for (ff, ii, jj) in gpu_routing if ff == f and ii == i}):
                row.append((gpu_routing[(f, i, j)], RESOURCE_GPU, j))
            residual = 1.0 - min(1.0, served.get((f, i), 0.0))
            for j in sorted({jj for (ff, ii, jj) in cpu_routing if ff == f and ii == i}):
                frac = cpu_routing[(f, i, j)] * residual
                if frac > 0:
                    row.append((frac, RESOURCE_CPU, j))
            if row:
                rows[(f, i)] = row
        comm.routing = rows

        self._assign_gpu_shares(comm, result)

        # Retire active instances that fell out of the target placement.
        for key, instance_id in sorted(self.active_instance.items()):
            fname, node, kind = key
            if node not in comm.nodes:
                continue
            inst = self.instances.get(instance_id)
            if inst is None:
                continue
            if not comm.target[kind].get((fname, node), False):
                del self.active_instance[key]
                self._begin_drain(inst)

        self._log("routing_swap", community=comm.index, version=version)
        self._retry_parked()

    def _assign_gpu_shares(self, comm: _CommunityState, result: TwoStepResult) -> None:
        """Split each node's GPU capacity across its instances by planned load,
        in whole per-request slots, never exceeding the capacity."""
        report = result.reports[RESOURCE_GPU]
        by_node: dict[str, list[str]] = {}
        for (fname, j), on in sorted(result.gpu.deployed.items()):
            if on:
                by_node.setdefault(j, []).append(fname)
        for j, fnames in sorted(by_node.items()):
            capacity = self.nodes[j].gpu_capacity
            weights = {}
            for fname in fnames:
                weights[fname] = self._planned_load_cores(report, fname, j)
            total_w = sum(weights.values())
            slots: dict[str, int] = {}
            request_mc = {
                fname: self.functions[fname].gpu.request_cores_mc for fname in fnames
            }
            for fname in fnames:
                share = (
                    capacity * weights[fname] / total_w
                    if total_w > 0
                    else capacity / len(fnames)
                )
                slots[fname] = int(share // request_mc[fname])
            used = sum(slots[f] * request_mc[f] for f in fnames)
            # Largest planned share first gets leftover whole slots.
            for fname in sorted(fnames, key=lambda f: (-weights[f], f)):
                while used + request_mc[fname] <= capacity:
                    slots[fname] += 1
                    used += request_mc[fname]
            for fname in fnames:
                key = (fname, j, RESOURCE_GPU)
                instance_id = self.active_instance.get(key)
                if instance_id is None:
                    continue
                inst = self.instances[instance_id]
                self._touch(inst)
                inst.set_allocation(slots[fname] * request_mc[fname], self.t_ms)
                self._schedule_completion(inst)

    def _begin_drain(self, inst: InstanceRuntime) -> None:
        self._touch(inst)
        instant = inst.in_flight_count == 0 or inst.state == COLD_STARTING
        inst.drain_deadline_ms = (
            self.t_ms
            if instant
            else self.t_ms + self.functions[inst.function].spec.graceful_termination_ms
        )
        self._log(
            "instance_draining",
            instance=inst.instance_id,
            node=inst.node,
            function=inst.function,
            resource_kind=inst.resource_kind,
            deadline_ms=inst.drain_deadline_ms,
        )
        if instant:
            self._remove_instance(inst)
            return
        inst.state = DRAINING
        self._push(inst.drain_deadline_ms, _P_DRAIN, "drain_deadline", (inst.instance_id,))

    def _remove_instance(self, inst: InstanceRuntime) -> None:
        self.instances.pop(inst.instance_id, None)
        self.pi_states.pop(inst.instance_id, None)
        key = inst.key
        if self.active_instance.get(key) == inst.instance_id:
            del self.active_instance[key]
        self._log(
            "instance_removed",
            instance=inst.instance_id,
            node=inst.node,
            function=inst.function,
            resource_kind=inst.resource_kind,
        )

    # ------------------------------------------------------------------
    # Request path
    # ------------------------------------------------------------------

    def _sample_demand_core_ms(self, fn: SimFunction) -> float:
        demand = fn.demand
        if demand.dist == "lognormal" and demand.sigma_log > 0:
            mu = math.log(demand.mean_core_ms) - demand.sigma_log**2 / 2.0
            base = self._rng_demand.lognormvariate(mu, demand.sigma_log)
        else:
            base = demand.mean_core_ms
        if demand.noise_sigma_ms > 0 or demand.noise_mean_ms > 0:
            base += max(0.0, self._rng_demand.gauss(demand.noise_mean_ms, demand.noise_sigma_ms))
        return base

    def _new_request(self, fname: str, ingress: str, user_uid: int | None) -> RequestRecord:
        record = RequestRecord(
            rid=len(self.records),
            function=fname,
            ingress=ingress,
            arrival_ms=self.t_ms,
            demand_core_ms=self._sample_demand_core_ms(self.functions[fname]),
        )
        self.records.append(record)
        self._window_records[record.rid] = record
        if user_uid is not None:
            self._record_user[record.rid] = user_uid
        comm = self.communities[self.node_community[ingress]]
        comm.arrival_counts[(fname, ingress)] = comm.arrival_counts.get((fname, ingress), 0) + 1
        return record

    def _dispatch(self, record: RequestRecord) -> None:
        comm = self.communities[self.node_community[record.ingress]]
        row = comm.routing.get((record.function, record.ingress))
        target: tuple[str, str] | None = None
        if row is not None:
            target = route_request(record.ingress, record.function, row, self._rng_route)
        else:
            target = self._fallback_target(record.function, record.ingress)
        if target is None:
            self._park(record)
            return
        kind, node = target
        instance_id = self.active_instance.get((record.function, node, kind))
        if instance_id is None or self.instances[instance_id].state == COLD_STARTING:
            self._park(record)
            return
        delta = self.delays.get(record.ingress, node)
        record.dispatch_ms = self.t_ms
        record.net_delay_ms = delta
        record.status = STATUS_IN_FLIGHT
        self._push(self.t_ms + delta / 2.0, _P_DELIVER, "deliver", (record.rid, instance_id))

    def _fallback_target(self, fname: str, ingress: str) -> tuple[str, str] | None:
        """Nearest ready CPU instance within the function's delay limit."""
        comm = self.communities[self.node_community[ingress]]
        spec = self.functions[fname].spec
        best: tuple[float, str] | None = None
        for j in comm.nodes:
            instance_id = self.active_instance.get((fname, j, RESOURCE_CPU))
            if instance_id is None:
                continue
            if self.instances[instance_id].state != READY:
                continue
            delta = self.delays.get(ingress, j)
            if delta > spec.max_net_delay_ms:
                continue
            if best is None or (delta, j) < best:
                best = (delta, j)
        if best is None:
            return None
        return (RESOURCE_CPU, best[1])

    def _park(self, record: RequestRecord) -> None:
        if record.rid not in self._parked:
            self._parked[record.rid] = record
            self._push(
                self.t_ms + self.retry_window_ms, _P_RETRY, "retry_deadline", (record.rid,)
            )

    def _retry_parked(self) -> None:
        for rid in sorted(self._parked):
            record = self._parked[rid]
            comm = self.communities[self.node_community[record.ingress]]
            row = comm.routing.get((record.function, record.ingress))
            target = (
                route_request(record.ingress, record.function, row, self._rng_route)
                if row is not None
                else self._fallback_target(record.function, record.ingress)
            )
            if target is None:
                continue
            kind, node = target
            instance_id = self.active_instance.get((record.function, node, kind))
            if instance_id is None or self.instances[instance_id].state == COLD_STARTING:
                continue
            del self._parked[rid]
            delta = self.delays.get(record.ingress, node)
            record.dispatch_ms = self.t_ms
            record.net_delay_ms = delta
            record.status = STATUS_IN_FLIGHT
            self._push(self.t_ms + delta / 2.0, _P_DELIVER, "deliver", (record.rid, instance_id))

    def _deliver(self, rid: int, instance_id: str) -> None:
        record = self.records[rid]
        inst = self.instances.get(instance_id)
        if inst is None or inst.state == COLD_STARTING:
            record.status = STATUS_PENDING
            record.dispatch_ms = None
            record.net_delay_ms = 0.0
            self._park(record)
            return
        self._touch(inst)
        inst.add_request(record, self.t_ms)
        self._schedule_completion(inst)

    def _finish(self, record: RequestRecord, inst: InstanceRuntime) -> None:
        record.status = STATUS_COMPLETED
        self._window_records[record.rid] = record
        if inst.resource_kind == RESOURCE_CPU:
            acc = self._qe_acc.setdefault(inst.instance_id, [0.0, 0.0])
            acc[0] += record.queue_ms + record.exec_ms
            acc[1] += 1
        if inst.state == DRAINING and inst.in_flight_count == 0:
            self._remove_instance(inst)
        self._notify_user(record)

    def _notify_user(self, record: RequestRecord) -> None:
        uid = self._record_user.get(record.rid)
        if uid is None:
            return
        user = self.users[uid]
        think = self._rng_think.expovariate(1.0 / user.think_ms)
        self._push(self.t_ms + think, _P_ARRIVAL, "user_arrival", (uid,))

    # ------------------------------------------------------------------
    # Instance mechanics
    # ------------------------------------------------------------------

    def _touch(self, inst: InstanceRuntime) -> None:
        """Advance an instance to the current time, finishing due requests."""
        dt = self.t_ms - inst.last_advance_ms
        completed = advance_instance(inst, dt, self.t_ms)
        for record in completed:
            self._finish(record, inst)

    def _schedule_completion(self, inst: InstanceRuntime) -> None:
        eta = inst.next_completion_in_ms()
        if eta is None:
            return
        inst.version += 1
        self._push(
            self.t_ms + eta, _P_COMPLETE, "completion", (inst.instance_id, inst.version)
        )

    # ------------------------------------------------------------------
    # Control ticks
    # ------------------------------------------------------------------

    def _node_tick(self) -> None:
        start = self.t_ms - self.node_period_ms
        for instance_id in sorted(self.instances):
            inst = self.instances.get(instance_id)
            if inst is None:
                continue
            self._touch(inst)
            if instance_id in self.instances:
                self._schedule_completion(inst)

        window = collect_window(
            list(self._window_records.values()), start, self.t_ms, self.required_rt
        )
        self.windows.append(window)
        for (fname, node), entry in sorted(window.entries.items()):
            obs = entry.u_mean_core_s
            if obs is not None:
                old = self.usage_ewma.get((fname, node))
                self.usage_ewma[(fname, node)] = (
                    obs if old is None else _EWMA_ALPHA * obs + (1 - _EWMA_ALPHA) * old
                )

        for node_id in sorted(self.nodes):
            node = self.nodes[node_id]
            cpu_instances = sorted(
                (
                    inst
                    for inst in self.instances.values()
                    if inst.node == node_id and inst.resource_kind == RESOURCE_CPU
                    and inst.state in (READY, DRAINING)
                ),
                key=lambda i: i.instance_id,
            )
            requests = []
            for inst in cpu_instances:
                acc = self._qe_acc.get(inst.instance_id)
                qe = acc[0] / acc[1] if acc and acc[1] > 0 else None
                state = self.pi_states.get(inst.instance_id)
                if state is None:
                    state = nodectl.PiControllerState(
                        setpoint_ms=self.functions[inst.function].setpoint_ms,
                        prop_gain=self.control.prop_gain,
                        int_gain=self.control.int_gain,
                        min_cores=self.control.min_cores_mc,
                        max_cores=self._max_cores(node_id),
                    )
                new_state, desired = nodectl.compute_instance_cores(
                    state, qe, inst.allocated_mc
                )
                self.pi_states[inst.instance_id] = new_state
                requests.append(nodectl.AllocationRequest(inst.instance_id, desired))
            if requests:
                allocation = nodectl.resolve_contention(requests, node.cpu_capacity)
                for inst in cpu_instances:
                    granted = allocation.granted[inst.instance_id]
                    if granted != inst.allocated_mc:
                        inst.set_allocation(granted, self.t_ms)
                        self._schedule_completion(inst)
            cpu_total = sum(i.allocated_mc for i in cpu_instances)
            self.capacity_audit.append(
                CapacityAuditRow(self.t_ms, node_id, RESOURCE_CPU, cpu_total, node.cpu_capacity)
            )
            for inst in cpu_instances:
                self.allocations.append(
                    AllocationSample(
                        self.t_ms, node_id, inst.function, RESOURCE_CPU,
                        inst.instance_id, inst.allocated_mc,
                    )
                )
            gpu_instances = sorted(
                (
                    inst
                    for inst in self.instances.values()
                    if inst.node == node_id and inst.resource_kind == RESOURCE_GPU
                    and inst.state in (READY, DRAINING)
                ),
                key=lambda i: i.instance_id,
            )
            if node.has_gpu or gpu_instances:
                gpu_total = sum(i.allocated_mc for i in gpu_instances)
                self.capacity_audit.append(
                    CapacityAuditRow(self.t_ms, node_id, RESOURCE_GPU, gpu_total, node.gpu_capacity)
                )
                for inst in gpu_instances:
                    self.allocations.append(
                        AllocationSample(
                            self.t_ms, node_id, inst.function, RESOURCE_GPU,
                            inst.instance_id, inst.allocated_mc,
                        )
                    )

        self._window_records = {
            rid: rec
            for rid, rec in self._window_records.items()
            if rec.status in (STATUS_PENDING, STATUS_IN_FLIGHT)
        }
        self._qe_acc = {}

    def _community_tick(self) -> None:
        period_s = self.community_period_ms / 1000.0
        for comm in self.communities:
            lam = {
                key: count / period_s
                for key, count in sorted(comm.arrival_counts.items())
            }
            comm.arrival_counts = {}
            result = self._solve_community(comm, lam)
            if result is not None:
                self._apply_result(comm, result)

    def _topology_tick(self) -> None:
        new = self._partition()
        current = {c.nodes for c in self.communities}
        proposed = {c.sorted_members() for c in new}
        if current != proposed:
            self._log("repartition", communities=[list(c.sorted_members()) for c in new])
            self._install_communities(new)

    # ------------------------------------------------------------------
    # Workload events
    # ------------------------------------------------------------------

    def _next_open_arrival_ms(self, idx: int, program, t_ms: float) -> float | None:
        rng = self._wl_rngs[idx]
        t_s = t_ms / 1000.0
        if isinstance(program, FixedWorkload):
            return (t_s + rng.expovariate(program.rate_rps)) * 1000.0
        while True:
            rate = program.rate_at(t_s)
            boundary = program.next_boundary(t_s)
            if rate <= 0:
                if boundary is None:
                    return None
                t_s = boundary
                continue
            gap = rng.expovariate(rate)
            if boundary is not None and t_s + gap > boundary:
                t_s = boundary
                continue
            return (t_s + gap) * 1000.0

    def _open_arrival(self, idx: int) -> None:
        program = self.scenario.workloads[idx]
        record = self._new_request(program.function, program.node, None)
        self._dispatch(record)
        nxt = self._next_open_arrival_ms(idx, program, self.t_ms)
        if nxt is not None:
            self._push(nxt, _P_ARRIVAL, "open_arrival", (idx,))

    def _user_arrival(self, uid: int) -> None:
        user = self.users[uid]
        record = self._new_request(user.function, user.node, uid)
        self._dispatch(record)

    # ------------------------------------------------------------------
    # Main loop
    # ------------------------------------------------------------------

    def run(self) -> MetricsReport:
        self._bootstrap()
        while self._heap:
            t, prio, _, kind, payload = heapq.heappop(self._heap)
            self.t_ms = t
            if kind == "end":
                break
            if kind == "completion":
                instance_id, version = payload
                inst = self.instances.get(instance_id)
                if inst is None or inst.version != version:
                    continue
                self._touch(inst)
                self._schedule_completion(inst)
            elif kind == "deliver":
                self._deliver(*payload)
            elif kind == "open_arrival":
                self._open_arrival(*payload)
            elif kind == "user_arrival":
                self._user_arrival(*payload)
            elif kind == "user_activate":
                user = self.users[payload[0]]
                if not user.active:
                    user.active = True
                    self._user_arrival(user.uid)
            elif kind == "user_move":
                uid, dest = payload
                self.users[uid].node = dest
            elif kind == "retry_deadline":
                self._retry_deadline(*payload)
            elif kind == "instance_ready":
                inst = self.instances.get(payload[0])
                if inst is not None and inst.state == COLD_STARTING:
                    inst.state = READY
                    inst.last_advance_ms = self.t_ms
                    self._log("instance_ready", instance=inst.instance_id)
            elif kind == "routing_swap":
                self._routing_swap(payload)
            elif kind == "drain_deadline":
                self._drain_deadline(*payload)
            elif kind == "node_tick":
                self._node_tick()
            elif kind == "community_tick":
                self._community_tick()
            elif kind == "topology_tick":
                self._topology_tick()
            else:  # pragma: no cover - exhaustive dispatch
                raise RuntimeError(f"unknown event kind {kind}")
        return self._finalize()

    def _retry_deadline(self, rid: int) -> None:
        record = self._parked.pop(rid, None)
        if record is None:
            return
        record.status = STATUS_TIMED_OUT
        record.completion_ms = self.t_ms
        self._window_records[record.rid] = record
        self._notify_user(record)

    def _drain_deadline(self, instance_id: str) -> None:
        inst = self.instances.get(instance_id)
        if inst is None or inst.state != DRAINING:
            return
        self._touch(inst)
        for active in list(inst.in_service) + list(inst.queue):
            active.record.status = STATUS_TIMED_OUT
            active.record.completion_ms = self.t_ms
            self._window_records[active.record.rid] = active.record
            self._notify_user(active.record)
        inst.in_service = []
        inst.queue.clear()
        self._remove_instance(inst)

    def _finalize(self) -> MetricsReport:
        completed = sum(1 for r in self.records if r.status == STATUS_COMPLETED)
        timed_out = sum(1 for r in self.records if r.status == STATUS_TIMED_OUT)
        conservation = {
            "generated": len(self.records),
            "completed": completed,
            "timed_out": timed_out,
            "in_flight_at_horizon": len(self.records) - completed - timed_out,
        }
        summaries = build_summaries(
            self.records, self.required_rt, self.allocations, sorted(self.functions)
        )
        return MetricsReport(
            duration_s=self.scenario.duration_s,
            seed=self.scenario.seed,
            summaries=summaries,
            windows=self.windows,
            allocations=self.allocations,
            capacity_audit=self.capacity_audit,
            events=self.events,
            requests=self.records,
            conservation=conservation,
        )


def run(scenario: Scenario) -> MetricsReport:
    """Execute a scenario to its horizon and return the full report."""
    return Simulation(scenario).run()
