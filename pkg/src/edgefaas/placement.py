"""Community-level function placement and request routing.

For one community and one resource kind (CPU or GPU) the controller solves a
two-step optimization:

1. Delay minimization: place instances and split request routing so the
   workload-weighted forwarding delay is minimal, subject to per-function
   delay limits, instance memory, node core capacity, and full routing
   coverage of every loaded ingress node.
2. Disruption minimization: among placements whose delay stays within a
   ``(1 + epsilon)`` band of the step-1 optimum, minimize instance
   migrations, discriminating equal-migration placements by their deletion
   and creation counts.

The whole procedure runs twice per control round: first for GPUs (where
routing rows are ``<= 1`` and the solver lexicographically maximizes the
served load before minimizing delay), then for CPUs on the residual
workload the GPU pass did not absorb.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from . import milp
from .milp import MilpModel, MilpSolution, SolverConfig
from .topology import DelayMatrix, NodeDescriptor

__all__ = [
    "RESOURCE_CPU",
    "RESOURCE_GPU",
    "FunctionSpec",
    "WorkloadSnapshot",
    "UsageProfile",
    "PlacementSolution",
    "DeploymentPlan",
    "CommunityControllerConfig",
    "CommunitySnapshot",
    "PlacementModel",
    "PlacementInfeasibleError",
    "TwoStepResult",
    "build_delay_min_model",
    "build_disruption_min_model",
    "solve_two_step",
    "residual_workload",
    "diff_placements",
    "solution_report",
    "verify_report",
]

RESOURCE_CPU = "CPU"
RESOURCE_GPU = "GPU"

# Tie-break coefficient steering instances of idle functions toward the node
# with the most memory; small enough never to compete with real delay terms.
_IDLE_NUDGE = 1e-6


@dataclass(frozen=True)
class FunctionSpec:
    """Per-function deployment contract.

    ``gpu_memory_mb`` present marks the function as GPU-capable; such
    functions additionally keep CPU instances for the workload share the
    GPU pass cannot absorb.
    """

    name: str
    cpu_memory_mb: float
    max_net_delay_ms: float
    required_rt_ms: float
    cold_start_ms: float = 0.0
    graceful_termination_ms: float = 0.0
    gpu_memory_mb: float | None = None

    def __post_init__(self) -> None:
        if self.cpu_memory_mb <= 0:
            raise ValueError(f"function {self.name}: cpu_memory_mb must be > 0")
        if self.max_net_delay_ms < 0:
            raise ValueError(f"function {self.name}: max_net_delay_ms must be >= 0")
        if self.required_rt_ms <= 0:
            raise ValueError(f"function {self.name}: required_rt_ms must be > 0")
        if self.gpu_memory_mb is not None and self.gpu_memory_mb <= 0:
            raise ValueError(f"function {self.name}: gpu_memory_mb must be > 0 if present")

    @property
    def gpu_capable(self) -> bool:
        return self.gpu_memory_mb is not None

    def memory_for(self, kind: str) -> float:
        if kind == RESOURCE_GPU:
            if self.gpu_memory_mb is None:
                raise ValueError(f"function {self.name} is not GPU-capable")
            return self.gpu_memory_mb
        return self.cpu_memory_mb


@dataclass(frozen=True)
class WorkloadSnapshot:
    """Mean request rates (requests/second) by (function, ingress node)."""

    rates: dict[tuple[str, str], float]

    def __post_init__(self) -> None:
        for key, rate in self.rates.items():
            if rate < 0 or not math.isfinite(rate):
                raise ValueError(f"rate for {key} must be finite and >= 0")

    def rate(self, fn: str, node: str) -> float:
        return self.rates.get((fn, node), 0.0)

    def total(self, fn: str) -> float:
        return sum(r for (f, _), r in self.rates.items() if f == fn)

    def loaded_nodes(self, fn: str) -> list[str]:
        return sorted(n for (f, n), r in self.rates.items() if f == fn and r > 0)


@dataclass(frozen=True)
class UsageProfile:
    """Measured resource demand in core-seconds per request by (function, node)."""

    cpu: dict[tuple[str, str], float] = field(default_factory=dict)
    gpu: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for table in (self.cpu, self.gpu):
            for key, value in table.items():
                if value <= 0 or not math.isfinite(value):
                    raise ValueError(f"usage for {key} must be finite and > 0")

    def get(self, kind: str, fn: str, node: str) -> float | None:
        table = self.gpu if kind == RESOURCE_GPU else self.cpu
        return table.get((fn, node))


@dataclass(frozen=True)
class PlacementSolution:
    """Solved placement and routing for one resource kind.

    ``routing[(f, i, j)]`` is the fraction of f requests arriving at i that
    execute on j; ``deployed[(f, j)]`` marks an instance of f on j. For the
    GPU pass ``served_fraction[(f, i)]`` is the row sum (at most 1); the CPU
    pass row sums are exactly 1 for every loaded pair. ``net_delay_objective``
    is the step-1 optimum the epsilon band was anchored to.
    """

    resource_kind: str
    deployed: dict[tuple[str, str], bool]
    routing: dict[tuple[str, str, str], float]
    served_fraction: dict[tuple[str, str], float]
    net_delay_objective: float
    achieved_delay: float

    def deployed_nodes(self, fn: str) -> tuple[str, ...]:
        return tuple(sorted(j for (f, j), on in self.deployed.items() if f == fn and on))

    def functions(self) -> tuple[str, ...]:
        return tuple(sorted({f for (f, _) in self.deployed}))

    @staticmethod
    def empty(kind: str) -> "PlacementSolution":
        return PlacementSolution(kind, {}, {}, {}, 0.0, 0.0)


@dataclass(frozen=True)
class DeploymentPlan:
    """Instance churn between two placements of the same resource kind."""

    resource_kind: str
    creations: dict[str, int]
    deletions: dict[str, int]
    migrations: dict[str, int]
    node_creations: dict[str, tuple[str, ...]]
    node_deletions: dict[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        for fn, mg in self.migrations.items():
            expect = min(self.creations.get(fn, 0), self.deletions.get(fn, 0))
            if mg != expect:
                raise ValueError(f"plan for {fn}: migrations {mg} != min(CR, DL) {expect}")

    @property
    def is_empty(self) -> bool:
        return not any(self.creations.values()) and not any(self.deletions.values())


@dataclass(frozen=True)
class CommunityControllerConfig:
    """Community controller knobs.

    ``epsilon`` bounds how much the step-2 placement may worsen the step-1
    delay optimum. The planning utilizations convert measured per-request
    usage into planning usage (``u / utilization``) so routed load leaves
    queueing headroom on the executing resource.
    """

    epsilon: float = 0.05
    control_period_s: float = 60.0
    cpu_planning_utilization: float = 0.5
    gpu_planning_utilization: float = 0.8

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not (0 < self.cpu_planning_utilization <= 1):
            raise ValueError("cpu_planning_utilization must be in (0, 1]")
        if not (0 < self.gpu_planning_utilization <= 1):
            raise ValueError("gpu_planning_utilization must be in (0, 1]")


@dataclass(frozen=True)
class CommunitySnapshot:
    """Everything one community controller needs for a control round."""

    community: tuple[str, ...]
    nodes: dict[str, NodeDescriptor]
    delays: DelayMatrix
    functions: list[FunctionSpec]
    workload: WorkloadSnapshot
    usage: UsageProfile

    def __post_init__(self) -> None:
        for n in self.community:
            if n not in self.nodes:
                raise ValueError(f"community node {n} has no descriptor")


class PlacementInfeasibleError(Exception):
    """A placement model has no feasible solution.

    ``constraint_class`` names the binding constraint family:
    ``reachability`` (a loaded ingress has no candidate host within the
    function's delay limit that fits its memory), ``memory`` (instances
    cannot coexist within node memory), or ``capacity`` (routable demand
    exceeds community core capacity).
    """

    def __init__(self, resource_kind: str, step: int, constraint_class: str, detail: str):
        super().__init__(f"{resource_kind} pass step {step} infeasible ({constraint_class}): {detail}")
        self.resource_kind = resource_kind
        self.step = step
        self.constraint_class = constraint_class
        self.detail = detail


@dataclass
class PlacementModel:
    """A built MILP plus the index maps and data needed to read it back."""

    milp: MilpModel
    resource_kind: str
    community: tuple[str, ...]
    host_nodes: tuple[str, ...]
    functions: tuple[str, ...]
    x_index: dict[tuple[str, str, str], int]
    c_index: dict[tuple[str, str], int]
    lambda_rps: dict[tuple[str, str], float]
    usage_core_s: dict[tuple[str, str], float]  # planning values
    memory_mb: dict[str, float]
    max_net_delay_ms: dict[str, float]
    node_memory_mb: dict[str, float]
    node_capacity_cores: dict[str, float]
    delay_ms: dict[tuple[str, str], float]
    keep_alive_functions: tuple[str, ...] = ()

    def delay_expression(self) -> dict[int, float]:
        coeffs: dict[int, float] = {}
        for (f, i, j), idx in self.x_index.items():
            lam = self.lambda_rps.get((f, i), 0.0)
            if lam > 0:
                coeffs[idx] = lam * self.delay_ms[(i, j)]
        return coeffs

    def served_expression(self) -> dict[int, float]:
        coeffs: dict[int, float] = {}
        for (f, i, j), idx in self.x_index.items():
            lam = self.lambda_rps.get((f, i), 0.0)
            if lam > 0:
                coeffs[idx] = lam
        return coeffs

    def add_delay_band(self, o_best: float, epsilon: float) -> None:
        self.milp.add_constraint(self.delay_expression(), milp.LE, o_best * (1 + epsilon), "delay_band")

    def add_served_floor(self, floor: float) -> None:
        self.milp.add_constraint(self.served_expression(), milp.GE, floor, "served_floor")

    def evaluate_delay(self, values) -> float:
        return sum(values[idx] * coef for idx, coef in self.delay_expression().items())

    def evaluate_served(self, values) -> float:
        return sum(values[idx] * coef for idx, coef in self.served_expression().items())

    def extract_solution(self, solution: MilpSolution, o_best: float) -> PlacementSolution:
        values = solution.values
        deployed = {
            (f, j): values[idx] > 0.5 for (f, j), idx in self.c_index.items()
        }
        routing: dict[tuple[str, str, str], float] = {}
        served: dict[tuple[str, str], float] = {}
        for (f, i, j), idx in self.x_index.items():
            frac = float(min(1.0, max(0.0, values[idx])))
            if frac > 1e-12:
                routing[(f, i, j)] = frac
        for f in self.functions:
            for i in self.community:
                if self.lambda_rps.get((f, i), 0.0) > 0:
                    served[(f, i)] = sum(
                        routing.get((f, i, j), 0.0) for j in self.host_nodes
                    )
        return PlacementSolution(
            resource_kind=self.resource_kind,
            deployed=deployed,
            routing=routing,
            served_fraction=served if self.resource_kind == RESOURCE_GPU else {},
            net_delay_objective=o_best,
            achieved_delay=self.evaluate_delay(values),
        )


def _planning_usage(
    snapshot: CommunitySnapshot, kind: str, fn: FunctionSpec, node: str, config: CommunityControllerConfig
) -> float | None:
    raw = snapshot.usage.get(kind, fn.name, node)
    if raw is None:
        return None
    util = (
        config.gpu_planning_utilization if kind == RESOURCE_GPU else config.cpu_planning_utilization
    )
    return raw / util


def build_delay_min_model(
    snapshot: CommunitySnapshot,
    resource_kind: str,
    config: CommunityControllerConfig | None = None,
    objective: str = "delay",
    keep_idle_functions: bool = True,
) -> PlacementModel:
    """Build the step-1 model for one resource kind.

    Variables are routing fractions ``x[f,i,j]`` in [0, 1] and placement
    binaries ``c[f,j]``. The per-function delay limit is enforced
    structurally: no ``x`` variable exists for pairs whose forwarding delay
    exceeds it (or hosts whose memory cannot fit the function at all).
    Routing rows cover every (function, ingress) pair with positive load:
    equalities for the CPU pass, ``<= 1`` for the GPU pass. Functions with
    no load keep one CPU instance via a covering row, steered toward the
    node with the most memory (``keep_idle_functions``).

    ``objective`` is ``"delay"`` (workload-weighted forwarding delay) or
    ``"served"`` (maximize routed load; used as the first half of the GPU
    pass's lexicographic solve).
    """
    config = config or CommunityControllerConfig()
    community = tuple(sorted(snapshot.community))
    if resource_kind == RESOURCE_GPU:
        host_nodes = tuple(j for j in community if snapshot.nodes[j].has_gpu)
        functions = [
            f for f in sorted(snapshot.functions, key=lambda f: f.name)
            if f.gpu_capable and snapshot.workload.total(f.name) > 0
        ]
    else:
        host_nodes = community
        functions = sorted(snapshot.functions, key=lambda f: f.name)

    model = MilpModel(name=f"{resource_kind.lower()}_delay_min")
    pm = PlacementModel(
        milp=model,
        resource_kind=resource_kind,
        community=community,
        host_nodes=host_nodes,
        functions=tuple(f.name for f in functions),
        x_index={},
        c_index={},
        lambda_rps={},
        usage_core_s={},
        memory_mb={},
        max_net_delay_ms={},
        node_memory_mb={},
        node_capacity_cores={},
        delay_ms={},
    )
    for j in host_nodes:
        node = snapshot.nodes[j]
        if resource_kind == RESOURCE_GPU:
            pm.node_memory_mb[j] = node.gpu_memory
            pm.node_capacity_cores[j] = node.gpu_capacity / 1000.0
        else:
            pm.node_memory_mb[j] = node.cpu_memory
            pm.node_capacity_cores[j] = node.cpu_capacity / 1000.0
    for i in community:
        for j in host_nodes:
            pm.delay_ms[(i, j)] = snapshot.delays.get(i, j)

    for fn in functions:
        pm.memory_mb[fn.name] = fn.memory_for(resource_kind)
        pm.max_net_delay_ms[fn.name] = fn.max_net_delay_ms
        for i in community:
            lam = snapshot.workload.rate(fn.name, i)
            if lam > 0:
                pm.lambda_rps[(fn.name, i)] = lam

    # Placement binaries, only where the function fits the host's memory.
    for fn in functions:
        for j in host_nodes:
            if fn.memory_for(resource_kind) <= pm.node_memory_mb[j]:
                pm.c_index[(fn.name, j)] = model.add_variable(
                    f"c[{fn.name},{j}]", 0, 1, milp.BINARY
                )

    # Routing fractions; the delay limit prunes pairs structurally.
    unreachable: list[str] = []
    for fn in functions:
        for i in community:
            lam = snapshot.workload.rate(fn.name, i)
            if lam <= 0:
                continue
            usable = []
            for j in host_nodes:
                if (fn.name, j) not in pm.c_index:
                    continue
                if pm.delay_ms[(i, j)] > fn.max_net_delay_ms:
                    continue
                u = _planning_usage(snapshot, resource_kind, fn, j, config)
                if u is None:
                    raise ValueError(
                        f"no usage value for ({fn.name}, {j}) in the {resource_kind} pass"
                    )
                pm.usage_core_s[(fn.name, j)] = u
                usable.append(j)
            if not usable and resource_kind == RESOURCE_CPU:
                unreachable.append(f"({fn.name}, {i})")
            for j in usable:
                pm.x_index[(fn.name, i, j)] = model.add_variable(
                    f"x[{fn.name},{i},{j}]", 0, 1
                )
    if unreachable:
        raise PlacementInfeasibleError(
            resource_kind, 1, "reachability",
            f"no host within delay/memory limits for {', '.join(unreachable)}",
        )

    # Requests only route to nodes that run an instance.
    for (f, i, j), x_idx in sorted(pm.x_index.items(), key=lambda kv: kv[1]):
        model.add_constraint(
            {x_idx: 1.0, pm.c_index[(f, j)]: -1.0}, milp.LE, 0.0, f"link[{f},{i},{j}]"
        )

    # Node memory.
    for j in host_nodes:
        coeffs = {
            idx: pm.memory_mb[f]
            for (f, jj), idx in pm.c_index.items()
            if jj == j
        }
        if coeffs:
            model.add_constraint(coeffs, milp.LE, pm.node_memory_mb[j], f"mem[{j}]")

    # Node core capacity against routed load.
    for j in host_nodes:
        coeffs: dict[int, float] = {}
        for (f, i, jj), idx in pm.x_index.items():
            if jj != j:
                continue
            coeffs[idx] = pm.lambda_rps[(f, i)] * pm.usage_core_s[(f, j)]
        if coeffs:
            model.add_constraint(coeffs, milp.LE, pm.node_capacity_cores[j], f"cap[{j}]")

    # Routing coverage for loaded ingress nodes.
    for fn in functions:
        for i in community:
            if snapshot.workload.rate(fn.name, i) <= 0:
                continue
            coeffs = {
                idx: 1.0
                for (f, ii, j), idx in pm.x_index.items()
                if f == fn.name and ii == i
            }
            if not coeffs:
                continue  # GPU pass: ingress with no reachable GPU host serves nothing
            sense = milp.LE if resource_kind == RESOURCE_GPU else milp.EQ
            model.add_constraint(coeffs, sense, 1.0, f"route[{fn.name},{i}]")

    # Idle functions keep one CPU instance when possible, preferring the node
    # with the most memory.
    nudge: dict[int, float] = {}
    if resource_kind == RESOURCE_CPU and keep_idle_functions:
        ranked = sorted(
            host_nodes, key=lambda j: (-snapshot.nodes[j].cpu_memory, j)
        )
        rank = {j: pos for pos, j in enumerate(ranked)}
        kept = []
        for fn in functions:
            if snapshot.workload.total(fn.name) > 0:
                continue
            coeffs = {
                idx: 1.0 for (f, j), idx in pm.c_index.items() if f == fn.name
            }
            if not coeffs:
                continue  # nowhere fits this function; leave it unplaced
            model.add_constraint(coeffs, milp.GE, 1.0, f"keep[{fn.name}]")
            kept.append(fn.name)
            for (f, j), idx in pm.c_index.items():
                if f == fn.name:
                    nudge[idx] = _IDLE_NUDGE * (1 + rank[j])
        pm.keep_alive_functions = tuple(kept)

    if objective == "delay":
        coeffs = pm.delay_expression()
        for idx, val in nudge.items():
            coeffs[idx] = coeffs.get(idx, 0.0) + val
        model.set_objective(coeffs)
    elif objective == "served":
        coeffs = {idx: -val for idx, val in pm.served_expression().items()}
        for idx, val in nudge.items():
            coeffs[idx] = coeffs.get(idx, 0.0) + val
        model.set_objective(coeffs)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return pm


def build_disruption_min_model(
    snapshot: CommunitySnapshot,
    resource_kind: str,
    o_best: float,
    previous_deployed: dict[tuple[str, str], bool],
    config: CommunityControllerConfig | None = None,
    served_floor: float | None = None,
    keep_idle_functions: bool = True,
) -> PlacementModel:
    """Build the step-2 model: step-1 constraints plus the delay band and
    churn accounting, minimizing migrations.

    Deletions and creations are linear in the placement binaries because the
    previous placement is data. ``MG_f = min(CR_f, DL_f)`` is linearized with
    one selector binary per function, and the fractional discriminators
    ``1/(DL_f + 2) - 1/(CR_f + 2)`` are encoded exactly with one-hot value
    selectors, so the objective matches the arithmetic formula at every
    integral point.
    """
    config = config or CommunityControllerConfig()
    pm = build_delay_min_model(
        snapshot, resource_kind, config, objective="delay",
        keep_idle_functions=keep_idle_functions,
    )
    model = pm.milp
    model.name = f"{resource_kind.lower()}_disruption_min"
    pm.add_delay_band(o_best, config.epsilon)
    if served_floor is not None:
        pm.add_served_floor(served_floor)

    objective: dict[int, float] = {}
    grid_nodes = set(pm.host_nodes)
    for f in pm.functions:
        prev_on_grid = sorted(
            j for (pf, j), on in previous_deployed.items()
            if pf == f and on and j in grid_nodes and (f, j) in pm.c_index
        )
        # Instances deployed outside the current grid (node lost its
        # eligibility) are forced deletions and enter as a constant.
        dl_const = sum(
            1
            for (pf, j), on in previous_deployed.items()
            if pf == f and on and not (j in grid_nodes and (f, j) in pm.c_index)
        )
        new_candidates = sorted(
            j for (pf, j) in pm.c_index if pf == f and j not in prev_on_grid
        )
        dl_max = dl_const + len(prev_on_grid)
        cr_max = len(new_candidates)
        big = max(dl_max, cr_max, 1)

        # DL_f = dl_const + sum(1 - c) over previously used hosts;
        # CR_f = sum(c) over newly used hosts.
        dl_expr = {pm.c_index[(f, j)]: -1.0 for j in prev_on_grid}
        dl_offset = dl_const + len(prev_on_grid)
        cr_expr = {pm.c_index[(f, j)]: 1.0 for j in new_candidates}

        mg = model.add_variable(f"mg[{f}]", 0, max(dl_max, cr_max), milp.CONTINUOUS)
        z = model.add_variable(f"z[{f}]", 0, 1, milp.BINARY)
        # mg >= CR - big*z  and  mg >= DL - big*(1-z); mg >= 0 by bounds.
        coeffs = {mg: 1.0, z: big}
        for idx, v in cr_expr.items():
            coeffs[idx] = coeffs.get(idx, 0.0) - v
        model.add_constraint(coeffs, milp.GE, 0.0, f"mg_cr[{f}]")
        coeffs = {mg: 1.0, z: -big}
        for idx, v in dl_expr.items():
            coeffs[idx] = coeffs.get(idx, 0.0) - v
        model.add_constraint(coeffs, milp.GE, dl_offset - big, f"mg_dl[{f}]")
        objective[mg] = 1.0

        # One-hot selectors pinning the integer values of DL and CR.
        d_vars = {
            k: model.add_variable(f"dl_is[{f},{k}]", 0, 1, milp.BINARY)
            for k in range(dl_const, dl_max + 1)
        }
        model.add_constraint({idx: 1.0 for idx in d_vars.values()}, milp.EQ, 1.0, f"dl_onehot[{f}]")
        coeffs = {idx: float(k) for k, idx in d_vars.items()}
        for idx, v in dl_expr.items():
            coeffs[idx] = coeffs.get(idx, 0.0) - v
        model.add_constraint(coeffs, milp.EQ, dl_offset, f"dl_link[{f}]")
        for k, idx in d_vars.items():
            objective[idx] = objective.get(idx, 0.0) + 1.0 / (k + 2)

        r_vars = {
            k: model.add_variable(f"cr_is[{f},{k}]", 0, 1, milp.BINARY)
            for k in range(0, cr_max + 1)
        }
        model.add_constraint({idx: 1.0 for idx in r_vars.values()}, milp.EQ, 1.0, f"cr_onehot[{f}]")
        coeffs = {idx: float(k) for k, idx in r_vars.items()}
        for idx, v in cr_expr.items():
            coeffs[idx] = coeffs.get(idx, 0.0) - v
        model.add_constraint(coeffs, milp.EQ, 0.0, f"cr_link[{f}]")
        for k, idx in r_vars.items():
            objective[idx] = objective.get(idx, 0.0) - 1.0 / (k + 2)

    model.set_objective(objective)
    return pm


def _classify_infeasibility(
    pm: PlacementModel, config: SolverConfig
) -> str:
    """Probe which constraint family blocks the model."""
    total_capacity = sum(pm.node_capacity_cores.values())
    demand = 0.0
    for (f, i), lam in pm.lambda_rps.items():
        usages = [
            pm.usage_core_s[(f, j)]
            for (ff, ii, j) in pm.x_index
            if ff == f and ii == i
        ]
        if usages:
            demand += lam * min(usages)
    if demand > total_capacity:
        return "capacity"
    relaxed = MilpModel(name=pm.milp.name + "_probe")
    relaxed.variables = [replace(v) for v in pm.milp.variables]
    relaxed.constraints = [c for c in pm.milp.constraints if not c.name.startswith("cap[")]
    relaxed.objective = {}
    probe = milp.branch_and_bound(relaxed, config)
    if probe.status == milp.STATUS_INFEASIBLE:
        return "memory"
    return "capacity"


def _solve_or_raise(
    pm: PlacementModel, step: int, solver_config: SolverConfig
) -> MilpSolution:
    solution = milp.branch_and_bound(pm.milp, solver_config)
    if solution.status == milp.STATUS_INFEASIBLE:
        raise PlacementInfeasibleError(
            pm.resource_kind, step, _classify_infeasibility(pm, solver_config),
            f"model {pm.milp.name} has no feasible placement",
        )
    if solution.status != milp.STATUS_OPTIMAL:
        raise PlacementInfeasibleError(
            pm.resource_kind, step, "solver",
            f"model {pm.milp.name} ended with status {solution.status}",
        )
    return solution


@dataclass(frozen=True)
class TwoStepResult:
    gpu: PlacementSolution
    cpu: PlacementSolution
    gpu_plan: DeploymentPlan
    cpu_plan: DeploymentPlan
    residual: WorkloadSnapshot
    reports: dict[str, dict]


def _solve_pass(
    snapshot: CommunitySnapshot,
    resource_kind: str,
    previous: dict[tuple[str, str], bool],
    config: CommunityControllerConfig,
    solver_config: SolverConfig,
) -> tuple[PlacementSolution, PlacementModel]:
    keep_idle = True
    if resource_kind == RESOURCE_GPU:
        # Lexicographic: maximize served load first, then minimize delay
        # among the maximizers, then minimize disruption inside the band.
        pm_served = build_delay_min_model(snapshot, resource_kind, config, objective="served")
        if not pm_served.x_index:
            return PlacementSolution.empty(resource_kind), pm_served
        sol_served = _solve_or_raise(pm_served, 1, solver_config)
        served_star = pm_served.evaluate_served(sol_served.values)
        served_floor = served_star - solver_config.feasibility_tol * max(1.0, served_star)

        pm_delay = build_delay_min_model(snapshot, resource_kind, config, objective="delay")
        pm_delay.add_served_floor(served_floor)
        sol_delay = _solve_or_raise(pm_delay, 1, solver_config)
        o_best = pm_delay.evaluate_delay(sol_delay.values)

        pm2 = build_disruption_min_model(
            snapshot, resource_kind, o_best, previous, config, served_floor=served_floor
        )
        sol2 = _solve_or_raise(pm2, 2, solver_config)
        return pm2.extract_solution(sol2, o_best), pm2

    try:
        pm1 = build_delay_min_model(snapshot, resource_kind, config, keep_idle_functions=True)
        sol1 = _solve_or_raise(pm1, 1, solver_config)
    except PlacementInfeasibleError:
        # Keeping idle functions alive is best-effort: retry without the
        # covering rows before reporting real infeasibility.
        keep_idle = False
        pm1 = build_delay_min_model(snapshot, resource_kind, config, keep_idle_functions=False)
        sol1 = _solve_or_raise(pm1, 1, solver_config)
    o_best = pm1.evaluate_delay(sol1.values)
    pm2 = build_disruption_min_model(
        snapshot, resource_kind, o_best, previous, config,
        keep_idle_functions=keep_idle,
    )
    sol2 = _solve_or_raise(pm2, 2, solver_config)
    return pm2.extract_solution(sol2, o_best), pm2


def solve_two_step(
    snapshot: CommunitySnapshot,
    previous_gpu: dict[tuple[str, str], bool] | None = None,
    previous_cpu: dict[tuple[str, str], bool] | None = None,
    config: CommunityControllerConfig | None = None,
    solver_config: SolverConfig | None = None,
) -> TwoStepResult:
    """Run the full control round: GPU pass, residual workload, CPU pass.

    The GPU pass is solved first and its served fractions shrink the
    workload the CPU pass must cover. Both passes end on their step-2
    (disruption-minimal) solution; deployment plans are diffs against the
    previous placements. Raises ``PlacementInfeasibleError`` with the
    offending pass identified.
    """
    config = config or CommunityControllerConfig()
    solver_config = solver_config or SolverConfig()
    previous_gpu = previous_gpu or {}
    previous_cpu = previous_cpu or {}

    gpu_sol, gpu_pm = _solve_pass(snapshot, RESOURCE_GPU, previous_gpu, config, solver_config)
    residual = residual_workload(snapshot.workload, gpu_sol)
    cpu_snapshot = replace(snapshot, workload=residual)
    cpu_sol, cpu_pm = _solve_pass(cpu_snapshot, RESOURCE_CPU, previous_cpu, config, solver_config)

    return TwoStepResult(
        gpu=gpu_sol,
        cpu=cpu_sol,
        gpu_plan=diff_placements(previous_gpu, gpu_sol.deployed, RESOURCE_GPU),
        cpu_plan=diff_placements(previous_cpu, cpu_sol.deployed, RESOURCE_CPU),
        residual=residual,
        reports={
            RESOURCE_GPU: solution_report(gpu_pm, gpu_sol),
            RESOURCE_CPU: solution_report(cpu_pm, cpu_sol),
        },
    )


def residual_workload(
    workload: WorkloadSnapshot, gpu_solution: PlacementSolution
) -> WorkloadSnapshot:
    """Workload left for the CPU pass after the GPU pass served its share."""
    rates: dict[tuple[str, str], float] = {}
    for (f, i), lam in workload.rates.items():
        served = gpu_solution.served_fraction.get((f, i), 0.0)
        rates[(f, i)] = lam * (1.0 - min(1.0, served))
    return WorkloadSnapshot(rates)


def diff_placements(
    old: dict[tuple[str, str], bool],
    new: dict[tuple[str, str], bool],
    resource_kind: str = RESOURCE_CPU,
) -> DeploymentPlan:
    """Per-function creations, deletions, and migrations between placements."""
    functions = sorted({f for (f, _) in old} | {f for (f, _) in new})
    creations: dict[str, int] = {}
    deletions: dict[str, int] = {}
    migrations: dict[str, int] = {}
    node_creations: dict[str, tuple[str, ...]] = {}
    node_deletions: dict[str, tuple[str, ...]] = {}
    for f in functions:
        old_nodes = {j for (ff, j), on in old.items() if ff == f and on}
        new_nodes = {j for (ff, j), on in new.items() if ff == f and on}
        created = tuple(sorted(new_nodes - old_nodes))
        deleted = tuple(sorted(old_nodes - new_nodes))
        creations[f] = len(created)
        deletions[f] = len(deleted)
        migrations[f] = min(len(created), len(deleted))
        node_creations[f] = created
        node_deletions[f] = deleted
    return DeploymentPlan(
        resource_kind=resource_kind,
        creations=creations,
        deletions=deletions,
        migrations=migrations,
        node_creations=node_creations,
        node_deletions=node_deletions,
    )


# ---------------------------------------------------------------------------
# Reporting and independent re-evaluation
# ---------------------------------------------------------------------------


def solution_report(pm: PlacementModel, sol: PlacementSolution) -> dict:
    """Plain-data view of a solved pass: inputs plus solution.

    The same structure is emitted to the CLI's JSON output and logged by the
    simulator on every activation, so the constraints can be re-checked
    offline by :func:`verify_report`.
    """
    routing: dict[str, dict[str, dict[str, float]]] = {}
    for (f, i, j), frac in sorted(sol.routing.items()):
        routing.setdefault(f, {}).setdefault(i, {})[j] = frac
    served: dict[str, dict[str, float]] = {}
    for (f, i), s in sorted(sol.served_fraction.items()):
        served.setdefault(f, {})[i] = s
    lam: dict[str, dict[str, float]] = {}
    for (f, i), r in sorted(pm.lambda_rps.items()):
        lam.setdefault(f, {})[i] = r
    usage: dict[str, dict[str, float]] = {}
    for (f, j), u in sorted(pm.usage_core_s.items()):
        usage.setdefault(f, {})[j] = u
    return {
        "resource_kind": pm.resource_kind,
        "community": list(pm.community),
        "host_nodes": list(pm.host_nodes),
        "functions": list(pm.functions),
        "lambda_rps": lam,
        "usage_core_s": usage,
        "memory_mb": dict(sorted(pm.memory_mb.items())),
        "max_net_delay_ms": dict(sorted(pm.max_net_delay_ms.items())),
        "node_memory_mb": dict(sorted(pm.node_memory_mb.items())),
        "node_capacity_cores": dict(sorted(pm.node_capacity_cores.items())),
        "delays_ms": {
            i: {j: pm.delay_ms[(i, j)] for j in pm.host_nodes} for i in pm.community
        },
        "deployed": {f: list(sol.deployed_nodes(f)) for f in pm.functions},
        "routing": routing,
        "served_fraction": served,
        "net_delay_objective": sol.net_delay_objective,
        "achieved_delay": sol.achieved_delay,
    }


def verify_report(report: dict, tol: float = 1e-6) -> list[str]:
    """Independently re-check a pass report against its own inputs.

    Verifies the delay limit (exactly), instance memory, node core capacity,
    routing coverage, and the routing/placement link. Returns violation
    messages; an empty list means the placement is consistent.
    """
    problems: list[str] = []
    kind = report["resource_kind"]
    deployed = {f: set(nodes) for f, nodes in report["deployed"].items()}
    routing = report["routing"]
    lam = report["lambda_rps"]

    for f, by_ingress in routing.items():
        for i, row in by_ingress.items():
            for j, frac in row.items():
                if frac <= 0:
                    continue
                if j not in deployed.get(f, set()):
                    problems.append(f"routing {f}:{i}->{j} targets no instance")
                if report["delays_ms"][i][j] > report["max_net_delay_ms"][f]:
                    problems.append(
                        f"routing {f}:{i}->{j} exceeds the delay limit "
                        f"({report['delays_ms'][i][j]} > {report['max_net_delay_ms'][f]})"
                    )

    for j in report["host_nodes"]:
        used = sum(
            report["memory_mb"][f] for f, nodes in report["deployed"].items() if j in nodes
        )
        if used > report["node_memory_mb"][j] + tol:
            problems.append(f"node {j}: memory {used} > {report['node_memory_mb'][j]}")

    for j in report["host_nodes"]:
        load = 0.0
        for f, by_ingress in routing.items():
            for i, row in by_ingress.items():
                frac = row.get(j, 0.0)
                if frac > 0:
                    load += frac * lam[f][i] * report["usage_core_s"][f][j]
        if load > report["node_capacity_cores"][j] + tol:
            problems.append(
                f"node {j}: planned load {load} cores > {report['node_capacity_cores'][j]}"
            )

    for f, by_ingress in lam.items():
        for i, rate in by_ingress.items():
            if rate <= 0:
                continue
            total = sum(routing.get(f, {}).get(i, {}).values())
            if kind == RESOURCE_CPU:
                if abs(total - 1.0) > tol:
                    problems.append(f"routing row {f}:{i} sums to {total} != 1")
            else:
                if total > 1.0 + tol:
                    problems.append(f"routing row {f}:{i} sums to {total} > 1")
    return problems
