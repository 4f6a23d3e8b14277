"""Shared fixtures and independent oracles used across the test suite.

The oracles deliberately avoid the production code paths they check:
LP optima come from vertex enumeration, MILP optima from exhaustive
assignment enumeration, and placement objectives from direct arithmetic
over explicitly enumerated placements.
"""

from __future__ import annotations

import itertools
import math
import random

import numpy as np
import pytest

from edgefaas import milp
from edgefaas.placement import (
    CommunityControllerConfig,
    CommunitySnapshot,
    FunctionSpec,
    UsageProfile,
    WorkloadSnapshot,
    build_delay_min_model,
)
from edgefaas.topology import DelayMatrix, NodeDescriptor


def vertex_enum_lp(c, rows, lb, ub):
    """Minimum of c.x over the polytope, by enumerating basic solutions.

    ``rows`` are (coeffs dict, sense, rhs). Returns the optimal value or
    None if infeasible. Exponential; only for tiny models.
    """
    n = len(lb)
    cons: list[tuple[np.ndarray, float]] = []  # a.x <= b
    for coeffs, sense, rhs in rows:
        a = np.zeros(n)
        for i, v in coeffs.items():
            a[i] = v
        if sense in (milp.LE, milp.EQ):
            cons.append((a, rhs))
        if sense in (milp.GE, milp.EQ):
            cons.append((-a, -rhs))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cons.append((-e, -lb[j]))
        if math.isfinite(ub[j]):
            cons.append((e.copy(), ub[j]))
    best = None
    for combo in itertools.combinations(range(len(cons)), n):
        a_mat = np.array([cons[k][0] for k in combo])
        b_vec = np.array([cons[k][1] for k in combo])
        if abs(np.linalg.det(a_mat)) < 1e-9:
            continue
        x = np.linalg.solve(a_mat, b_vec)
        if all(a @ x <= b + 1e-7 for a, b in cons):
            val = float(np.array([0.0] * n) @ x) if c is None else float(c @ x)
            if best is None or val < best:
                best = val
    return best


def solve_with_fixed_binaries(model: milp.MilpModel, assignment: dict[int, int]):
    """LP value of the model with the given binaries pinned, or None."""
    pinned = milp.MilpModel(name=model.name + "_pinned")
    for idx, var in enumerate(model.variables):
        if idx in assignment:
            pinned.add_variable(var.name, assignment[idx], assignment[idx], milp.BINARY)
        else:
            pinned.add_variable(var.name, var.lb, var.ub, var.kind)
    for con in model.constraints:
        pinned.add_constraint(dict(con.coeffs), con.sense, con.rhs, con.name)
    pinned.set_objective(dict(model.objective), model.objective_offset)
    solution = milp.branch_and_bound(pinned)
    if solution.status != milp.STATUS_OPTIMAL:
        return None
    return solution


def make_community(
    node_specs: list[tuple[str, float, float, float, float]],
    delay_rows: list[list[float]],
    functions: list[FunctionSpec],
    rates: dict[tuple[str, str], float],
    cpu_usage: dict[tuple[str, str], float],
    gpu_usage: dict[tuple[str, str], float] | None = None,
) -> CommunitySnapshot:
    nodes = {}
    ids = []
    for nid, cap, mem, gcap, gmem in node_specs:
        nodes[nid] = NodeDescriptor(nid, cap, mem, gcap, gmem)
        ids.append(nid)
    return CommunitySnapshot(
        community=tuple(ids),
        nodes=nodes,
        delays=DelayMatrix.from_rows(ids, delay_rows),
        functions=functions,
        workload=WorkloadSnapshot(rates),
        usage=UsageProfile(cpu=cpu_usage, gpu=gpu_usage or {}),
    )


def random_placement_instance(rng: random.Random, allow_gpu: bool = False):
    """A small random community snapshot for oracle cross-checks.

    At most 3 nodes and 2 functions, so the step-1 model has at most 6
    placement binaries and the exhaustive oracle stays fast.
    """
    n_nodes = rng.randint(2, 3)
    n_fns = rng.randint(1, 2)
    ids = [f"n{k}" for k in range(n_nodes)]
    node_specs = []
    gpu_node = rng.randrange(n_nodes) if allow_gpu else -1
    for k, nid in enumerate(ids):
        cap = rng.choice([2000, 3000, 4000])
        mem = rng.choice([300, 500, 800])
        if k == gpu_node:
            node_specs.append((nid, cap, mem, rng.choice([1000, 2000]), 4000))
        else:
            node_specs.append((nid, cap, mem, 0.0, 0.0))
    rows = [[0.0] * n_nodes for _ in range(n_nodes)]
    for a in range(n_nodes):
        for b in range(a + 1, n_nodes):
            d = rng.choice([5.0, 10.0, 25.0, 45.0])
            rows[a][b] = d
            rows[b][a] = d
    functions = []
    rates = {}
    cpu_usage = {}
    gpu_usage = {}
    for f in range(n_fns):
        name = f"f{f}"
        functions.append(
            FunctionSpec(
                name=name,
                cpu_memory_mb=rng.choice([100, 200, 400]),
                max_net_delay_ms=rng.choice([15.0, 30.0, 60.0]),
                required_rt_ms=200.0,
                gpu_memory_mb=1000.0 if allow_gpu and rng.random() < 0.8 else None,
            )
        )
        for nid in ids:
            if rng.random() < 0.7:
                rates[(name, nid)] = rng.choice([2.0, 5.0, 10.0])
            cpu_usage[(name, nid)] = rng.choice([0.03, 0.06, 0.1])
            gpu_usage[(name, nid)] = rng.choice([0.04, 0.08])
    snapshot = make_community(node_specs, rows, functions, rates, cpu_usage, gpu_usage)
    return snapshot


def placement_band_oracle(
    snapshot: CommunitySnapshot,
    resource_kind: str,
    config: CommunityControllerConfig,
    o_best: float,
    previous: dict[tuple[str, str], bool],
    served_floor: float | None = None,
):
    """Exhaustive reference for the disruption step.

    Enumerates every placement (assignment of the step-1 binaries), keeps
    those whose minimum routable delay stays within the epsilon band (and
    meets the served floor, for the GPU pass), and evaluates the churn
    objective arithmetically. Returns (best objective, list of per-function
    migration dicts achieving it), or (None, []) when the band is empty.
    """
    pm = build_delay_min_model(snapshot, resource_kind, config)
    c_keys = sorted(pm.c_index)
    functions = pm.functions
    band = o_best * (1 + config.epsilon) + 1e-9

    best_obj = None
    best_mgs: list[dict[str, int]] = []
    for bits in itertools.product((0, 1), repeat=len(c_keys)):
        assignment = {pm.c_index[key]: bit for key, bit in zip(c_keys, bits)}
        solution = solve_with_fixed_binaries(pm.milp, assignment)
        if solution is None:
            continue
        delay = pm.evaluate_delay(solution.values)
        if delay > band:
            continue
        if served_floor is not None and pm.evaluate_served(solution.values) < served_floor - 1e-9:
            continue
        objective = 0.0
        mgs: dict[str, int] = {}
        for fname in functions:
            old_nodes = {j for (pf, j), on in previous.items() if pf == fname and on}
            new_nodes = {key[1] for key, bit in zip(c_keys, bits) if key[0] == fname and bit}
            cr = len(new_nodes - old_nodes)
            dl = len(old_nodes - new_nodes)
            mg = min(cr, dl)
            mgs[fname] = mg
            objective += mg + 1.0 / (dl + 2) - 1.0 / (cr + 2)
        if best_obj is None or objective < best_obj - 1e-9:
            best_obj = objective
            best_mgs = [mgs]
        elif abs(objective - best_obj) <= 1e-9:
            best_mgs.append(mgs)
    return best_obj, best_mgs


@pytest.fixture
def rng():
    return random.Random(20240817)
