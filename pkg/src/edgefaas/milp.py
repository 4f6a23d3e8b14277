"""Small dense mixed-integer linear programming toolkit.

Built for community-scale placement models: a two-phase primal simplex with
Bland's anti-cycling rule for the LP relaxations, depth-first branch and
bound over binary variables, and an exhaustive enumeration oracle used by
the test suite. Everything is deterministic: identical model and config
produce identical solutions, bit for bit.

Scope is intentionally narrow: binary integrality only, minimization only,
no cutting planes, no presolve, no warm starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CONTINUOUS",
    "BINARY",
    "LE",
    "EQ",
    "GE",
    "STATUS_OPTIMAL",
    "STATUS_INFEASIBLE",
    "STATUS_UNBOUNDED",
    "STATUS_NODE_LIMIT",
    "Variable",
    "Constraint",
    "MilpModel",
    "SolverConfig",
    "MilpSolution",
    "simplex_solve",
    "branch_and_bound",
    "brute_force_solve",
    "constraint_violations",
    "write_lp",
]

CONTINUOUS = "continuous"
BINARY = "binary"

LE = "<="
EQ = "="
GE = ">="

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_NODE_LIMIT = "node_limit"

_PIVOT_TOL = 1e-9
_COST_TOL = 1e-9


@dataclass
class Variable:
    name: str
    lb: float
    ub: float
    kind: str = CONTINUOUS


@dataclass
class Constraint:
    coeffs: dict[int, float]  # variable index -> coefficient (sparse)
    sense: str  # LE | EQ | GE
    rhs: float
    name: str = ""


@dataclass
class MilpModel:
    """A minimization model over bounded continuous and binary variables."""

    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    objective_offset: float = 0.0
    name: str = "model"

    def add_variable(
        self, name: str, lb: float, ub: float, kind: str = CONTINUOUS
    ) -> int:
        if kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown variable kind {kind!r}")
        if math.isnan(lb) or math.isnan(ub) or lb == math.inf or ub == -math.inf:
            raise ValueError(f"variable {name}: bad bounds [{lb}, {ub}]")
        if lb == -math.inf:
            raise ValueError(f"variable {name}: lower bound must be finite")
        if lb > ub:
            raise ValueError(f"variable {name}: lb {lb} > ub {ub}")
        if kind == BINARY and not (0 <= lb and ub <= 1):
            raise ValueError(f"binary variable {name} must have bounds within [0, 1]")
        self.variables.append(Variable(name, float(lb), float(ub), kind))
        return len(self.variables) - 1

    def add_constraint(
        self, coeffs: dict[int, float], sense: str, rhs: float, name: str = ""
    ) -> None:
        if sense not in (LE, EQ, GE):
            raise ValueError(f"unknown constraint sense {sense!r}")
        for idx, val in coeffs.items():
            if not 0 <= idx < len(self.variables):
                raise ValueError(f"constraint {name!r}: unknown variable index {idx}")
            if not math.isfinite(val):
                raise ValueError(f"constraint {name!r}: non-finite coefficient")
        if not math.isfinite(rhs):
            raise ValueError(f"constraint {name!r}: non-finite rhs")
        self.constraints.append(
            Constraint({k: float(v) for k, v in coeffs.items()}, sense, float(rhs), name)
        )

    def set_objective(self, coeffs: dict[int, float], offset: float = 0.0) -> None:
        for idx, val in coeffs.items():
            if not 0 <= idx < len(self.variables):
                raise ValueError(f"objective: unknown variable index {idx}")
            if not math.isfinite(val):
                raise ValueError("objective: non-finite coefficient")
        self.objective = {k: float(v) for k, v in coeffs.items()}
        self.objective_offset = float(offset)

    @property
    def binary_indices(self) -> list[int]:
        return [i for i, v in enumerate(self.variables) if v.kind == BINARY]

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(len(self.variables))
        for idx, val in self.objective.items():
            c[idx] = val
        return c


@dataclass(frozen=True)
class SolverConfig:
    feasibility_tol: float = 1e-7
    integrality_tol: float = 1e-6
    relative_gap: float = 1e-6
    max_bb_nodes: int = 1_000_000

    def __post_init__(self) -> None:
        if min(self.feasibility_tol, self.integrality_tol, self.relative_gap) <= 0:
            raise ValueError("all tolerances must be > 0")


@dataclass
class MilpSolution:
    status: str
    values: np.ndarray | None
    objective_value: float | None
    nodes_explored: int = 0

    @property
    def is_optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL


# ---------------------------------------------------------------------------
# Simplex core
# ---------------------------------------------------------------------------


def _pivot(tableau: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])


def _run_simplex(
    tableau: np.ndarray, basis: list[int], costs: np.ndarray
) -> str:
    """Minimize costs over the tableau in place using Bland's rule.

    Returns "optimal" or "unbounded". Bland's rule (smallest-index entering
    variable, smallest-basis-index tie break on the ratio test) guarantees
    termination without cycling.
    """
    max_iters = 20000 + 200 * tableau.shape[1]
    for _ in range(max_iters):
        cb = costs[basis]
        reduced = costs - cb @ tableau[:, :-1]
        candidates = np.nonzero(reduced < -_COST_TOL)[0]
        if candidates.size == 0:
            return "optimal"
        enter = int(candidates[0])  # Bland: smallest variable index
        col = tableau[:, enter]
        rows = np.nonzero(col > _PIVOT_TOL)[0]
        if rows.size == 0:
            return "unbounded"
        ratios = tableau[rows, -1] / col[rows]
        best = ratios.min()
        tied = rows[np.nonzero(ratios <= best + _PIVOT_TOL * max(1.0, abs(best)))[0]]
        leave = int(min(tied, key=lambda r: basis[r]))
        _pivot(tableau, leave, enter)
        basis[leave] = enter
    raise RuntimeError("simplex iteration limit exceeded")


def _solve_lp(
    c: np.ndarray,
    rows: list[tuple[dict[int, float], str, float]],
    lb: np.ndarray,
    ub: np.ndarray,
    feasibility_tol: float,
) -> tuple[str, np.ndarray | None, float | None]:
    """Solve min c.x subject to the rows and bound arrays.

    Variables are shifted by their (finite) lower bounds; finite upper bounds
    become explicit rows. Two-phase dense simplex.
    """
    n = len(lb)
    if np.any(lb > ub):
        return STATUS_INFEASIBLE, None, None

    # Shift x = lb + y, y >= 0.
    work_rows: list[tuple[np.ndarray, str, float]] = []
    for coeffs, sense, rhs in rows:
        arr = np.zeros(n)
        shift = 0.0
        for idx, val in coeffs.items():
            arr[idx] = val
            shift += val * lb[idx]
        work_rows.append((arr, sense, rhs - shift))
    for j in range(n):
        span = ub[j] - lb[j]
        if math.isfinite(span):
            arr = np.zeros(n)
            arr[j] = 1.0
            work_rows.append((arr, LE, span))

    m = len(work_rows)
    if m == 0:
        # Only lower bounds act; any negative cost with an open top is unbounded.
        for j in range(n):
            if c[j] < -_COST_TOL and not math.isfinite(ub[j]):
                return STATUS_UNBOUNDED, None, None
        x = np.where(c < 0, ub, lb)
        return STATUS_OPTIMAL, x, float(c @ x)

    tableau = np.zeros((m, n + 2 * m + 1))
    basis = [-1] * m
    slack_cols: list[int] = []
    art_cols: list[int] = []
    next_col = n
    for r, (arr, sense, rhs) in enumerate(work_rows):
        if rhs < 0:
            arr = -arr
            rhs = -rhs
            sense = {LE: GE, GE: LE, EQ: EQ}[sense]
        tableau[r, :n] = arr
        tableau[r, -1] = rhs
        if sense == LE:
            tableau[r, next_col] = 1.0
            slack_cols.append(next_col)
            basis[r] = next_col
            next_col += 1
        elif sense == GE:
            tableau[r, next_col] = -1.0
            slack_cols.append(next_col)
            next_col += 1
            tableau[r, next_col] = 1.0
            art_cols.append(next_col)
            basis[r] = next_col
            next_col += 1
        else:
            tableau[r, next_col] = 1.0
            art_cols.append(next_col)
            basis[r] = next_col
            next_col += 1
    tableau = np.hstack([tableau[:, :next_col], tableau[:, -1:]])
    width = next_col

    # Phase 1: drive artificials to zero.
    if art_cols:
        art_set = set(art_cols)
        phase1 = np.zeros(width)
        for col in art_cols:
            phase1[col] = 1.0
        status = _run_simplex(tableau, basis, phase1)
        if status != "optimal":
            raise RuntimeError("phase-1 simplex cannot be unbounded")
        infeas = sum(tableau[r, -1] for r in range(len(basis)) if basis[r] in art_set)
        if infeas > feasibility_tol:
            return STATUS_INFEASIBLE, None, None
        # Pivot remaining artificials out of the basis (they sit at zero); a row
        # with no usable pivot is redundant and is dropped.
        keep_rows = []
        for r in range(len(basis)):
            if basis[r] in art_set:
                pivot_col = -1
                for j in range(width):
                    if j not in art_set and abs(tableau[r, j]) > _PIVOT_TOL:
                        pivot_col = j
                        break
                if pivot_col >= 0:
                    _pivot(tableau, r, pivot_col)
                    basis[r] = pivot_col
                    keep_rows.append(r)
            else:
                keep_rows.append(r)
        if len(keep_rows) < len(basis):
            tableau = tableau[keep_rows]
            basis = [basis[r] for r in keep_rows]
        # No artificial is basic now; block re-entry by clearing their columns.
        for col in art_cols:
            tableau[:, col] = 0.0

    phase2 = np.zeros(width)
    phase2[:n] = c
    if art_cols:
        for col in art_cols:
            phase2[col] = 1.0  # positive cost on an all-zero column: never enters
    status = _run_simplex(tableau, basis, phase2)
    if status == "unbounded":
        return STATUS_UNBOUNDED, None, None

    y = np.zeros(width)
    for r in range(len(basis)):
        y[basis[r]] = tableau[r, -1]
    x = y[:n] + lb
    return STATUS_OPTIMAL, x, float(c @ x)


def _model_rows(model: MilpModel) -> list[tuple[dict[int, float], str, float]]:
    return [(con.coeffs, con.sense, con.rhs) for con in model.constraints]


def _relaxed_solve(
    model: MilpModel,
    lb: np.ndarray,
    ub: np.ndarray,
    config: SolverConfig,
) -> tuple[str, np.ndarray | None, float | None]:
    c = model.objective_vector()
    status, x, obj = _solve_lp(c, _model_rows(model), lb, ub, config.feasibility_tol)
    if status == STATUS_OPTIMAL:
        obj = float(obj + model.objective_offset)
    return status, x, obj


def _bounds(model: MilpModel) -> tuple[np.ndarray, np.ndarray]:
    lb = np.array([v.lb for v in model.variables], dtype=float)
    ub = np.array([v.ub for v in model.variables], dtype=float)
    return lb, ub


def simplex_solve(model: MilpModel, config: SolverConfig | None = None) -> MilpSolution:
    """Solve a purely continuous model to a basic optimal solution.

    Raises ``ValueError`` if the model contains binary variables (relax or
    fix them first). Unbounded models get a distinct status: placement models
    are always bounded, so unboundedness signals a model-construction bug.
    """
    if model.binary_indices:
        raise ValueError("simplex_solve requires a model without binary variables")
    config = config or SolverConfig()
    lb, ub = _bounds(model)
    status, x, obj = _relaxed_solve(model, lb, ub, config)
    return MilpSolution(status, x, obj)


def branch_and_bound(model: MilpModel, config: SolverConfig | None = None) -> MilpSolution:
    """Depth-first branch and bound over the model's binary variables.

    Deterministic search: branch on the most fractional binary (ties toward
    the lowest index) and explore the 0-branch first. A node is pruned when
    its relaxation bound cannot improve the incumbent by more than
    ``relative_gap``; the returned optimum is therefore within that gap.
    Exceeding ``max_bb_nodes`` returns the incumbent with status
    ``node_limit``.
    """
    config = config or SolverConfig()
    binaries = model.binary_indices
    lb0, ub0 = _bounds(model)

    best_x: np.ndarray | None = None
    best_obj = math.inf
    nodes = 0
    hit_limit = False
    stack: list[tuple[np.ndarray, np.ndarray]] = [(lb0, ub0)]

    while stack:
        if nodes >= config.max_bb_nodes:
            hit_limit = True
            break
        lb, ub = stack.pop()
        nodes += 1
        status, x, obj = _relaxed_solve(model, lb, ub, config)
        if status == STATUS_UNBOUNDED:
            if nodes == 1:
                return MilpSolution(STATUS_UNBOUNDED, None, None, nodes)
            raise RuntimeError("child node unbounded while root was bounded")
        if status != STATUS_OPTIMAL:
            continue
        if best_x is not None and obj >= best_obj - config.relative_gap * max(
            1.0, abs(best_obj)
        ):
            continue
        frac = [min(x[b] - math.floor(x[b]), math.ceil(x[b]) - x[b]) for b in binaries]
        fractional = [
            (d, b) for d, b in zip(frac, binaries) if d > config.integrality_tol
        ]
        if not fractional:
            fixed_obj, fixed_x = _resolve_integral(model, lb, ub, x, binaries, config)
            if fixed_obj < best_obj - 1e-12:
                best_obj = fixed_obj
                best_x = fixed_x
            continue
        _, branch_var = max(fractional, key=lambda t: (t[0], -t[1]))
        lb_one = lb.copy()
        lb_one[branch_var] = 1.0
        ub_zero = ub.copy()
        ub_zero[branch_var] = 0.0
        stack.append((lb_one, ub))  # explored second
        stack.append((lb, ub_zero))  # 0-branch explored first

    if best_x is None:
        status = STATUS_NODE_LIMIT if hit_limit else STATUS_INFEASIBLE
        return MilpSolution(status, None, None, nodes)
    status = STATUS_NODE_LIMIT if hit_limit else STATUS_OPTIMAL
    return MilpSolution(status, best_x, best_obj, nodes)


def _resolve_integral(
    model: MilpModel,
    lb: np.ndarray,
    ub: np.ndarray,
    x: np.ndarray,
    binaries: list[int],
    config: SolverConfig,
) -> tuple[float, np.ndarray]:
    """Re-solve with binaries pinned to their rounded values for a clean point."""
    lb2 = lb.copy()
    ub2 = ub.copy()
    for b in binaries:
        v = round(x[b])
        lb2[b] = v
        ub2[b] = v
    status, x2, obj2 = _relaxed_solve(model, lb2, ub2, config)
    if status != STATUS_OPTIMAL:  # numerical edge: keep the relaxation point
        c = model.objective_vector()
        return float(c @ x + model.objective_offset), x
    return obj2, x2


def brute_force_solve(model: MilpModel, config: SolverConfig | None = None) -> MilpSolution:
    """Exhaustive oracle: enumerate every binary assignment, simplex the rest.

    Assignments are enumerated lexicographically over the binary variables in
    index order (all-zeros first), keeping the first strictly best solution,
    so the result is bit-for-bit deterministic. Refuses models with more than
    20 binary variables.
    """
    config = config or SolverConfig()
    binaries = model.binary_indices
    if len(binaries) > 20:
        raise ValueError(f"brute_force_solve refuses {len(binaries)} binaries (limit 20)")
    lb0, ub0 = _bounds(model)

    best_x: np.ndarray | None = None
    best_obj = math.inf
    for code in range(2 ** len(binaries)):
        lb = lb0.copy()
        ub = ub0.copy()
        feasible_bits = True
        for pos, b in enumerate(binaries):
            bit = (code >> (len(binaries) - 1 - pos)) & 1
            if bit < lb0[b] or bit > ub0[b]:
                feasible_bits = False
                break
            lb[b] = bit
            ub[b] = bit
        if not feasible_bits:
            continue
        status, x, obj = _relaxed_solve(model, lb, ub, config)
        if status == STATUS_UNBOUNDED:
            return MilpSolution(STATUS_UNBOUNDED, None, None)
        if status != STATUS_OPTIMAL:
            continue
        if obj < best_obj - 1e-12:
            best_obj = obj
            best_x = x

    if best_x is None:
        return MilpSolution(STATUS_INFEASIBLE, None, None)
    return MilpSolution(STATUS_OPTIMAL, best_x, best_obj)


def constraint_violations(
    model: MilpModel, values: np.ndarray, tol: float = 1e-7
) -> list[str]:
    """Independent evaluator: report every constraint or bound out of tolerance."""
    problems: list[str] = []
    for idx, var in enumerate(model.variables):
        v = values[idx]
        if v < var.lb - tol or v > var.ub + tol:
            problems.append(f"variable {var.name}: {v} outside [{var.lb}, {var.ub}]")
        if var.kind == BINARY and min(abs(v - 0.0), abs(v - 1.0)) > 1e-6:
            problems.append(f"binary {var.name}: value {v} is not integral")
    for con in model.constraints:
        lhs = sum(values[i] * c for i, c in con.coeffs.items())
        if con.sense == LE and lhs > con.rhs + tol:
            problems.append(f"{con.name or 'row'}: {lhs} > {con.rhs}")
        elif con.sense == GE and lhs < con.rhs - tol:
            problems.append(f"{con.name or 'row'}: {lhs} < {con.rhs}")
        elif con.sense == EQ and abs(lhs - con.rhs) > tol:
            problems.append(f"{con.name or 'row'}: {lhs} != {con.rhs}")
    return problems


def write_lp(model: MilpModel) -> str:
    """Render the model as LP-style plain text for external cross-checking.

    Grammar (one item per line)::

        \\ <model name>
        Minimize
         obj: <coef> <var> [+|- <coef> <var>]...
        Subject To
         <row name>: <coef> <var> ... <=|=|>= <rhs>
        Bounds
         <lb> <= <var> <= <ub>
        Binaries
         <var> ...
        End

    Not load-bearing; intended for debugging and external solvers.
    """

    def term_str(coeffs: dict[int, float]) -> str:
        parts: list[str] = []
        for idx in sorted(coeffs):
            coef = coeffs[idx]
            name = model.variables[idx].name
            if not parts:
                parts.append(f"{coef:g} {name}")
            elif coef >= 0:
                parts.append(f"+ {coef:g} {name}")
            else:
                parts.append(f"- {-coef:g} {name}")
        return " ".join(parts) if parts else "0"

    lines = [f"\\ {model.name}", "Minimize", f" obj: {term_str(model.objective)}"]
    lines.append("Subject To")
    for i, con in enumerate(model.constraints):
        name = con.name or f"c{i}"
        lines.append(f" {name}: {term_str(con.coeffs)} {con.sense} {con.rhs:g}")
    lines.append("Bounds")
    for var in model.variables:
        ub = "inf" if var.ub == math.inf else f"{var.ub:g}"
        lines.append(f" {var.lb:g} <= {var.name} <= {ub}")
    binaries = [model.variables[b].name for b in model.binary_indices]
    if binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(binaries))
    lines.append("End")
    return "\n".join(lines) + "\n"
