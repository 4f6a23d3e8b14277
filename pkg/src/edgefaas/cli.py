"""Command-line entry point: validate scenarios, run experiments, solve
one-shot placements, and rebuild summaries from emitted logs.

Subcommands::

    edgefaas validate <scenario.json>
    edgefaas run <scenario.json> --out DIR [--seed N] [--duration S]
    edgefaas solve <snapshot.json> [--out FILE]
    edgefaas report <run-dir> [--out FILE]

``run`` writes a report bundle into the output directory: ``summary.csv``
(per-function aggregates), ``windows.csv`` / ``allocations.csv`` /
``audit.csv`` (time series), ``requests.csv`` (per-request ledger),
``events.jsonl`` (control-plane log), and ``meta.json``. All files are
derived purely from scenario content and seed, never from wall-clock
state, so identical runs produce byte-identical bundles. ``report``
recomputes ``summary.csv`` from the emitted logs.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .milp import SolverConfig
from .placement import (
    CommunityControllerConfig,
    CommunitySnapshot,
    FunctionSpec,
    PlacementInfeasibleError,
    UsageProfile,
    WorkloadSnapshot,
    solve_two_step,
)
from .scenario import (
    FORMAT_VERSION,
    Scenario,
    ScenarioValidationError,
    load_scenario,
)
from .sim import Simulation
from .sim.metrics import (
    STATUS_COMPLETED,
    STATUS_TIMED_OUT,
    FunctionSummary,
    MetricsReport,
    percentile,
)
from .topology import DelayMatrix, NodeDescriptor

__all__ = ["main", "load_scenario", "write_bundle", "summary_csv"]

_SUMMARY_COLUMNS = [
    "function",
    "requests",
    "completed",
    "timed_out",
    "violations",
    "violation_rate_pct",
    "rt_mean_ms",
    "rt_std_ms",
    "rt_p99_ms",
    "network_rate_pct",
    "mean_allocated_mc",
]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def summary_csv(summaries: list[FunctionSummary]) -> str:
    lines = [f"# format_version={FORMAT_VERSION}", ",".join(_SUMMARY_COLUMNS)]
    for s in summaries:
        lines.append(",".join(_fmt(getattr(s, col)) for col in _SUMMARY_COLUMNS))
    return "\n".join(lines) + "\n"


def _windows_csv(report: MetricsReport) -> str:
    cols = [
        "start_ms", "end_ms", "function", "node", "arrivals", "lambda_rps",
        "completions", "qe_sum_ms", "cpu_completions", "cpu_qe_sum_ms",
        "u_sum_core_s", "u_count", "rt_sum_ms", "rt_sumsq", "rt_count",
        "d_sum_ms", "violations", "timeouts",
    ]
    lines = [f"# format_version={FORMAT_VERSION}", ",".join(cols)]
    for window in report.windows:
        for (fn, node), e in sorted(window.entries.items()):
            lines.append(
                ",".join(
                    _fmt(v)
                    for v in (
                        window.start_ms, window.end_ms, fn, node, e.arrivals,
                        e.lambda_rps, e.completions, e.qe_sum_ms,
                        e.cpu_completions, e.cpu_qe_sum_ms, e.u_sum_core_s,
                        e.u_count, e.rt_sum_ms, e.rt_sumsq, e.rt_count,
                        e.d_sum_ms, e.violations, e.timeouts,
                    )
                )
            )
    return "\n".join(lines) + "\n"


def _allocations_csv(report: MetricsReport) -> str:
    lines = [
        f"# format_version={FORMAT_VERSION}",
        "t_ms,node,function,resource_kind,instance,granted_mc",
    ]
    for s in report.allocations:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (s.t_ms, s.node, s.function, s.resource_kind, s.instance_id, s.granted_mc)
            )
        )
    return "\n".join(lines) + "\n"


def _audit_csv(report: MetricsReport) -> str:
    lines = [
        f"# format_version={FORMAT_VERSION}",
        "t_ms,node,resource_kind,granted_mc,capacity_mc",
    ]
    for row in report.capacity_audit:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (row.t_ms, row.node, row.resource_kind, row.granted_mc, row.capacity_mc)
            )
        )
    return "\n".join(lines) + "\n"


def _requests_csv(report: MetricsReport) -> str:
    lines = [
        f"# format_version={FORMAT_VERSION}",
        "rid,function,ingress,executing_node,resource_kind,arrival_ms,"
        "d_ms,q_ms,e_ms,rt_ms,completion_ms,status",
    ]
    for r in report.requests:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    r.rid, r.function, r.ingress, r.executing_node or "", r.resource_kind or "",
                    r.arrival_ms, r.net_delay_ms, r.queue_ms, r.exec_ms, r.rt_ms,
                    r.completion_ms if r.completion_ms is not None else "", r.status,
                )
            )
        )
    return "\n".join(lines) + "\n"


def _events_jsonl(report: MetricsReport) -> str:
    return "".join(json.dumps(e, sort_keys=True) + "\n" for e in report.events) or ""


def write_bundle(report: MetricsReport, scenario: Scenario, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "tool": "edgefaas",
        "tool_version": __version__,
        "seed": scenario.seed,
        "duration_s": scenario.duration_s,
        "required_rt_ms": {f.name: f.spec.required_rt_ms for f in scenario.functions},
        "conservation": report.conservation,
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    (out / "summary.csv").write_text(summary_csv(report.summaries))
    (out / "windows.csv").write_text(_windows_csv(report))
    (out / "allocations.csv").write_text(_allocations_csv(report))
    (out / "audit.csv").write_text(_audit_csv(report))
    (out / "requests.csv").write_text(_requests_csv(report))
    (out / "events.jsonl").write_text(_events_jsonl(report))
    return out


def _read_csv(path: Path) -> list[dict[str, str]]:
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]


def recompute_summary(run_dir: str | Path) -> str:
    """Rebuild summary.csv from the per-request ledger and allocation series."""
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "meta.json").read_text())
    required = meta["required_rt_ms"]
    requests = _read_csv(run_dir / "requests.csv")
    allocations = _read_csv(run_dir / "allocations.csv")

    tick_times = sorted({row["t_ms"] for row in allocations})
    alloc_by_fn: dict[str, float] = {fn: 0.0 for fn in required}
    for row in allocations:
        if row["resource_kind"] == "CPU" and row["function"] in alloc_by_fn:
            alloc_by_fn[row["function"]] += float(row["granted_mc"])

    summaries = []
    for fn in sorted(required):
        rows = [
            r for r in requests
            if r["function"] == fn and r["status"] in (STATUS_COMPLETED, STATUS_TIMED_OUT)
        ]
        completed = [r for r in rows if r["status"] == STATUS_COMPLETED]
        rts = [float(r["rt_ms"]) for r in completed]
        violations = sum(
            1
            for r in rows
            if r["status"] == STATUS_TIMED_OUT or float(r["rt_ms"]) > required[fn]
        )
        rt_sum = sum(rts)
        d_sum = sum(float(r["d_ms"]) for r in completed)
        mean = rt_sum / len(rts) if rts else 0.0
        var = sum((v - mean) ** 2 for v in rts) / len(rts) if rts else 0.0
        summaries.append(
            FunctionSummary(
                function=fn,
                requests=len(rows),
                completed=len(completed),
                timed_out=len(rows) - len(completed),
                violations=violations,
                violation_rate_pct=100.0 * violations / len(rows) if rows else 0.0,
                rt_mean_ms=mean,
                rt_std_ms=math.sqrt(var),
                rt_p99_ms=percentile(rts, 0.99) if rts else 0.0,
                network_rate_pct=100.0 * d_sum / rt_sum if rt_sum > 0 else 0.0,
                mean_allocated_mc=alloc_by_fn[fn] / len(tick_times) if tick_times else 0.0,
            )
        )
    return summary_csv(summaries)


# ---------------------------------------------------------------------------
# One-shot placement on a community snapshot
# ---------------------------------------------------------------------------


def _load_snapshot(path: Path) -> tuple[CommunitySnapshot, dict, dict, CommunityControllerConfig]:
    document = json.loads(path.read_text())
    problems = []
    if document.get("format_version") != FORMAT_VERSION:
        problems.append("format_version: must be 1")
    for section in ("nodes", "delays_ms", "functions", "workload_rps"):
        if section not in document:
            problems.append(f"{section}: missing")
    if problems:
        raise ScenarioValidationError(problems)

    nodes = {}
    node_ids = []
    for raw in document["nodes"]:
        node = NodeDescriptor(
            id=raw["id"],
            cpu_capacity=raw["cpu_capacity_mc"],
            cpu_memory=raw["cpu_memory_mb"],
            gpu_capacity=raw.get("gpu_capacity_mc", 0.0),
            gpu_memory=raw.get("gpu_memory_mb", 0.0),
            area=raw.get("area", ""),
        )
        nodes[node.id] = node
        node_ids.append(node.id)
    delays = DelayMatrix.from_rows(node_ids, document["delays_ms"])

    functions = []
    nominal_cpu: dict[tuple[str, str], float] = {}
    nominal_gpu: dict[tuple[str, str], float] = {}
    for raw in document["functions"]:
        gpu_raw = raw.get("gpu")
        spec = FunctionSpec(
            name=raw["name"],
            cpu_memory_mb=raw["cpu_memory_mb"],
            max_net_delay_ms=raw["max_net_delay_ms"],
            required_rt_ms=raw["required_rt_ms"],
            cold_start_ms=raw.get("cold_start_ms", 0.0),
            graceful_termination_ms=raw.get("graceful_termination_ms", 0.0),
            gpu_memory_mb=gpu_raw["memory_mb"] if gpu_raw else None,
        )
        functions.append(spec)
        cpu_u = raw["cpu_demand"]["mean_core_ms"] / 1000.0
        for j in node_ids:
            nominal_cpu[(spec.name, j)] = cpu_u
            if gpu_raw and nodes[j].has_gpu:
                nominal_gpu[(spec.name, j)] = (
                    gpu_raw["request_cores_mc"] / 1000.0 * gpu_raw["service_time_ms"] / 1000.0
                )
    for fn, by_node in document.get("usage_cpu_core_s", {}).items():
        for j, u in by_node.items():
            nominal_cpu[(fn, j)] = u

    rates = {
        (fn, node): rate
        for fn, by_node in document["workload_rps"].items()
        for node, rate in by_node.items()
    }
    snapshot = CommunitySnapshot(
        community=tuple(node_ids),
        nodes=nodes,
        delays=delays,
        functions=functions,
        workload=WorkloadSnapshot(rates),
        usage=UsageProfile(cpu=nominal_cpu, gpu=nominal_gpu),
    )
    previous_cpu = {
        (fn, j): True
        for fn, placed in document.get("previous_cpu", {}).items()
        for j in placed
    }
    previous_gpu = {
        (fn, j): True
        for fn, placed in document.get("previous_gpu", {}).items()
        for j in placed
    }
    config = CommunityControllerConfig(
        epsilon=document.get("epsilon", 0.05),
        cpu_planning_utilization=document.get("cpu_planning_utilization", 0.5),
        gpu_planning_utilization=document.get("gpu_planning_utilization", 0.8),
    )
    return snapshot, previous_gpu, previous_cpu, config


def _cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioValidationError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 1
    for warning in scenario.warnings:
        print(f"warning: {warning}")
    print(f"{args.scenario}: OK ({len(scenario.nodes)} nodes, {len(scenario.functions)} functions)")
    return 0


def _cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioValidationError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 1
    for warning in scenario.warnings:
        print(f"warning: {warning}")
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    if args.duration is not None:
        scenario = replace(scenario, duration_s=args.duration)
    report = Simulation(scenario).run()
    out_dir = args.out or os.environ.get("EDGEFAAS_OUT", "out")
    out = write_bundle(report, scenario, out_dir)
    print(f"report bundle written to {out}")
    for line in summary_csv(report.summaries).splitlines():
        print(line)
    return 0


def _cmd_solve(args) -> int:
    try:
        snapshot, previous_gpu, previous_cpu, config = _load_snapshot(Path(args.snapshot))
    except ScenarioValidationError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 1
    try:
        result = solve_two_step(
            snapshot,
            previous_gpu=previous_gpu,
            previous_cpu=previous_cpu,
            config=config,
            solver_config=SolverConfig(),
        )
    except PlacementInfeasibleError as exc:
        payload = {
            "format_version": FORMAT_VERSION,
            "status": "infeasible",
            "resource_kind": exc.resource_kind,
            "step": exc.step,
            "constraint_class": exc.constraint_class,
            "detail": exc.detail,
        }
        text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
        if args.out:
            Path(args.out).write_text(text)
        print(text, end="")
        return 2
    payload = {
        "format_version": FORMAT_VERSION,
        "status": "optimal",
        "gpu": result.reports["GPU"],
        "cpu": result.reports["CPU"],
        "plans": {
            kind: {
                "creations": plan.creations,
                "deletions": plan.deletions,
                "migrations": plan.migrations,
                "node_creations": {f: list(v) for f, v in plan.node_creations.items()},
                "node_deletions": {f: list(v) for f, v in plan.node_deletions.items()},
            }
            for kind, plan in (("GPU", result.gpu_plan), ("CPU", result.cpu_plan))
        },
    }
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"placement written to {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_report(args) -> int:
    try:
        text = recompute_summary(args.run_dir)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: cannot rebuild summary from {args.run_dir}: {exc}", file=sys.stderr)
        return 1
    if args.out:
        Path(args.out).write_text(text)
        print(f"summary written to {args.out}")
    else:
        print(text, end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="edgefaas",
        description="Edge serverless placement, autoscaling, and simulation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"edgefaas {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("run", help="run a scenario and write the report bundle")
    p.add_argument("scenario")
    p.add_argument("--out", help="output directory (default: $EDGEFAAS_OUT or ./out)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--duration", type=float, help="override the scenario duration (seconds)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("solve", help="one-shot two-step placement on a community snapshot")
    p.add_argument("snapshot")
    p.add_argument("--out", help="write the placement JSON here instead of stdout")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("report", help="recompute summary.csv from an emitted bundle")
    p.add_argument("run_dir")
    p.add_argument("--out", help="write the summary here instead of stdout")
    p.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
