"""Deterministic discrete-event simulator for the edge control hierarchy."""

from .engine import Simulation, run
from .metrics import MetricsReport, MetricsWindow, RequestRecord, collect_window, percentile
from .runtime import (
    COLD_STARTING,
    DRAINING,
    READY,
    InstanceRuntime,
    advance_instance,
)
from .workload import (
    FixedWorkload,
    MigrationWorkload,
    RampWorkload,
    TraceWorkload,
    initial_rates,
)

__all__ = [
    "Simulation",
    "run",
    "MetricsReport",
    "MetricsWindow",
    "RequestRecord",
    "collect_window",
    "percentile",
    "InstanceRuntime",
    "advance_instance",
    "COLD_STARTING",
    "READY",
    "DRAINING",
    "FixedWorkload",
    "RampWorkload",
    "MigrationWorkload",
    "TraceWorkload",
    "initial_rates",
]
