"""Workload program configurations.

Four program shapes cover the experiment designs: a fixed-rate open-loop
Poisson source, a piecewise-constant trace, a closed-loop user ramp, and a
closed-loop user group that migrates between areas during a move window.
Closed-loop users think for an exponentially distributed time between
requests; open-loop sources emit Poisson arrivals. All randomness is drawn
from per-program seeded streams, so arrival sequences replay exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "FixedWorkload",
    "TraceWorkload",
    "RampWorkload",
    "MigrationWorkload",
    "initial_rates",
]


@dataclass(frozen=True)
class FixedWorkload:
    function: str
    node: str
    rate_rps: float

    def __post_init__(self) -> None:
        if self.rate_rps <= 0:
            raise ValueError("rate_rps must be > 0")


@dataclass(frozen=True)
class TraceWorkload:
    """Open-loop Poisson arrivals whose rate steps at segment boundaries."""

    function: str
    node: str
    segments: tuple[tuple[float, float], ...]  # (start_s, rate_rps), sorted

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("trace needs at least one segment")
        starts = [s for s, _ in self.segments]
        if starts != sorted(starts):
            raise ValueError("trace segments must be sorted by start time")
        if any(r < 0 for _, r in self.segments):
            raise ValueError("trace rates must be >= 0")

    def rate_at(self, t_s: float) -> float:
        rate = 0.0
        for start, r in self.segments:
            if t_s >= start:
                rate = r
            else:
                break
        return rate

    def next_boundary(self, t_s: float) -> float | None:
        for start, _ in self.segments:
            if start > t_s:
                return start
        return None


@dataclass(frozen=True)
class RampWorkload:
    """Closed-loop users activated one at a time up to a maximum."""

    function: str
    nodes: tuple[str, ...]
    start_users: int
    users_per_s: float
    max_users: int
    think_time_ms: float

    def __post_init__(self) -> None:
        if self.start_users < 0 or self.max_users < self.start_users:
            raise ValueError("need 0 <= start_users <= max_users")
        if self.users_per_s <= 0 or self.think_time_ms <= 0:
            raise ValueError("users_per_s and think_time_ms must be > 0")
        if not self.nodes:
            raise ValueError("ramp needs at least one ingress node")

    def activation_s(self, index: int) -> float:
        """When user ``index`` becomes active (the first batch starts at 0)."""
        if index < self.start_users:
            return 0.0
        return (index - self.start_users + 1) / self.users_per_s

    def active_users(self, t_s: float) -> int:
        if t_s < 0:
            return 0
        ramped = int(t_s * self.users_per_s)
        return min(self.max_users, self.start_users + ramped)


@dataclass(frozen=True)
class MigrationWorkload:
    """A fixed user group whose members relocate during the move window."""

    function: str
    users: int
    from_nodes: tuple[str, ...]
    to_nodes: tuple[str, ...]
    move_start_s: float
    move_duration_s: float
    think_time_ms: float

    def __post_init__(self) -> None:
        if self.users <= 0:
            raise ValueError("users must be > 0")
        if self.move_duration_s <= 0 or self.move_start_s < 0:
            raise ValueError("need move_start_s >= 0 and move_duration_s > 0")
        if not self.from_nodes or not self.to_nodes:
            raise ValueError("migration needs source and destination nodes")
        if self.think_time_ms <= 0:
            raise ValueError("think_time_ms must be > 0")

    @property
    def move_end_s(self) -> float:
        return self.move_start_s + self.move_duration_s


WorkloadConfig = FixedWorkload | TraceWorkload | RampWorkload | MigrationWorkload


def initial_rates(programs: list) -> dict[tuple[str, str], float]:
    """Estimated request rate per (function, node) at t = 0.

    Used to bootstrap the first placement before any measurement exists.
    Closed-loop users are approximated by their think rate (one request per
    think time), which underestimates nothing at t = 0 since response times
    are not yet known.
    """
    rates: dict[tuple[str, str], float] = {}

    def bump(fn: str, node: str, rps: float) -> None:
        if rps > 0:
            rates[(fn, node)] = rates.get((fn, node), 0.0) + rps

    for program in programs:
        if isinstance(program, FixedWorkload):
            bump(program.function, program.node, program.rate_rps)
        elif isinstance(program, TraceWorkload):
            bump(program.function, program.node, program.rate_at(0.0))
        elif isinstance(program, RampWorkload):
            per_user = 1000.0 / program.think_time_ms
            for idx in range(program.start_users):
                bump(program.function, program.nodes[idx % len(program.nodes)], per_user)
        elif isinstance(program, MigrationWorkload):
            per_user = 1000.0 / program.think_time_ms
            for idx in range(program.users):
                node = program.from_nodes[idx % len(program.from_nodes)]
                bump(program.function, node, per_user)
        else:
            raise TypeError(f"unknown workload program {program!r}")
    return rates
