"""Edge node network model and delay-bounded community partitioning.

Nodes are grouped into communities by speaker-listener label propagation
over the delay graph (two nodes are neighbors iff their round-trip delay
in both directions is within the configured bound). Raw label communities
may overlap and may violate the size or delay bounds; the partitioning
pipeline is therefore::

    slpa_partition -> resolve_overlaps -> validate_partition

which yields a disjoint cover of the node set where every community has
at most ``max_community_size`` members and all pairwise delays are within
``max_delay``.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass

__all__ = [
    "NodeDescriptor",
    "DelayMatrix",
    "CommunityParams",
    "Community",
    "PartitionViolation",
    "slpa_partition",
    "resolve_overlaps",
    "validate_partition",
]


@dataclass(frozen=True)
class NodeDescriptor:
    """Static description of one edge node.

    Capacities are in millicores, memory in megabytes. A node either has
    both GPU capacity and GPU memory or neither.
    """

    id: str
    cpu_capacity: float
    cpu_memory: float
    gpu_capacity: float = 0.0
    gpu_memory: float = 0.0
    area: str = ""

    def __post_init__(self) -> None:
        if self.cpu_capacity <= 0:
            raise ValueError(f"node {self.id}: cpu_capacity must be > 0")
        if self.cpu_memory <= 0:
            raise ValueError(f"node {self.id}: cpu_memory must be > 0")
        if (self.gpu_capacity > 0) != (self.gpu_memory > 0):
            raise ValueError(
                f"node {self.id}: gpu_capacity and gpu_memory must be both zero or both positive"
            )

    @property
    def has_gpu(self) -> bool:
        return self.gpu_capacity > 0


class DelayMatrix:
    """Round-trip delays in milliseconds between ordered node pairs.

    Entries are stored as measured/configured; symmetry is not required.
    The diagonal must be zero and all entries finite and non-negative.
    """

    def __init__(self, entries: dict[tuple[str, str], float]):
        ids = sorted({i for i, _ in entries} | {j for _, j in entries})
        for i in ids:
            for j in ids:
                if (i, j) not in entries:
                    raise ValueError(f"delay matrix is missing entry ({i}, {j})")
        for (i, j), value in entries.items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"delay ({i}, {j}) must be finite and >= 0, got {value}")
            if i == j and value != 0:
                raise ValueError(f"delay ({i}, {i}) must be 0, got {value}")
        self._entries = dict(entries)
        self._ids = tuple(ids)

    @classmethod
    def from_rows(cls, ids: list[str], rows: list[list[float]]) -> "DelayMatrix":
        """Build from a dense row-major matrix following the order of ``ids``."""
        if len(rows) != len(ids) or any(len(r) != len(ids) for r in rows):
            raise ValueError("delay matrix must be square over the node list")
        entries = {}
        for a, i in enumerate(ids):
            for b, j in enumerate(ids):
                entries[(i, j)] = float(rows[a][b])
        return cls(entries)

    @property
    def node_ids(self) -> tuple[str, ...]:
        return self._ids

    def get(self, i: str, j: str) -> float:
        return self._entries[(i, j)]

    def round_trip(self, i: str, j: str) -> float:
        """Worst direction between two nodes; used for neighborhood tests."""
        return max(self._entries[(i, j)], self._entries[(j, i)])


@dataclass(frozen=True)
class CommunityParams:
    """Partitioning knobs: size bound, delay bound, and label-propagation settings."""

    max_community_size: int
    max_delay: float
    iterations: int = 20
    label_threshold: float = 0.3
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.max_community_size < 1:
            raise ValueError("max_community_size must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (0 < self.label_threshold <= 1):
            raise ValueError("label_threshold must be in (0, 1]")


@dataclass(frozen=True)
class Community:
    """A set of node ids controlled as one unit."""

    members: frozenset[str]

    def sorted_members(self) -> tuple[str, ...]:
        return tuple(sorted(self.members))

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class PartitionViolation:
    kind: str  # "overlap" | "coverage" | "size" | "delay"
    detail: str


def _neighbors(nodes: list[str], delays: DelayMatrix, max_delay: float) -> dict[str, list[str]]:
    adj: dict[str, list[str]] = {n: [] for n in nodes}
    for a, i in enumerate(nodes):
        for j in nodes[a + 1 :]:
            if delays.round_trip(i, j) <= max_delay:
                adj[i].append(j)
                adj[j].append(i)
    for n in adj:
        adj[n].sort()
    return adj


def _is_delay_feasible(members: set[str], delays: DelayMatrix, max_delay: float) -> bool:
    ms = sorted(members)
    for a, i in enumerate(ms):
        for j in ms[a + 1 :]:
            if delays.round_trip(i, j) > max_delay:
                return False
    return True


def _mean_internal_delay(members: set[str], delays: DelayMatrix) -> float:
    ms = sorted(members)
    if len(ms) < 2:
        return 0.0
    total = 0.0
    count = 0
    for i in ms:
        for j in ms:
            if i != j:
                total += delays.get(i, j)
                count += 1
    return total / count


def _greedy_split(
    members: set[str], delays: DelayMatrix, params: CommunityParams
) -> list[set[str]]:
    """Split an infeasible group into feasible subsets.

    Repeatedly extracts a delay-feasible subset of size <= max_community_size,
    seeded at the node with the lowest total delay to the remaining members and
    grown by the node that keeps the mean internal delay lowest.
    """
    if len(members) <= params.max_community_size and _is_delay_feasible(
        members, delays, params.max_delay
    ):
        return [set(members)]

    remaining = set(members)
    groups: list[set[str]] = []
    while remaining:
        seed = min(
            remaining,
            key=lambda n: (sum(delays.get(n, m) for m in remaining if m != n), n),
        )
        group = {seed}
        while len(group) < params.max_community_size:
            candidates = [
                n
                for n in sorted(remaining - group)
                if all(delays.round_trip(n, m) <= params.max_delay for m in group)
            ]
            if not candidates:
                break
            best = min(
                candidates,
                key=lambda n: (_mean_internal_delay(group | {n}, delays), n),
            )
            group.add(best)
        groups.append(group)
        remaining -= group
    return groups


def slpa_partition(
    nodes: list[str] | set[str] | tuple[str, ...],
    delays: DelayMatrix,
    params: CommunityParams,
) -> list[Community]:
    """Group nodes into (possibly overlapping) bounded communities.

    Each node keeps a label memory seeded with its own id. Per iteration,
    every listener (visited in seeded-random order) collects one label from
    each neighbor -- the speaker emits a label sampled from its memory
    proportionally to frequency -- and appends the most frequent received
    label (ties broken toward the smallest label) to its memory. A node
    belongs to every label whose final frequency reaches ``label_threshold``;
    nodes left uncovered keep their single most frequent label. Oversized or
    delay-infeasible label groups are split greedily.

    Deterministic for a fixed ``rng_seed``.
    """
    node_list = sorted(nodes)
    if not node_list:
        return []
    for n in node_list:
        if n not in delays.node_ids:
            raise ValueError(f"node {n} is not present in the delay matrix")

    rng = random.Random(params.rng_seed)
    adj = _neighbors(node_list, delays, params.max_delay)
    memory: dict[str, Counter[str]] = {n: Counter({n: 1}) for n in node_list}

    for _ in range(params.iterations):
        order = list(node_list)
        rng.shuffle(order)
        for listener in order:
            received: list[str] = []
            for speaker in adj[listener]:
                received.append(_sample_label(memory[speaker], rng))
            if not received:
                continue
            counts = Counter(received)
            top = max(counts.values())
            chosen = min(label for label, c in counts.items() if c == top)
            memory[listener][chosen] += 1

    label_members: dict[str, set[str]] = {}
    for n in node_list:
        mem = memory[n]
        total = sum(mem.values())
        kept = [label for label, c in mem.items() if c / total >= params.label_threshold]
        if not kept:
            top = max(mem.values())
            kept = [min(label for label, c in mem.items() if c == top)]
        for label in kept:
            label_members.setdefault(label, set()).add(n)

    communities: list[Community] = []
    seen: set[frozenset[str]] = set()
    for label in sorted(label_members):
        for group in _greedy_split(label_members[label], delays, params):
            key = frozenset(group)
            if key not in seen:
                seen.add(key)
                communities.append(Community(key))
    return communities


def _sample_label(mem: Counter[str], rng: random.Random) -> str:
    total = sum(mem.values())
    pick = rng.random() * total
    acc = 0.0
    for label in sorted(mem):
        acc += mem[label]
        if pick < acc:
            return label
    return max(sorted(mem))  # guard against float edge at pick == total


def resolve_overlaps(
    communities: list[Community],
    delays: DelayMatrix,
    params: CommunityParams,
) -> list[Community]:
    """Assign each shared node to exactly one community.

    A shared node stays in the candidate community that minimizes its mean
    delay to the other members (ties broken by the smaller community index).
    Candidates that would exceed ``max_community_size`` by keeping the node
    are skipped; if none remain, the node becomes a singleton community.
    """
    sets: list[set[str]] = [set(c.members) for c in communities]
    owners: dict[str, list[int]] = {}
    for idx, members in enumerate(sets):
        for n in members:
            owners.setdefault(n, []).append(idx)

    singletons: list[set[str]] = []
    for n in sorted(k for k, v in owners.items() if len(v) > 1):
        candidates = [idx for idx in owners[n] if n in sets[idx]]
        eligible = [idx for idx in candidates if len(sets[idx]) <= params.max_community_size]
        if eligible:
            keep = min(
                eligible,
                key=lambda idx: (_mean_delay_to(n, sets[idx], delays), idx),
            )
            for idx in candidates:
                if idx != keep:
                    sets[idx].discard(n)
        else:
            for idx in candidates:
                sets[idx].discard(n)
            singletons.append({n})

    result = [Community(frozenset(s)) for s in sets if s]
    result.extend(Community(frozenset(s)) for s in singletons)
    return result


def _mean_delay_to(node: str, members: set[str], delays: DelayMatrix) -> float:
    others = [m for m in members if m != node]
    if not others:
        return 0.0
    return sum(delays.get(node, m) for m in others) / len(others)


def validate_partition(
    communities: list[Community],
    delays: DelayMatrix,
    params: CommunityParams,
) -> list[PartitionViolation]:
    """Check disjointness, coverage, and the size and delay bounds.

    Returns an empty list iff the communities form a feasible disjoint cover
    of the delay matrix's node set. Violations are returned as data, never
    raised.
    """
    violations: list[PartitionViolation] = []

    counts: Counter[str] = Counter()
    for c in communities:
        counts.update(c.members)
    for n in sorted(k for k, v in counts.items() if v > 1):
        violations.append(
            PartitionViolation("overlap", f"node {n} appears in {counts[n]} communities")
        )
    for n in delays.node_ids:
        if counts[n] == 0:
            violations.append(PartitionViolation("coverage", f"node {n} is not covered"))

    for idx, c in enumerate(communities):
        if len(c) > params.max_community_size:
            violations.append(
                PartitionViolation(
                    "size",
                    f"community {idx} has {len(c)} members > {params.max_community_size}",
                )
            )
        ms = c.sorted_members()
        for a, i in enumerate(ms):
            for j in ms[a + 1 :]:
                rt = delays.round_trip(i, j)
                if rt > params.max_delay:
                    violations.append(
                        PartitionViolation(
                            "delay",
                            f"community {idx}: delay({i}, {j}) = {rt} > {params.max_delay}",
                        )
                    )
    return violations
