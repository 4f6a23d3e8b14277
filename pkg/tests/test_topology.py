import itertools
import random
import time

import pytest

from edgefaas.topology import (
    Community,
    CommunityParams,
    DelayMatrix,
    NodeDescriptor,
    resolve_overlaps,
    slpa_partition,
    validate_partition,
)


def full_matrix(ids, default, overrides=None):
    entries = {}
    for i in ids:
        for j in ids:
            entries[(i, j)] = 0.0 if i == j else default
    for key, value in (overrides or {}).items():
        entries[key] = value
    return DelayMatrix(entries)


def two_cliques():
    """Two 3-cliques: 5 ms inside, 200 ms across."""
    ids = [f"x{i}" for i in range(3)] + [f"y{i}" for i in range(3)]
    entries = {}
    for i in ids:
        for j in ids:
            if i == j:
                d = 0.0
            elif i[0] == j[0]:
                d = 5.0
            else:
                d = 200.0
            entries[(i, j)] = d
    return ids, DelayMatrix(entries)


class TestNodeDescriptor:
    def test_gpu_fields_are_tied(self):
        with pytest.raises(ValueError):
            NodeDescriptor("n", cpu_capacity=1000, cpu_memory=1000, gpu_capacity=500)
        with pytest.raises(ValueError):
            NodeDescriptor("n", cpu_capacity=1000, cpu_memory=1000, gpu_memory=500)
        assert NodeDescriptor("n", 1000, 1000, 500, 500).has_gpu

    def test_positive_capacity_required(self):
        with pytest.raises(ValueError):
            NodeDescriptor("n", cpu_capacity=0, cpu_memory=100)


class TestDelayMatrix:
    def test_requires_zero_diagonal(self):
        with pytest.raises(ValueError):
            DelayMatrix({("a", "a"): 1.0})

    def test_requires_complete_pairs(self):
        with pytest.raises(ValueError):
            DelayMatrix({("a", "a"): 0.0, ("a", "b"): 1.0, ("b", "b"): 0.0})

    def test_asymmetry_is_allowed(self):
        m = DelayMatrix.from_rows(["a", "b"], [[0, 3], [7, 0]])
        assert m.get("a", "b") == 3
        assert m.get("b", "a") == 7
        assert m.round_trip("a", "b") == 7


class TestSlpaPartition:
    def test_single_node_is_singleton(self):
        delays = full_matrix(["solo"], 10.0)
        params = CommunityParams(max_community_size=5, max_delay=50.0, rng_seed=1)
        result = slpa_partition(["solo"], delays, params)
        assert result == [Community(frozenset({"solo"}))]

    def test_two_cliques_split_exactly(self):
        ids, delays = two_cliques()
        params = CommunityParams(max_community_size=5, max_delay=50.0, rng_seed=1)

        # Oracle: exhaustively confirm no delay-feasible community spans
        # the cliques, so the cliques are the only maximal feasible groups.
        for size in range(2, len(ids) + 1):
            for group in itertools.combinations(ids, size):
                spans = len({g[0] for g in group}) > 1
                feasible = all(
                    delays.round_trip(a, b) <= params.max_delay
                    for a, b in itertools.combinations(group, 2)
                )
                if spans:
                    assert not feasible

        communities = resolve_overlaps(
            slpa_partition(ids, delays, params), delays, params
        )
        members = {c.members for c in communities}
        assert members == {frozenset({"x0", "x1", "x2"}), frozenset({"y0", "y1", "y2"})}

    def test_all_close_nodes_covered_by_feasible_communities(self):
        ids = [f"n{i}" for i in range(7)]
        delays = full_matrix(ids, 8.0)
        params = CommunityParams(max_community_size=10, max_delay=20.0, rng_seed=3)
        communities = slpa_partition(ids, delays, params)
        covered = set().union(*(c.members for c in communities))
        assert covered == set(ids)
        for c in communities:
            for a, b in itertools.combinations(sorted(c.members), 2):
                assert delays.round_trip(a, b) <= params.max_delay

    def test_deterministic_per_seed(self):
        ids, delays = two_cliques()
        params = CommunityParams(max_community_size=4, max_delay=50.0, rng_seed=9)
        first = slpa_partition(ids, delays, params)
        second = slpa_partition(ids, delays, params)
        assert first == second

    def test_isolated_node_becomes_singleton(self):
        ids = ["a", "b", "far"]
        delays = full_matrix(ids, 5.0, {("a", "far"): 500.0, ("far", "a"): 500.0,
                                        ("b", "far"): 500.0, ("far", "b"): 500.0})
        params = CommunityParams(max_community_size=3, max_delay=50.0, rng_seed=1)
        communities = resolve_overlaps(slpa_partition(ids, delays, params), delays, params)
        assert Community(frozenset({"far"})) in communities


class TestResolveOverlaps:
    def test_disjoint_input_unchanged(self):
        ids = ["a", "b", "c", "d"]
        delays = full_matrix(ids, 5.0)
        params = CommunityParams(max_community_size=3, max_delay=50.0)
        communities = [Community(frozenset({"a", "b"})), Community(frozenset({"c", "d"}))]
        assert resolve_overlaps(communities, delays, params) == communities

    def test_shared_node_keeps_lower_mean_delay(self):
        ids = ["n", "a1", "a2", "b1", "b2"]
        overrides = {}
        for m in ("a1", "a2"):
            overrides[("n", m)] = 4.0
            overrides[(m, "n")] = 4.0
        for m in ("b1", "b2"):
            overrides[("n", m)] = 9.0
            overrides[(m, "n")] = 9.0
        delays = full_matrix(ids, 6.0, overrides)
        params = CommunityParams(max_community_size=5, max_delay=50.0)
        a = Community(frozenset({"n", "a1", "a2"}))
        b = Community(frozenset({"n", "b1", "b2"}))
        result = resolve_overlaps([a, b], delays, params)
        assert Community(frozenset({"n", "a1", "a2"})) in result
        assert Community(frozenset({"b1", "b2"})) in result

    def test_overflow_everywhere_emits_singleton(self):
        ids = ["n", "a1", "a2", "b1", "b2"]
        delays = full_matrix(ids, 5.0)
        params = CommunityParams(max_community_size=2, max_delay=50.0)
        a = Community(frozenset({"n", "a1", "a2"}))  # size 3 > MCS after keeping n
        b = Community(frozenset({"n", "b1", "b2"}))
        result = resolve_overlaps([a, b], delays, params)
        assert Community(frozenset({"n"})) in result
        assert Community(frozenset({"a1", "a2"})) in result
        assert Community(frozenset({"b1", "b2"})) in result


class TestValidatePartition:
    def test_feasible_partition_has_no_violations(self):
        ids = ["a", "b", "c", "d"]
        delays = full_matrix(ids, 5.0)
        params = CommunityParams(max_community_size=2, max_delay=50.0)
        communities = [Community(frozenset({"a", "b"})), Community(frozenset({"c", "d"}))]
        assert validate_partition(communities, delays, params) == []

    def test_oversized_community_reported(self):
        ids = ["a", "b", "c"]
        delays = full_matrix(ids, 5.0)
        params = CommunityParams(max_community_size=2, max_delay=50.0)
        violations = validate_partition([Community(frozenset(ids))], delays, params)
        assert [v.kind for v in violations] == ["size"]

    def test_delay_violation_reported(self):
        ids = ["a", "b"]
        delays = full_matrix(ids, 51.0)
        params = CommunityParams(max_community_size=2, max_delay=50.0)
        violations = validate_partition([Community(frozenset(ids))], delays, params)
        assert [v.kind for v in violations] == ["delay"]

    def test_overlap_and_coverage_reported(self):
        ids = ["a", "b", "c"]
        delays = full_matrix(ids, 5.0)
        params = CommunityParams(max_community_size=3, max_delay=50.0)
        violations = validate_partition(
            [Community(frozenset({"a", "b"})), Community(frozenset({"b"}))],
            delays,
            params,
        )
        kinds = sorted(v.kind for v in violations)
        assert kinds == ["coverage", "overlap"]


def test_partition_pipeline_feasible_on_random_topologies():
    # Feasibility and determinism on random topologies; also a smoke check
    # that partitioning stays fast at 40 nodes.
    master = random.Random(99)
    started = time.time()
    for trial in range(12):
        n = master.randint(2, 40)
        ids = [f"n{i}" for i in range(n)]
        entries = {}
        for a in range(n):
            for b in range(n):
                if a == b:
                    d = 0.0
                else:
                    d = master.choice([3.0, 10.0, 30.0, 120.0])
                entries[(ids[a], ids[b])] = d
        delays = DelayMatrix(entries)
        params = CommunityParams(
            max_community_size=master.randint(1, 8),
            max_delay=master.choice([15.0, 40.0, 200.0]),
            rng_seed=trial,
        )
        disjoint = resolve_overlaps(slpa_partition(ids, delays, params), delays, params)
        assert validate_partition(disjoint, delays, params) == []
        again = resolve_overlaps(slpa_partition(ids, delays, params), delays, params)
        assert again == disjoint
    assert time.time() - started < 20
