import itertools
import math
import random

import numpy as np
import pytest

from edgefaas import milp
from conftest import vertex_enum_lp


def small_lp():
    m = milp.MilpModel()
    x = m.add_variable("x", 0, 1)
    y = m.add_variable("y", 0, 1)
    m.add_constraint({x: 1, y: 1}, milp.LE, 1)
    m.set_objective({x: -2, y: -1})
    return m


class TestSimplex:
    def test_vertex_example(self):
        s = milp.simplex_solve(small_lp())
        assert s.status == milp.STATUS_OPTIMAL
        assert s.values[0] == pytest.approx(1.0, abs=1e-9)
        assert s.values[1] == pytest.approx(0.0, abs=1e-9)
        assert s.objective_value == pytest.approx(-2.0, abs=1e-9)

    def test_infeasible(self):
        m = milp.MilpModel()
        x = m.add_variable("x", 0, 10)
        m.add_constraint({x: 1}, milp.LE, -1)
        assert milp.simplex_solve(m).status == milp.STATUS_INFEASIBLE

    def test_unbounded_has_distinct_status(self):
        m = milp.MilpModel()
        x = m.add_variable("x", 0, math.inf)
        m.set_objective({x: -1})
        assert milp.simplex_solve(m).status == milp.STATUS_UNBOUNDED

    def test_rejects_binaries(self):
        m = milp.MilpModel()
        m.add_variable("b", 0, 1, milp.BINARY)
        with pytest.raises(ValueError):
            milp.simplex_solve(m)

    def test_randomized_against_vertex_enumeration(self):
        rng = random.Random(4242)
        feasible_seen = 0
        for trial in range(120):
            n = rng.randint(2, 5)
            model = milp.MilpModel()
            for j in range(n):
                model.add_variable(f"x{j}", 0, rng.choice([1.0, 2.0, 5.0]))
            rows = []
            for _ in range(rng.randint(1, 4)):
                coeffs = {
                    j: float(rng.randint(-3, 4))
                    for j in rng.sample(range(n), rng.randint(1, n))
                }
                sense = rng.choice([milp.LE, milp.LE, milp.GE, milp.EQ])
                rhs = float(rng.randint(0, 6))
                model.add_constraint(coeffs, sense, rhs)
                rows.append((coeffs, sense, rhs))
            model.set_objective({j: float(rng.randint(-5, 5)) for j in range(n)})
            solution = milp.simplex_solve(model)
            lb = np.array([v.lb for v in model.variables])
            ub = np.array([v.ub for v in model.variables])
            oracle = vertex_enum_lp(model.objective_vector(), rows, lb, ub)
            if solution.status == milp.STATUS_OPTIMAL:
                feasible_seen += 1
                assert oracle is not None
                assert solution.objective_value == pytest.approx(oracle, abs=1e-7)
                assert milp.constraint_violations(model, solution.values) == []
            else:
                assert solution.status == milp.STATUS_INFEASIBLE
                assert oracle is None
        assert feasible_seen >= 60  # the suite must actually exercise optima


class TestBranchAndBound:
    def test_fixed_binaries_match_simplex(self):
        m = milp.MilpModel()
        b = m.add_variable("b", 1, 1, milp.BINARY)  # fixed by bounds
        x = m.add_variable("x", 0, 4)
        m.add_constraint({b: 2, x: 1}, milp.LE, 5)
        m.set_objective({b: 1, x: -1})
        bb = milp.branch_and_bound(m)
        relaxed = milp.MilpModel()
        relaxed.add_variable("b", 1, 1)
        relaxed.add_variable("x", 0, 4)
        relaxed.add_constraint({0: 2, 1: 1}, milp.LE, 5)
        relaxed.set_objective({0: 1, 1: -1})
        lp = milp.simplex_solve(relaxed)
        assert bb.status == milp.STATUS_OPTIMAL
        assert bb.objective_value == pytest.approx(lp.objective_value, abs=1e-9)

    def test_knapsack_matches_enumeration(self):
        weights = {"a": 2, "b": 3, "c": 4}
        values = {"a": 3, "b": 4, "c": 5}
        budget = 5
        # Oracle: enumerate all 8 subsets before trusting any constant.
        best = None
        for picks in itertools.product((0, 1), repeat=3):
            w = sum(p * w_ for p, w_ in zip(picks, weights.values()))
            v = sum(p * v_ for p, v_ in zip(picks, values.values()))
            if w <= budget and (best is None or -v < best):
                best = -v
        m = milp.MilpModel()
        idx = {k: m.add_variable(k, 0, 1, milp.BINARY) for k in weights}
        m.add_constraint({idx[k]: weights[k] for k in weights}, milp.LE, budget)
        m.set_objective({idx[k]: -values[k] for k in values})
        solution = milp.branch_and_bound(m)
        assert solution.objective_value == pytest.approx(best, abs=1e-9)
        assert best == -7

    def test_randomized_against_brute_force(self):
        rng = random.Random(777)
        for trial in range(60):
            nb = rng.randint(1, 12)
            nc = rng.randint(0, 3)
            model = milp.MilpModel()
            for j in range(nb):
                model.add_variable(f"b{j}", 0, 1, milp.BINARY)
            for j in range(nc):
                model.add_variable(f"y{j}", 0, rng.choice([1.0, 3.0]))
            total = nb + nc
            for _ in range(rng.randint(1, 4)):
                coeffs = {
                    j: float(rng.randint(-4, 5))
                    for j in rng.sample(range(total), rng.randint(1, total))
                }
                model.add_constraint(coeffs, rng.choice([milp.LE, milp.LE, milp.GE]), float(rng.randint(1, 8)))
            model.set_objective({j: float(rng.randint(-5, 5)) for j in range(total)})
            bb = milp.branch_and_bound(model)
            bf = milp.brute_force_solve(model)
            assert bb.status == bf.status
            if bb.status == milp.STATUS_OPTIMAL:
                gap = 1e-6 * max(1.0, abs(bf.objective_value))
                assert abs(bb.objective_value - bf.objective_value) <= gap
                assert milp.constraint_violations(model, bb.values) == []

    def test_deterministic_solutions(self):
        rng = random.Random(31)
        model = milp.MilpModel()
        for j in range(8):
            model.add_variable(f"b{j}", 0, 1, milp.BINARY)
        for _ in range(3):
            coeffs = {j: float(rng.randint(-3, 5)) for j in range(8)}
            model.add_constraint(coeffs, milp.LE, 7.0)
        model.set_objective({j: float(rng.randint(-4, 4)) for j in range(8)})
        first = milp.branch_and_bound(model)
        second = milp.branch_and_bound(model)
        assert first.status == second.status
        assert np.array_equal(first.values, second.values)
        assert first.objective_value == second.objective_value

    def test_node_limit_returns_incumbent_status(self):
        model = milp.MilpModel()
        for j in range(10):
            model.add_variable(f"b{j}", 0, 1, milp.BINARY)
        # Odd capacity over weight-2 items keeps the root relaxation fractional.
        model.add_constraint({j: 2.0 for j in range(10)}, milp.LE, 5.0)
        model.set_objective({j: -1.0 for j in range(10)})
        limited = milp.branch_and_bound(model, milp.SolverConfig(max_bb_nodes=1))
        assert limited.status == milp.STATUS_NODE_LIMIT


class TestBruteForce:
    def test_no_binaries_equals_simplex(self):
        m = small_lp()
        assert milp.brute_force_solve(m).objective_value == pytest.approx(
            milp.simplex_solve(m).objective_value, abs=1e-12
        )

    def test_infeasible_for_every_assignment(self):
        m = milp.MilpModel()
        b = m.add_variable("b", 0, 1, milp.BINARY)
        m.add_constraint({b: 0.0}, milp.GE, 1.0)  # 0 >= 1, never satisfiable
        assert milp.brute_force_solve(m).status == milp.STATUS_INFEASIBLE

    def test_refuses_too_many_binaries(self):
        m = milp.MilpModel()
        for j in range(21):
            m.add_variable(f"b{j}", 0, 1, milp.BINARY)
        with pytest.raises(ValueError):
            milp.brute_force_solve(m)

    def test_mutual_gap_with_branch_and_bound(self):
        rng = random.Random(5150)
        for _ in range(20):
            model = milp.MilpModel()
            nb = rng.randint(2, 8)
            for j in range(nb):
                model.add_variable(f"b{j}", 0, 1, milp.BINARY)
            model.add_constraint(
                {j: float(rng.randint(1, 4)) for j in range(nb)}, milp.LE, float(rng.randint(3, 9))
            )
            model.set_objective({j: float(rng.randint(-6, 2)) for j in range(nb)})
            bb = milp.branch_and_bound(model)
            bf = milp.brute_force_solve(model)
            gap = 1e-6 * max(1.0, abs(bb.objective_value))
            assert bf.objective_value <= bb.objective_value + gap
            assert bf.objective_value >= bb.objective_value - gap


def test_write_lp_round_trips_structure():
    m = small_lp()
    m.add_variable("flag", 0, 1, milp.BINARY)
    text = milp.write_lp(m)
    assert "Minimize" in text and "Subject To" in text
    assert "Binaries" in text and "flag" in text
    assert text.endswith("End\n")
