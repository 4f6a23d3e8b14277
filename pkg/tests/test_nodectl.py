import math
import random

import pytest

from edgefaas.nodectl import (
    AllocationRequest,
    NodeAllocation,
    PiControllerState,
    compute_instance_cores,
    default_setpoint,
    resolve_contention,
)
from edgefaas.placement import FunctionSpec


def state(setpoint=100.0, prop=50.0, integral=100.0, lo=50.0, hi=10000.0, prev=0.0):
    return PiControllerState(
        setpoint_ms=setpoint, prop_gain=prop, int_gain=integral,
        min_cores=lo, max_cores=hi, prev_error=prev,
    )


class TestComputeInstanceCores:
    def test_zero_error_holds_current_allocation(self):
        st, desired = compute_instance_cores(state(), 100.0, 1200.0)
        assert desired == 1200.0
        assert st.prev_error == 0.0

    def test_hand_evaluated_step(self):
        # Independent arithmetic: err = 1/0.1s - 1/0.2s = 5 /s;
        # int reconstructs 1000, adds 100*5; prop adds 50*5.
        err = 1000.0 / 100.0 - 1000.0 / 200.0
        expected = (1000.0 - 100.0 * 0.0) + 100.0 * err + 50.0 * err
        st, desired = compute_instance_cores(state(), 200.0, 1000.0)
        assert desired == expected == 1750.0
        assert st.prev_error == err

    def test_clamps_to_max(self):
        st, desired = compute_instance_cores(state(hi=1500.0), 200.0, 1000.0)
        assert desired == 1500.0

    def test_clamps_to_min(self):
        st, desired = compute_instance_cores(state(lo=400.0), 50.0, 500.0)
        assert desired == 400.0

    def test_missing_measurement_holds(self):
        before = state(prev=2.5)
        st, desired = compute_instance_cores(before, None, 800.0)
        assert desired == 800.0
        assert st.prev_error == 2.5  # error memory untouched

    def test_rejects_non_positive_measurement(self):
        with pytest.raises(ValueError):
            compute_instance_cores(state(), 0.0, 500.0)

    def test_deterministic(self):
        a = compute_instance_cores(state(prev=1.0), 130.0, 900.0)
        b = compute_instance_cores(state(prev=1.0), 130.0, 900.0)
        assert a == b

    def test_anti_windup_after_contention_scaling(self):
        # At the zero-error fixed point the integral state rebuilds itself
        # from whatever allocation the contention manager actually granted,
        # so the controller asks for exactly that grant again.
        for granted in (600.0, 123.0, 2048.0):
            st, desired = compute_instance_cores(state(prev=0.0), 100.0, granted)
            assert desired == granted
            assert st.prev_error == 0.0


class TestResolveContention:
    def test_fits_unchanged(self):
        alloc = resolve_contention(
            [AllocationRequest("i1", 500.0), AllocationRequest("i2", 300.0)], 1000.0
        )
        assert alloc == NodeAllocation({"i1": 500.0, "i2": 300.0})

    def test_exact_proportional_scaling(self):
        alloc = resolve_contention(
            [
                AllocationRequest("i1", 2000.0),
                AllocationRequest("i2", 1000.0),
                AllocationRequest("i3", 1000.0),
            ],
            2000.0,
        )
        assert alloc.granted == {"i1": 1000.0, "i2": 500.0, "i3": 500.0}

    def test_largest_remainder_flooring(self):
        # Oracle: shares are 333.33.. each; floors sum to 999, and the one
        # leftover millicore goes to the lowest instance id.
        desired = [999.0, 999.0, 999.0]
        capacity = 1000.0
        shares = [d * capacity / sum(desired) for d in desired]
        floors = [math.floor(s) for s in shares]
        leftover = int(capacity - sum(floors))
        expect = dict(zip(["a", "b", "c"], floors))
        for name in sorted(expect)[:leftover]:
            expect[name] += 1
        alloc = resolve_contention(
            [AllocationRequest(n, d) for n, d in zip(["a", "b", "c"], desired)],
            capacity,
        )
        assert alloc.granted == expect
        assert alloc.granted == {"a": 334.0, "b": 333.0, "c": 333.0}

    def test_never_exceeds_capacity_and_preserves_order(self):
        rng = random.Random(1234)
        for _ in range(200):
            n = rng.randint(1, 6)
            requests = [
                AllocationRequest(f"i{k}", rng.uniform(50.0, 3000.0)) for k in range(n)
            ]
            capacity = rng.uniform(100.0, 4000.0)
            alloc = resolve_contention(requests, capacity)
            assert sum(alloc.granted.values()) <= capacity
            for a in requests:
                for b in requests:
                    if a.desired_cores > b.desired_cores:
                        assert alloc.granted[a.instance_id] >= alloc.granted[b.instance_id]
            if sum(r.desired_cores for r in requests) <= capacity:
                assert alloc.granted == {r.instance_id: r.desired_cores for r in requests}

    def test_rejects_bad_capacity(self):
        with pytest.raises(ValueError):
            resolve_contention([AllocationRequest("i", 100.0)], 0.0)


class TestDefaultSetpoint:
    @pytest.mark.parametrize(
        "required,expected",
        [(200.0, 100.0), (50.0, 25.0), (550.0, 275.0)],
    )
    def test_half_of_required_rt(self, required, expected):
        spec = FunctionSpec(
            name="f", cpu_memory_mb=100, max_net_delay_ms=50,
            required_rt_ms=required,
        )
        assert default_setpoint(spec) == expected
