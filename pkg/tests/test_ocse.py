import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from lamp.ocse import (
    ECInstance, InstanceTooLarge, MalformedSchedule, OCSEInstance, Schedule, ec_schedule_from_ocse,
    format_instance, format_schedule, parse_instance, reduce_ec_to_ocse, solve_ec_exact, solve_exact,
    solve_greedy, step_values, verify_schedule,
)

WORKED = OCSEInstance.build(["a1", "a2", "a3", "a4"],
                            [["a1", "a2"], ["a1", "a2", "a3"], ["a2", "a3", "a4"]], 4)


def test_worked_instance_optimum_is_four():
    res = solve_exact(WORKED)
    assert res.feasible and res.omega == 4
    assert verify_schedule(WORKED, res.schedule)


def test_worked_instance_infeasible_with_three_steps():
    tight = OCSEInstance.build(WORKED.variables, WORKED.equations, 3)
    res = solve_exact(tight)
    assert not res.feasible and res.omega == 4


def test_hand_schedule_verifies():
    sched = Schedule((("a1", "a2"), ("a2", "a3"), ("a1", 1), ("a4", 1)))
    assert verify_schedule(WORKED, sched)
    assert format_schedule(sched).splitlines()[2] == "u3 = a1 . u2"


def test_overlapping_step_is_rejected():
    # a1.a2 combined with a2.a3 repeats a2, so it never equals an equation
    sched = Schedule((("a1", "a2"), ("a2", "a3"), (0, 1)))
    vals = step_values(sched)
    assert vals[2]["a2"] == 2
    assert not verify_schedule(OCSEInstance.build(WORKED.variables, [["a1", "a2", "a3"]], 3), sched)


def test_forward_reference_is_malformed():
    with pytest.raises(MalformedSchedule):
        step_values(Schedule((("a1", 0),)))


def test_build_validation():
    with pytest.raises(ValueError):
        OCSEInstance.build(["a"], [["a", "a"]], 1)
    with pytest.raises(ValueError):
        OCSEInstance.build(["a"], [["a", "b"]], 1)
    assert OCSEInstance.build(["a", "b"], [["a"]], 0).equations == ()


def test_exact_size_guard():
    names = [f"v{i}" for i in range(12)]
    with pytest.raises(InstanceTooLarge):
        solve_exact(OCSEInstance.build(names, [names], 20))


def test_text_round_trip():
    text = format_instance(WORKED)
    assert parse_instance(text) == WORKED
    with pytest.raises(ValueError):
        parse_instance("vars: a b\neq: a b\n")


def test_ec_worked_example_reduces():
    ec = ECInstance.build(["a1", "a2", "a3", "a4"], [{"a1", "a2"}, {"a1", "a2", "a3"}, {"a2", "a3", "a4"}], 4)
    inst = reduce_ec_to_ocse(ec)
    assert inst == WORKED
    res = solve_exact(inst)
    unions = ec_schedule_from_ocse(res.schedule)
    assert unions is not None and set(ec.collection) <= set(unions)
    assert solve_ec_exact(ec) == 4


def _random_instance(rng, max_vars=6, max_eqs=4):
    nv = rng.randint(2, max_vars)
    names = [f"a{i + 1}" for i in range(nv)]
    eqs = []
    for _ in range(rng.randint(1, max_eqs)):
        eqs.append(sorted(rng.sample(names, rng.randint(2, min(nv, 4)))))
    return names, eqs


@pytest.mark.parametrize("seed", range(15))
def test_reduction_preserves_optimum(seed):
    rng = random.Random(seed)
    names, eqs = _random_instance(rng)
    ec = ECInstance.build(names, [set(e) for e in eqs], 100)
    assert solve_exact(reduce_ec_to_ocse(ec)).omega == solve_ec_exact(ec)


@settings(max_examples=40, deadline=None)
@given(st.randoms(use_true_random=False))
def test_greedy_never_beats_exact(rnd):
    names, eqs = _random_instance(rnd)
    inst = OCSEInstance.build(names, eqs, 100)
    exact, greedy = solve_exact(inst), solve_greedy(inst)
    assert verify_schedule(inst, exact.schedule)
    assert verify_schedule(inst, greedy.schedule)
    assert exact.omega <= greedy.omega


@settings(max_examples=40, deadline=None)
@given(st.randoms(use_true_random=False))
def test_exact_bounds(rnd):
    names, eqs = _random_instance(rnd)
    inst = OCSEInstance.build(names, eqs, 100)
    distinct = set(inst.equations)
    # at least one step per distinct target, at most a separate chain for each
    assert len(distinct) <= solve_exact(inst).omega <= sum(len(e) - 1 for e in distinct)
