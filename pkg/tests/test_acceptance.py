"""Acceptance criteria 1-6.  Each test prints one PASS/FAIL line; run this file
directly (``python tests/test_acceptance.py``) for just the summary."""

import random
import sys
import time
from pathlib import Path

import pytest

from lamp.bench import CASES, run_bench
from lamp.chain import brute_force_parenthesization, catalan, enumerate_parenthesizations, optimal_parenthesization
from lamp.executor import compare, eval_naive, exec_plan, random_environment
from lamp.frontend import parse_program
from lamp.ocse import (
    ECInstance, OCSEInstance, reduce_ec_to_ocse, solve_ec_exact, solve_exact, solve_greedy, verify_schedule,
)
from lamp.passes import DEFAULT_ORDER, PASSES, PassConfig, compile_program, cost

CORPUS = sorted((Path(__file__).parents[1] / "src" / "lamp" / "corpus").glob("*.lamp"))


def _report(capsys, number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return ok


def criterion_1(capsys=None):
    results = run_bench()
    slow = [c.id for c, o in results if o.seconds >= 5.0]
    failed = [c.id for c, o in results if not o.passed]
    ok = len(results) == 12 and not failed and not slow
    worst = max(o.seconds for _, o in results)
    return _report(capsys, 1, ok, f"bench {12 - len(failed)}/12 rows pass, slowest row {worst:.2f}s"
                   + (f", failing {failed}" if failed else "") + (f", slow {slow}" if slow else ""))


def criterion_2(capsys=None):
    t0 = time.perf_counter()
    worst, bad = 0.0, []
    for path in CORPUS:
        p = parse_program(path.read_text())
        plan = compile_program(p)
        for seed in range(1, 6):
            env = random_environment(p, seed)
            rep = compare(eval_naive(p, env), exec_plan(plan, env), 1e-8, names=p.assigned())
            worst = max(worst, rep.max_error)
            if not rep.passed:
                bad.append(f"{path.stem}@{seed}")
    elapsed = time.perf_counter() - t0
    ok = len(CORPUS) == 25 and not bad and elapsed < 30
    return _report(capsys, 2, ok, f"{len(CORPUS)} programs x 5 seeds, max rel err {worst:.2e} (tol 1e-8), "
                   f"{elapsed:.1f}s (limit 30s)" + (f", mismatches {bad}" if bad else ""))


def criterion_3(capsys=None):
    rng = random.Random(2024)
    mismatches = 0
    for _ in range(200):
        dims = [rng.randint(1, 50) for _ in range(rng.randint(2, 9))]  # up to 8 factors
        _, dp = optimal_parenthesization(dims)
        _, bf = brute_force_parenthesization(dims)
        count = sum(1 for _ in enumerate_parenthesizations(dims))
        if dp != bf or count != catalan(len(dims) - 2):
            mismatches += 1
    return _report(capsys, 3, mismatches == 0,
                   f"200 random chains, DP == brute force and count == Catalan; {mismatches} mismatches")


def criterion_4(capsys=None):
    eqs = [["a1", "a2"], ["a1", "a2", "a3"], ["a2", "a3", "a4"]]
    names = ["a1", "a2", "a3", "a4"]
    r4 = solve_exact(OCSEInstance.build(names, eqs, 4))
    r3 = solve_exact(OCSEInstance.build(names, eqs, 3))
    worked = r4.feasible and r4.omega == 4 and not r3.feasible
    rng = random.Random(7)
    reduction_bad = greedy_bad = 0
    for _ in range(30):
        nv = rng.randint(2, 6)
        ground = [f"a{i + 1}" for i in range(nv)]
        coll = [set(rng.sample(ground, rng.randint(2, min(nv, 4)))) for _ in range(rng.randint(1, 4))]
        ec = ECInstance.build(ground, coll, 100)
        inst = reduce_ec_to_ocse(ec)
        exact = solve_exact(inst)
        greedy = solve_greedy(inst)
        if exact.omega != solve_ec_exact(ec) or not verify_schedule(inst, exact.schedule):
            reduction_bad += 1
        if greedy.omega < exact.omega or not verify_schedule(inst, greedy.schedule):
            greedy_bad += 1
    ok = worked and reduction_bad == 0 and greedy_bad == 0
    return _report(capsys, 4, ok, f"worked instance omega={r4.omega}, omega<=3 "
                   f"{'INFEASIBLE' if not r3.feasible else 'feasible'}; 30 EC instances: "
                   f"{reduction_bad} optimum mismatches, {greedy_bad} greedy-beats-exact")


def criterion_5(capsys=None):
    cfg = PassConfig()
    problems = []
    for path in CORPUS:
        p = parse_program(path.read_text())
        for name, fn in PASSES.items():
            q = fn(p, cfg)
            if fn(q, cfg) != q:
                problems.append(f"{path.stem}:{name} not idempotent")
            for seed in range(1, 11):
                env = random_environment(p, seed)
                if not compare(eval_naive(p, env), eval_naive(q, env), 1e-9, names=p.assigned()).passed:
                    problems.append(f"{path.stem}:{name} changes values")
                    break
            if cost(q, cfg) > cost(p, cfg):
                problems.append(f"{path.stem}:{name} raises cost")
        naive = compile_program(p, PassConfig.none())
        for seed in range(1, 6):
            env = random_environment(p, seed)
            if not compare(eval_naive(p, env), exec_plan(naive, env), 1e-8, names=p.assigned()).passed:
                problems.append(f"{path.stem}: --no-opt plan disagrees")
                break
    return _report(capsys, 5, not problems, f"{len(PASSES)} passes x {len(CORPUS)} programs idempotent, "
                   f"value-preserving at 1e-9 over 10 seeds, --no-opt equivalent"
                   + (f"; problems: {problems[:5]}" if problems else ""))


def criterion_6(capsys=None):
    wrong = []
    for name in DEFAULT_ORDER:
        flipped = {c.id for c, o in run_bench(PassConfig().without(name)) if not o.passed}
        expected = {c.id for c in CASES if name in c.depends}
        if flipped != expected:
            wrong.append(f"{name}: flipped {sorted(flipped)} expected {sorted(expected)}")
    return _report(capsys, 6, not wrong, f"disabling each of {len(DEFAULT_ORDER)} passes flips exactly "
                   f"its dependent rows" + (f"; {wrong}" if wrong else ""))


@pytest.mark.parametrize("number", range(1, 7))
def test_acceptance(number, capsys):
    assert globals()[f"criterion_{number}"](capsys)


if __name__ == "__main__":
    results = [globals()[f"criterion_{k}"]() for k in range(1, 7)]
    sys.exit(0 if all(results) else 1)
