"""Compare naive and optimized execution over the corpus for a range of seeds."""

import argparse
import time

from lamp.executor import compare, eval_naive, exec_plan, random_environment
from lamp.frontend import parse_program
from lamp.passes import PassConfig, compile_program
from importlib.resources import files


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--tol", type=float, default=1e-8)
    ap.add_argument("--no-opt", action="store_true")
    args = ap.parse_args()
    cfg = PassConfig.none() if args.no_opt else PassConfig()
    t0 = time.perf_counter()
    failures = 0
    for path in sorted(files("lamp").joinpath("corpus").iterdir(), key=lambda p: p.name):
        if not path.name.endswith(".lamp"):
            continue
        prog = parse_program(path.read_text())
        plan = compile_program(prog, cfg)
        naive_flops = compile_program(prog, PassConfig.none()).total_flops
        worst = 0.0
        for seed in range(1, args.seeds + 1):
            env = random_environment(prog, seed)
            rep = compare(eval_naive(prog, env), exec_plan(plan, env), args.tol, names=prog.assigned())
            worst = max(worst, rep.max_error)
            failures += not rep.passed
        print(f"{path.name:<32} flops {naive_flops:>10} -> {plan.total_flops:>10}  max err {worst:.2e}")
    print(f"{failures} failures, {time.perf_counter() - t0:.2f}s")


if __name__ == "__main__":
    main()
