"""Compare greedy and exact OCSE schedules on random small instances."""

import argparse
import random
from collections import Counter

from lamp.ocse import OCSEInstance, solve_exact, solve_greedy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--max-vars", type=int, default=6)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    gaps = Counter()
    for _ in range(args.trials):
        nv = rng.randint(2, args.max_vars)
        names = [f"a{i + 1}" for i in range(nv)]
        eqs = [rng.sample(names, rng.randint(2, nv)) for _ in range(rng.randint(1, 4))]
        inst = OCSEInstance.build(names, eqs, 10 * nv)
        exact, greedy = solve_exact(inst), solve_greedy(inst)
        gaps[greedy.omega - exact.omega] += 1
    for gap in sorted(gaps):
        print(f"greedy - exact = {gap}: {gaps[gap]} instances")


if __name__ == "__main__":
    main()
