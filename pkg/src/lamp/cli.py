"""Command-line entry point: compile, run, bench, chain, ocse."""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from . import bench, chain, ocse
from .executor import SingularMatrix, compare, eval_naive, exec_plan, random_environment
from .frontend import LampError, parse_program
from .ir import IRError
from .passes import PassConfig, UnknownPass, compile_program
from .plan import emit_plan


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _add_pass_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--passes", help="comma-separated pass ids to enable (default: all)")
    g.add_argument("--no-opt", action="store_true", help="disable every optimization")
    p.add_argument("--cse", choices=("exact", "greedy"), default="exact", help="OCSE solver for shared sums")


def _config(args) -> PassConfig:
    if args.no_opt:
        return PassConfig((), cse_mode=args.cse)
    if args.passes is not None:
        return PassConfig.parse(args.passes, cse_mode=args.cse)
    return PassConfig(cse_mode=args.cse)


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lamp", description="Compile matrix expressions to kernel-call plans.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    c = sub.add_parser("compile", help="lower a program to a kernel plan")
    c.add_argument("file")
    c.add_argument("--emit", choices=("text", "json"), default="text")
    c.add_argument("--cost-only", action="store_true", help="print only the total FLOP count")
    _add_pass_args(c)

    r = sub.add_parser("run", help="execute naive and optimized versions on random inputs")
    r.add_argument("file")
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--check", action="store_true", help="exit 1 if results disagree")
    r.add_argument("--tol", type=float, default=1e-8)
    r.add_argument("--time", type=int, metavar="REPS", help="report the minimum wall time over REPS runs")
    _add_pass_args(r)

    b = sub.add_parser("bench", help="run the twelve conformance cases")
    b.add_argument("--experiment", help="run a single case, e.g. 5 or E5")
    b.add_argument("--format", choices=("table", "json"), default="table")
    _add_pass_args(b)

    ch = sub.add_parser("chain", help="optimal parenthesization of a product chain")
    ch.add_argument("dims", nargs="+", type=int)

    o = sub.add_parser("ocse", help="solve an OCSE instance file")
    o.add_argument("file")
    o.add_argument("--greedy", action="store_true", help="use the greedy heuristic")
    return ap


def _cmd_compile(args) -> int:
    prog = parse_program(_read(args.file))
    plan = compile_program(prog, _config(args))
    if args.cost_only:
        print(plan.total_flops)
    else:
        print(emit_plan(plan, args.emit), end="")
    return 0


def _cmd_run(args) -> int:
    prog = parse_program(_read(args.file))
    plan = compile_program(prog, _config(args))
    env = random_environment(prog, args.seed)
    naive = eval_naive(prog, env)
    opt = exec_plan(plan, env)
    rep = compare(naive, opt, args.tol, names=prog.assigned())
    for name in prog.assigned():
        v = np.atleast_2d(opt[name])
        print(f"{name:<12} {v.shape[0]}x{v.shape[1]:<6} norm={np.linalg.norm(v):.6e}")
    print(f"flops naive={compile_program(prog, PassConfig.none()).total_flops} optimized={plan.total_flops}")
    for line in rep.lines():
        print(line)
    print(f"max relative error {rep.max_error:.3e} ({'ok' if rep.passed else 'FAIL'} at {args.tol:g})")
    if args.time:
        best = {"naive": _best_time(lambda: eval_naive(prog, env), args.time),
                "optimized": _best_time(lambda: exec_plan(plan, env), args.time)}
        print("wall time (min of {}) ".format(args.time) + " ".join(f"{k}={v:.3e}s" for k, v in best.items()))
    return 1 if args.check and not rep.passed else 0


def _best_time(fn, reps: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=reps))


def _cmd_bench(args) -> int:
    results = bench.run_bench(_config(args), args.experiment)
    print(bench.format_table(results) if args.format == "table" else bench.format_json(results))
    return 0 if all(o.passed for _, o in results) else 1


def _cmd_chain(args) -> int:
    tree, cost = chain.optimal_parenthesization(args.dims)
    print(chain.format_tree(tree))
    print(cost)
    return 0


def _cmd_ocse(args) -> int:
    inst = ocse.parse_instance(_read(args.file))
    res = ocse.solve_greedy(inst) if args.greedy else ocse.solve_exact(inst)
    if not res.feasible:
        print(f"INFEASIBLE: no schedule within omega = {inst.omega}")
        return 1
    print(f"omega = {res.omega}")
    print(ocse.format_schedule(res.schedule))
    return 0


COMMANDS = {"compile": _cmd_compile, "run": _cmd_run, "bench": _cmd_bench,
            "chain": _cmd_chain, "ocse": _cmd_ocse}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.cmd](args)
    except (LampError, IRError, UnknownPass, ocse.InstanceTooLarge, chain.ChainTooLong, ValueError, OSError) as exc:
        print(f"lamp: error: {exc}", file=sys.stderr)
        return 2
    except SingularMatrix as exc:
        print(f"lamp: runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
