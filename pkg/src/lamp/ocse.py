"""Optimal common subexpression elimination over one associative-commutative operator.

An instance is a set of variables and a list of equations, each equation the
set of variables combined by the operator.  A schedule is a sequence of binary
steps ``u_i = s_i . t_i`` whose operands are variables or earlier steps.
Ensemble Computation instances reduce to OCSE instances one-to-one.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Union


class InstanceTooLarge(ValueError):
    pass


class MalformedSchedule(ValueError):
    pass


EXACT_MAX_VARS = 10
EXACT_MAX_TOTAL = 24

Operand = Union[str, int]  # a variable name, or the 0-based index of an earlier step


@dataclass(frozen=True)
class OCSEInstance:
    variables: tuple
    equations: tuple  # of frozensets, each of size >= 2
    omega: int

    @classmethod
    def build(cls, variables, equations, omega: int) -> "OCSEInstance":
        variables = tuple(sorted(set(variables)))
        eqs = []
        for eq in equations:
            eq = list(eq)
            if not eq:
                raise ValueError("empty equation")
            if len(set(eq)) != len(eq):
                raise ValueError(f"variable repeated in equation {eq}")
            if not set(eq) <= set(variables):
                raise ValueError(f"equation {eq} uses undeclared variables")
            if len(eq) >= 2:  # single-variable equations need no step
                eqs.append(frozenset(eq))
        if omega < 0:
            raise ValueError("omega must be non-negative")
        return cls(variables, tuple(eqs), omega)


@dataclass(frozen=True)
class Schedule:
    steps: tuple = ()  # of (Operand, Operand)

    def __len__(self):
        return len(self.steps)


@dataclass(frozen=True)
class ECInstance:
    ground: tuple
    collection: tuple  # of frozensets
    omega: int

    @classmethod
    def build(cls, ground, collection, omega: int) -> "ECInstance":
        ground = tuple(sorted(set(ground)))
        coll = []
        for c in collection:
            c = frozenset(c)
            if not c:
                raise ValueError("empty subset")
            if not c <= set(ground):
                raise ValueError(f"{set(c)} is not a subset of the ground set")
            coll.append(c)
        return cls(ground, tuple(coll), omega)


@dataclass(frozen=True)
class Result:
    omega: int  # minimal (or achieved) number of steps
    schedule: Schedule
    feasible: bool = True


# ---------------------------------------------------------------------------
# verification


def step_values(sched: Schedule) -> list[Counter]:
    values: list[Counter] = []
    for i, (s, t) in enumerate(sched.steps):
        parts = []
        for x in (s, t):
            if isinstance(x, int):
                if not 0 <= x < i:
                    raise MalformedSchedule(f"step {i} refers to step {x}")
                parts.append(values[x])
            else:
                parts.append(Counter({x: 1}))
        values.append(parts[0] + parts[1])
    return values


def verify_schedule(inst: OCSEInstance, sched: Schedule) -> bool:
    """True iff every equation is produced by some step and the length is within omega."""
    if len(sched) > inst.omega:
        return False
    for s, t in sched.steps:
        for x in (s, t):
            if not isinstance(x, int) and x not in inst.variables:
                return False
    values = step_values(sched)
    produced = {frozenset(v) for v in values if all(c == 1 for c in v.values())}
    return all(eq in produced for eq in inst.equations)


# ---------------------------------------------------------------------------
# exact search


def _check_size(inst: OCSEInstance):
    if len(inst.variables) > EXACT_MAX_VARS or sum(len(e) for e in inst.equations) > EXACT_MAX_TOTAL:
        raise InstanceTooLarge(
            f"|A|={len(inst.variables)}, total equation size {sum(len(e) for e in inst.equations)}")


def solve_exact(inst: OCSEInstance) -> Result:
    """Globally minimal schedule by iterative deepening over the schedule length.

    Steps whose operands overlap produce a repeated variable and can never equal
    an equation, so only disjoint unions that stay inside some equation are explored.
    """
    _check_size(inst)
    targets = frozenset(inst.equations)
    if not targets:
        return Result(0, Schedule(), inst.omega >= 0)
    # candidate intermediate values: non-empty subsets of the equations
    useful = set()
    for eq in targets:
        items = sorted(eq)
        for r in range(2, len(items) + 1):
            useful.update(frozenset(c) for c in itertools.combinations(items, r))

    def successors(state):
        atoms = [frozenset([v]) for v in inst.variables] + sorted(state, key=sorted)
        seen = set()
        for a, b in itertools.combinations(atoms, 2):
            if a & b:
                continue
            u = a | b
            if u in useful and u not in state and u not in seen:
                seen.add(u)
                yield u, a, b

    failed: dict[frozenset, int] = {}

    def search(state, budget, path):
        missing = len(targets - state)
        if missing == 0:
            return path
        if missing > budget or failed.get(state, -1) >= budget:
            return None
        for u, a, b in successors(state):
            found = search(state | {u}, budget - 1, path + [(u, a, b)])
            if found is not None:
                return found
        failed[state] = budget
        return None

    depth = len(targets)
    while True:
        path = search(frozenset(), depth, [])
        if path is not None:
            sched = _to_schedule(path)
            return Result(len(sched), sched, len(sched) <= inst.omega)
        depth += 1


def _to_schedule(path) -> Schedule:
    index: dict[frozenset, int] = {}
    steps = []
    for u, a, b in path:
        ops = []
        for x in (a, b):
            ops.append(next(iter(x)) if len(x) == 1 else index[x])
        index[u] = len(steps)
        steps.append(tuple(ops))
    return Schedule(tuple(steps))


# ---------------------------------------------------------------------------
# greedy


def solve_greedy(inst: OCSEInstance) -> Result:
    """Repeatedly combine the pair co-occurring in the most unmet equations."""
    pending = [sorted(eq) for eq in inst.equations]
    steps: list[tuple] = []

    def key(x):
        return f"u{x:06d}" if isinstance(x, int) else f"a{x}"

    while True:
        pending = [eq for eq in pending if len(eq) > 1]
        if not pending:
            break
        counts: Counter = Counter()
        for eq in pending:
            for a, b in itertools.combinations(sorted(eq, key=key), 2):
                counts[(a, b)] += 1
        best = max(counts.values())
        a, b = min((p for p, c in counts.items() if c == best), key=lambda p: (key(p[0]), key(p[1])))
        new = len(steps)
        steps.append((a, b))
        for eq in pending:
            if a in eq and b in eq:
                eq.remove(a)
                eq.remove(b)
                eq.append(new)
    sched = Schedule(tuple(steps))
    return Result(len(sched), sched, len(sched) <= inst.omega)


# ---------------------------------------------------------------------------
# ensemble computation


def reduce_ec_to_ocse(ec: ECInstance) -> OCSEInstance:
    """Each subset C_k becomes the equation x_k = a_1 . ... . a_l over its elements."""
    return OCSEInstance.build(ec.ground, [sorted(c) for c in ec.collection], ec.omega)


def ec_schedule_from_ocse(sched: Schedule) -> list[frozenset] | None:
    """Map an OCSE schedule to the EC union sequence; None if some step is not disjoint."""
    out = []
    for v in step_values(sched):
        if any(c > 1 for c in v.values()):
            return None
        out.append(frozenset(v))
    return out


def solve_ec_exact(ec: ECInstance) -> int:
    """Minimal number of disjoint unions by breadth-first search over reachable families.

    Independent of ``solve_exact``; used to cross-check the reduction.  Singleton
    subsets need no union.
    """
    targets = frozenset(c for c in ec.collection if len(c) > 1)
    if not targets:
        return 0
    singles = [frozenset([a]) for a in ec.ground]
    level = {frozenset()}
    seen = set(level)
    steps = 0
    while True:
        steps += 1
        nxt = set()
        for fam in level:
            pool = singles + list(fam)
            for a, b in itertools.combinations(pool, 2):
                if a & b:
                    continue
                u = a | b
                if u in fam or not any(u <= t for t in targets):
                    continue
                new = fam | {u}
                if targets <= new:
                    return steps
                if new not in seen:
                    seen.add(new)
                    nxt.add(new)
        level = nxt


# ---------------------------------------------------------------------------
# text format


def parse_instance(text: str) -> OCSEInstance:
    """``vars: a1 a2 ...`` / ``eq: a1 a2`` (repeated) / ``omega: N``."""
    variables, eqs, omega = None, [], None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip().lower()
        items = rest.split()
        if key == "vars":
            variables = items
        elif key == "eq":
            eqs.append(items)
        elif key == "omega":
            if len(items) != 1 or not items[0].isdigit():
                raise ValueError(f"line {lineno}: omega needs one integer")
            omega = int(items[0])
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    if variables is None or omega is None:
        raise ValueError("instance needs 'vars:' and 'omega:' lines")
    return OCSEInstance.build(variables, eqs, omega)


def format_instance(inst: OCSEInstance) -> str:
    lines = ["vars: " + " ".join(inst.variables)]
    lines += ["eq: " + " ".join(sorted(eq)) for eq in inst.equations]
    lines.append(f"omega: {inst.omega}")
    return "\n".join(lines) + "\n"


def format_schedule(sched: Schedule) -> str:
    def op(x):
        return f"u{x + 1}" if isinstance(x, int) else x

    return "\n".join(f"u{i + 1} = {op(s)} . {op(t)}" for i, (s, t) in enumerate(sched.steps))
