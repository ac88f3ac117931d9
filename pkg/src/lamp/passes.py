"""Program rewrites: inverse elimination, block splitting, partial access,
rank updates, loop-invariant hoisting and common subexpression elimination.

Every rewrite is kept only if the lowered plan gets strictly cheaper, so a
pass can never make a program worse under the FLOP model.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from . import ocse
from .codegen import LowerOptions, lower
from .ir import (
    Assign, Block, Column, Diag, DiagProduct, Element, Expr, ForLoop, Inverse, Operand,
    Product, Program, Row, ScalarMul, Slice, Solve, Sum, Syr2k, Syrk, Transpose, Zero,
    canonicalize, canonicalize_program, index_names, infer_properties, mk_product, mk_scale,
    mk_sum, rebuild, subexpressions, operand_names, scalar_names, transpose, walk_statements,
)

PROGRAM_PASSES = (
    "canonicalize",
    "rewrite_inv_to_solve",
    "exploit_block_structure",
    "pushdown_partial_access",
    "detect_rank_updates",
    "hoist_loop_invariants",
    "eliminate_common_subexpressions",
)
LOWERING_PASSES = ("dispatch_properties", "fuse_updates", "optimize_chains")
DEFAULT_ORDER = PROGRAM_PASSES + LOWERING_PASSES


class UnknownPass(ValueError):
    pass


@dataclass(frozen=True)
class PassConfig:
    enabled: tuple = DEFAULT_ORDER
    cse_mode: str = "exact"  # "exact" | "greedy"
    max_exact_cse_terms: int = 12

    def __post_init__(self):
        enabled = tuple(self.enabled)
        for name in enabled:
            if name not in DEFAULT_ORDER:
                raise UnknownPass(f"unknown pass {name!r}; known: {', '.join(DEFAULT_ORDER)}")
        if self.cse_mode not in ("exact", "greedy"):
            raise ValueError(f"cse_mode must be exact or greedy, not {self.cse_mode!r}")
        object.__setattr__(self, "enabled", enabled)

    @classmethod
    def parse(cls, text: str, **kw) -> "PassConfig":
        names = [s.strip() for s in text.split(",") if s.strip()]
        return cls(tuple(names), **kw)

    @classmethod
    def none(cls) -> "PassConfig":
        return cls(())

    def without(self, name: str) -> "PassConfig":
        if name not in DEFAULT_ORDER:
            raise UnknownPass(name)
        return PassConfig(tuple(n for n in self.enabled if n != name), self.cse_mode, self.max_exact_cse_terms)

    def lower_options(self) -> LowerOptions:
        return LowerOptions(
            dispatch_properties="dispatch_properties" in self.enabled,
            fuse_updates="fuse_updates" in self.enabled,
            optimize_chains="optimize_chains" in self.enabled,
        )


def cost(p: Program, cfg: PassConfig) -> int:
    return lower(p, cfg.lower_options()).total_flops


# ---------------------------------------------------------------------------
# statement plumbing


def _assign_paths(stmts, prefix=()):
    for i, s in enumerate(stmts):
        if isinstance(s, Assign):
            yield prefix + (i,)
        else:
            yield from _assign_paths(s.body, prefix + (i,))


def _get(stmts, path):
    s = stmts[path[0]]
    return s if len(path) == 1 else _get(s.body, path[1:])


def _splice(stmts, path, new) -> tuple:
    """Replace the statement at ``path`` by the statement list ``new``."""
    i = path[0]
    if len(path) == 1:
        return tuple(stmts[:i]) + tuple(new) + tuple(stmts[i + 1:])
    loop = stmts[i]
    inner = ForLoop(loop.var, loop.lo, loop.hi, _splice(loop.body, path[1:], new))
    return tuple(stmts[:i]) + (inner,) + tuple(stmts[i + 1:])


def _blocks(stmts, prefix=()):
    """Every statement list of the program with its path prefix."""
    yield prefix, stmts
    for i, s in enumerate(stmts):
        if isinstance(s, ForLoop):
            yield from _blocks(s.body, prefix + (i,))


def _set_block(stmts, prefix, new) -> tuple:
    if not prefix:
        return tuple(new)
    i = prefix[0]
    loop = stmts[i]
    inner = ForLoop(loop.var, loop.lo, loop.hi, _set_block(loop.body, prefix[1:], new))
    return tuple(stmts[:i]) + (inner,) + tuple(stmts[i + 1:])


def _used_names(p: Program) -> set:
    names = {d.name for d in p.decls}
    for s in walk_statements(p.stmts):
        if isinstance(s, Assign):
            names.add(s.target)
            names |= operand_names(s.expr) | scalar_names(s.expr) | index_names(s.expr)
        else:
            names.add(s.var)
    return names


def _fresh(p: Program, prefix: str, taken: set | None = None) -> str:
    used = _used_names(p) | (taken or set())
    for k in itertools.count(1):
        name = f"{prefix}{k}"
        if name not in used:
            return name


def _bottom_up(e: Expr, fn) -> Expr:
    kids = e.children()
    if kids:
        new = [_bottom_up(k, fn) for k in kids]
        if any(a is not b for a, b in zip(new, kids)):
            e = rebuild(e, new)
    return fn(e)


def _fix(fn, e: Expr, limit: int = 50) -> Expr:
    for _ in range(limit):
        new = canonicalize(_bottom_up(e, fn))
        if new == e:
            return e
        e = new
    return e


def _is_view(e: Expr) -> bool:
    if isinstance(e, Operand):
        return True
    if isinstance(e, (Transpose, Slice, Element, Column, Row)):
        return _is_view(e.child)
    return False


def _expr_pass(p: Program, cfg: PassConfig, rule, allow_ties: bool = False) -> Program:
    """Apply ``rule`` bottom-up to each statement, keeping only cost-reducing statements.

    With ``allow_ties`` a rewrite that leaves the cost unchanged is kept too; the
    rule must then reach a fixed point on its own output.
    """
    base = cost(p, cfg)
    changed = True
    while changed:
        changed = False
        for path in list(_assign_paths(p.stmts)):
            s = _get(p.stmts, path)
            new = _fix(rule, s.expr)
            if new == s.expr:
                continue
            q = p.replace(_splice(p.stmts, path, [Assign(s.target, new, s.index)]))
            c = cost(q, cfg)
            if c < base or (allow_ties and c == base):
                p, base, changed = q, c, True
    return p


# ---------------------------------------------------------------------------
# inverse -> solve


def _inv_rule(e: Expr) -> Expr:
    if not isinstance(e, Product):
        return e
    fs = list(e.factors)
    while True:
        idx = [i for i, f in enumerate(fs[:-1]) if isinstance(f, Inverse)]
        if not idx:
            break
        i = idx[-1]
        fs = fs[:i] + [Solve(fs[i].child, mk_product(fs[i + 1:]), "left")]
    if len(fs) > 1 and isinstance(fs[-1], Inverse):
        fs = [Solve(fs[-1].child, mk_product(fs[:-1]), "right")]
    return mk_product(fs)


def rewrite_inv_to_solve(p: Program, cfg: PassConfig | None = None) -> Program:
    return _expr_pass(p, cfg or PassConfig(), _inv_rule)


# ---------------------------------------------------------------------------
# block structure


def mk_slice(e: Expr, r0: int, r1: int, c0: int, c1: int) -> Expr:
    """Sub-block of ``e``, pushed into blocks, sums, scalings and product ends."""
    s = e.shape
    if (r0, r1, c0, c1) == (0, s.rows, 0, s.cols):
        return e
    if isinstance(e, Zero):
        return Zero(Slice(e, r0, r1, c0, c1).shape)
    if isinstance(e, ScalarMul):
        return mk_scale(e.coef, e.syms, mk_slice(e.child, r0, r1, c0, c1))
    if isinstance(e, Sum):
        return mk_sum([(sg, mk_slice(t, r0, r1, c0, c1)) for sg, t in e.terms])
    if isinstance(e, Block):
        ro, co = e.row_offsets, e.col_offsets
        bi = [i for i in range(len(ro) - 1) if ro[i] <= r0 and r1 <= ro[i + 1]]
        bj = [j for j in range(len(co) - 1) if co[j] <= c0 and c1 <= co[j + 1]]
        if bi and bj:
            i, j = bi[0], bj[0]
            return mk_slice(e.grid[i][j], r0 - ro[i], r1 - ro[i], c0 - co[j], c1 - co[j])
    if isinstance(e, Product):
        fs = list(e.factors)
        if (c0, c1) == (0, s.cols):
            return mk_product([mk_slice(fs[0], r0, r1, 0, fs[0].shape.cols)] + fs[1:])
        if (r0, r1) == (0, s.rows):
            last = fs[-1]
            return mk_product(fs[:-1] + [mk_slice(last, 0, last.shape.rows, c0, c1)])
    if isinstance(e, Slice):
        return mk_slice(e.child, e.r0 + r0, e.r0 + r1, e.c0 + c0, e.c0 + c1)
    return Slice(e, r0, r1, c0, c1)


def _block_rule(e: Expr) -> Expr:
    if isinstance(e, Solve) and isinstance(e.matrix, Block) and e.matrix.is_block_diagonal():
        m, r = e.matrix, e.rhs
        off = m.row_offsets
        k = len(m.grid)
        if e.side == "left":
            parts = [Solve(m.grid[i][i], mk_slice(r, off[i], off[i + 1], 0, r.shape.cols)) for i in range(k)]
            return Block(tuple((x,) for x in parts))
        parts = [Solve(m.grid[i][i], mk_slice(r, 0, r.shape.rows, off[i], off[i + 1]), "right") for i in range(k)]
        return Block((tuple(parts),))
    if isinstance(e, Inverse) and isinstance(e.child, Block) and e.child.is_block_diagonal():
        g = e.child.grid
        return Block(tuple(tuple(canonicalize(Inverse(g[i][i])) if i == j else g[i][j]
                                 for j in range(len(g))) for i in range(len(g))))
    if isinstance(e, Product):
        fs = list(e.factors)
        for j, f in enumerate(fs):
            if isinstance(f, Block) and f.is_block_diagonal():
                return _split_product(fs, j)
    return e


def _split_product(fs, j) -> Expr:
    bd = fs[j]
    off = bd.row_offsets
    k = len(bd.grid)
    left, right = fs[:j], fs[j + 1:]
    if not left:
        r = mk_product(right)
        return Block(tuple((mk_product([bd.grid[i][i], mk_slice(r, off[i], off[i + 1], 0, r.shape.cols)]),)
                           for i in range(k)))
    if not right:
        l = mk_product(left)
        return Block((tuple(mk_product([mk_slice(l, 0, l.shape.rows, off[i], off[i + 1]), bd.grid[i][i]])
                            for i in range(k)),))
    l, r = mk_product(left), mk_product(right)
    return mk_sum([(1, mk_product([mk_slice(l, 0, l.shape.rows, off[i], off[i + 1]), bd.grid[i][i],
                                   mk_slice(r, off[i], off[i + 1], 0, r.shape.cols)])) for i in range(k)])


def exploit_block_structure(p: Program, cfg: PassConfig | None = None) -> Program:
    # splitting never adds FLOPs and avoids assembling the block, so ties are kept
    return _expr_pass(p, cfg or PassConfig(), _block_rule, allow_ties=True)


# ---------------------------------------------------------------------------
# partial access


def _select(kind: str, x: Expr, i=None, j=None) -> Expr:
    """``kind`` in elem/row/col/diag applied to ``x``, pushed as far down as it goes."""
    if isinstance(x, ScalarMul):
        return mk_scale(x.coef, x.syms, _select(kind, x.child, i, j))
    if isinstance(x, Sum):
        return mk_sum([(s, _select(kind, t, i, j)) for s, t in x.terms])
    if isinstance(x, Product):
        f = list(x.factors)
        if kind == "elem":
            return mk_product([_select("row", f[0], i)] + f[1:-1] + [_select("col", f[-1], j=j)])
        if kind == "row":
            return mk_product([_select("row", f[0], i)] + f[1:])
        if kind == "col":
            return mk_product(f[:-1] + [_select("col", f[-1], j=j)])
        return DiagProduct(mk_product(f[:-1]), f[-1])
    if isinstance(x, Solve):
        if x.side == "left" and kind in ("col", "elem"):
            s = Solve(x.matrix, _select("col", x.rhs, j=j))
            return s if kind == "col" else Element(s, i, 1)
        if x.side == "right" and kind in ("row", "elem"):
            s = Solve(x.matrix, _select("row", x.rhs, i), "right")
            return s if kind == "row" else Element(s, 1, j)
    if kind == "elem":
        return Element(x, i, j)
    if kind == "row":
        return Row(x, i)
    if kind == "col":
        return Column(x, j)
    return Diag(x)


def _access_rule(e: Expr) -> Expr:
    if isinstance(e, Element):
        return _select("elem", e.child, e.row, e.col)
    if isinstance(e, Row):
        return _select("row", e.child, e.row)
    if isinstance(e, Column):
        return _select("col", e.child, j=e.col)
    if isinstance(e, Diag):
        return _select("diag", e.child)
    return e


def pushdown_partial_access(p: Program, cfg: PassConfig | None = None) -> Program:
    return _expr_pass(p, cfg or PassConfig(), _access_rule)


# ---------------------------------------------------------------------------
# rank updates


def _syrk_of(x: Expr) -> Syrk:
    # x * x'
    return Syrk(x.child, True) if isinstance(x, Transpose) else Syrk(x, False)


def _rank_rule(e: Expr) -> Expr:
    if isinstance(e, Product):
        fs = list(e.factors)
        out, i, hit = [], 0, False
        while i < len(fs):
            if i + 1 < len(fs) and fs[i].shape.rows > 1 and fs[i + 1] == transpose(fs[i]) \
                    and not isinstance(fs[i], (Syrk, Syr2k)):
                out.append(_syrk_of(fs[i]))
                i += 2
                hit = True
            else:
                out.append(fs[i])
                i += 1
        return mk_product(out) if hit else e
    if isinstance(e, Sum):
        terms = list(e.terms)
        for a, b in itertools.combinations(range(len(terms)), 2):
            (sa, ta), (sb, tb) = terms[a], terms[b]
            ca = (ta.coef, ta.syms, ta.child) if isinstance(ta, ScalarMul) else (1.0, (), ta)
            cb = (tb.coef, tb.syms, tb.child) if isinstance(tb, ScalarMul) else (1.0, (), tb)
            if sa != sb or ca[:2] != cb[:2]:
                continue
            x, y = ca[2], cb[2]
            if not (isinstance(x, Product) and len(x.factors) == 2 and isinstance(y, Product)):
                continue
            if y != transpose(x) or y == x:
                continue
            f, g = x.factors
            if isinstance(f, Transpose) and not isinstance(g, Transpose):
                node = Syr2k(f.child, g, True)
            else:
                node = Syr2k(f, transpose(g), False)
            if node.a.shape != node.b.shape:
                continue
            rest = [t for k, t in enumerate(terms) if k not in (a, b)]
            return mk_sum(rest + [(sa, mk_scale(ca[0], ca[1], node))])
    return e


def detect_rank_updates(p: Program, cfg: PassConfig | None = None) -> Program:
    return _expr_pass(p, cfg or PassConfig(), _rank_rule)


# ---------------------------------------------------------------------------
# loop-invariant code motion


def _assigned_in(stmts) -> set:
    return {s.target for s in walk_statements(stmts) if isinstance(s, Assign)}


def _reads(s) -> set:
    if isinstance(s, Assign):
        return operand_names(s.expr) | ({s.target} if s.index else set())
    out = set()
    for b in s.body:
        out |= _reads(b)
    return out


def _hoist_loop(p: Program, loop: ForLoop, taken: set) -> tuple[list, ForLoop]:
    """Statements to place before ``loop`` and the reduced loop."""
    if loop.hi < loop.lo:
        return [], loop
    body = list(loop.body)
    pre: list = []
    # whole statements first
    changed = True
    while changed:
        changed = False
        written = _assigned_in(body)
        for k, s in enumerate(body):
            if not isinstance(s, Assign) or s.index:
                continue
            if loop.var in index_names(s.expr) or operand_names(s.expr) & written:
                continue
            if sum(1 for t in walk_statements(body) if isinstance(t, Assign) and t.target == s.target) != 1:
                continue
            if any(s.target in _reads(t) for t in body[:k]):
                continue
            pre.append(s)
            del body[k]
            changed = True
            break
    # then maximal invariant subexpressions of what is left
    written = _assigned_in(body)
    found: dict = {}

    def invariant(e):
        return loop.var not in index_names(e) and not (operand_names(e) & written)

    def scan(e):
        if invariant(e) and not _is_view(e) and not isinstance(e, Zero) and operand_names(e):
            c, core = (e.coef, e.child) if isinstance(e, ScalarMul) else (None, e)
            if c is not None and _is_view(core):
                return
            found.setdefault(e, None)
            return
        for k in e.children():
            scan(k)

    for s in walk_statements(body):
        if isinstance(s, Assign):
            scan(s.expr)
    mapping = {}
    for e in found:
        name = _fresh(p, "H", taken)
        taken.add(name)
        pre.append(Assign(name, e))
        mapping[e] = Operand(name, e.shape, infer_properties(e))
    if mapping:
        body = [_subst_stmt(s, mapping) for s in body]
    return pre, ForLoop(loop.var, loop.lo, loop.hi, tuple(body))


def _subst_stmt(s, mapping):
    from .ir import substitute

    if isinstance(s, Assign):
        return Assign(s.target, canonicalize(substitute(s.expr, mapping)), s.index)
    return ForLoop(s.var, s.lo, s.hi, tuple(_subst_stmt(b, mapping) for b in s.body))


def hoist_loop_invariants(p: Program, cfg: PassConfig | None = None) -> Program:
    cfg = cfg or PassConfig()
    base = cost(p, cfg)
    changed = True
    while changed:
        changed = False
        # innermost loops first: deepest block prefixes come last in _blocks order
        loops = [(prefix, i) for prefix, stmts in _blocks(p.stmts) for i, s in enumerate(stmts)
                 if isinstance(s, ForLoop)]
        for prefix, i in sorted(loops, key=lambda t: -len(t[0])):
            block = list(_get(p.stmts, prefix).body) if prefix else list(p.stmts)
            pre, new_loop = _hoist_loop(p, block[i], set())
            if not pre:
                continue
            block = block[:i] + pre + [new_loop] + block[i + 1:]
            q = p.replace(_set_block(p.stmts, prefix, block))
            c = cost(q, cfg)
            if c < base:
                p, base, changed = q, c, True
                break
    return p


# ---------------------------------------------------------------------------
# common subexpressions


def _orient(e: Expr) -> Expr:
    """One representative of {e, e'}."""
    return min(e, transpose(e), key=repr)


def _replace_occurrences(e: Expr, cand: Expr, op: Operand) -> tuple[Expr, int]:
    """Replace non-overlapping occurrences of ``cand`` or its transpose by ``op``."""
    cand_t = transpose(cand)
    op_t = transpose(op)
    if e == cand:
        return op, 1
    if e == cand_t:
        return op_t, 1
    count = 0
    if isinstance(e, Product) and isinstance(cand, Product):
        seqs = [(tuple(cand.factors), op)]
        if isinstance(cand_t, Product):
            seqs.append((tuple(cand_t.factors), op_t))
        fs, out, i = list(e.factors), [], 0
        while i < len(fs):
            for seq, rep in seqs:
                if tuple(fs[i:i + len(seq)]) == seq:
                    out.append(rep)
                    i += len(seq)
                    count += 1
                    break
            else:
                out.append(fs[i])
                i += 1
        if count:
            e = Product(tuple(out)) if len(out) > 1 else out[0]
    kids = e.children()
    if kids:
        new = []
        for k in kids:
            nk, c = _replace_occurrences(k, cand, op)
            new.append(nk)
            count += c
        if count:
            e = rebuild(e, new)
    return e, count


def _candidates(e: Expr):
    for x in subexpressions(e):
        if _is_view(x) or isinstance(x, Zero):
            continue
        if isinstance(x, ScalarMul) and _is_view(x.child):
            continue
        yield x
        if isinstance(x, Product):
            fs = x.factors
            for a in range(len(fs)):
                for b in range(a + 2, len(fs) + 1):
                    if (a, b) != (0, len(fs)):
                        yield Product(tuple(fs[a:b]))


def _try_shared(p: Program, cfg: PassConfig, prefix, block, base, taken) -> tuple[Program, int] | None:
    """Best cost-reducing extraction of one repeated subexpression within ``block``."""
    assigns = [k for k, s in enumerate(block) if isinstance(s, Assign)]
    cands: dict = {}
    for k in assigns:
        for x in _candidates(block[k].expr):
            cands.setdefault(_orient(x), set()).add(k)
    best = None
    for cand, where in cands.items():
        first = min(where)
        names = operand_names(cand)
        # the scope ends at the first later statement that overwrites an operand
        scope = [first]
        for k in range(first, len(block)):
            s = block[k]
            if k > first:
                if isinstance(s, Assign):
                    scope.append(k)
                else:
                    break
            if isinstance(s, Assign) and s.target in names:
                break
            if isinstance(s, ForLoop):
                break
        tmp = _fresh(p, "M", taken)
        op = Operand(tmp, cand.shape, infer_properties(cand))
        new_block, total = list(block), 0
        for k in scope:
            s = block[k]
            ne, c = _replace_occurrences(s.expr, cand, op)
            if c:
                new_block[k] = Assign(s.target, canonicalize(ne), s.index)
                total += c
        if total < 2:
            continue
        new_block.insert(first, Assign(tmp, cand))
        q = p.replace(_set_block(p.stmts, prefix, new_block))
        c = cost(q, cfg)
        if c < base and (best is None or c < best[1]):
            best = (q, c)
    return best


def _pure_sums(e: Expr):
    for x in subexpressions(e):
        if isinstance(x, Sum) and all(s == 1 and isinstance(t, Operand) for s, t in x.terms) \
                and len({t.name for _, t in x.terms}) == len(x.terms):
            yield x


def _try_ocse(p: Program, cfg: PassConfig, prefix, block, base, taken) -> tuple[Program, int] | None:
    """Share additions among pure operand sums of one shape via the OCSE solvers."""
    assigns = [k for k, s in enumerate(block) if isinstance(s, Assign)]
    by_shape: dict = {}
    for k in assigns:
        for x in _pure_sums(block[k].expr):
            by_shape.setdefault(x.shape, []).append((k, x))
    best = None
    for shape, occ in by_shape.items():
        first = min(k for k, _ in occ)
        names = set().union(*(operand_names(x) for _, x in occ))
        last = max(k for k, _ in occ)
        if any(isinstance(block[k], ForLoop) or block[k].target in names for k in range(first, last)):
            continue
        ops = {t.name: t for _, x in occ for _, t in x.terms}
        eqs = []
        for _, x in occ:
            s = frozenset(t.name for _, t in x.terms)
            if s not in eqs:
                eqs.append(s)
        if len(eqs) < 2:
            continue
        inst = ocse.OCSEInstance.build(sorted(ops), [sorted(s) for s in eqs], sum(len(s) for s in eqs))
        result = None
        if cfg.cse_mode == "exact" and len(inst.variables) <= cfg.max_exact_cse_terms:
            try:
                result = ocse.solve_exact(inst)
            except ocse.InstanceTooLarge:
                result = None
        if result is None:
            result = ocse.solve_greedy(inst)
        steps, values = [], ocse.step_values(result.schedule)
        local_taken = set(taken)
        for (s, t), val in zip(result.schedule.steps, values):
            name = _fresh(p, "S", local_taken)
            local_taken.add(name)
            steps.append((name, s, t, frozenset(val)))
        step_ops = {}
        new_stmts = []
        for idx, (name, s, t, val) in enumerate(steps):
            a = ops[s] if isinstance(s, str) else step_ops[s]
            b = ops[t] if isinstance(t, str) else step_ops[t]
            expr = mk_sum([(1, a), (1, b)])
            step_ops[idx] = Operand(name, shape, infer_properties(expr))
            new_stmts.append(Assign(name, expr))
        mapping = {}
        for _, x in occ:
            s = frozenset(t.name for _, t in x.terms)
            k = next(i for i, st in enumerate(steps) if st[3] == s)
            mapping[x] = step_ops[k]
        new_block = list(block)
        for k in assigns:
            s = new_block[k]
            new_block[k] = _subst_stmt(s, mapping)
        new_block[first:first] = new_stmts
        q = p.replace(_set_block(p.stmts, prefix, new_block))
        c = cost(q, cfg)
        if c < base and (best is None or c < best[1]):
            best = (q, c)
    return best


def eliminate_common_subexpressions(p: Program, cfg: PassConfig | None = None) -> Program:
    cfg = cfg or PassConfig()
    base = cost(p, cfg)
    while True:
        best = None
        for prefix, _ in list(_blocks(p.stmts)):
            block = list(_get(p.stmts, prefix).body) if prefix else list(p.stmts)
            for finder in (_try_ocse, _try_shared):
                found = finder(p, cfg, prefix, block, base, set())
                if found and (best is None or found[1] < best[1]):
                    best = found
        if best is None:
            return p
        p, base = best


# ---------------------------------------------------------------------------
# pipeline


def canonicalize_pass(p: Program, cfg: PassConfig | None = None) -> Program:
    return canonicalize_program(p)


PASSES = {
    "canonicalize": canonicalize_pass,
    "rewrite_inv_to_solve": rewrite_inv_to_solve,
    "exploit_block_structure": exploit_block_structure,
    "pushdown_partial_access": pushdown_partial_access,
    "detect_rank_updates": detect_rank_updates,
    "hoist_loop_invariants": hoist_loop_invariants,
    "eliminate_common_subexpressions": eliminate_common_subexpressions,
}


MAX_PIPELINE_ROUNDS = 8


def run_pipeline(p: Program, cfg: PassConfig | None = None) -> Program:
    """Apply the enabled program passes in order, repeating the sequence until a
    round changes nothing (later passes can expose work for earlier ones)."""
    cfg = cfg or PassConfig()
    for _ in range(MAX_PIPELINE_ROUNDS):
        before = p
        for name in cfg.enabled:
            if name in PASSES:
                p = PASSES[name](p, cfg)
        if p == before:
            break
    return p


def compile_program(p: Program, cfg: PassConfig | None = None):
    cfg = cfg or PassConfig()
    return lower(run_pipeline(p, cfg), cfg.lower_options())
