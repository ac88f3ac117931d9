"""Lowering of optimized programs to kernel-call plans.

Kernel choice is driven by inferred operand properties, product chains are
ordered by the matrix-chain dynamic program, and statements of the form
``C := a*A*B + b*C`` become a single beta-accumulating call.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import chain as chainmod
from .ir import (
    Assign, Block, Column, Diag, DiagProduct, Element, Expr, ForLoop, Inverse, Operand,
    Product, Program, Prop, PropertySet, Row, ScalarMul, Shape, Slice, Solve, Sum, Syr2k,
    Syrk, Transpose, Zero, bind_index, infer_properties, operand_names,
)
from .plan import (
    BETA_KERNELS, ONE, SIGNATURES, ZERO, Coef, KernelCall, Plan, Ref, call_flops,
    emit_plan, plan_cost,
)

__all__ = ["LowerOptions", "UnloweredNode", "lower", "plan_cost", "emit_plan", "program_cost"]


class UnloweredNode(Exception):
    pass


@dataclass(frozen=True)
class LowerOptions:
    dispatch_properties: bool = True  # property-based kernel selection
    fuse_updates: bool = True  # beta-accumulating GEMM/SYRK/SYR2K for C := A*B + C
    optimize_chains: bool = True  # matrix-chain ordering; off means left to right


def _split(e: Expr) -> tuple[Coef, Expr]:
    if isinstance(e, ScalarMul):
        return Coef(e.coef, e.syms), e.child
    return ONE, e


def _bind_stmt(s, var, value):
    if isinstance(s, Assign):
        idx = tuple(value if x == var else x for x in s.index)
        return Assign(s.target, bind_index(s.expr, var, value), idx)
    return ForLoop(s.var, s.lo, s.hi, tuple(_bind_stmt(b, var, value) for b in s.body))


class _Lowerer:
    def __init__(self, prog: Program, opts: LowerOptions):
        self.prog = prog
        self.opts = opts
        self.store: dict[str, Shape] = {}
        for d in prog.decls:
            if d.kind != "scalar":
                self.store[d.name] = d.shape
        self.temps: list[tuple[str, Shape]] = []
        self.temp_shapes: dict[str, Shape] = {}
        self.calls: list[KernelCall] = []
        self.factors: dict = {}
        self.assigned: list[str] = []

    # -- bookkeeping -------------------------------------------------------

    def shape(self, r: Ref) -> Shape:
        if r.name in self.store:
            return r.shape(self.store[r.name])
        return r.shape(self.temp_shapes[r.name])

    def temp(self, shape: Shape) -> Ref:
        name = f"T{len(self.temps)}"
        self.temps.append((name, shape))
        self.temp_shapes[name] = shape
        return Ref(name)

    def emit(self, kernel: str, refs: dict, out: Ref, **scalars):
        names, snames = SIGNATURES[kernel]
        ref_items = tuple((k, refs[k]) for k in names if k in refs)
        sc = tuple((k, scalars[k]) for k in snames if k in scalars)
        call = KernelCall(kernel, ref_items, sc, out)
        flops = call_flops(call, self.shape)
        self.calls.append(KernelCall(kernel, ref_items, sc, out, flops))

    def props(self, e: Expr) -> PropertySet:
        if not self.opts.dispatch_properties:
            return PropertySet.of(shape=e.shape)
        return infer_properties(e)

    def invalidate(self, name: str):
        for key in [k for k in self.factors if name in operand_names(k[0])]:
            del self.factors[key]

    # -- views -------------------------------------------------------------

    def view(self, e: Expr) -> Ref | None:
        if isinstance(e, Operand):
            if e.name not in self.store:
                raise UnloweredNode(f"operand {e.name} read before it is assigned")
            return Ref(e.name)
        if isinstance(e, (Transpose, Slice, Element, Column, Row)):
            v = self.view(e.child)
            if v is None:
                return None
            return self._subview(e, v)
        return None

    def _subview(self, e: Expr, v: Ref) -> Ref:
        s = e.child.shape
        if isinstance(e, Transpose):
            return v.T
        if isinstance(e, Slice):
            return v.sub(e.r0, e.r1, e.c0, e.c1)
        for idx in (getattr(e, "row", 1), getattr(e, "col", 1)):
            if not isinstance(idx, int):
                raise UnloweredNode(f"unbound loop index {idx}")
        if isinstance(e, Element):
            return v.sub(e.row - 1, e.row, e.col - 1, e.col)
        if isinstance(e, Column):
            return v.sub(0, s.rows, e.col - 1, e.col)
        return v.sub(e.row - 1, e.row, 0, s.cols)

    def materialize(self, e: Expr) -> Ref:
        v = self.view(e)
        if v is not None:
            return v
        dest = self.temp(e.shape)
        self.compute(e, dest)
        return dest

    # -- statements --------------------------------------------------------

    def stmt(self, s):
        if isinstance(s, ForLoop):
            for i in range(s.lo, s.hi + 1):
                for b in s.body:
                    self.stmt(_bind_stmt(b, s.var, i))
            return
        if s.target not in self.store:
            self.store[s.target] = s.expr.shape
        if s.target not in self.assigned:
            self.assigned.append(s.target)
        dest = Ref(s.target)
        if s.index:
            r = s.index[0]
            c = s.index[1] if len(s.index) > 1 else 1
            if not isinstance(r, int) or not isinstance(c, int):
                raise UnloweredNode(f"unbound loop index in store to {s.target}")
            dest = Ref(s.target, False, (r - 1, r, c - 1, c))
        core = _split(s.expr)[1]
        reads = s.target in operand_names(s.expr)
        if reads and self.view(core) is None and not isinstance(core, (Product, Solve, Syrk, Syr2k, Sum)):
            tmp = self.temp(s.expr.shape)
            self.compute(s.expr, tmp)
            self.emit("COPY", {"src": tmp}, dest)
        else:
            self.compute(s.expr, dest)
        self.invalidate(s.target)

    # -- expressions -------------------------------------------------------

    def scale(self, dest: Ref, alpha: Coef):
        if not alpha.is_one:
            self.emit("SCAL", {}, dest, alpha=alpha)

    def copy_scaled(self, src: Ref, dest: Ref, alpha: Coef):
        if src != dest:
            self.emit("COPY", {"src": src}, dest)
        self.scale(dest, alpha)

    def compute(self, e: Expr, dest: Ref, alpha: Coef = ONE):
        c, core = _split(e)
        alpha = alpha * c
        v = self.view(core)
        if v is not None:
            self.copy_scaled(v, dest, alpha)
        elif isinstance(core, Zero):
            self.emit("COPY", {}, dest, init="zero")
        elif isinstance(core, Sum):
            self.sum(core, dest, alpha)
        elif isinstance(core, Product):
            self.product(core.factors, dest, alpha, ZERO)
        elif isinstance(core, Solve):
            self.solve(core, dest, alpha)
        elif isinstance(core, Inverse):
            self.inverse(core.child, dest, alpha)
        elif isinstance(core, (Syrk, Syr2k)):
            self.rank_update(core, dest, alpha, ZERO)
        elif isinstance(core, Block):
            ro, co = core.row_offsets, core.col_offsets
            for i, row in enumerate(core.grid):
                for j, blk in enumerate(row):
                    self.compute(blk, dest.sub(ro[i], ro[i + 1], co[j], co[j + 1]), alpha)
        elif isinstance(core, Diag):
            self.emit("EXTRACT", {"src": self.materialize(core.child)}, dest, what="diag")
            self.scale(dest, alpha)
        elif isinstance(core, DiagProduct):
            a, b = self.materialize(core.a), self.materialize(core.b)
            k = core.a.shape.cols
            for i in range(core.shape.rows):
                self.emit("DOT", {"x": a.sub(i, i + 1, 0, k), "y": b.sub(0, k, i, i + 1)},
                          dest.sub(i, i + 1, 0, 1))
            self.scale(dest, alpha)
        elif isinstance(core, (Transpose, Slice, Element, Column, Row)):
            self.copy_scaled(self._subview(core, self.materialize(core.child)), dest, alpha)
        else:
            raise UnloweredNode(type(core).__name__)

    def _fusable(self, core: Expr) -> bool:
        if not self.opts.fuse_updates:
            return False
        if isinstance(core, (Syrk, Syr2k)):
            return True
        return isinstance(core, Product) and not any(isinstance(f, Inverse) for f in core.factors)

    def sum(self, core: Sum, dest: Ref, alpha: Coef):
        terms = []
        for sign, t in core.terms:
            c, u = _split(t)
            terms.append((alpha * Coef(float(sign)) * c, u))
        acc = next((i for i, (_, u) in enumerate(terms) if self.view(u) == dest), None)
        if any(dest.name in operand_names(u) for i, (_, u) in enumerate(terms) if i != acc):
            tmp = self.temp(core.shape)
            self.sum(core, tmp, alpha)
            self.emit("COPY", {"src": tmp}, dest)
            return

        # the value of the partial sum is s * dest, or nothing yet when s is None
        s = terms[acc][0] if acc is not None else None
        symmetric_so_far = acc is None or Prop.SYMMETRIC in self.props(terms[acc][1])
        rest = [t for i, t in enumerate(terms) if i != acc]
        views = [(c, self.view(u), u) for c, u in rest if self.view(u) is not None]
        fused = [(c, u) for c, u in rest if self.view(u) is None and self._fusable(u)]
        others = [(c, u) for c, u in rest if self.view(u) is None and not self._fusable(u)]

        def note(u):
            nonlocal symmetric_so_far
            symmetric_so_far = symmetric_so_far and Prop.SYMMETRIC in self.props(u)

        if s is None and others:
            c, u = others.pop(0)
            self.compute(u, dest, c)
            s = ONE
            note(u)
        if s is None and len(views) >= 2:
            (c1, v1, u1), (c2, v2, u2) = views[:2]
            views = views[2:]
            self.emit("ADD", {"A": v1, "B": v2}, dest, alpha=c1, beta=c2)
            s = ONE
            note(u1)
            note(u2)
        if s is None and len(views) == 1:
            c, v, u = views.pop(0)
            if v != dest:
                self.emit("COPY", {"src": v}, dest)
            s = c
            note(u)
        for c, v, u in views:
            self.emit("ADD", {"A": v, "B": dest}, dest, alpha=c, beta=s)
            s = ONE
            note(u)
        for c, u in others:
            tmp = self.materialize_scaled(u, c)
            self.emit("ADD", {"A": tmp, "B": dest}, dest, alpha=ONE, beta=s)
            s = ONE
            note(u)
        for c, u in fused:
            beta = ZERO if s is None else s
            if isinstance(u, Product):
                self.product(u.factors, dest, c, beta)
            elif beta.is_zero or symmetric_so_far:
                self.rank_update(u, dest, c, beta)
            else:
                tmp = self.materialize_scaled(u, c)
                self.emit("ADD", {"A": tmp, "B": dest}, dest, alpha=ONE, beta=s)
            s = ONE
            note(u)
        self.scale(dest, s)

    def materialize_scaled(self, u: Expr, c: Coef) -> Ref:
        tmp = self.temp(u.shape)
        self.compute(u, tmp, c)
        return tmp

    # products

    def product(self, factors, dest: Ref, alpha: Coef, beta: Coef):
        residual_inverse = any(isinstance(f, Inverse) for f in factors)
        refs = [self.materialize(f) for f in factors]
        dims = [factors[0].shape.rows] + [f.shape.cols for f in factors]
        if self.opts.optimize_chains and not residual_inverse:
            tree, _ = chainmod.optimal_parenthesization(dims)
        else:
            tree, _ = chainmod.left_to_right(dims)

        def ev(node, out=None, a=ONE, b=ZERO):
            if isinstance(node, chainmod.Leaf):
                return refs[node.index]
            lo, hi = min(node.leaves()), max(node.leaves())
            lref, rref = ev(node.left), ev(node.right)
            lp, rp = self._chain_props(factors, node.left), self._chain_props(factors, node.right)
            if out is None:
                out = self.temp(Shape(node.rows, node.cols))
            self.join(lref, lp, rref, rp, out, a, b)
            return out

        if isinstance(tree, chainmod.Leaf):
            src = refs[0]
            if beta.is_zero:
                self.copy_scaled(src, dest, alpha)
            else:
                self.emit("ADD", {"A": src, "B": dest}, dest, alpha=alpha, beta=beta)
            return
        ev(tree, dest, alpha, beta)

    def _chain_props(self, factors, node) -> PropertySet:
        idx = list(node.leaves())
        sub = factors[idx[0]: idx[-1] + 1]
        e = sub[0] if len(sub) == 1 else Product(tuple(sub))
        return self.props(e)

    def join(self, l: Ref, lp: PropertySet, r: Ref, rp: PropertySet, out: Ref, alpha: Coef, beta: Coef):
        ls, rs = self.shape(l), self.shape(r)
        m, k, n = ls.rows, ls.cols, rs.cols
        sq_l, sq_r = m == k, k == n
        if m == 1 and n == 1:
            kernel, refs, sc = "DOT", {"x": l, "y": r}, {}
        elif k == 1:
            kernel, refs, sc = "GER", {"x": l, "y": r.T}, {"alpha": alpha}
        elif sq_l and Prop.DIAGONAL in lp:
            kernel, refs, sc = "DIAGSCALE", {"D": l, "B": r}, {"alpha": alpha, "side": "L"}
        elif sq_r and Prop.DIAGONAL in rp:
            kernel, refs, sc = "DIAGSCALE", {"D": r, "B": l}, {"alpha": alpha, "side": "R"}
        elif sq_l and lp.triangular:
            kernel, refs, sc = "TRMM", {"A": l, "B": r}, {"alpha": alpha, "side": "L"}
        elif sq_r and rp.triangular:
            kernel, refs, sc = "TRMM", {"A": r, "B": l}, {"alpha": alpha, "side": "R"}
        elif n == 1:
            kernel, refs, sc = "GEMV", {"A": l, "x": r}, {"alpha": alpha}
        elif m == 1:
            kernel, refs, sc = "GEMV", {"A": r.T, "x": l.T}, {"alpha": alpha}
        elif sq_l and Prop.SYMMETRIC in lp:
            kernel, refs, sc = "SYMM", {"A": l, "B": r}, {"alpha": alpha, "side": "L"}
        elif sq_r and Prop.SYMMETRIC in rp:
            kernel, refs, sc = "SYMM", {"A": r, "B": l}, {"alpha": alpha, "side": "R"}
        else:
            kernel, refs, sc = "GEMM", {"A": l, "B": r}, {"alpha": alpha}
        if kernel in BETA_KERNELS:
            self.emit(kernel, refs, out, beta=beta, **sc)
            return
        target = out if beta.is_zero else self.temp(Shape(m, n))
        self.emit(kernel, refs, target, **sc)
        if kernel == "DOT":
            self.scale(target, alpha)
        if not beta.is_zero:
            self.emit("ADD", {"A": target, "B": out}, out, alpha=ONE, beta=beta)

    def rank_update(self, core, dest: Ref, alpha: Coef, beta: Coef):
        if isinstance(core, Syrk):
            a = self.materialize(core.child)
            self.emit("SYRK", {"A": a.T if core.trans else a}, dest, alpha=alpha, beta=beta)
        else:
            a, b = self.materialize(core.a), self.materialize(core.b)
            if core.trans:
                a, b = a.T, b.T
            self.emit("SYR2K", {"A": a, "B": b}, dest, alpha=alpha, beta=beta)

    # solves and inverses

    def factor(self, m: Expr, kind: str) -> Ref:
        base, trans = (m.child, True) if isinstance(m, Transpose) else (m, False)
        key = (base, kind)
        if key not in self.factors:
            src = self.materialize(base)
            f = self.temp(base.shape)
            self.emit(kind, {"A": src}, f)
            self.factors[key] = f
        f = self.factors[key]
        return f.T if trans else f

    def _factor_kind(self, p: PropertySet) -> str:
        if not self.opts.dispatch_properties:
            return "GETRF"
        if Prop.SPD in p or Prop.SPSD in p:
            return "POTRF"
        if Prop.SYMMETRIC in p:
            return "SYTRF"
        return "GETRF"

    def solve(self, core: Solve, dest: Ref, alpha: Coef):
        p = self.props(core.matrix)
        side = "L" if core.side == "left" else "R"
        if Prop.DIAGONAL in p:
            d = self.materialize(core.matrix)
            self.emit("DIAGSOLVE", {"D": d, "B": self.materialize(core.rhs)}, dest, alpha=alpha, side=side)
        elif p.triangular:
            a = self.materialize(core.matrix)
            b = self.materialize(core.rhs)
            uplo = "L" if Prop.LOWER_TRIANGULAR in p else "U"
            nrhs = core.rhs.shape.cols if side == "L" else core.rhs.shape.rows
            if nrhs == 1:
                self.emit("TRSV", {"A": a, "b": b}, dest, side=side, uplo=uplo)
                self.scale(dest, alpha)
            else:
                self.emit("TRSM", {"A": a, "B": b}, dest, alpha=alpha, side=side, uplo=uplo)
        else:
            kind = self._factor_kind(p)
            f = self.factor(core.matrix, kind)
            b = self.materialize(core.rhs)
            solver = {"GETRF": "GETRS", "POTRF": "POTRS", "SYTRF": "SYTRS"}[kind]
            self.emit(solver, {"F": f, "B": b}, dest, side=side)
            self.scale(dest, alpha)

    def inverse(self, m: Expr, dest: Ref, alpha: Coef):
        p = self.props(m)
        if Prop.DIAGONAL in p or p.triangular:
            a = self.materialize(m)
            self.emit("COPY", {}, dest, init="eye")
            if Prop.DIAGONAL in p:
                self.emit("DIAGSOLVE", {"D": a, "B": dest}, dest, alpha=alpha, side="L")
            else:
                uplo = "L" if Prop.LOWER_TRIANGULAR in p else "U"
                self.emit("TRSM", {"A": a, "B": dest}, dest, alpha=alpha, side="L", uplo=uplo)
            return
        # GETRF+GETRI (2n^3) is cheaper than a Cholesky-based inverse (n^3/3 + 2n^3) under the cost table
        f = self.factor(m, "GETRF")
        self.emit("GETRI", {"F": f}, dest)
        self.scale(dest, alpha)

    # -- driver ------------------------------------------------------------

    def run(self) -> Plan:
        for s in self.prog.stmts:
            self.stmt(s)
        variables = tuple(self.store.items())
        outputs = {v: v for v in self.assigned}
        return Plan(tuple(self.temps), tuple(self.calls), outputs, variables)


def lower(p: Program, opts: LowerOptions | None = None) -> Plan:
    return _Lowerer(p, opts or LowerOptions()).run()


def program_cost(p: Program, opts: LowerOptions | None = None) -> int:
    return lower(p, opts).total_flops
