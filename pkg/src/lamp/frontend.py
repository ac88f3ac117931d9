"""Parser and pretty-printer for the ``.lamp`` matrix DSL.

Grammar::

    program  := { stmt (NEWLINE | ';') }
    stmt     := 'matrix' NAME '(' dim ',' dim ')' [':' props]
              | 'vector' NAME '(' dim ')' [':' props]
              | 'scalar' NAME ['=' number]
              | 'for' NAME 'in' bound ':' bound '{' program '}'
              | lhs ':=' expr
    lhs      := NAME [ '[' index [',' index] ']' ]
    expr     := ['-'] term { ('+' | '-') term }
    term     := postfix { '*' postfix }
    postfix  := atom { "'" | '[' sel ',' sel ']' }
    atom     := NUMBER | NAME | 'inv' '(' expr ')' | 'diag' '(' expr ')'
              | '(' expr ')' | '[' expr {',' expr} { ';' expr {',' expr} } ']'
    sel      := ':' | index | index ':' index

Indices are 1-based.  ``0`` inside a block literal is a zero block whose
shape is taken from its row and column.  ``#`` starts a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import ir
from .ir import (Assign, Block, Column, Decl, Diag, DiagProduct, Element, ForLoop, Inverse, Operand,
                 Product, Program, Prop, PropertySet, Row, ScalarMul, Shape, Slice, Solve, Sum, Syr2k,
                 Syrk, Transpose, Zero)


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int
    length: int = 1

    def __str__(self):
        return f"{self.line}:{self.column}"


class LampError(Exception):
    def __init__(self, span: SourceSpan, message: str):
        self.span = span
        self.message = message
        super().__init__(f"{span}: {message}")


class LampSyntaxError(LampError):
    pass


class UndeclaredOperand(LampError):
    def __init__(self, name: str, span: SourceSpan):
        self.name = name
        super().__init__(span, f"undeclared operand '{name}'")


class DimensionMismatch(LampError):
    pass


PROP_ALIASES = {
    "full": Prop.FULL, "general": Prop.FULL,
    "symmetric": Prop.SYMMETRIC, "sym": Prop.SYMMETRIC,
    "spd": Prop.SPD, "spsd": Prop.SPSD,
    "lower": Prop.LOWER_TRIANGULAR, "lt": Prop.LOWER_TRIANGULAR,
    "upper": Prop.UPPER_TRIANGULAR, "ut": Prop.UPPER_TRIANGULAR,
    "diagonal": Prop.DIAGONAL, "di": Prop.DIAGONAL, "diag": Prop.DIAGONAL,
    "identity": Prop.IDENTITY, "zero": Prop.ZERO, "block_diagonal": Prop.BLOCK_DIAGONAL,
}

KEYWORDS = {"matrix", "vector", "scalar", "for", "in", "inv", "diag"}

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>\d+\.\d*(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?|\.\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|[-+*'(),;:\[\]{}=/])
""", re.VERBOSE)


@dataclass
class Token:
    kind: str
    text: str
    span: SourceSpan


def tokenize(text: str) -> list[Token]:
    tokens = []
    line, col, pos, depth = 1, 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise LampSyntaxError(SourceSpan(line, col), f"unexpected character {text[pos]!r}")
        kind, tok = m.lastgroup, m.group()
        span = SourceSpan(line, col, max(1, len(tok)))
        if kind == "newline":
            if depth == 0:
                tokens.append(Token("sep", "\n", span))
            line, col = line + 1, 1
        else:
            if kind == "op" and tok in "([":
                depth += 1
            elif kind == "op" and tok in ")]":
                depth = max(0, depth - 1)
            if kind in ("number", "name", "op"):
                if kind == "op" and tok == ";" and depth == 0:
                    kind = "sep"
                tokens.append(Token(kind, tok, span))
            col += len(tok)
        pos = m.end()
    tokens.append(Token("eof", "", SourceSpan(line, col)))
    return tokens


class _Parser:
    def __init__(self, text: str, params: dict | None):
        self.toks = tokenize(text)
        self.i = 0
        self.params = dict(params or {})
        self.decls: dict[str, Decl] = {}
        self.env: dict[str, Operand] = {}  # what a name refers to right now
        self.loop_vars: list[str] = []

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "name") and self.tok.text == text

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise LampSyntaxError(self.tok.span, f"expected '{text}', found {self.tok.text!r}")
        return self.advance()

    def expect_name(self) -> Token:
        if self.tok.kind != "name" or self.tok.text in KEYWORDS:
            raise LampSyntaxError(self.tok.span, f"expected a name, found {self.tok.text!r}")
        return self.advance()

    def skip_seps(self):
        while self.tok.kind == "sep":
            self.advance()

    # statements
    def program(self) -> Program:
        stmts = self.statements(top=True)
        if self.tok.kind != "eof":
            raise LampSyntaxError(self.tok.span, f"unexpected {self.tok.text!r}")
        return Program(tuple(self.decls.values()), tuple(stmts))

    def statements(self, top: bool) -> list:
        out = []
        self.skip_seps()
        while self.tok.kind != "eof" and not self.at("}"):
            s = self.statement()
            if s is not None:
                out.append(s)
            if self.tok.kind == "sep":
                self.skip_seps()
            elif self.tok.kind != "eof" and not self.at("}"):
                raise LampSyntaxError(self.tok.span, f"expected end of statement, found {self.tok.text!r}")
        if top and self.at("}"):
            raise LampSyntaxError(self.tok.span, "unmatched '}'")
        return out

    def statement(self):
        if self.at("matrix") or self.at("vector"):
            return self.declaration()
        if self.at("scalar"):
            return self.scalar_declaration()
        if self.at("for"):
            return self.for_loop()
        return self.assignment()

    def dim(self) -> int:
        t = self.tok
        if t.kind == "number":
            self.advance()
            v = float(t.text)
        elif t.kind == "name":
            self.advance()
            d = self.decls.get(t.text)
            if d is None or d.kind != "scalar" or d.value is None:
                raise UndeclaredOperand(t.text, t.span)
            v = d.value
        else:
            raise LampSyntaxError(t.span, "expected a dimension")
        if v != int(v) or v < 1:
            raise LampSyntaxError(t.span, f"dimension must be a positive integer, got {v}")
        return int(v)

    def declaration(self):
        kind = self.advance().text
        name = self.expect_name()
        self.expect("(")
        rows = self.dim()
        cols = 1
        if kind == "matrix":
            self.expect(",")
            cols = self.dim()
        self.expect(")")
        flags = []
        if self.at(":"):
            self.advance()
            while True:
                t = self.expect_name()
                if t.text.lower() not in PROP_ALIASES:
                    raise LampSyntaxError(t.span, f"unknown property {t.text!r}")
                flags.append(PROP_ALIASES[t.text.lower()])
                if not self.at(","):
                    break
                self.advance()
        shape = Shape(rows, cols)
        self._declare(name, Decl(name.text, kind, shape, PropertySet.of(*flags, shape=shape)))

    def _declare(self, tok: Token, decl: Decl):
        if tok.text in self.decls:
            raise LampSyntaxError(tok.span, f"'{tok.text}' declared twice")
        self.decls[tok.text] = decl
        if decl.kind != "scalar":
            self.env[tok.text] = Operand(decl.name, decl.shape, decl.props)

    def scalar_declaration(self):
        self.advance()
        name = self.expect_name()
        value = None
        if self.at("="):
            self.advance()
            neg = False
            if self.at("-"):
                self.advance()
                neg = True
            t = self.tok
            if t.kind != "number":
                raise LampSyntaxError(t.span, "expected a number")
            self.advance()
            value = -float(t.text) if neg else float(t.text)
        if name.text in self.params:
            value = float(self.params[name.text])
        self._declare(name, Decl(name.text, "scalar", Shape(1, 1), PropertySet.of(shape=Shape(1, 1)), value))

    def bound(self) -> int:
        t = self.tok
        v = self.dim() if t.kind == "name" else None
        if v is None:
            if t.kind != "number":
                raise LampSyntaxError(t.span, "expected a loop bound")
            self.advance()
            v = float(t.text)
            if v != int(v):
                raise LampSyntaxError(t.span, "loop bound must be an integer")
        return int(v)

    def for_loop(self):
        self.advance()
        var = self.expect_name()
        if var.text in self.decls or var.text in self.env:
            raise LampSyntaxError(var.span, f"loop index '{var.text}' shadows a variable")
        self.expect("in")
        lo = self.bound()
        self.expect(":")
        hi = self.bound()
        if lo > hi:
            raise LampSyntaxError(var.span, "empty loop range")
        self.expect("{")
        self.loop_vars.append(var.text)
        body = self.statements(top=False)
        self.loop_vars.pop()
        self.expect("}")
        return ForLoop(var.text, lo, hi, tuple(body))

    def assignment(self):
        name = self.expect_name()
        index = ()
        if self.at("["):
            self.advance()
            idx = [self.index()]
            if self.at(","):
                self.advance()
                idx.append(self.index())
            self.expect("]")
            index = tuple(t for t, _ in idx)
            spans = [s for _, s in idx]
        op = self.expect(":=")
        expr = self.expr()
        try:
            expr = ir.canonicalize(expr)
        except ir.IRError as exc:
            raise DimensionMismatch(op.span, str(exc)) from None
        if index:
            target = self.env.get(name.text)
            if target is None:
                raise UndeclaredOperand(name.text, name.span)
            if expr.shape != Shape(1, 1):
                raise DimensionMismatch(op.span, f"indexed store needs a scalar, got {expr.shape}")
            bounds = (target.shape.rows, target.shape.cols)
            if len(index) == 1 and target.shape.cols != 1:
                raise DimensionMismatch(spans[0], f"'{name.text}' is not a vector")
            for k, (v, span) in enumerate(zip(index, spans)):
                if isinstance(v, int) and not 1 <= v <= bounds[k]:
                    raise DimensionMismatch(span, f"index {v} out of range 1..{bounds[k]}")
            self.env[name.text] = Operand(name.text, target.shape, PropertySet.of(shape=target.shape))
        else:
            d = self.decls.get(name.text)
            if d is not None:
                if d.kind == "scalar":
                    raise LampSyntaxError(name.span, f"cannot assign to scalar '{name.text}'")
                if d.shape != expr.shape:
                    raise DimensionMismatch(op.span, f"'{name.text}' is {d.shape}, value is {expr.shape}")
            self.env[name.text] = Operand(name.text, expr.shape, ir.infer_properties(expr))
        return Assign(name.text, expr, index)

    def index(self):
        t = self.tok
        if t.kind == "number":
            self.advance()
            v = float(t.text)
            if v != int(v):
                raise LampSyntaxError(t.span, "index must be an integer")
            return int(v), t.span
        if t.kind == "name":
            self.advance()
            if t.text in self.loop_vars:
                return t.text, t.span
            d = self.decls.get(t.text)
            if d is not None and d.kind == "scalar" and d.value is not None and d.value == int(d.value):
                return int(d.value), t.span
            raise UndeclaredOperand(t.text, t.span)
        raise LampSyntaxError(t.span, "expected an index")

    # expressions
    def _build(self, span, fn, *args):
        try:
            return fn(*args)
        except ir.IRError as exc:
            raise DimensionMismatch(span, str(exc)) from None

    def expr(self):
        span = self.tok.span
        terms = []
        sign = 1
        if self.at("-"):
            self.advance()
            sign = -1
        elif self.at("+"):
            self.advance()
        terms.append((sign, self.term()))
        while self.at("+") or self.at("-"):
            op = self.advance()
            terms.append((1 if op.text == "+" else -1, self.term()))
        if len(terms) == 1:
            s, t = terms[0]
            return t if s == 1 else self._scale(-1.0, (), t, span)
        for s, t in terms:
            if isinstance(t, _Scalar):
                raise DimensionMismatch(span, "scalar terms cannot be added to matrices")
        return self._build(span, Sum, tuple(terms))

    def _scale(self, coef, syms, x, span):
        if isinstance(x, _Scalar):
            return _Scalar(x.coef * coef, x.syms + tuple(syms))
        return ScalarMul(coef, tuple(syms), x)

    def term(self):
        span = self.tok.span
        factors = [self.postfix()]
        while self.at("*"):
            self.advance()
            factors.append(self.postfix())
        if len(factors) == 1:
            return factors[0]
        coef, syms, mats = 1.0, [], []
        for f in factors:
            if isinstance(f, _Scalar):
                coef *= f.coef
                syms.extend(f.syms)
            else:
                mats.append(f)
        if not mats:
            return _Scalar(coef, tuple(syms))
        body = mats[0] if len(mats) == 1 else self._build(span, Product, tuple(mats))
        if coef == 1.0 and not syms:
            return body
        return ScalarMul(coef, tuple(syms), body)

    def postfix(self):
        x = self.atom()
        while True:
            if self.at("'"):
                self.advance()
                if not isinstance(x, _Scalar):
                    x = Transpose(x)
            elif self.at("["):
                x = self.selection(x)
            else:
                return x

    def selection(self, x):
        lb = self.advance()
        if isinstance(x, _Scalar):
            raise LampSyntaxError(lb.span, "cannot index a scalar")
        sels = [self.selector()]
        self.expect(",")
        sels.append(self.selector())
        self.expect("]")
        (rk, r), (ck, c) = sels
        if rk == "one" and ck == "one":
            return self._build(lb.span, Element, x, r, c)
        if rk == "all" and ck == "one":
            return self._build(lb.span, Column, x, c)
        if rk == "one" and ck == "all":
            return self._build(lb.span, Row, x, r)
        r0, r1 = (0, x.shape.rows) if rk == "all" else ((r[0] - 1, r[1]) if rk == "range" else (r - 1, r))
        c0, c1 = (0, x.shape.cols) if ck == "all" else ((c[0] - 1, c[1]) if ck == "range" else (c - 1, c))
        if any(isinstance(v, str) for v in (r0, r1, c0, c1) if v is not None):
            raise LampSyntaxError(lb.span, "ranges need literal bounds")
        return self._build(lb.span, Slice, x, r0, r1, c0, c1)

    def selector(self):
        if self.at(":"):
            self.advance()
            return "all", None
        lo, _ = self.index()
        if self.at(":"):
            self.advance()
            hi, _ = self.index()
            if isinstance(lo, str) or isinstance(hi, str):
                raise LampSyntaxError(self.tok.span, "ranges need literal bounds")
            return "range", (lo, hi)
        return "one", lo

    def atom(self):
        t = self.tok
        if t.kind == "number":
            self.advance()
            return _Scalar(float(t.text), ())
        if self.at("inv") or self.at("diag"):
            fn = self.advance()
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            if isinstance(arg, _Scalar):
                raise LampSyntaxError(fn.span, f"{fn.text} of a scalar")
            return self._build(fn.span, Inverse if fn.text == "inv" else Diag, arg)
        if self.at("("):
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        if self.at("["):
            return self.block()
        if t.kind == "name" and t.text not in KEYWORDS:
            self.advance()
            if t.text in self.env:
                return self.env[t.text]
            d = self.decls.get(t.text)
            if d is not None and d.kind == "scalar":
                return _Scalar(d.value, ()) if d.value is not None else _Scalar(1.0, (t.text,))
            raise UndeclaredOperand(t.text, t.span)
        raise LampSyntaxError(t.span, f"unexpected {t.text!r}")

    def block(self):
        lb = self.advance()
        rows = [[]]
        while True:
            if self.tok.kind == "number" and float(self.tok.text) == 0 and (
                    self.peek().text in (",", ";", "]")):
                self.advance()
                rows[-1].append(None)
            else:
                e = self.expr()
                if isinstance(e, _Scalar):
                    raise LampSyntaxError(lb.span, "scalar inside a block literal")
                rows[-1].append(e)
            if self.at(","):
                self.advance()
            elif self.at(";"):
                self.advance()
                rows.append([])
            else:
                break
        self.expect("]")
        ncols = len(rows[0])
        if any(len(r) != ncols for r in rows):
            raise DimensionMismatch(lb.span, "ragged block literal")
        heights = [next((e.shape.rows for e in r if e is not None), None) for r in rows]
        widths = [next((r[j].shape.cols for r in rows if r[j] is not None), None) for j in range(ncols)]
        if None in heights or None in widths:
            raise DimensionMismatch(lb.span, "cannot infer the shape of a zero block")
        grid = tuple(tuple(e if e is not None else Zero(Shape(heights[i], widths[j])) for j, e in enumerate(r))
                     for i, r in enumerate(rows))
        return self._build(lb.span, Block, grid)


@dataclass(frozen=True)
class _Scalar:
    """Scalar value during parsing; folded into ScalarMul when it meets a matrix."""

    coef: float
    syms: tuple


def parse_program(text: str, params: dict | None = None) -> Program:
    """Parse DSL text into a shape-checked, canonical Program.

    ``params`` overrides the literal value of ``scalar NAME = lit`` declarations,
    which is how corpus programs are resized.
    """
    return _Parser(text, params).program()


# ---------------------------------------------------------------------------
# printing

_PREC_SUM, _PREC_PROD, _PREC_POST = 1, 2, 3


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _idx(i) -> str:
    return str(i)


def format_expr(e: ir.Expr, prec: int = 0) -> str:
    s, p = _fmt(e)
    return f"({s})" if p < prec else s


def _fmt(e) -> tuple[str, int]:
    if isinstance(e, Operand):
        return e.name, 4
    if isinstance(e, Zero):
        # only meaningful inside a block; elsewhere print as 0 * something is not expressible
        return "0", 4
    if isinstance(e, Transpose):
        return format_expr(e.child, _PREC_POST + 1) + "'", _PREC_POST
    if isinstance(e, Inverse):
        return f"inv({format_expr(e.child)})", 4
    if isinstance(e, Diag):
        return f"diag({format_expr(e.child)})", 4
    if isinstance(e, Product):
        return " * ".join(format_expr(f, _PREC_PROD + 1) for f in e.factors), _PREC_PROD
    if isinstance(e, ScalarMul):
        parts = [_num(e.coef)] if (e.coef != 1.0 or not e.syms) else []
        parts.extend(e.syms)
        return " * ".join(parts + [format_expr(e.child, _PREC_PROD + 1)]), _PREC_PROD
    if isinstance(e, Sum):
        out = []
        for k, (s, t) in enumerate(e.terms):
            body = format_expr(t, _PREC_PROD)
            if k == 0:
                out.append(body if s == 1 else f"-{body}")
            else:
                out.append(("+ " if s == 1 else "- ") + body)
        return " ".join(out), _PREC_SUM
    if isinstance(e, Block):
        rows = [", ".join(format_expr(x) for x in row) for row in e.grid]
        return "[" + "; ".join(rows) + "]", 4
    if isinstance(e, Element):
        return f"{format_expr(e.child, _PREC_POST)}[{_idx(e.row)}, {_idx(e.col)}]", _PREC_POST
    if isinstance(e, Column):
        return f"{format_expr(e.child, _PREC_POST)}[:, {_idx(e.col)}]", _PREC_POST
    if isinstance(e, Row):
        return f"{format_expr(e.child, _PREC_POST)}[{_idx(e.row)}, :]", _PREC_POST
    if isinstance(e, Slice):
        rs = f"{e.r0 + 1}:{e.r1}"
        cs = f"{e.c0 + 1}:{e.c1}"
        return f"{format_expr(e.child, _PREC_POST)}[{rs}, {cs}]", _PREC_POST
    # nodes introduced by passes print as an equivalent surface expression
    if isinstance(e, Solve):
        inv = f"inv({format_expr(e.matrix)})"
        rhs = format_expr(e.rhs, _PREC_PROD + 1)
        return (f"{inv} * {rhs}" if e.side == "left" else f"{rhs} * {inv}"), _PREC_PROD
    if isinstance(e, Syrk):
        a = format_expr(e.child, _PREC_POST + 1)
        return (f"{a}' * {a}" if e.trans else f"{a} * {a}'"), _PREC_PROD
    if isinstance(e, Syr2k):
        a = format_expr(e.a, _PREC_POST + 1)
        b = format_expr(e.b, _PREC_POST + 1)
        if e.trans:
            return f"{a}' * {b} + {b}' * {a}", _PREC_SUM
        return f"{a} * {b}' + {b} * {a}'", _PREC_SUM
    if isinstance(e, DiagProduct):
        return f"diag({format_expr(e.a, _PREC_PROD + 1)} * {format_expr(e.b, _PREC_PROD + 1)})", 4
    raise TypeError(e)


def _fmt_decl(d: Decl) -> str:
    if d.kind == "scalar":
        return f"scalar {d.name}" + (f" = {_num(d.value)}" if d.value is not None else "")
    dims = f"{d.shape.rows}" if d.kind == "vector" else f"{d.shape.rows}, {d.shape.cols}"
    props = [n for n in d.props.names() if n != "full"]
    # print only the flags that are not implied by the others
    minimal = list(props)
    for n in props:
        rest = [m for m in minimal if m != n]
        if PropertySet.of(*(PROP_ALIASES[m] for m in rest), shape=d.shape) == d.props:
            minimal = rest
    suffix = (":" + ",".join(minimal)) if minimal else ""
    return f"{d.kind} {d.name}({dims}){suffix}"


def _fmt_stmts(stmts, indent: str) -> list[str]:
    out = []
    for s in stmts:
        if isinstance(s, Assign):
            lhs = s.target + (f"[{', '.join(_idx(i) for i in s.index)}]" if s.index else "")
            out.append(f"{indent}{lhs} := {format_expr(s.expr)}")
        else:
            out.append(f"{indent}for {s.var} in {s.lo}:{s.hi} {{")
            out.extend(_fmt_stmts(s.body, indent + "  "))
            out.append(f"{indent}}}")
    return out


def format_program(p: Program) -> str:
    lines = [_fmt_decl(d) for d in p.decls]
    lines.extend(_fmt_stmts(p.stmts, ""))
    return "\n".join(lines) + "\n"
