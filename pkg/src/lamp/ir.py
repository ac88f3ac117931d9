"""Expression IR for dense linear algebra programs.

Nodes are frozen dataclasses; shapes are checked when a node is built.
``canonicalize`` produces the normal form every pass pattern-matches on,
``infer_properties`` derives a sound property set for any subexpression.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union


class IRError(Exception):
    pass


class DimensionMismatch(IRError):
    def __init__(self, node, expected, found, span=None):
        self.node = node
        self.expected = expected
        self.found = found
        self.span = span
        super().__init__(f"dimension mismatch in {type(node).__name__}: expected {expected}, found {found}")


class NonSquareInverse(IRError):
    def __init__(self, shape):
        self.shape = shape
        super().__init__(f"inverse of non-square {shape}")


@dataclass(frozen=True)
class Shape:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"invalid shape {self.rows}x{self.cols}")

    @property
    def square(self) -> bool:
        return self.rows == self.cols

    @property
    def T(self) -> "Shape":
        return Shape(self.cols, self.rows)

    def __str__(self):
        return f"{self.rows}x{self.cols}"


class Prop(enum.Enum):
    FULL = "full"
    SYMMETRIC = "symmetric"
    SPD = "spd"
    SPSD = "spsd"
    LOWER_TRIANGULAR = "lower"
    UPPER_TRIANGULAR = "upper"
    DIAGONAL = "diagonal"
    IDENTITY = "identity"
    ZERO = "zero"
    BLOCK_DIAGONAL = "block_diagonal"


# flags that only make sense for square matrices
_SQUARE_ONLY = {Prop.SYMMETRIC, Prop.SPD, Prop.SPSD, Prop.IDENTITY, Prop.BLOCK_DIAGONAL}

_IMPLIES = {
    Prop.SPD: {Prop.SYMMETRIC, Prop.SPSD},
    Prop.SPSD: {Prop.SYMMETRIC},
    Prop.IDENTITY: {Prop.DIAGONAL, Prop.SPD},
    Prop.DIAGONAL: {Prop.LOWER_TRIANGULAR, Prop.UPPER_TRIANGULAR},
    Prop.ZERO: {Prop.DIAGONAL, Prop.SPSD},
}


@dataclass(frozen=True)
class PropertySet:
    """A set of matrix properties, closed under the implication rules."""

    flags: frozenset = frozenset()
    square: bool = True

    def __post_init__(self):
        flags = {Prop(f) for f in self.flags}
        if not self.square:
            flags -= _SQUARE_ONLY
        changed = True
        while changed:
            changed = False
            for f in list(flags):
                for g in _IMPLIES.get(f, ()):
                    if g not in flags:
                        flags.add(g)
                        changed = True
            if Prop.LOWER_TRIANGULAR in flags and Prop.UPPER_TRIANGULAR in flags and Prop.DIAGONAL not in flags:
                flags.add(Prop.DIAGONAL)
                changed = True
            if self.square and Prop.DIAGONAL in flags and Prop.SYMMETRIC not in flags:
                flags.add(Prop.SYMMETRIC)
                changed = True
            if not self.square:
                flags -= _SQUARE_ONLY
        flags.discard(Prop.FULL)
        if not flags:
            flags = {Prop.FULL}
        object.__setattr__(self, "flags", frozenset(flags))

    @classmethod
    def of(cls, *flags, shape: "Shape | None" = None) -> "PropertySet":
        flags = set(flags)
        if shape is not None and shape.rows == 1 and shape.cols == 1:
            flags |= {Prop.DIAGONAL}
        return cls(frozenset(flags), True if shape is None else shape.square)

    def __contains__(self, p: Prop) -> bool:
        return p in self.flags

    def __iter__(self):
        return iter(sorted(self.flags, key=lambda p: p.value))

    @property
    def triangular(self) -> bool:
        return Prop.LOWER_TRIANGULAR in self.flags or Prop.UPPER_TRIANGULAR in self.flags

    def transposed(self) -> "PropertySet":
        flags = set(self.flags)
        lt = Prop.LOWER_TRIANGULAR in flags
        ut = Prop.UPPER_TRIANGULAR in flags
        flags.discard(Prop.LOWER_TRIANGULAR)
        flags.discard(Prop.UPPER_TRIANGULAR)
        if lt:
            flags.add(Prop.UPPER_TRIANGULAR)
        if ut:
            flags.add(Prop.LOWER_TRIANGULAR)
        return PropertySet(frozenset(flags), self.square)

    def names(self) -> list[str]:
        return [p.value for p in self]

    def __str__(self):
        return ",".join(self.names())


FULL = PropertySet.of()

# ---------------------------------------------------------------------------
# expression nodes

Index = Union[int, str]  # 1-based literal, or the name of a loop index


class Expr:
    shape: Shape

    def children(self) -> tuple["Expr", ...]:
        return ()


def _node(cls):
    return dataclass(frozen=True)(cls)


@_node
class Operand(Expr):
    name: str
    shape: Shape
    props: PropertySet = FULL

    def __str__(self):
        return self.name


@_node
class Zero(Expr):
    shape: Shape


@_node
class Product(Expr):
    factors: tuple
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if len(self.factors) < 1:
            raise IRError("empty product")
        for a, b in zip(self.factors, self.factors[1:]):
            if a.shape.cols != b.shape.rows:
                raise DimensionMismatch(self, a.shape.cols, b.shape.rows)
        object.__setattr__(self, "shape", Shape(self.factors[0].shape.rows, self.factors[-1].shape.cols))

    def children(self):
        return self.factors


@_node
class Sum(Expr):
    terms: tuple  # of (sign, expr) with sign in {+1, -1}
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if not self.terms:
            raise IRError("empty sum")
        first = self.terms[0][1].shape
        for s, t in self.terms:
            if s not in (1, -1):
                raise IRError(f"bad sign {s}")
            if t.shape != first:
                raise DimensionMismatch(self, first, t.shape)
        object.__setattr__(self, "shape", first)

    def children(self):
        return tuple(t for _, t in self.terms)


@_node
class Transpose(Expr):
    child: Expr
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "shape", self.child.shape.T)

    def children(self):
        return (self.child,)


@_node
class Inverse(Expr):
    child: Expr
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if not self.child.shape.square:
            raise NonSquareInverse(self.child.shape)
        object.__setattr__(self, "shape", self.child.shape)

    def children(self):
        return (self.child,)


@_node
class ScalarMul(Expr):
    coef: float
    syms: tuple  # sorted scalar symbol names, repeats allowed
    child: Expr
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "shape", self.child.shape)

    def children(self):
        return (self.child,)


@_node
class Block(Expr):
    grid: tuple  # tuple of rows, each a tuple of exprs
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        heights = [row[0].shape.rows for row in self.grid]
        widths = [e.shape.cols for e in self.grid[0]]
        for i, row in enumerate(self.grid):
            if len(row) != len(widths):
                raise DimensionMismatch(self, len(widths), len(row))
            for j, e in enumerate(row):
                if e.shape != Shape(heights[i], widths[j]):
                    raise DimensionMismatch(self, Shape(heights[i], widths[j]), e.shape)
        object.__setattr__(self, "shape", Shape(sum(heights), sum(widths)))

    def children(self):
        return tuple(e for row in self.grid for e in row)

    @property
    def row_offsets(self) -> list[int]:
        out = [0]
        for row in self.grid:
            out.append(out[-1] + row[0].shape.rows)
        return out

    @property
    def col_offsets(self) -> list[int]:
        out = [0]
        for e in self.grid[0]:
            out.append(out[-1] + e.shape.cols)
        return out

    def is_block_diagonal(self) -> bool:
        k = len(self.grid)
        if k < 2 or any(len(row) != k for row in self.grid):
            return False
        for i in range(k):
            if not self.grid[i][i].shape.square:
                return False
            for j in range(k):
                if i != j and not isinstance(self.grid[i][j], Zero):
                    return False
        return True


@_node
class Diag(Expr):
    child: Expr
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        s = self.child.shape
        object.__setattr__(self, "shape", Shape(min(s.rows, s.cols), 1))

    def children(self):
        return (self.child,)


def _check_index(node, idx, bound):
    if isinstance(idx, int) and not 1 <= idx <= bound:
        raise DimensionMismatch(node, f"index in 1..{bound}", idx)


@_node
class Element(Expr):
    child: Expr
    row: Index
    col: Index
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        _check_index(self, self.row, self.child.shape.rows)
        _check_index(self, self.col, self.child.shape.cols)
        object.__setattr__(self, "shape", Shape(1, 1))

    def children(self):
        return (self.child,)


@_node
class Column(Expr):
    child: Expr
    col: Index
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        _check_index(self, self.col, self.child.shape.cols)
        object.__setattr__(self, "shape", Shape(self.child.shape.rows, 1))

    def children(self):
        return (self.child,)


@_node
class Row(Expr):
    child: Expr
    row: Index
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        _check_index(self, self.row, self.child.shape.rows)
        object.__setattr__(self, "shape", Shape(1, self.child.shape.cols))

    def children(self):
        return (self.child,)


@_node
class Slice(Expr):
    """Rectangular sub-block, 0-based half-open bounds."""

    child: Expr
    r0: int
    r1: int
    c0: int
    c1: int
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        s = self.child.shape
        if not (0 <= self.r0 < self.r1 <= s.rows and 0 <= self.c0 < self.c1 <= s.cols):
            raise DimensionMismatch(self, s, (self.r0, self.r1, self.c0, self.c1))
        object.__setattr__(self, "shape", Shape(self.r1 - self.r0, self.c1 - self.c0))

    def children(self):
        return (self.child,)


@_node
class Solve(Expr):
    """``inv(matrix) * rhs`` (side='left') or ``rhs * inv(matrix)`` (side='right')."""

    matrix: Expr
    rhs: Expr
    side: str = "left"
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if not self.matrix.shape.square:
            raise NonSquareInverse(self.matrix.shape)
        n = self.matrix.shape.rows
        if self.side == "left":
            if self.rhs.shape.rows != n:
                raise DimensionMismatch(self, n, self.rhs.shape.rows)
        elif self.side == "right":
            if self.rhs.shape.cols != n:
                raise DimensionMismatch(self, n, self.rhs.shape.cols)
        else:
            raise IRError(f"bad side {self.side}")
        object.__setattr__(self, "shape", self.rhs.shape)

    def children(self):
        return (self.matrix, self.rhs)


@_node
class Syrk(Expr):
    """``A A'`` (trans=False) or ``A' A`` (trans=True)."""

    child: Expr
    trans: bool = False
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        s = self.child.shape
        n = s.cols if self.trans else s.rows
        object.__setattr__(self, "shape", Shape(n, n))

    def children(self):
        return (self.child,)


@_node
class Syr2k(Expr):
    """``A B' + B A'`` (trans=False) or ``A' B + B' A`` (trans=True)."""

    a: Expr
    b: Expr
    trans: bool = False
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if self.a.shape != self.b.shape:
            raise DimensionMismatch(self, self.a.shape, self.b.shape)
        s = self.a.shape
        n = s.cols if self.trans else s.rows
        object.__setattr__(self, "shape", Shape(n, n))

    def children(self):
        return (self.a, self.b)


@_node
class DiagProduct(Expr):
    """``diag(a * b)`` computed without forming the product."""

    a: Expr
    b: Expr
    shape: Shape = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if self.a.shape.cols != self.b.shape.rows:
            raise DimensionMismatch(self, self.a.shape.cols, self.b.shape.rows)
        object.__setattr__(self, "shape", Shape(min(self.a.shape.rows, self.b.shape.cols), 1))

    def children(self):
        return (self.a, self.b)


# ---------------------------------------------------------------------------
# programs


@dataclass(frozen=True)
class Decl:
    name: str
    kind: str  # "matrix" | "vector" | "scalar"
    shape: Shape = Shape(1, 1)
    props: PropertySet = FULL
    value: float | None = None  # scalars with a literal value are compile-time constants


@dataclass(frozen=True)
class Assign:
    target: str
    expr: Expr
    index: tuple = ()  # (row,) or (row, col) for an indexed store


@dataclass(frozen=True)
class ForLoop:
    var: str
    lo: int
    hi: int
    body: tuple


Stmt = Union[Assign, ForLoop]


@dataclass(frozen=True)
class Program:
    decls: tuple
    stmts: tuple

    def decl(self, name: str) -> Decl | None:
        for d in self.decls:
            if d.name == name:
                return d
        return None

    @property
    def declared(self) -> dict[str, Decl]:
        return {d.name: d for d in self.decls}

    def input_decls(self) -> list[Decl]:
        """Declarations whose value has to come from the environment."""
        return [d for d in self.decls if not (d.kind == "scalar" and d.value is not None)]

    def assigned(self) -> list[str]:
        out: list[str] = []
        for s in walk_statements(self.stmts):
            if isinstance(s, Assign) and s.target not in out:
                out.append(s.target)
        return out

    def replace(self, stmts) -> "Program":
        return Program(self.decls, tuple(stmts))


def walk_statements(stmts):
    for s in stmts:
        yield s
        if isinstance(s, ForLoop):
            yield from walk_statements(s.body)


# ---------------------------------------------------------------------------
# traversal helpers


def rebuild(e: Expr, kids: list) -> Expr:
    """Same node kind with new children, no normalization."""
    if isinstance(e, (Operand, Zero)):
        return e
    if isinstance(e, Product):
        return Product(tuple(kids))
    if isinstance(e, Sum):
        return Sum(tuple((s, k) for (s, _), k in zip(e.terms, kids)))
    if isinstance(e, Transpose):
        return Transpose(kids[0])
    if isinstance(e, Inverse):
        return Inverse(kids[0])
    if isinstance(e, ScalarMul):
        return ScalarMul(e.coef, e.syms, kids[0])
    if isinstance(e, Block):
        it = iter(kids)
        return Block(tuple(tuple(next(it) for _ in row) for row in e.grid))
    if isinstance(e, Diag):
        return Diag(kids[0])
    if isinstance(e, Element):
        return Element(kids[0], e.row, e.col)
    if isinstance(e, Column):
        return Column(kids[0], e.col)
    if isinstance(e, Row):
        return Row(kids[0], e.row)
    if isinstance(e, Slice):
        return Slice(kids[0], e.r0, e.r1, e.c0, e.c1)
    if isinstance(e, Solve):
        return Solve(kids[0], kids[1], e.side)
    if isinstance(e, Syrk):
        return Syrk(kids[0], e.trans)
    if isinstance(e, Syr2k):
        return Syr2k(kids[0], kids[1], e.trans)
    if isinstance(e, DiagProduct):
        return DiagProduct(kids[0], kids[1])
    raise TypeError(e)


def subexpressions(e: Expr):
    yield e
    for c in e.children():
        yield from subexpressions(c)


def operand_names(e: Expr) -> set[str]:
    return {x.name for x in subexpressions(e) if isinstance(x, Operand)}


def index_names(e: Expr) -> set[str]:
    out = set()
    for x in subexpressions(e):
        for idx in (getattr(x, "row", None), getattr(x, "col", None)):
            if isinstance(idx, str):
                out.add(idx)
    return out


def scalar_names(e: Expr) -> set[str]:
    out = set()
    for x in subexpressions(e):
        if isinstance(x, ScalarMul):
            out.update(x.syms)
    return out


def substitute(e: Expr, mapping: Mapping[Expr, Expr]) -> Expr:
    if e in mapping:
        return mapping[e]
    kids = e.children()
    if not kids:
        return e
    new = [substitute(k, mapping) for k in kids]
    if all(a is b for a, b in zip(new, kids)):
        return e
    return rebuild(e, new)


def bind_index(e: Expr, var: str, value: int) -> Expr:
    """Replace a loop index symbol with a concrete 1-based value."""
    kids = [bind_index(k, var, value) for k in e.children()]
    if isinstance(e, Element):
        return Element(kids[0], value if e.row == var else e.row, value if e.col == var else e.col)
    if isinstance(e, Column):
        return Column(kids[0], value if e.col == var else e.col)
    if isinstance(e, Row):
        return Row(kids[0], value if e.row == var else e.row)
    return rebuild(e, kids) if kids else e


# ---------------------------------------------------------------------------
# shapes


def shape_of(expr: Expr, env: Mapping[str, Decl | Shape] | None = None) -> Shape:
    """Recompute the shape of ``expr`` from declared operand shapes."""
    if isinstance(expr, Operand):
        if env is not None:
            if expr.name not in env:
                raise IRError(f"undeclared operand {expr.name}")
            d = env[expr.name]
            s = d if isinstance(d, Shape) else d.shape
            if s != expr.shape:
                raise DimensionMismatch(expr, s, expr.shape)
        return expr.shape
    if isinstance(expr, Zero):
        return expr.shape
    kids = [shape_of(k, env) for k in expr.children()]
    if isinstance(expr, Product):
        for a, b in zip(kids, kids[1:]):
            if a.cols != b.rows:
                raise DimensionMismatch(expr, a.cols, b.rows)
        return Shape(kids[0].rows, kids[-1].cols)
    if isinstance(expr, Sum):
        for k in kids[1:]:
            if k != kids[0]:
                raise DimensionMismatch(expr, kids[0], k)
        return kids[0]
    if isinstance(expr, Transpose):
        return kids[0].T
    if isinstance(expr, Inverse):
        if not kids[0].square:
            raise NonSquareInverse(kids[0])
        return kids[0]
    # the remaining node kinds validated their shapes on construction
    return expr.shape


# ---------------------------------------------------------------------------
# property inference

_KEEP_ALWAYS = {Prop.SYMMETRIC, Prop.LOWER_TRIANGULAR, Prop.UPPER_TRIANGULAR, Prop.DIAGONAL}


def _common(sets: Iterable[PropertySet], keep) -> set:
    sets = list(sets)
    out = set(keep)
    for s in sets:
        out &= s.flags
    return out


@functools.lru_cache(maxsize=65536)
def infer_properties(expr: Expr) -> PropertySet:
    """Sound property set of ``expr`` from declared operand properties."""
    shape = expr.shape
    if isinstance(expr, Operand):
        return expr.props
    if isinstance(expr, Zero):
        return PropertySet.of(Prop.ZERO, shape=shape)
    if isinstance(expr, Transpose):
        return infer_properties(expr.child).transposed()
    if isinstance(expr, Inverse):
        p = infer_properties(expr.child)
        flags = p.flags & {Prop.SPD, Prop.DIAGONAL, Prop.LOWER_TRIANGULAR, Prop.UPPER_TRIANGULAR,
                           Prop.SYMMETRIC, Prop.IDENTITY}
        if Prop.SPSD in p:
            flags |= {Prop.SPD}  # an invertible SPSD matrix is SPD
        return PropertySet.of(*flags, shape=shape)
    if isinstance(expr, ScalarMul):
        p = infer_properties(expr.child)
        flags = p.flags & (_KEEP_ALWAYS | {Prop.ZERO, Prop.BLOCK_DIAGONAL})
        if expr.coef > 0 and not expr.syms:
            flags |= p.flags & {Prop.SPD, Prop.SPSD}
        return PropertySet.of(*flags, shape=shape)
    if isinstance(expr, Product):
        return _product_props(expr.factors, shape)
    if isinstance(expr, Sum):
        ps = [infer_properties(t) for _, t in expr.terms]
        flags = _common(ps, _KEEP_ALWAYS)
        if all(s == 1 for s, _ in expr.terms):
            if all(Prop.SPSD in p for p in ps):
                flags.add(Prop.SPSD)
                if any(Prop.SPD in p for p in ps):
                    flags.add(Prop.SPD)
        return PropertySet.of(*flags, shape=shape)
    if isinstance(expr, Block):
        return _block_props(expr)
    if isinstance(expr, Solve):
        inv = Inverse(expr.matrix)
        fs = (inv, expr.rhs) if expr.side == "left" else (expr.rhs, inv)
        return _product_props(fs, shape, palindrome=False)
    if isinstance(expr, Syrk):
        return PropertySet.of(Prop.SYMMETRIC, Prop.SPSD, shape=shape)
    if isinstance(expr, Syr2k):
        return PropertySet.of(Prop.SYMMETRIC, shape=shape)
    if isinstance(expr, Slice):
        p = infer_properties(expr.child)
        if expr.r0 == expr.c0 and expr.r1 == expr.c1:
            return PropertySet.of(*(p.flags - {Prop.BLOCK_DIAGONAL, Prop.IDENTITY}), shape=shape)
        return PropertySet.of(shape=shape)
    return PropertySet.of(shape=shape)


def _product_props(factors, shape, palindrome=True) -> PropertySet:
    ps = [infer_properties(f) for f in factors]
    flags = set()
    for p in (Prop.DIAGONAL, Prop.LOWER_TRIANGULAR, Prop.UPPER_TRIANGULAR):
        if all(p in q for q in ps):
            flags.add(p)
    if all(Prop.DIAGONAL in q and Prop.SPD in q for q in ps):
        flags.add(Prop.SPD)
    if palindrome and shape.square:
        k = len(factors)
        if all(transpose(factors[i]) == factors[k - 1 - i] for i in range(k // 2)):
            if k % 2 == 0:
                flags |= {Prop.SYMMETRIC, Prop.SPSD}
            elif Prop.SPSD in ps[k // 2]:
                flags |= {Prop.SYMMETRIC, Prop.SPSD}
            elif Prop.SYMMETRIC in ps[k // 2]:
                flags.add(Prop.SYMMETRIC)
    return PropertySet.of(*flags, shape=shape)


def _block_props(b: Block) -> PropertySet:
    k = len(b.grid)
    square_grid = all(len(row) == k for row in b.grid) and all(b.grid[i][i].shape.square for i in range(k))
    if not square_grid:
        return PropertySet.of(shape=b.shape)
    diag = [infer_properties(b.grid[i][i]) for i in range(k)]
    upper_zero = all(isinstance(b.grid[i][j], Zero) for i in range(k) for j in range(i + 1, k))
    lower_zero = all(isinstance(b.grid[i][j], Zero) for i in range(k) for j in range(i))
    flags = set()
    if upper_zero and lower_zero:
        flags.add(Prop.BLOCK_DIAGONAL)
        flags |= _common(diag, {Prop.SPD, Prop.SPSD, Prop.SYMMETRIC, Prop.DIAGONAL,
                                Prop.LOWER_TRIANGULAR, Prop.UPPER_TRIANGULAR})
    elif upper_zero:
        flags |= _common(diag, {Prop.LOWER_TRIANGULAR})
    elif lower_zero:
        flags |= _common(diag, {Prop.UPPER_TRIANGULAR})
    return PropertySet.of(*flags, shape=b.shape)


# ---------------------------------------------------------------------------
# canonical form
#
# The mk_* constructors assume canonical children and return canonical nodes.


def mk_scale(coef: float, syms: tuple, x: Expr) -> Expr:
    coef = float(coef)
    if isinstance(x, ScalarMul):
        return mk_scale(coef * x.coef, tuple(syms) + x.syms, x.child)
    if isinstance(x, Zero):
        return x
    if coef == 0.0:
        return Zero(x.shape)
    syms = tuple(sorted(syms))
    if coef == 1.0 and not syms:
        return x
    return ScalarMul(coef, syms, x)


def _is_identity(e: Expr) -> bool:
    return isinstance(e, Operand) and Prop.IDENTITY in e.props


def mk_product(factors) -> Expr:
    coef, syms, flat = 1.0, [], []

    def add(f):
        nonlocal coef
        if isinstance(f, ScalarMul):
            coef *= f.coef
            syms.extend(f.syms)
            add(f.child)
        elif isinstance(f, Product):
            for g in f.factors:
                add(g)
        else:
            flat.append(f)

    for f in factors:
        add(f)
    shape = Shape(flat[0].shape.rows, flat[-1].shape.cols)
    Product(tuple(flat))  # shape check on the flattened chain
    if any(isinstance(f, Zero) for f in flat):
        return Zero(shape)
    kept = [f for f in flat if not _is_identity(f)]
    if not kept:
        kept = [flat[0]]
    body = kept[0] if len(kept) == 1 else Product(tuple(kept))
    return mk_scale(coef, tuple(syms), body)


def mk_sum(terms) -> Expr:
    flat = []

    def add(sign, t):
        if isinstance(t, Sum):
            for s, u in t.terms:
                add(sign * s, u)
        elif isinstance(t, Zero):
            return
        elif isinstance(t, ScalarMul) and t.coef < 0:
            add(-sign, mk_scale(-t.coef, t.syms, t.child))
        else:
            flat.append((sign, t))

    shape = None
    for s, t in terms:
        shape = shape or t.shape
        add(s, t)
    if not flat:
        return Zero(shape)
    if len(flat) == 1:
        s, t = flat[0]
        return t if s == 1 else mk_scale(-1.0, (), t)
    return Sum(tuple(flat))


def mk_inverse(x: Expr) -> Expr:
    if not x.shape.square:
        raise NonSquareInverse(x.shape)
    if isinstance(x, Inverse):
        return x.child
    if _is_identity(x):
        return x
    if isinstance(x, ScalarMul) and not x.syms:
        return mk_scale(1.0 / x.coef, (), mk_inverse(x.child))
    return Inverse(x)


def transpose(x: Expr) -> Expr:
    """Canonical transpose of a canonical expression."""
    if x.shape.rows == 1 and x.shape.cols == 1:
        return x
    if isinstance(x, Transpose):
        return x.child
    if isinstance(x, Zero):
        return Zero(x.shape.T)
    if Prop.SYMMETRIC in infer_properties(x):
        return x
    if isinstance(x, Product):
        return mk_product([transpose(f) for f in reversed(x.factors)])
    if isinstance(x, Sum):
        return mk_sum([(s, transpose(t)) for s, t in x.terms])
    if isinstance(x, Inverse):
        return mk_inverse(transpose(x.child))
    if isinstance(x, ScalarMul):
        return mk_scale(x.coef, x.syms, transpose(x.child))
    if isinstance(x, Block):
        rows, cols = len(x.grid), len(x.grid[0])
        return Block(tuple(tuple(transpose(x.grid[i][j]) for i in range(rows)) for j in range(cols)))
    if isinstance(x, Solve):
        side = "right" if x.side == "left" else "left"
        return Solve(transpose(x.matrix), transpose(x.rhs), side)
    return Transpose(x)


def canonicalize(expr: Expr) -> Expr:
    """Push transposes to the leaves, flatten, and hoist scalar literals."""
    return _canon(expr)


@functools.lru_cache(maxsize=65536)
def _canon(e: Expr) -> Expr:
    if isinstance(e, (Operand, Zero)):
        return e
    kids = [_canon(k) for k in e.children()]
    if isinstance(e, Transpose):
        return transpose(kids[0])
    if isinstance(e, Inverse):
        return mk_inverse(kids[0])
    if isinstance(e, ScalarMul):
        return mk_scale(e.coef, e.syms, kids[0])
    if isinstance(e, Product):
        return mk_product(kids)
    if isinstance(e, Sum):
        return mk_sum([(s, k) for (s, _), k in zip(e.terms, kids)])
    return rebuild(e, kids)


def canonicalize_program(p: Program) -> Program:
    def go(stmts):
        out = []
        for s in stmts:
            if isinstance(s, Assign):
                out.append(Assign(s.target, canonicalize(s.expr), s.index))
            else:
                out.append(ForLoop(s.var, s.lo, s.hi, tuple(go(s.body))))
        return out

    return p.replace(go(p.stmts))
