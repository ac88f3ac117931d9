import pytest
from hypothesis import given, settings

from lamp.frontend import (
    DimensionMismatch, LampSyntaxError, UndeclaredOperand, format_expr, format_program, parse_program,
)
from lamp.ir import (
    Assign, Block, Column, Diag, Element, ForLoop, Inverse, Operand, Product, Prop, ScalarMul, Slice,
    Sum, Transpose, Zero,
)
from strategies import HEADER, matrix_exprs, programs

SMALL = "matrix A(3,4)\nmatrix B(4,2)\nvector v(4)\n"


def test_declarations_and_product_shape():
    p = parse_program(SMALL + "C := A*B\n")
    (s,) = p.stmts
    assert isinstance(s, Assign) and s.target == "C"
    assert isinstance(s.expr, Product)
    assert (s.expr.shape.rows, s.expr.shape.cols) == (3, 2)
    assert p.decl("v").kind == "vector" and p.decl("v").shape.cols == 1


def test_properties_are_attached():
    p = parse_program("matrix S(3,3):spd\nmatrix W(3,3):diagonal,spd\nx := S*W\n")
    assert Prop.SYMMETRIC in p.decl("S").props
    assert Prop.DIAGONAL in p.decl("W").props and Prop.SPD in p.decl("W").props


def test_scalar_literal_folding_and_params():
    p = parse_program("scalar n = 4\nscalar a\nmatrix A(n,n)\nX := 2*a*A\n", {"n": 6})
    e = p.stmts[0].expr
    assert isinstance(e, ScalarMul) and e.coef == 2.0 and e.syms == ("a",)
    assert e.shape.rows == 6


def test_selectors():
    p = parse_program(SMALL + "a := A[2,3]\nc := A[:,2]\nd := A[1:2,2:4]\n")
    a, c, d = (s.expr for s in p.stmts)
    assert isinstance(a, Element) and (a.row, a.col) == (2, 3)
    assert isinstance(c, Column) and c.shape.rows == 3
    assert isinstance(d, Slice) and (d.r0, d.r1, d.c0, d.c1) == (0, 2, 1, 4)


def test_block_literal_with_zero_blocks():
    p = parse_program("matrix P(2,2)\nmatrix Q(3,3)\nX := [P, 0; 0, Q]\n")
    b = p.stmts[0].expr
    assert isinstance(b, Block) and b.is_block_diagonal()
    assert isinstance(b.grid[0][1], Zero) and b.grid[0][1].shape.cols == 3


def test_loops_and_indexed_stores():
    p = parse_program("matrix A(3,3)\nvector x(3)\nfor i in 1:3 {\n  x[i] := A[i,i]\n}\n")
    (loop,) = p.stmts
    assert isinstance(loop, ForLoop) and (loop.lo, loop.hi) == (1, 3)
    assert loop.body[0].index == ("i",)


def test_transpose_is_pushed_to_leaves():
    p = parse_program(SMALL + "X := (A*B)'\n")
    e = p.stmts[0].expr
    assert isinstance(e, Product) and all(isinstance(f, Transpose) for f in e.factors)


def test_subtraction_keeps_signs():
    p = parse_program("matrix A(2,2)\nmatrix B(2,2)\nX := A - B\n")
    e = p.stmts[0].expr
    assert isinstance(e, Sum) and [s for s, _ in e.terms] == [1, -1]


@pytest.mark.parametrize("src, exc, where", [
    (SMALL + "C := B*A\n", DimensionMismatch, None),
    (SMALL + "C := A + Z\n", UndeclaredOperand, (4, 10)),
    (SMALL + "C := A +\n", LampSyntaxError, None),
    ("matrix A(2,3)\nX := inv(A)\n", DimensionMismatch, None),
    ("matrix A(2,2)\nfor A in 1:2 {\n}\n", LampSyntaxError, None),
    ("matrix A(2,2)\nX := A[3,1]\n", DimensionMismatch, None),
])
def test_errors_carry_positions(src, exc, where):
    with pytest.raises(exc) as info:
        parse_program(src)
    if where:
        assert (info.value.span.line, info.value.span.column) == where


def test_corpus_round_trip(corpus_program):
    text = format_program(corpus_program)
    assert parse_program(text) == corpus_program


@settings(max_examples=120, deadline=None)
@given(programs())
def test_random_programs_round_trip(src):
    p = parse_program(src)
    assert parse_program(format_program(p)) == p


@settings(max_examples=120, deadline=None)
@given(matrix_exprs)
def test_expression_printer_is_stable(text):
    e = parse_program(HEADER + f"X := {text}\n").stmts[0].expr
    again = parse_program(HEADER + f"X := {format_expr(e)}\n").stmts[0].expr
    assert again == e
