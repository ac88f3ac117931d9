import numpy as np
import pytest
from hypothesis import given, settings

from lamp.executor import evaluate, random_environment, satisfies
from lamp.frontend import parse_program
from lamp.ir import (
    Inverse, Operand, Product, Prop, PropertySet, ScalarMul, Shape, Sum, Transpose, Zero, canonicalize,
    infer_properties, mk_product, mk_scale, mk_sum, operand_names, shape_of, substitute, transpose,
)
from strategies import HEADER, matrix_exprs

N = Shape(4, 4)
A = Operand("A", N)
B = Operand("B", N)
I = Operand("I", N, PropertySet.of(Prop.IDENTITY, shape=N))
S = Operand("S", N, PropertySet.of(Prop.SPD, shape=N))
L = Operand("L", N, PropertySet.of(Prop.LOWER_TRIANGULAR, shape=N))


def _expr(text):
    p = parse_program(HEADER + f"X := {text}\n")
    return p, p.stmts[0].expr


def test_property_closure():
    spd = PropertySet.of(Prop.SPD, shape=N)
    assert {Prop.SPSD, Prop.SYMMETRIC} <= set(spd)
    ident = PropertySet.of(Prop.IDENTITY, shape=N)
    assert {Prop.DIAGONAL, Prop.SPD, Prop.LOWER_TRIANGULAR, Prop.UPPER_TRIANGULAR} <= set(ident)
    assert PropertySet.of(Prop.LOWER_TRIANGULAR, shape=N).transposed() == \
        PropertySet.of(Prop.UPPER_TRIANGULAR, shape=N)
    assert Prop.SYMMETRIC not in PropertySet.of(Prop.SYMMETRIC, shape=Shape(2, 3))


def test_product_flattening_and_identity():
    assert mk_product([A, mk_product([B, A])]) == Product((A, B, A))
    assert mk_product([I, A, I]) == A
    assert isinstance(mk_product([A, Zero(N)]), Zero)
    assert mk_product([mk_scale(2.0, (), A), mk_scale(3.0, ("a",), B)]) == ScalarMul(6.0, ("a",), Product((A, B)))


def test_sum_folding():
    assert mk_sum([(1, A), (1, Zero(N))]) == A
    assert mk_sum([(1, A), (-1, mk_scale(-1.0, (), B))]) == Sum(((1, A), (1, B)))
    assert mk_sum([(-1, A)]) == ScalarMul(-1.0, (), A)


def test_transpose_rules():
    assert transpose(transpose(A)) == A
    assert transpose(S) == S
    assert transpose(mk_product([A, B])) == Product((Transpose(B), Transpose(A)))
    assert transpose(Inverse(A)) == Inverse(Transpose(A))
    assert transpose(mk_product([A, Transpose(A)])) == Product((A, Transpose(A)))


def test_inference_examples():
    assert Prop.SPSD in infer_properties(mk_product([Transpose(A), A]))
    assert Prop.SPSD in infer_properties(mk_product([A, S, Transpose(A)]))
    assert Prop.LOWER_TRIANGULAR in infer_properties(mk_product([L, L]))
    assert Prop.SPD in infer_properties(Inverse(S))
    assert infer_properties(mk_sum([(1, S), (-1, S)])).flags >= {Prop.SYMMETRIC}
    assert Prop.SPSD not in infer_properties(mk_sum([(1, S), (-1, S)]))


def test_shape_errors():
    from lamp.ir import DimensionMismatch, NonSquareInverse

    with pytest.raises(DimensionMismatch):
        Product((Operand("P", Shape(2, 3)), Operand("Q", Shape(2, 3))))
    with pytest.raises(NonSquareInverse):
        Inverse(Operand("P", Shape(2, 3)))


def test_substitute_and_names():
    e = mk_product([A, B, A])
    assert operand_names(e) == {"A", "B"}
    assert substitute(e, {A: S}) == Product((S, B, S))


@settings(max_examples=150, deadline=None)
@given(matrix_exprs)
def test_canonicalize_is_idempotent(text):
    _, e = _expr(text)
    assert canonicalize(e) == e
    assert canonicalize(transpose(transpose(e))) == e


@settings(max_examples=150, deadline=None)
@given(matrix_exprs)
def test_transpose_is_semantic(text):
    p, e = _expr(text)
    env = random_environment(p, 1)
    np.testing.assert_allclose(evaluate(transpose(e), env), evaluate(e, env).T, rtol=1e-9, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(matrix_exprs)
def test_inferred_properties_hold_numerically(text):
    p, e = _expr(text)
    props = infer_properties(e)
    for seed in (1, 2):
        value = evaluate(e, random_environment(p, seed))
        scale = max(1.0, float(np.abs(value).max()))
        assert satisfies(value / scale, props), f"{text}: {props}"
