import itertools

import pytest
from hypothesis import given, settings, strategies as st

from lamp.chain import (
    ChainTooLong, EmptyChain, Leaf, Node, brute_force_parenthesization, catalan,
    enumerate_parenthesizations, format_tree, left_to_right, optimal_parenthesization,
)

dims_st = st.lists(st.integers(1, 60), min_size=2, max_size=8)


def _cost(tree, dims):
    if isinstance(tree, Leaf):
        return 0
    return _cost(tree.left, dims) + _cost(tree.right, dims) + 2 * tree.left.rows * tree.left.cols * tree.right.cols


def test_textbook_example():
    tree, cost = optimal_parenthesization([10, 100, 5, 50])
    assert format_tree(tree) == "((M1 M2) M3)"
    assert cost == 15000


def test_clrs_six_matrices():
    tree, cost = optimal_parenthesization([30, 35, 15, 5, 10, 20, 25])
    assert format_tree(tree) == "((M1 (M2 M3)) ((M4 M5) M6))"
    assert cost == 2 * 15125


def test_single_matrix_costs_nothing():
    tree, cost = optimal_parenthesization([4, 7])
    assert isinstance(tree, Leaf) and cost == 0


def test_ties_prefer_left_association():
    tree, _ = optimal_parenthesization([5, 5, 5, 5])
    assert format_tree(tree) == "((M1 M2) M3)"


def test_errors():
    with pytest.raises(EmptyChain):
        optimal_parenthesization([3])
    with pytest.raises(ValueError):
        optimal_parenthesization([3, 0, 2])
    with pytest.raises(ChainTooLong):
        brute_force_parenthesization([2] * 14)


def test_catalan_values():
    assert [catalan(i) for i in range(8)] == [1, 1, 2, 5, 14, 42, 132, 429]
    assert catalan(30) == 3814986502092304


@settings(max_examples=150, deadline=None)
@given(dims_st)
def test_dp_matches_brute_force(dims):
    tree, cost = optimal_parenthesization(dims)
    _, best = brute_force_parenthesization(dims)
    assert cost == best
    assert _cost(tree, dims) == cost
    assert list(tree.leaves()) == list(range(len(dims) - 1))


@settings(max_examples=60, deadline=None)
@given(dims_st)
def test_enumeration_is_complete_and_distinct(dims):
    trees = list(enumerate_parenthesizations(dims))
    assert len(trees) == catalan(len(dims) - 2)
    assert len({format_tree(t) for t in trees}) == len(trees)


@settings(max_examples=60, deadline=None)
@given(dims_st)
def test_left_to_right_is_an_upper_bound(dims):
    _, opt = optimal_parenthesization(dims)
    tree, ltr = left_to_right(dims)
    assert opt <= ltr
    assert _cost(tree, dims) == ltr
