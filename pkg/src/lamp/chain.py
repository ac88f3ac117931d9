"""Matrix chain parenthesization: O(n^3) dynamic program plus an exhaustive oracle."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Iterator, Union


class EmptyChain(ValueError):
    pass


class ChainTooLong(ValueError):
    pass


BRUTE_FORCE_LIMIT = 12


@dataclass(frozen=True)
class Leaf:
    index: int
    rows: int
    cols: int
    cost: int = 0

    def leaves(self):
        yield self.index


@dataclass(frozen=True)
class Node:
    left: "ParenTree"
    right: "ParenTree"
    rows: int
    cols: int
    cost: int

    def leaves(self):
        yield from self.left.leaves()
        yield from self.right.leaves()


ParenTree = Union[Leaf, Node]


def join(left: ParenTree, right: ParenTree) -> Node:
    if left.cols != right.rows:
        raise ValueError("non-conformable join")
    cost = left.cost + right.cost + 2 * left.rows * left.cols * right.cols
    return Node(left, right, left.rows, right.cols, cost)


def _check(dims) -> list[int]:
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise EmptyChain("a chain needs at least one factor")
    if any(d < 1 for d in dims):
        raise ValueError("dimensions must be positive")
    return dims


def optimal_parenthesization(dims) -> tuple[ParenTree, int]:
    """Minimum-FLOP parenthesization of a chain with factor i of shape dims[i] x dims[i+1].

    Ties go to the largest split index, i.e. left association.
    """
    dims = _check(dims)
    n = len(dims) - 1
    cost = [[0] * n for _ in range(n)]
    split = [[0] * n for _ in range(n)]
    for length in range(2, n + 1):
        for i in range(n - length + 1):
            j = i + length - 1
            best = None
            for k in range(i, j):
                c = cost[i][k] + cost[k + 1][j] + 2 * dims[i] * dims[k + 1] * dims[j + 1]
                if best is None or c <= best:
                    best, split[i][j] = c, k
            cost[i][j] = best

    def build(i, j) -> ParenTree:
        if i == j:
            return Leaf(i, dims[i], dims[i + 1])
        k = split[i][j]
        return join(build(i, k), build(k + 1, j))

    tree = build(0, n - 1)
    return tree, tree.cost


def left_to_right(dims) -> tuple[ParenTree, int]:
    dims = _check(dims)
    tree: ParenTree = Leaf(0, dims[0], dims[1])
    for i in range(1, len(dims) - 1):
        tree = join(tree, Leaf(i, dims[i], dims[i + 1]))
    return tree, tree.cost


def enumerate_parenthesizations(dims) -> Iterator[ParenTree]:
    dims = _check(dims)

    def trees(i, j):
        if i == j:
            yield Leaf(i, dims[i], dims[i + 1])
            return
        for k in range(i, j):
            for left in trees(i, k):
                for right in trees(k + 1, j):
                    yield join(left, right)

    yield from trees(0, len(dims) - 2)


def brute_force_parenthesization(dims) -> tuple[ParenTree, int]:
    """Exhaustive minimum over all Catalan(n-1) trees; a test oracle."""
    dims = _check(dims)
    if len(dims) - 1 > BRUTE_FORCE_LIMIT:
        raise ChainTooLong(f"{len(dims) - 1} factors exceeds the brute-force limit {BRUTE_FORCE_LIMIT}")
    best = None
    for t in enumerate_parenthesizations(dims):
        if best is None or t.cost < best.cost:
            best = t
    return best, best.cost


def catalan(n: int) -> int:
    if not 0 <= n <= 30:
        raise OverflowError("catalan guarded to 0 <= n <= 30")
    return comb(2 * n, n) // (n + 1)


def format_tree(tree: ParenTree, names=None) -> str:
    if isinstance(tree, Leaf):
        return names[tree.index] if names else f"M{tree.index + 1}"
    return f"({format_tree(tree.left, names)} {format_tree(tree.right, names)})"
