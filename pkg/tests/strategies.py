"""Hypothesis strategies producing well-typed programs over a fixed declaration header."""

from hypothesis import strategies as st

HEADER = """\
scalar n = 5
scalar alpha
matrix A(n,n)
matrix B(n,n)
matrix C(n,n)
matrix S(n,n):spd
matrix L(n,n):lower
matrix D(n,n):diagonal
matrix Y(n,n):symmetric
vector x(n)
vector y(n)
"""

_leaves = st.sampled_from(["A", "B", "C", "S", "L", "D", "Y", "A'", "B'", "L'",
                           "inv(S)", "inv(L)", "inv(D)", "inv(A)"])


def _extend(inner):
    return st.one_of(
        st.tuples(inner, st.sampled_from(["+", "-"]), inner).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(inner, inner).map(lambda t: f"{t[0]}*{t[1]}"),
        inner.map(lambda e: f"({e})'"),
        inner.map(lambda e: f"2*{e}"),
        inner.map(lambda e: f"alpha*{e}"),
    )


matrix_exprs = st.recursive(_leaves, _extend, max_leaves=6)


@st.composite
def programs(draw, max_stmts=3):
    """Straight-line programs; later statements may read earlier results."""
    lines, names = [], []
    for k in range(draw(st.integers(1, max_stmts))):
        e = draw(matrix_exprs)
        if names and draw(st.booleans()):
            e = f"{e} + {draw(st.sampled_from(names))}"
        kind = draw(st.sampled_from(["mat", "vec", "elem", "col", "diag"]))
        if kind == "vec":
            e = f"({e})*x"
        elif kind == "elem":
            e = f"({e})[2,3]"
        elif kind == "col":
            e = f"({e})[:,1]"
        elif kind == "diag":
            e = f"diag({e})"
        name = f"R{k}"
        lines.append(f"{name} := {e}")
        if kind == "mat":
            names.append(name)
    return HEADER + "\n".join(lines) + "\n"
