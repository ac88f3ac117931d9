import pytest

from lamp.codegen import LowerOptions, lower, program_cost
from lamp.executor import compare, eval_naive, exec_plan, random_environment
from lamp.frontend import parse_program

HEAD = """scalar n = 6
scalar a
matrix A(n,n)
matrix B(n,n)
matrix C(n,n)
matrix S(n,n):spd
matrix Y(n,n):symmetric
matrix L(n,n):lower
matrix U(n,n):upper
matrix D(n,n):diagonal
vector x(n)
vector y(n)
"""


def _lower(body, opts=None):
    p = parse_program(HEAD + body)
    plan = lower(p, opts or LowerOptions())
    env = random_environment(p, 7)
    rep = compare(eval_naive(p, env), exec_plan(plan, env), 1e-9, names=p.assigned())
    assert rep.passed, rep.lines()
    return plan


def _kernels(plan):
    return [c.kernel for c in plan.calls]


@pytest.mark.parametrize("body, kernels", [
    ("R := A*B", ["GEMM"]),
    ("R := A*x", ["GEMV"]),
    ("R := x'*A", ["GEMV"]),
    ("R := x'*y", ["DOT"]),
    ("R := x*y'", ["GER"]),
    ("R := L*B", ["TRMM"]),
    ("R := B*U", ["TRMM"]),
    ("R := D*B", ["DIAGSCALE"]),
    ("R := B*D", ["DIAGSCALE"]),
    ("R := Y*B", ["SYMM"]),
    ("R := A + B", ["ADD"]),
    ("R := diag(A)", ["EXTRACT"]),
    ("R := A'", ["COPY"]),
])
def test_single_kernel_selection(body, kernels):
    assert _kernels(_lower(f"{body}\n")) == kernels


def test_without_property_dispatch_everything_is_general():
    plan = _lower("R := L*B\n", LowerOptions(dispatch_properties=False))
    assert _kernels(plan) == ["GEMM"]


def test_chain_order_is_optimal():
    plan = _lower("R := A*B*x\n")
    assert _kernels(plan) == ["GEMV", "GEMV"]
    naive = _lower("R := A*B*x\n", LowerOptions(optimize_chains=False))
    assert _kernels(naive) == ["GEMM", "GEMV"]
    assert plan.total_flops < naive.total_flops


def test_update_fused_into_beta():
    plan = _lower("C := A*B + C\n")
    (call,) = plan.calls
    assert call.kernel == "GEMM" and call.scalar("beta").is_one
    unfused = _lower("C := A*B + C\n", LowerOptions(fuse_updates=False))
    assert "ADD" in _kernels(unfused)


def test_scaled_update():
    plan = _lower("C := a*A*B - 2*C\n")
    (call,) = plan.calls
    assert call.scalar("alpha").text() == "a" and call.scalar("beta").text() == "-2"


@pytest.mark.parametrize("body, kernels", [
    ("R := inv(A)", ["GETRF", "GETRI"]),
    ("R := inv(L)", ["COPY", "TRSM"]),
    ("R := inv(D)", ["COPY", "DIAGSOLVE"]),
])
def test_explicit_inverse(body, kernels):
    assert _kernels(_lower(body + "\n")) == kernels


def test_factorization_is_shared_between_solves():
    from lamp.ir import Assign, Operand, Solve

    p = parse_program(HEAD + "R := A*x\n")
    a, xv, yv = (Operand(n, p.decl(n).shape, p.decl(n).props) for n in ("A", "x", "y"))
    q = p.replace((Assign("r1", Solve(a, xv)), Assign("r2", Solve(a, yv))))
    plan = lower(q)
    assert _kernels(plan) == ["GETRF", "GETRS", "GETRS"]


def test_cost_function_matches_plan():
    p = parse_program(HEAD + "R := A*B*C + Y*L\n")
    assert program_cost(p) == lower(p).total_flops


def test_loops_are_unrolled_with_element_stores():
    p = parse_program(HEAD + "vector v(n)\nfor i in 1:n {\n  v[i] := A[i,i] + B[i,i]\n}\n")
    plan = lower(p)
    assert sum(k == "ADD" for k in _kernels(plan)) == 6
    env = random_environment(p, 3)
    assert compare(eval_naive(p, env), exec_plan(plan, env), 1e-12, names=["v"]).passed
