import pytest
from hypothesis import HealthCheck, given, settings

from lamp.codegen import lower
from lamp.executor import compare, eval_naive, random_environment
from lamp.frontend import format_program, parse_program
from lamp.ir import Assign, Block, DiagProduct, ForLoop, Solve, Syr2k, Syrk, operand_names
from lamp.passes import (
    DEFAULT_ORDER, PASSES, PassConfig, UnknownPass, compile_program, cost, detect_rank_updates,
    eliminate_common_subexpressions, exploit_block_structure, hoist_loop_invariants,
    pushdown_partial_access, rewrite_inv_to_solve, run_pipeline,
)
from strategies import programs

HEAD = """scalar n = 6
matrix A(n,n)
matrix B(n,n)
matrix C(n,n)
vector b(n)
vector y(n)
"""
CFG = PassConfig()


def _p(body, head=HEAD):
    return parse_program(head + body)


def _same_values(p, q, seeds=range(1, 4), tol=1e-9):
    for s in seeds:
        env = random_environment(p, s)
        rep = compare(eval_naive(p, env), eval_naive(q, env), tol, names=p.assigned())
        assert rep.passed, rep.lines()


def _kernels(p, cfg=CFG):
    return compile_program(p, cfg).kernel_counts()


def test_config_validation():
    with pytest.raises(UnknownPass):
        PassConfig(("canonicalize", "loop_fusion"))
    with pytest.raises(ValueError):
        PassConfig(cse_mode="optimal")
    assert PassConfig.parse("canonicalize, fuse_updates").enabled == ("canonicalize", "fuse_updates")
    assert "optimize_chains" not in PassConfig().without("optimize_chains").enabled
    assert PassConfig.none().lower_options().optimize_chains is False


def test_inverse_times_vector_becomes_solve():
    p = _p("x := inv(A)*b\n")
    q = rewrite_inv_to_solve(p, CFG)
    assert q.stmts[0].expr == Solve(p.stmts[0].expr.factors[0].child, p.stmts[0].expr.factors[1])
    assert _kernels(p) == {"GETRF": 1, "GETRS": 1}


def test_explicit_inverse_is_kept():
    p = _p("X := inv(A)\n")
    assert rewrite_inv_to_solve(p, CFG) == p


def test_trailing_inverse_becomes_right_solve():
    q = rewrite_inv_to_solve(_p("X := B*inv(A)\n"), CFG)
    assert isinstance(q.stmts[0].expr, Solve) and q.stmts[0].expr.side == "right"


def test_signal_processing_chain_shares_one_factorization():
    p = _p("x := inv(A')*B'*B*inv(A)*y\n")
    assert _kernels(p) == {"GETRF": 1, "GETRS": 2, "GEMV": 2}
    q = run_pipeline(p, CFG)
    assert [s.target for s in q.stmts] == ["x"]  # no B*inv(A) temporary


def test_rank_updates():
    s = detect_rank_updates(_p("X := A*A'\n"), CFG).stmts[0].expr
    assert isinstance(s, Syrk) and not s.trans
    s = detect_rank_updates(_p("X := A'*A\n"), CFG).stmts[0].expr
    assert isinstance(s, Syrk) and s.trans
    s = detect_rank_updates(_p("X := A*B' + B*A'\n"), CFG).stmts[0].expr
    assert isinstance(s, Syr2k)
    p = _p("X := A*B' + B*C'\n")
    assert detect_rank_updates(p, CFG) == p


def test_partial_access_pushdown():
    p = _p("e := (A+B)[2,2]\nd := diag(A*B)\nc := (A*B)[:,3]\n")
    q = pushdown_partial_access(p, CFG)
    assert isinstance(q.stmts[1].expr, DiagProduct)
    assert cost(q, CFG) < cost(p, CFG)
    assert _kernels(q).get("GEMM", 0) == 0
    _same_values(p, q)


def test_diag_of_diagonal_is_a_plain_extraction():
    p = _p("matrix D(n,n):diagonal\nd := diag(D)\n")
    assert pushdown_partial_access(p, CFG) == p
    assert _kernels(p) == {"EXTRACT": 1}


def test_block_diagonal_solve_splits():
    head = "scalar n = 4\nscalar m = 8\nmatrix A1(n,n)\nmatrix A2(n,n)\nvector b(m)\n"
    p = _p("x := inv([A1, 0; 0, A2])*b\n", head)
    q = exploit_block_structure(rewrite_inv_to_solve(p, CFG), CFG)
    e = q.stmts[0].expr
    assert isinstance(e, Block) and all(isinstance(row[0], Solve) for row in e.grid)
    _same_values(p, q)


def test_block_diagonal_of_diagonals_scales():
    head = "scalar n = 4\nscalar m = 8\nmatrix D1(n,n):diagonal\nmatrix D2(n,n):diagonal\nvector x(m)\n"
    p = _p("y := [D1, 0; 0, D2]*x\n", head)
    assert _kernels(p) == {"DIAGSCALE": 2}
    _same_values(p, run_pipeline(p, CFG))


def test_loop_invariant_product_is_hoisted():
    p = _p("vector X(n)\nfor i in 1:n {\n  M := A*B\n  X[i] := M[i,i]\n}\n")
    q = hoist_loop_invariants(p, CFG)
    assert isinstance(q.stmts[0], Assign) and q.stmts[0].target == "M"
    loop = q.stmts[1]
    assert isinstance(loop, ForLoop) and len(loop.body) == 1
    assert cost(q, CFG) == 2 * 6 ** 3
    _same_values(p, q)


def test_loop_without_invariants_is_unchanged():
    p = _p("vector X(n)\nfor i in 1:n {\n  X[i] := b[i,1]\n}\n")
    assert hoist_loop_invariants(p, CFG) == p


def test_invariant_subexpression_goes_to_a_temporary():
    p = _p("vector X(n)\nfor i in 1:n {\n  X[i] := (A*B)[i,i] + b[i,1]\n}\n", HEAD)
    q = hoist_loop_invariants(p, PassConfig(tuple(n for n in DEFAULT_ORDER if n != "pushdown_partial_access")))
    assert cost(q, CFG) < cost(p, CFG)
    _same_values(p, q)


def test_repeated_chain_is_shared():
    p = _p("X := A*B*A*B\n")
    q = eliminate_common_subexpressions(p, CFG)
    assert len(q.stmts) == 2
    m = q.stmts[0]
    assert operand_names(m.expr) == {"A", "B"} and q.stmts[1].expr.factors == (q.stmts[1].expr.factors[0],) * 2
    assert _kernels(q) == {"GEMM": 2}
    _same_values(p, q)


def test_transposed_occurrence_is_shared():
    p = _p("X := A*B*C*B'*A'\n")
    q = eliminate_common_subexpressions(p, CFG)
    assert cost(q, CFG) < cost(p, CFG)
    _same_values(p, q)


def test_identical_statements_share_a_temporary():
    p = _p("X := A+B\nY := A+B\n")
    q = eliminate_common_subexpressions(p, CFG)
    assert len(q.stmts) == 3 and q.stmts[0].expr == p.stmts[0].expr
    assert _kernels(q) == {"ADD": 1, "COPY": 2}


def test_sum_groups_use_ocse():
    head = "scalar n = 6\nmatrix a1(n,n)\nmatrix a2(n,n)\nmatrix a3(n,n)\nmatrix a4(n,n)\n"
    p = _p("x1 := a1 + a2\nx2 := a1 + a2 + a3\nx3 := a2 + a3 + a4\n", head)
    for mode in ("exact", "greedy"):
        q = eliminate_common_subexpressions(p, PassConfig(cse_mode=mode))
        assert _kernels(q)["ADD"] == 4
        _same_values(p, q)


def test_cse_respects_intervening_writes():
    p = _p("X := A+B\nA := C\nY := A+B\n")
    q = eliminate_common_subexpressions(p, CFG)
    assert q == p


def test_least_squares_uses_cholesky():
    p = parse_program("matrix X(10,4)\nvector y(10)\nb := inv(X'*X)*X'*y\n")
    k = _kernels(p)
    assert k.get("POTRF") == 1 and k.get("POTRS") == 1 and "GETRF" not in k


def test_empty_pipeline_is_identity():
    p = _p("x := inv(A)*b\nX := A*B*A*B\n")
    assert run_pipeline(p, PassConfig.none()) == p


def test_corpus_passes_are_idempotent_and_sound(corpus_program):
    p = corpus_program
    for name, fn in PASSES.items():
        q = fn(p, CFG)
        assert fn(q, CFG) == q, name
        assert cost(q, CFG) <= cost(p, CFG), name
        _same_values(p, q, seeds=range(1, 11))


def test_corpus_pipeline_never_costs_more(corpus_program):
    p = corpus_program
    opt = compile_program(p, CFG)
    assert opt.total_flops <= lower(p).total_flops
    assert opt.total_flops <= compile_program(p, PassConfig.none()).total_flops


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(programs())
def test_random_programs_keep_their_meaning(src):
    p = parse_program(src)
    q = run_pipeline(p, CFG)
    _same_values(p, q, seeds=(1,), tol=1e-8)
    assert run_pipeline(q, CFG) == q
    assert cost(q, CFG) <= cost(p, CFG)


def test_pipeline_reaches_fixpoint_when_cse_exposes_access_pushdown():
    p = parse_program("scalar n = 5\nmatrix A(n,n)\nmatrix L(n,n):lower\nvector x(n)\n"
                      "R0 := (A + inv(L))*x\nR1 := (2*inv(L))[2,3]\n")
    q = run_pipeline(p, CFG)
    assert run_pipeline(q, CFG) == q
    assert "(2 * M1)" not in format_program(q)
    _same_values(p, q, seeds=(1, 2))
