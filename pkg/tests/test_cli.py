import json

import pytest

from conftest import CORPUS
from lamp.cli import main

LSQ = "matrix X(10,4)\nvector y(10)\nb := inv(X'*X)*X'*y\n"


@pytest.fixture
def lsq(tmp_path):
    f = tmp_path / "lsq.lamp"
    f.write_text(LSQ)
    return str(f)


def test_compile_cost_only(lsq, capsys):
    assert main(["compile", lsq, "--cost-only"]) == 0
    out = capsys.readouterr().out.strip()
    assert out.isdigit() and int(out) > 0


def test_compile_emits_json(lsq, capsys):
    assert main(["compile", lsq, "--emit", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [c["kernel"] for c in doc["calls"]] == ["SYRK", "POTRF", "GEMV", "POTRS"]
    assert doc["total_flops"] == sum(c["flops"] for c in doc["calls"])


def test_no_opt_costs_more(lsq, capsys):
    main(["compile", lsq, "--cost-only"])
    main(["compile", lsq, "--cost-only", "--no-opt"])
    opt, naive = map(int, capsys.readouterr().out.split())
    assert naive > opt


def test_run_check(lsq, capsys):
    assert main(["run", lsq, "--seed", "3", "--check"]) == 0
    assert "ok at 1e-08" in capsys.readouterr().out


def test_chain(capsys):
    assert main(["chain", "10", "100", "5", "50"]) == 0
    assert capsys.readouterr().out.split() == ["((M1", "M2)", "M3)", "15000"]


def test_ocse(tmp_path, capsys):
    f = tmp_path / "inst.txt"
    f.write_text("vars: a1 a2 a3 a4\neq: a1 a2\neq: a1 a2 a3\neq: a2 a3 a4\nomega: 4\n")
    assert main(["ocse", str(f)]) == 0
    assert capsys.readouterr().out.startswith("omega = 4")
    f.write_text(f.read_text().replace("omega: 4", "omega: 3"))
    assert main(["ocse", str(f)]) == 1
    assert "INFEASIBLE" in capsys.readouterr().out


def test_bench_single_case_json(capsys):
    assert main(["bench", "--experiment", "2", "--format", "json"]) == 0
    (case,) = json.loads(capsys.readouterr().out)["cases"]
    assert case["id"] == "E2" and case["pass"] and case["kernels"] == ["SYRK"]


@pytest.mark.parametrize("argv", [
    ["compile"],
    ["compile", "missing.lamp"],
    ["frobnicate"],
    ["chain", "4"],
    ["run", "x.lamp"],
])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as info:
        raise SystemExit(main(argv))
    assert info.value.code == 2
    assert capsys.readouterr().err


def test_parse_error_exit_2(tmp_path, capsys):
    f = tmp_path / "bad.lamp"
    f.write_text("matrix A(2,2)\nX := A +\n")
    assert main(["compile", str(f)]) == 2
    assert "2:" in capsys.readouterr().err


def test_unknown_pass_exit_2(lsq, capsys):
    assert main(["compile", lsq, "--passes", "canonicalize,bogus"]) == 2


def test_run_reports_wall_time(capsys):
    assert main(["run", str(CORPUS[0]), "--seed", "1", "--time", "3"]) == 0
    assert "wall time (min of 3)" in capsys.readouterr().out
