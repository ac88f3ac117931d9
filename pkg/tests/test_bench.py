import pytest

from lamp.bench import CASES, format_json, format_table, get_case, run_bench, run_case
from lamp.passes import DEFAULT_ORDER, PassConfig


@pytest.mark.parametrize("case", CASES, ids=[c.id for c in CASES])
def test_case_passes_with_all_passes(case):
    out = run_case(case)
    assert out.passed, out.detail
    assert out.flops_optimized <= out.flops_naive


def test_no_opt_fails_every_optimization_case():
    results = run_bench(PassConfig.none())
    assert {c.id for c, o in results if o.passed} == {"E1"}


def test_report_formats():
    results = run_bench(only="E5")
    table = format_table(results)
    assert "✓" in table and "1/1 cases pass" in table
    assert '"flops_naive"' in format_json(results)


def test_case_lookup():
    assert get_case("e7").id == "E7" and get_case("12").id == "E12"
    with pytest.raises(KeyError):
        get_case("E13")


def test_every_dependency_is_a_known_pass():
    for c in CASES:
        assert set(c.depends) <= set(DEFAULT_ORDER)
