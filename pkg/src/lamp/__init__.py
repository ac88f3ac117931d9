"""Matrix expression compiler: parse a small linear algebra language, rewrite
it, and lower it to a FLOP-minimal sequence of BLAS/LAPACK-style kernel calls."""

from .frontend import format_program, parse_program
from .passes import DEFAULT_ORDER, PassConfig, compile_program, run_pipeline
from .plan import Plan, emit_plan

__all__ = ["parse_program", "format_program", "PassConfig", "DEFAULT_ORDER", "run_pipeline",
           "compile_program", "Plan", "emit_plan"]
