"""Dense reference execution: seeded operands, the naive oracle, and a plan interpreter.

Environments map names to float64 numpy arrays (runtime scalar symbols map to
Python floats).  ``eval_naive`` evaluates the program literally, with an
explicit Gauss-Jordan inverse; ``exec_plan`` interprets kernel calls with
LAPACK-style factorizations from scipy.  The two share no solver code, which
is what makes one a check on the other.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .ir import (
    Assign, Block, Column, Diag, DiagProduct, Element, Expr, ForLoop, Inverse, Operand,
    Product, Program, Prop, PropertySet, Row, ScalarMul, Shape, Slice, Solve, Sum, Syr2k,
    Syrk, Transpose, Zero,
)
from .plan import Coef, KernelCall, Plan, PlanError, Ref, ShapeMismatch


class SingularMatrix(ArithmeticError):
    pass


class UnsatisfiableProperties(ValueError):
    pass


class VariableSetMismatch(KeyError):
    pass


PIVOT_TOL = 1e-12

# ---------------------------------------------------------------------------
# operand generation


def _rng(seed: int, name: str = "") -> np.random.Generator:
    # PCG64 seeded from (seed, crc32(name)), so each operand has its own stream
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])


def random_operand(shape: Shape, props: PropertySet, seed: int, name: str = "") -> np.ndarray:
    """Seeded matrix satisfying ``props``; checked against the numeric predicate before returning."""
    rows, cols = shape.rows, shape.cols
    if Prop.ZERO in props and (Prop.SPD in props or Prop.IDENTITY in props):
        raise UnsatisfiableProperties(f"{props} cannot hold for one matrix")
    rng = _rng(seed, name)
    n = rows
    if Prop.ZERO in props:
        m = np.zeros((rows, cols))
    elif Prop.IDENTITY in props:
        m = np.eye(rows, cols)
    elif Prop.DIAGONAL in props or Prop.BLOCK_DIAGONAL in props:
        d = rng.uniform(-1.0, 1.0, min(rows, cols))
        if Prop.SPD in props or Prop.SPSD in props:
            d = np.abs(d) + 0.5
        else:
            d = d + np.sign(d) * 0.5 + (d == 0)  # |d| >= 0.5 keeps solves well conditioned
        m = np.zeros((rows, cols))
        m[np.diag_indices(min(rows, cols))] = d
    elif Prop.SPD in props:
        g = rng.uniform(-1.0, 1.0, (n, n))
        m = g @ g.T + n * np.eye(n)
    elif Prop.SPSD in props:
        g = rng.uniform(-1.0, 1.0, (n, n))
        # programs invert SPSD operands, so sample from the nonsingular part of the cone
        m = g @ g.T + np.eye(n)
    elif Prop.SYMMETRIC in props:
        g = rng.uniform(-1.0, 1.0, (n, n))
        m = (g + g.T) / 2
    elif props.triangular:
        g = rng.uniform(-1.0, 1.0, (rows, cols))
        m = np.tril(g) if Prop.LOWER_TRIANGULAR in props else np.triu(g)
        if rows == cols:
            m = m + n * np.eye(n)  # random triangular matrices are badly conditioned without a shift
    else:
        m = rng.uniform(-1.0, 1.0, (rows, cols))
    if not satisfies(m, props):
        raise UnsatisfiableProperties(f"generated matrix violates {props}")
    return m


def satisfies(m: np.ndarray, props: PropertySet) -> bool:
    """Numeric predicate for every flag in ``props``."""
    scale = max(float(np.max(np.abs(m))) if m.size else 0.0, 1e-300)
    for p in props.flags:
        if p == Prop.FULL or p == Prop.BLOCK_DIAGONAL:
            continue
        if p == Prop.ZERO and np.any(m != 0):
            return False
        if p == Prop.IDENTITY and not np.array_equal(m, np.eye(*m.shape)):
            return False
        if p == Prop.LOWER_TRIANGULAR and np.any(np.triu(m, 1) != 0):
            return False
        if p == Prop.UPPER_TRIANGULAR and np.any(np.tril(m, -1) != 0):
            return False
        if p == Prop.DIAGONAL and np.any(m - np.diag(np.diag(m)) != 0):
            return False
        if p in (Prop.SYMMETRIC, Prop.SPD, Prop.SPSD):
            if m.shape[0] != m.shape[1] or np.max(np.abs(m - m.T)) > 1e-12 * scale:
                return False
        if p == Prop.SPD:
            try:
                np.linalg.cholesky((m + m.T) / 2)
            except np.linalg.LinAlgError:
                return False
        if p == Prop.SPSD:
            w = np.linalg.eigvalsh((m + m.T) / 2)
            if w.min() < -1e-10 * scale * m.shape[0]:
                return False
    return True


def random_environment(p: Program, seed: int) -> dict:
    """Inputs for every declaration of ``p``; runtime scalar symbols are drawn positive."""
    env: dict = {}
    for d in p.input_decls():
        if d.kind == "scalar":
            env[d.name] = float(_rng(seed, d.name).uniform(0.5, 1.5))
        else:
            env[d.name] = random_operand(d.shape, d.props, seed, d.name)
    for d in p.decls:
        if d.kind == "scalar" and d.value is not None:
            env[d.name] = float(d.value)
    return env


# ---------------------------------------------------------------------------
# naive evaluation


def gauss_jordan_inverse(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("inverse of a non-square matrix")
    aug = np.hstack([a.astype(float), np.eye(n)])
    scale = max(float(np.max(np.abs(a))), 1.0)
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[piv, col]) <= PIVOT_TOL * scale:
            raise SingularMatrix(f"no pivot in column {col}")
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] /= aug[col, col]
        others = np.arange(n) != col
        aug[others] -= np.outer(aug[others, col], aug[col])
    return aug[:, n:]


def _ix(i, idx) -> int:
    return (idx[i] if isinstance(i, str) else i) - 1


def _coef(e: ScalarMul, env) -> float:
    out = e.coef
    for s in e.syms:
        out *= float(env[s])
    return out


def evaluate(e: Expr, env: dict, idx: dict | None = None) -> np.ndarray:
    """Literal value of ``e``; loop indices are looked up in ``idx``."""
    idx = idx or {}
    ev = lambda x: evaluate(x, env, idx)  # noqa: E731
    if isinstance(e, Operand):
        return np.asarray(env[e.name], dtype=float).reshape(e.shape.rows, e.shape.cols)
    if isinstance(e, Zero):
        return np.zeros((e.shape.rows, e.shape.cols))
    if isinstance(e, Product):
        out = ev(e.factors[0])
        for f in e.factors[1:]:
            out = out @ ev(f)
        return out
    if isinstance(e, Sum):
        return sum(s * ev(t) for s, t in e.terms)
    if isinstance(e, Transpose):
        return ev(e.child).T
    if isinstance(e, Inverse):
        return gauss_jordan_inverse(ev(e.child))
    if isinstance(e, ScalarMul):
        return _coef(e, env) * ev(e.child)
    if isinstance(e, Block):
        return np.block([[ev(b) for b in row] for row in e.grid])
    if isinstance(e, Diag):
        return np.diag(ev(e.child)).reshape(-1, 1).copy()
    if isinstance(e, Element):
        return ev(e.child)[_ix(e.row, idx), _ix(e.col, idx)].reshape(1, 1)
    if isinstance(e, Column):
        j = _ix(e.col, idx)
        return ev(e.child)[:, j:j + 1]
    if isinstance(e, Row):
        i = _ix(e.row, idx)
        return ev(e.child)[i:i + 1, :]
    if isinstance(e, Slice):
        return ev(e.child)[e.r0:e.r1, e.c0:e.c1]
    if isinstance(e, Solve):
        inv = gauss_jordan_inverse(ev(e.matrix))
        return inv @ ev(e.rhs) if e.side == "left" else ev(e.rhs) @ inv
    if isinstance(e, Syrk):
        a = ev(e.child)
        return a.T @ a if e.trans else a @ a.T
    if isinstance(e, Syr2k):
        a, b = ev(e.a), ev(e.b)
        return a.T @ b + b.T @ a if e.trans else a @ b.T + b @ a.T
    if isinstance(e, DiagProduct):
        return np.diag(ev(e.a) @ ev(e.b)).reshape(-1, 1).copy()
    raise TypeError(f"cannot evaluate {type(e).__name__}")


def eval_naive(p: Program, env: dict) -> dict:
    """Run ``p`` statement by statement; returns the assigned variables."""
    state = dict(env)
    for d in p.decls:
        if d.kind != "scalar" and d.name not in state:
            raise KeyError(f"environment lacks operand {d.name}")

    def run(stmts, idx):
        for s in stmts:
            if isinstance(s, ForLoop):
                for i in range(s.lo, s.hi + 1):
                    run(s.body, {**idx, s.var: i})
                continue
            val = evaluate(s.expr, state, idx)
            if s.index:
                r = _ix(s.index[0], idx)
                c = _ix(s.index[1], idx) if len(s.index) > 1 else 0
                target = np.array(state[s.target], dtype=float, copy=True)
                target[r, c] = val[0, 0]
                state[s.target] = target
            else:
                state[s.target] = val

    run(p.stmts, {})
    return {name: state[name] for name in p.assigned()}


# ---------------------------------------------------------------------------
# plan interpretation


@dataclass
class Factorization:
    kind: str  # "LU" | "CHOL" | "LDL"
    data: tuple
    n: int


def _lu_check(lu: np.ndarray, a: np.ndarray):
    scale = max(float(np.max(np.abs(a))), 1.0)
    if np.min(np.abs(np.diag(lu))) <= PIVOT_TOL * scale:
        raise SingularMatrix("LU factorization hit a zero pivot")


class _Machine:
    def __init__(self, plan: Plan, env: dict):
        self.plan = plan
        self.storage = plan.storage()
        self.env: dict = {}
        for name, val in env.items():
            self.env[name] = val if np.isscalar(val) else np.array(val, dtype=float, copy=True)
        for name, s in plan.temporaries:
            self.env[name] = np.zeros((s.rows, s.cols))
        for name, s in plan.variables:
            if name not in self.env:
                self.env[name] = np.zeros((s.rows, s.cols))
            elif np.asarray(self.env[name]).shape != (s.rows, s.cols):
                raise ShapeMismatch(f"{name}: environment {np.shape(self.env[name])} vs plan {s}")

    def read(self, r: Ref):
        val = self.env[r.name]
        if isinstance(val, Factorization):
            return val, r.trans
        if r.region is not None:
            r0, r1, c0, c1 = r.region
            val = val[r0:r1, c0:c1]
        return val.T if r.trans else val

    def write(self, r: Ref, value):
        arr = self.env[r.name]
        if isinstance(value, Factorization):
            self.env[r.name] = value
            return
        if isinstance(arr, Factorization):
            arr = np.zeros((self.storage[r.name].rows, self.storage[r.name].cols))
            self.env[r.name] = arr
        value = np.asarray(value, dtype=float)
        view = arr if r.region is None else arr[r.region[0]:r.region[1], r.region[2]:r.region[3]]
        if value.shape != view.shape:
            if value.size == view.size and 1 in value.shape and 1 in view.shape:
                value = value.reshape(view.shape)
            else:
                raise ShapeMismatch(f"writing {value.shape} into {r.text(False)} of shape {view.shape}")
        view[...] = value

    def coef(self, c) -> float:
        if c is None:
            return 1.0
        return c.resolve(self.env) if isinstance(c, Coef) else float(c)

    def run(self):
        for call in self.plan.calls:
            try:
                self.write(call.out, self.step(call))
            except ValueError as e:
                if isinstance(e, (ShapeMismatch, PlanError)):
                    raise
                raise ShapeMismatch(f"{call.kernel}: {e}") from None
        return self.env

    def step(self, call: KernelCall):
        k = call.kernel
        a = {name: self.read(r) for name, r in call.refs}
        alpha = self.coef(call.scalar("alpha"))
        beta = self.coef(call.scalar("beta", Coef(0.0)))
        side = call.scalar("side", "L")

        def acc(x):
            return x if beta == 0.0 else x + beta * self.read(call.out)

        if k == "GEMM":
            return acc(alpha * (a["A"] @ a["B"]))
        if k == "GEMV":
            return acc(alpha * (a["A"] @ a["x"].reshape(-1, 1)).reshape(self.read(call.out).shape))
        if k == "SYMM":
            return acc(alpha * (a["A"] @ a["B"] if side == "L" else a["B"] @ a["A"]))
        if k == "SYRK":
            return acc(alpha * (a["A"] @ a["A"].T))
        if k == "SYR2K":
            return acc(alpha * (a["A"] @ a["B"].T + a["B"] @ a["A"].T))
        if k == "GER":
            return acc(alpha * (a["x"].reshape(-1, 1) @ a["y"].reshape(1, -1)))
        if k == "TRMM":
            return alpha * (a["A"] @ a["B"] if side == "L" else a["B"] @ a["A"])
        if k in ("TRSV", "TRSM"):
            lower = call.scalar("uplo") == "L"
            mat, rhs = a["A"], a["b"] if k == "TRSV" else a["B"]
            if np.any(np.diag(mat) == 0):
                raise SingularMatrix("zero on the triangular diagonal")
            if side == "L":
                x = sla.solve_triangular(mat, rhs.reshape(mat.shape[0], -1), lower=lower)
            else:
                x = sla.solve_triangular(mat.T, rhs.reshape(-1, mat.shape[0]).T, lower=not lower).T
            return alpha * x
        if k == "GETRF":
            m = a["A"]
            lu, piv = sla.lu_factor(m, check_finite=False)
            _lu_check(lu, m)
            return Factorization("LU", (lu, piv), m.shape[0])
        if k == "POTRF":
            try:
                l = sla.cholesky(a["A"], lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                raise SingularMatrix("Cholesky factorization failed") from None
            return Factorization("CHOL", (l,), l.shape[0])
        if k == "SYTRF":
            lu, d, perm = sla.ldl(a["A"], lower=True, check_finite=False)
            if abs(np.linalg.det(d)) == 0.0:
                raise SingularMatrix("singular block diagonal in LDL^T")
            return Factorization("LDL", (lu, d, perm), lu.shape[0])
        if k in ("GETRS", "POTRS", "SYTRS"):
            f, trans = a["F"]
            b = a["B"]
            if side == "L":
                return _factor_solve(f, b.reshape(f.n, -1), trans)
            return _factor_solve(f, b.reshape(-1, f.n).T, not trans).T
        if k == "GETRI":
            f, trans = a["F"]
            return _factor_solve(f, np.eye(f.n), trans)
        if k in ("DIAGSCALE", "DIAGSOLVE"):
            d = np.diag(a["D"]).copy()
            if k == "DIAGSOLVE":
                if np.any(d == 0):
                    raise SingularMatrix("zero on the diagonal")
                d = 1.0 / d
            b = a["B"]
            return alpha * (d[:, None] * b if side == "L" else b * d[None, :])
        if k == "ADD":
            return alpha * a["A"] + beta * a["B"]
        if k == "AXPY":
            return self.read(call.out) + alpha * a["x"].reshape(self.read(call.out).shape)
        if k == "SCAL":
            return alpha * self.read(call.out)
        if k == "DOT":
            x, y = a["x"].ravel(), a["y"].ravel()
            if x.size != y.size:
                raise ShapeMismatch("DOT operands differ in length")
            return np.array([[float(x @ y)]])
        if k == "COPY":
            init = call.scalar("init")
            shape = self.read(call.out).shape
            if init == "eye":
                return np.eye(*shape)
            if init == "zero":
                return np.zeros(shape)
            return np.array(a["src"], copy=True)
        if k == "EXTRACT":
            return np.diag(a["src"]).reshape(-1, 1).copy()
        raise PlanError(f"no reference implementation for {k}")


def _factor_solve(f: Factorization, b: np.ndarray, trans: bool) -> np.ndarray:
    if f.kind == "LU":
        return sla.lu_solve(f.data, b, trans=1 if trans else 0, check_finite=False)
    if f.kind == "CHOL":
        return sla.cho_solve((f.data[0], True), b, check_finite=False)
    lu, d, perm = f.data  # A = L D L^T with L[perm] unit lower triangular
    lt = lu[perm]
    y = sla.solve_triangular(lt, b[perm], lower=True, unit_diagonal=True)
    w = np.linalg.solve(d, y)
    z = sla.solve_triangular(lt.T, w, lower=False, unit_diagonal=True)
    x = np.empty_like(z)
    x[perm] = z
    return x


def exec_plan(plan: Plan, env: dict) -> dict:
    """Interpret ``plan``; returns the program outputs."""
    state = _Machine(plan, env).run()
    return {var: np.array(state[src], copy=True) for var, src in plan.outputs.items()}


# ---------------------------------------------------------------------------
# comparison


@dataclass
class CompareReport:
    errors: dict = field(default_factory=dict)  # variable -> max relative error
    rel_tol: float = 1e-8

    @property
    def passed(self) -> bool:
        return all(e <= self.rel_tol for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def lines(self) -> list[str]:
        out = []
        for name, err in sorted(self.errors.items()):
            mark = "ok" if err <= self.rel_tol else "FAIL"
            out.append(f"{name:<12} max_rel_err={err:.3e} {mark}")
        return out


def compare(a: dict, b: dict, rel_tol: float = 1e-8, names=None) -> CompareReport:
    """Per-variable max of |a-b| / max(|a|, |b|, 1)."""
    if names is None:
        if set(a) != set(b):
            raise VariableSetMismatch(sorted(set(a) ^ set(b)))
        names = sorted(a)
    rep = CompareReport(rel_tol=rel_tol)
    for n in names:
        if n not in a or n not in b:
            raise VariableSetMismatch(n)
        x, y = np.atleast_2d(np.asarray(a[n], dtype=float)), np.atleast_2d(np.asarray(b[n], dtype=float))
        if x.shape != y.shape:
            raise ShapeMismatch(f"{n}: {x.shape} vs {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            rep.errors[n] = float("inf")
            continue
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), 1.0)
        rep.errors[n] = float(np.max(np.abs(x - y) / denom)) if x.size else 0.0
    return rep


# ---------------------------------------------------------------------------
# binary dump


def dump_matrix(path, m: np.ndarray):
    m = np.atleast_2d(np.asarray(m, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", m.shape[0], m.shape[1]))
        fh.write(np.ascontiguousarray(m).tobytes())


def load_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError("truncated header")
    rows, cols = struct.unpack("<II", raw[:8])
    data = np.frombuffer(raw[8:], dtype="<f8")
    if data.size != rows * cols:
        raise ValueError(f"expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols).astype(float)
