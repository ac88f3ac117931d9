"""Kernel-call plans: references, calls, the FLOP table, and text/JSON emission.

A ``Ref`` names stored data plus a transpose flag and an optional rectangular
region (0-based, half-open, in the coordinates of the stored matrix).  Kernel
outputs are written to a ``Ref`` as well, so sub-block stores need no copies.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .ir import Shape


class PlanError(ValueError):
    pass


class ShapeMismatch(PlanError):
    pass


@dataclass(frozen=True)
class Ref:
    name: str
    trans: bool = False
    region: tuple | None = None  # (r0, r1, c0, c1) in stored coordinates

    @property
    def T(self) -> "Ref":
        return Ref(self.name, not self.trans, self.region)

    def plain(self) -> "Ref":
        return Ref(self.name, False, self.region)

    def sub(self, r0: int, r1: int, c0: int, c1: int) -> "Ref":
        """Sub-view given in this ref's (possibly transposed) coordinates."""
        if self.trans:
            r0, r1, c0, c1 = c0, c1, r0, r1
        R0, C0 = (self.region[0], self.region[2]) if self.region else (0, 0)
        return Ref(self.name, self.trans, (R0 + r0, R0 + r1, C0 + c0, C0 + c1))

    def shape(self, stored: Shape) -> Shape:
        if self.region is None:
            s = stored
        else:
            r0, r1, c0, c1 = self.region
            if not (0 <= r0 < r1 <= stored.rows and 0 <= c0 < c1 <= stored.cols):
                raise ShapeMismatch(f"region {self.region} outside {self.name}({stored})")
            s = Shape(r1 - r0, c1 - c0)
        return s.T if self.trans else s

    def text(self, with_trans: bool = True) -> str:
        s = self.name
        if self.region is not None:
            r0, r1, c0, c1 = self.region
            s += f"[{r0}:{r1},{c0}:{c1}]"
        if with_trans:
            s += "(T)" if self.trans else "(noT)"
        return s

    def to_json(self) -> dict:
        return {"ref": self.name, "trans": self.trans, "region": list(self.region) if self.region else None}

    @classmethod
    def from_json(cls, d: dict) -> "Ref":
        reg = d.get("region")
        return cls(d["ref"], bool(d.get("trans", False)), tuple(reg) if reg else None)


_REF_RE = re.compile(r"^([A-Za-z_]\w*)(?:\[(\d+):(\d+),(\d+):(\d+)\])?(?:\((T|noT)\))?$")


def parse_ref(s: str) -> Ref:
    m = _REF_RE.match(s)
    if not m:
        raise PlanError(f"bad reference {s!r}")
    region = tuple(int(m.group(i)) for i in range(2, 6)) if m.group(2) is not None else None
    return Ref(m.group(1), m.group(6) == "T", region)


@dataclass(frozen=True)
class Coef:
    """A scalar coefficient: a literal times a product of runtime scalar symbols."""

    value: float = 1.0
    syms: tuple = ()

    def __mul__(self, other: "Coef") -> "Coef":
        return Coef(self.value * other.value, tuple(sorted(self.syms + other.syms)))

    def __neg__(self) -> "Coef":
        return Coef(-self.value, self.syms)

    @property
    def is_one(self) -> bool:
        return self.value == 1.0 and not self.syms

    @property
    def is_zero(self) -> bool:
        return self.value == 0.0

    def text(self) -> str:
        v = self.value
        num = str(int(v)) if v == int(v) and abs(v) < 1e15 else repr(v)
        if not self.syms:
            return num
        if v == 1.0:
            return "*".join(self.syms)
        return "*".join((num,) + self.syms)

    def resolve(self, scalars) -> float:
        out = self.value
        for s in self.syms:
            out *= float(scalars[s])
        return out


ONE = Coef(1.0)
ZERO = Coef(0.0)


def parse_coef(s) -> Coef:
    if isinstance(s, (int, float)):
        return Coef(float(s))
    value, syms = 1.0, []
    for part in str(s).split("*"):
        part = part.strip()
        try:
            value *= float(part)
        except ValueError:
            neg = part.startswith("-")
            name = part[1:] if neg else part
            if not re.match(r"^[A-Za-z_]\w*$", name):
                raise PlanError(f"bad coefficient {s!r}")
            if neg:
                value = -value
            syms.append(name)
    return Coef(value, tuple(sorted(syms)))


# kernel -> (reference argument names, scalar argument names)
SIGNATURES: dict[str, tuple[tuple, tuple]] = {
    "GEMM": (("A", "B"), ("alpha", "beta")),
    "GEMV": (("A", "x"), ("alpha", "beta")),
    "SYMM": (("A", "B"), ("alpha", "beta", "side")),
    "SYRK": (("A",), ("alpha", "beta")),
    "SYR2K": (("A", "B"), ("alpha", "beta")),
    "TRMM": (("A", "B"), ("alpha", "side")),
    "TRSV": (("A", "b"), ("side", "uplo")),
    "TRSM": (("A", "B"), ("alpha", "side", "uplo")),
    "GETRF": (("A",), ()),
    "GETRS": (("F", "B"), ("side",)),
    "GETRI": (("F",), ()),
    "POTRF": (("A",), ()),
    "POTRS": (("F", "B"), ("side",)),
    "SYTRF": (("A",), ()),
    "SYTRS": (("F", "B"), ("side",)),
    "DIAGSCALE": (("D", "B"), ("alpha", "side")),
    "DIAGSOLVE": (("D", "B"), ("alpha", "side")),
    "ADD": (("A", "B"), ("alpha", "beta")),
    "AXPY": (("x",), ("alpha",)),
    "SCAL": ((), ("alpha",)),
    "DOT": (("x", "y"), ()),
    "GER": (("x", "y"), ("alpha", "beta")),
    "COPY": (("src",), ("init",)),
    "EXTRACT": (("src",), ("what",)),
}

KERNELS = tuple(SIGNATURES)
COEF_ARGS = {"alpha", "beta"}
FACTOR_KERNELS = {"GETRF", "POTRF", "SYTRF"}
BETA_KERNELS = {"GEMM", "GEMV", "SYMM", "SYRK", "SYR2K", "GER"}


@dataclass(frozen=True)
class KernelCall:
    kernel: str
    refs: tuple  # of (arg name, Ref)
    scalars: tuple  # of (arg name, Coef | str)
    out: Ref
    flops: int = 0

    def ref(self, name: str) -> Ref | None:
        return dict(self.refs).get(name)

    def scalar(self, name: str, default=None):
        return dict(self.scalars).get(name, default)

    def reads(self) -> list[Ref]:
        refs = [r for _, r in self.refs]
        beta = self.scalar("beta")
        if self.kernel in ("AXPY", "SCAL") or (isinstance(beta, Coef) and not beta.is_zero):
            refs.append(self.out)
        return refs


def _dims(call: KernelCall, shape_of) -> dict:
    k = call.kernel
    s = {a: shape_of(r) for a, r in call.refs}
    out = shape_of(call.out)
    side = call.scalar("side", "L")
    if k == "GEMM":
        return {"m": s["A"].rows, "k": s["A"].cols, "n": s["B"].cols}
    if k == "GEMV":
        return {"m": s["A"].rows, "n": s["A"].cols}
    if k in ("SYMM", "TRMM"):
        n = s["A"].rows
        m = s["B"].cols if side == "L" else s["B"].rows
        return {"m": m, "n": n}
    if k in ("SYRK", "SYR2K"):
        return {"n": s["A"].rows, "k": s["A"].cols}
    if k == "TRSV":
        return {"n": s["A"].rows}
    if k in ("TRSM", "GETRS", "POTRS", "SYTRS", "DIAGSOLVE"):
        mat = s["A"] if "A" in s else s["F"] if "F" in s else s["D"]
        b = s["B"]
        return {"n": mat.rows, "r": b.cols if side == "L" else b.rows}
    if k in ("GETRF", "POTRF", "SYTRF"):
        return {"n": s["A"].rows}
    if k == "GETRI":
        return {"n": s["F"].rows}
    if k == "DIAGSCALE":
        return {"m": s["B"].rows, "n": s["B"].cols}
    if k in ("ADD", "GER"):
        return {"m": out.rows, "n": out.cols}
    if k in ("AXPY", "SCAL"):
        return {"n": out.rows * out.cols}
    if k == "DOT":
        return {"n": s["x"].rows * s["x"].cols}
    return {}


def kernel_flops(kernel: str, d: dict) -> int:
    """Leading-term FLOP count."""
    g = d.get
    table = {
        "GEMM": lambda: 2 * g("m") * g("k") * g("n"),
        "GEMV": lambda: 2 * g("m") * g("n"),
        "SYMM": lambda: 2 * g("m") * g("n") * g("n"),
        "SYRK": lambda: g("n") ** 2 * g("k"),
        "SYR2K": lambda: 2 * g("n") ** 2 * g("k"),
        "TRMM": lambda: g("m") * g("n") ** 2,
        "TRSV": lambda: g("n") ** 2,
        "TRSM": lambda: g("n") ** 2 * g("r"),
        "GETRF": lambda: 2 * g("n") ** 3 // 3,
        "GETRS": lambda: 2 * g("n") ** 2 * g("r"),
        "GETRI": lambda: 4 * g("n") ** 3 // 3,
        "POTRF": lambda: g("n") ** 3 // 3,
        "POTRS": lambda: 2 * g("n") ** 2 * g("r"),
        "SYTRF": lambda: g("n") ** 3 // 3,
        "SYTRS": lambda: 2 * g("n") ** 2 * g("r"),
        "DIAGSCALE": lambda: g("m") * g("n"),
        "DIAGSOLVE": lambda: g("n") * g("r"),
        "ADD": lambda: g("m") * g("n"),
        "AXPY": lambda: 2 * g("n"),
        "SCAL": lambda: g("n"),
        "DOT": lambda: 2 * g("n"),
        "GER": lambda: 2 * g("m") * g("n"),
        "COPY": lambda: 0,
        "EXTRACT": lambda: 0,
    }
    return table[kernel]()


def call_flops(call: KernelCall, shape_of) -> int:
    return kernel_flops(call.kernel, _dims(call, shape_of))


@dataclass(frozen=True)
class Plan:
    temporaries: tuple  # of (name, Shape)
    calls: tuple  # of KernelCall
    outputs: dict  # program variable -> stored name
    variables: tuple = ()  # (name, Shape) for program inputs and assigned variables

    @property
    def total_flops(self) -> int:
        return sum(c.flops for c in self.calls)

    def storage(self) -> dict[str, Shape]:
        out = dict(self.variables)
        out.update(dict(self.temporaries))
        return out

    def shape_of(self, ref: Ref) -> Shape:
        st = self.storage()
        if ref.name not in st:
            raise PlanError(f"unknown storage {ref.name}")
        return ref.shape(st[ref.name])

    def kernel_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for c in self.calls:
            out[c.kernel] = out.get(c.kernel, 0) + 1
        return out

    def notes(self) -> list[str]:
        """Explicit inverses that survived rewriting to solves."""
        return [f"explicit inverse formed for {c.out.name} (GETRI); no solve rewrite applied"
                for c in self.calls if c.kernel == "GETRI"]


def plan_cost(plan: Plan) -> int:
    """FLOPs of the plan recomputed from the cost table and the operand shapes."""
    return sum(call_flops(c, plan.shape_of) for c in plan.calls)


# ---------------------------------------------------------------------------
# emission


def _scalar_text(v) -> str:
    return v.text() if isinstance(v, Coef) else str(v)


def format_call(call: KernelCall) -> str:
    parts = [call.kernel]
    sc = dict(call.scalars)
    if "alpha" in sc:
        parts.append(f"alpha={_scalar_text(sc.pop('alpha'))}")
    parts += [r.text() for _, r in call.refs]
    parts += [f"{k}={_scalar_text(v)}" for k, v in sc.items()]
    parts += ["->", call.out.text(with_trans=False), f"[flops={call.flops}]"]
    return " ".join(parts)


def emit_text(plan: Plan) -> str:
    lines = [f"var {n} {s.rows}x{s.cols}" for n, s in plan.variables]
    lines += [f"temp {n} {s.rows}x{s.cols}" for n, s in plan.temporaries]
    lines += [format_call(c) for c in plan.calls]
    lines += [f"output {k} <- {v}" for k, v in plan.outputs.items()]
    lines.append(f"total_flops {plan.total_flops}")
    lines += [f"# note: {n}" for n in plan.notes()]
    return "\n".join(lines) + "\n"


def _scalar_json(v):
    if isinstance(v, Coef):
        return v.value if not v.syms else v.text()
    return v


def emit_json(plan: Plan) -> str:
    calls = []
    for c in plan.calls:
        args = {k: r.to_json() for k, r in c.refs}
        args.update({k: _scalar_json(v) for k, v in c.scalars})
        args["out"] = c.out.to_json()
        calls.append({"kernel": c.kernel, "args": args, "flops": c.flops})
    doc = {
        "temporaries": [{"name": n, "rows": s.rows, "cols": s.cols} for n, s in plan.temporaries],
        "variables": [{"name": n, "rows": s.rows, "cols": s.cols} for n, s in plan.variables],
        "calls": calls,
        "outputs": dict(plan.outputs),
        "total_flops": plan.total_flops,
        "notes": plan.notes(),
    }
    return json.dumps(doc, indent=2)


def emit_plan(plan: Plan, fmt: str = "text") -> str:
    if fmt == "text":
        return emit_text(plan)
    if fmt == "json":
        return emit_json(plan)
    raise ValueError(f"unknown plan format {fmt!r}")


# ---------------------------------------------------------------------------
# parsing


def _mk_call(kernel, refs, scalars, out, flops) -> KernelCall:
    if kernel not in SIGNATURES:
        raise PlanError(f"unknown kernel {kernel}")
    ref_names, scalar_names = SIGNATURES[kernel]
    if kernel == "COPY" and not refs:
        ref_names = ()
    if len(refs) != len(ref_names):
        raise PlanError(f"{kernel} expects {len(ref_names)} references, got {len(refs)}")
    sc = []
    for k, v in scalars:
        if k not in scalar_names:
            raise PlanError(f"{kernel} has no scalar argument {k}")
        sc.append((k, parse_coef(v) if k in COEF_ARGS else v))
    return KernelCall(kernel, tuple(zip(ref_names, refs)), tuple(sc), out, flops)


_SHAPE_RE = re.compile(r"^(\d+)x(\d+)$")


def _shape(s: str) -> Shape:
    m = _SHAPE_RE.match(s)
    if not m:
        raise PlanError(f"bad shape {s!r}")
    return Shape(int(m.group(1)), int(m.group(2)))


def parse_text(text: str) -> Plan:
    variables, temps, calls, outputs = [], [], [], {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            if tok[0] == "var":
                variables.append((tok[1], _shape(tok[2])))
            elif tok[0] == "temp":
                temps.append((tok[1], _shape(tok[2])))
            elif tok[0] == "output":
                outputs[tok[1]] = tok[3]
            elif tok[0] == "total_flops":
                pass
            else:
                arrow = tok.index("->")
                flops = int(re.match(r"^\[flops=(\d+)\]$", tok[arrow + 2]).group(1))
                refs, scalars = [], []
                for t in tok[1:arrow]:
                    if "=" in t:
                        k, _, v = t.partition("=")
                        scalars.append((k, v))
                    else:
                        refs.append(parse_ref(t))
                calls.append(_mk_call(tok[0], refs, scalars, parse_ref(tok[arrow + 1]), flops))
        except (IndexError, ValueError, AttributeError) as e:
            raise PlanError(f"line {lineno}: {e}") from None
    return Plan(tuple(temps), tuple(calls), outputs, tuple(variables))


def parse_json(text: str) -> Plan:
    doc = json.loads(text)
    temps = tuple((t["name"], Shape(t["rows"], t["cols"])) for t in doc["temporaries"])
    variables = tuple((t["name"], Shape(t["rows"], t["cols"])) for t in doc.get("variables", []))
    calls = []
    for c in doc["calls"]:
        args = dict(c["args"])
        out = Ref.from_json(args.pop("out"))
        ref_names, _ = SIGNATURES.get(c["kernel"], ((), ()))
        refs = [Ref.from_json(args.pop(n)) for n in ref_names if n in args]
        calls.append(_mk_call(c["kernel"], refs, list(args.items()), out, int(c["flops"])))
    plan = Plan(temps, tuple(calls), dict(doc["outputs"]), variables)
    if plan.total_flops != doc["total_flops"]:
        raise PlanError("total_flops does not match the call list")
    return plan


def validate(plan: Plan) -> Plan:
    """Every ref names declared storage and every recorded FLOP count matches the shapes."""
    store = plan.storage()
    if plan.variables or plan.temporaries:
        for c in plan.calls:
            for r in [r for _, r in c.refs] + [c.out]:
                if r.name not in store:
                    raise PlanError(f"{c.kernel}: unknown storage {r.name!r}")
        for c in plan.calls:
            if call_flops(c, plan.shape_of) != c.flops:
                raise PlanError(f"{c.kernel}: recorded flops {c.flops} do not match operand shapes")
    return plan


def parse_plan(text: str) -> Plan:
    plan = parse_json(text) if text.lstrip().startswith("{") else parse_text(text)
    return validate(plan)
