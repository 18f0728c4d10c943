"""Scalar coefficient expressions of one variable.

Grammar (recursive descent)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := number | VAR | 'pi' | func '(' args ')' | '(' expr ')' | '-' factor | '+' factor
    func   := sin | cos | abs | exp | sqrt | min | max

``min`` and ``max`` take two comma-separated arguments.  ``|e|`` is accepted
as a synonym for ``abs(e)``.  The variable name defaults to ``t``.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .timescale import TimeScale


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.text = text


class ExprEvalError(ArithmeticError):
    pass


# -- AST -----------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Node", ...]


Node = Union[Num, Var, Neg, BinOp, Call]

UNARY = {"sin": math.sin, "cos": math.cos, "abs": abs, "exp": math.exp, "sqrt": math.sqrt}
BINARY = {"min": min, "max": max}
NP_FUNCS = {"sin": np.sin, "cos": np.cos, "abs": np.abs, "exp": np.exp, "sqrt": np.sqrt,
            "min": np.minimum, "max": np.maximum}

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(.))")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        if m.group(1) is not None:
            out.append(("num", m.group(1), m.start(1)))
        elif m.group(2) is not None:
            out.append(("name", m.group(2), m.start(2)))
        elif m.group(3) is not None:
            if m.group(3) not in "+-*/(),|":
                raise ExprSyntaxError(f"unexpected character {m.group(3)!r}", m.start(3), text)
            out.append(("op", m.group(3), m.start(3)))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str, var: str):
        self.text = text
        self.var = var
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, msg: str, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(msg, tok[2], self.text)

    def expect(self, value: str):
        tok = self.peek()
        if tok[0] != "op" or tok[1] != value:
            self.fail(f"expected {value!r}")
        self.take()

    def parse(self) -> Node:
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        kind, val, off = self.peek()
        if kind == "num":
            self.take()
            return Num(float(val))
        if kind == "name":
            self.take()
            if val == self.var:
                return Var(val)
            if val == "pi":
                return Num(math.pi)
            if val in UNARY or val in BINARY:
                self.expect("(")
                args = [self.expr()]
                if val in BINARY:
                    self.expect(",")
                    args.append(self.expr())
                self.expect(")")
                return Call(val, tuple(args))
            self.fail(f"unknown identifier {val!r}", (kind, val, off))
        if kind == "op" and val == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "op" and val == "|":
            self.take()
            node = self.expr()
            self.expect("|")
            return Call("abs", (node,))
        if kind == "op" and val == "-":
            self.take()
            if self.peek()[0] == "num":
                return Num(-float(self.take()[1]))
            return Neg(self.factor())
        if kind == "op" and val == "+":
            self.take()
            return self.factor()
        if kind == "end":
            self.fail("unexpected end of input")
        self.fail(f"unexpected token {val!r}")


# -- printing ------------------------------------------------------------------

def _fmt_num(v: float) -> str:
    if v == math.pi:
        return "pi"
    return repr(float(v))


def to_text(node: Node) -> str:
    """Canonical, fully parenthesised serialisation; ``parse(to_text(e))`` round-trips."""
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"-({to_text(node.arg)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    return f"{node.func}({', '.join(to_text(a) for a in node.args)})"


# -- evaluation ----------------------------------------------------------------

def _eval(node: Node, t: float) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return t
    if isinstance(node, Neg):
        return -_eval(node.arg, t)
    if isinstance(node, BinOp):
        a = _eval(node.left, t)
        b = _eval(node.right, t)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if b == 0.0:
            raise ExprEvalError(f"division by zero at t={t!r}")
        return a / b
    args = [_eval(a, t) for a in node.args]
    try:
        if node.func in BINARY:
            return BINARY[node.func](*args)
        return UNARY[node.func](args[0])
    except (ValueError, OverflowError) as exc:
        raise ExprEvalError(f"{node.func}{tuple(args)} failed at t={t!r}: {exc}") from None


def _eval_np(node: Node, t: np.ndarray) -> np.ndarray:
    if isinstance(node, Num):
        return np.full(t.shape, node.value)
    if isinstance(node, Var):
        return t
    if isinstance(node, Neg):
        return -_eval_np(node.arg, t)
    if isinstance(node, BinOp):
        a = _eval_np(node.left, t)
        b = _eval_np(node.right, t)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        zero = b == 0.0
        if np.any(zero):
            raise ExprEvalError(f"division by zero at t={t[zero][0]!r}")
        return a / b
    args = [_eval_np(a, t) for a in node.args]
    return NP_FUNCS[node.func](*args)


def _py_source(node: Node) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return "_x"
    if isinstance(node, Neg):
        return f"(-{_py_source(node.arg)})"
    if isinstance(node, BinOp):
        return f"({_py_source(node.left)} {node.op} {_py_source(node.right)})"
    fn = {"abs": "abs", "min": "min", "max": "max"}.get(node.func, f"math.{node.func}")
    return f"{fn}({', '.join(_py_source(a) for a in node.args)})"


OPCODES = {"const": 0, "var": 1, "neg": 2, "+": 3, "-": 4, "*": 5, "/": 6, "sin": 7,
           "cos": 8, "abs": 9, "exp": 10, "sqrt": 11, "min": 12, "max": 13}
STACK_LIMIT = 32


def _emit(node: Node, ops: list, consts: list) -> int:
    """Append postfix code for ``node``; returns the stack depth it needs."""
    if isinstance(node, Num):
        ops.append((OPCODES["const"], len(consts)))
        consts.append(node.value)
        return 1
    if isinstance(node, Var):
        ops.append((OPCODES["var"], 0))
        return 1
    if isinstance(node, Neg):
        d = _emit(node.arg, ops, consts)
        ops.append((OPCODES["neg"], 0))
        return d
    if isinstance(node, BinOp):
        left, right = node.left, node.right
    elif len(node.args) == 2:
        left, right = node.args
    else:
        d = _emit(node.args[0], ops, consts)
        ops.append((OPCODES[node.func], 0))
        return d
    d1 = _emit(left, ops, consts)
    d2 = _emit(right, ops, consts)
    ops.append((OPCODES[node.op if isinstance(node, BinOp) else node.func], 0))
    return max(d1, d2 + 1)


def _is_constant(node: Node) -> bool:
    if isinstance(node, Num):
        return True
    if isinstance(node, Var):
        return False
    if isinstance(node, Neg):
        return _is_constant(node.arg)
    if isinstance(node, BinOp):
        return _is_constant(node.left) and _is_constant(node.right)
    return all(_is_constant(a) for a in node.args)


@dataclass(frozen=True)
class CoefficientExpr:
    """A parsed expression; calling it evaluates (scalars or arrays)."""

    ast: Node
    var: str = "t"
    source: str = field(default="", compare=False)

    def __str__(self) -> str:
        return to_text(self.ast)

    @property
    def is_constant(self) -> bool:
        return _is_constant(self.ast)

    def eval(self, t: float) -> float:
        v = _eval(self.ast, float(t))
        if not math.isfinite(v):
            raise ExprEvalError(f"non-finite value {v} at t={t!r}")
        return float(v)

    def eval_many(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        with np.errstate(all="ignore"):
            v = np.asarray(_eval_np(self.ast, t), dtype=float)
        v = np.broadcast_to(v, t.shape).copy()
        bad = ~np.isfinite(v)
        if np.any(bad):
            raise ExprEvalError(f"non-finite value at t={t[bad].ravel()[0]!r}")
        return v

    def __call__(self, t):
        if np.ndim(t) == 0:
            return self.eval(t)
        return self.eval_many(t)

    def python_source(self) -> str:
        return f"lambda _x: {_py_source(self.ast)}"

    def bytecode(self) -> tuple[np.ndarray, np.ndarray]:
        """Postfix program ``(ops, consts)`` for the stack interpreter in the kernels."""
        ops: list = []
        consts: list = []
        if _emit(self.ast, ops, consts) > STACK_LIMIT:
            raise ExprEvalError("expression too deeply nested for compiled evaluation")
        return np.asarray(ops, dtype=np.int64).reshape(-1, 2), np.asarray(consts + [0.0])

    def compile(self) -> Callable[[float], float]:
        """Plain Python scalar function (numba-jittable)."""
        return eval(self.python_source(), {"math": math, "abs": abs, "min": min, "max": max})


def parse(text: str, var: str = "t") -> CoefficientExpr:
    """Parse ``text`` into a :class:`CoefficientExpr`.

    >>> parse("3+abs(sin(t))").eval(0.0)
    3.0
    """
    if isinstance(text, (int, float)):
        return CoefficientExpr(Num(float(text)), var, repr(float(text)))
    return CoefficientExpr(_Parser(str(text), var).parse(), var, str(text))


def constant(value: float, var: str = "t") -> CoefficientExpr:
    return CoefficientExpr(Num(float(value)), var, repr(float(value)))


def evaluate(expr: CoefficientExpr, t: float) -> float:
    return expr.eval(t)


# -- bounds --------------------------------------------------------------------

@dataclass(frozen=True)
class BoundEstimate:
    inf_value: float
    sup_value: float
    method: str  # "sampled" or "declared"
    argmin: float | None = None
    argmax: float | None = None

    def __post_init__(self):
        if self.inf_value > self.sup_value:
            raise ValueError("inf_value > sup_value")


SAMPLED = "sampled"
DECLARED = "declared"


def sample_density() -> float:
    """Points per unit length of continuous components (``TSLAB_SAMPLES``)."""
    raw = os.environ.get("TSLAB_SAMPLES")
    if raw:
        try:
            v = float(raw)
        except ValueError:
            raise ValueError(f"TSLAB_SAMPLES must be numeric, got {raw!r}") from None
        if v > 0:
            return v
    return 64.0


def bound_estimate(expr: CoefficientExpr, ts: TimeScale, samples: int | None = None,
                   declared: tuple[float, float] | None = None) -> BoundEstimate:
    """Sampled inf/sup of ``expr`` over the window of ``ts``.

    ``samples`` fixes the number of points in continuous components; by
    default the density is ``sample_density()`` per unit length.  ``declared``
    bypasses sampling.
    """
    if declared is not None:
        lo, hi = map(float, declared)
        return BoundEstimate(lo, hi, DECLARED)
    if samples is not None and samples < 2:
        raise ValueError("samples must be >= 2")
    if expr.is_constant:
        v = expr.eval(0.0)
        return BoundEstimate(v, v, SAMPLED, ts.start, ts.start)
    pts = ts.sample_points(samples=samples, per_unit=sample_density())
    vals = expr.eval_many(pts)
    i, j = int(np.argmin(vals)), int(np.argmax(vals))
    return BoundEstimate(float(vals[i]), float(vals[j]), SAMPLED, float(pts[i]), float(pts[j]))
