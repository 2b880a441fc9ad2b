"""Tiny arithmetic expression language for model coefficients.

Drift, volatility, profit rates and switching costs are supplied as strings
over the variables ``t`` and ``x1 .. xk``, so problem instances are plain
data.  Grammar::

    expr    := term  (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | primary
    primary := NUMBER | IDENT | IDENT "(" expr ("," expr)* ")" | "(" expr ")"

Functions: ``exp``, ``log``, ``sqrt``, ``abs`` (one argument), ``min``,
``max``, ``pow`` (two arguments).  Numbers are decimal literals; exponent
notation (``1e-3``) is accepted by the lexer.

Evaluation is IEEE double precision in AST order.  Nothing is re-associated,
so a given tree evaluates bit-for-bit identically everywhere.  Domain
violations (log of a non-positive value, sqrt of a negative, division by
zero, invalid pow, overflow to infinity) raise :class:`ExprDomainError`
instead of letting NaN/inf propagate silently.

Three evaluation paths exist:

* :func:`evaluate`        -- naive scalar tree walk, the reference;
* :func:`evaluate_many`   -- vectorised tree walk over numpy arrays, used to
  tabulate coefficients on grids;
* :func:`compile_expr` / :func:`pack_programs` -- postfix programs executed by
  the simulation kernels (a scalar stack machine, numba-compatible).

All three apply the same operations in the same order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Neg",
    "Binary",
    "Call",
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "ArityError",
    "ExprDomainError",
    "parse",
    "to_source",
    "evaluate",
    "evaluate_many",
    "max_state_index",
    "compile_expr",
    "pack_programs",
    "run_program",
    "Program",
    "PackedPrograms",
]


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    """``t`` (index -1) or ``x{index+1}`` for index >= 0."""

    index: int

    @property
    def name(self) -> str:
        return "t" if self.index < 0 else f"x{self.index + 1}"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]


Expr = Union[Num, Var, Neg, Binary, Call]

_FUNCTIONS = {"exp": 1, "log": 1, "sqrt": 1, "abs": 1, "min": 2, "max": 2, "pow": 2}


# ---------------------------------------------------------------------------
# Errors


class ExprError(ValueError):
    """Base class for expression language errors."""


class _PositionedError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class ExprSyntaxError(_PositionedError):
    pass


class UnknownIdentifierError(_PositionedError):
    pass


class ArityError(_PositionedError):
    pass


class ExprDomainError(ExprError):
    """Raised when evaluation leaves the real domain or overflows.

    ``fragment`` holds the offending sub-expression in source form.
    """

    def __init__(self, fragment: str, reason: str):
        super().__init__(f"{reason} in sub-expression '{fragment}'")
        self.fragment = fragment
        self.reason = reason


# ---------------------------------------------------------------------------
# Lexer

_T_NUM, _T_IDENT, _T_OP, _T_END = range(4)
_OP_CHARS = "+-*/(),"


def _tokenize(source: str):
    tokens = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c in _OP_CHARS:
            tokens.append((_T_OP, c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            try:
                value = float(text)
            except ValueError:
                raise ExprSyntaxError(f"bad number literal '{text}'", i) from None
            if not math.isfinite(value):
                raise ExprSyntaxError(f"number literal '{text}' overflows double precision", i)
            tokens.append((_T_NUM, value, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append((_T_IDENT, source[i:j], i))
            i = j
            continue
        raise ExprSyntaxError(f"unexpected character '{c}'", i)
    tokens.append((_T_END, "", n))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, source: str, state_dim: int):
        self.tokens = _tokenize(source)
        self.pos = 0
        self.state_dim = state_dim

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        typ, text, at = self.peek()
        if typ != _T_OP or text != op:
            shown = "end of input" if typ == _T_END else f"'{text}'"
            raise ExprSyntaxError(f"expected '{op}', found {shown}", at)
        self.advance()

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while True:
            typ, text, _ = self.peek()
            if typ == _T_OP and text in "+-":
                self.advance()
                node = Binary(text, node, self.parse_term())
            else:
                return node

    def parse_term(self) -> Expr:
        node = self.parse_unary()
        while True:
            typ, text, _ = self.peek()
            if typ == _T_OP and text in "*/":
                self.advance()
                node = Binary(text, node, self.parse_unary())
            else:
                return node

    def parse_unary(self) -> Expr:
        typ, text, _ = self.peek()
        if typ == _T_OP and text == "-":
            self.advance()
            return Neg(self.parse_unary())
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        typ, text, at = self.advance()
        if typ == _T_NUM:
            return Num(text)
        if typ == _T_IDENT:
            nxt_typ, nxt_text, _ = self.peek()
            if nxt_typ == _T_OP and nxt_text == "(":
                return self.parse_call(text, at)
            return self.parse_variable(text, at)
        if typ == _T_OP and text == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        shown = "end of input" if typ == _T_END else f"'{text}'"
        raise ExprSyntaxError(f"expected a value, found {shown}", at)

    def parse_variable(self, name: str, at: int) -> Var:
        if name == "t":
            return Var(-1)
        if name.startswith("x") and name[1:].isdigit():
            idx = int(name[1:])
            if 1 <= idx <= self.state_dim:
                return Var(idx - 1)
            raise UnknownIdentifierError(
                f"variable '{name}' out of range for state dimension {self.state_dim}", at
            )
        raise UnknownIdentifierError(f"unknown identifier '{name}'", at)

    def parse_call(self, name: str, at: int) -> Call:
        if name not in _FUNCTIONS:
            raise UnknownIdentifierError(f"unknown function '{name}'", at)
        self.expect_op("(")
        args = [self.parse_expr()]
        while True:
            typ, text, _ = self.peek()
            if typ == _T_OP and text == ",":
                self.advance()
                args.append(self.parse_expr())
            else:
                break
        self.expect_op(")")
        want = _FUNCTIONS[name]
        if len(args) != want:
            raise ArityError(f"'{name}' takes {want} argument(s), got {len(args)}", at)
        return Call(name, tuple(args))


def parse(source: str, state_dim: int) -> Expr:
    """Parse ``source`` into an expression tree over ``t, x1..x{state_dim}``."""
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    if state_dim < 1:
        raise ValueError("state_dim must be >= 1")
    parser = _Parser(source, state_dim)
    node = parser.parse_expr()
    typ, text, at = parser.peek()
    if typ != _T_END:
        raise ExprSyntaxError(f"unexpected trailing '{text}'", at)
    return node


def max_state_index(e: Expr) -> int:
    """Largest 1-based state variable index referenced (0 if only t/constants)."""
    if isinstance(e, Var):
        return e.index + 1
    if isinstance(e, Neg):
        return max_state_index(e.operand)
    if isinstance(e, Binary):
        return max(max_state_index(e.left), max_state_index(e.right))
    if isinstance(e, Call):
        return max((max_state_index(a) for a in e.args), default=0)
    return 0


# ---------------------------------------------------------------------------
# Printer

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_ATOM = 1, 2, 3, 4


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC_ADD if e.op in "+-" else _PREC_MUL
    if isinstance(e, Neg):
        return _PREC_UNARY
    return _PREC_ATOM


def to_source(e: Expr) -> str:
    """Canonical source form.  ``parse(to_source(e)) == e`` holds exactly,
    so the printed form is also usable as a structural fingerprint."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = to_source(e.operand)
        if _prec(e.operand) < _PREC_UNARY:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Binary):
        left = to_source(e.left)
        right = to_source(e.right)
        if _prec(e.left) < _prec(e):
            left = f"({left})"
        # parenthesise right children at equal precedence so the printed
        # string reparses to the identical tree (no silent re-association)
        if _prec(e.right) <= _prec(e):
            right = f"({right})"
        return f"{left} {e.op} {right}"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_source(a) for a in e.args)})"
    raise TypeError(f"not an Expr: {e!r}")


# ---------------------------------------------------------------------------
# Scalar reference evaluation


def _check_pow_domain(base: float, exponent: float, node: Expr):
    if base < 0 and exponent != math.trunc(exponent):
        raise ExprDomainError(to_source(node), "non-integer power of a negative base")
    if base == 0 and exponent < 0:
        raise ExprDomainError(to_source(node), "zero raised to a negative power")


def _eval_scalar(e: Expr, t, x):
    if isinstance(e, Num):
        return np.float64(e.value)
    if isinstance(e, Var):
        if e.index < 0:
            v = t
        else:
            if e.index >= len(x):
                raise ValueError(
                    f"state vector has dimension {len(x)}, expression uses {e.name}"
                )
            v = x[e.index]
        if not np.isfinite(v):
            raise ExprDomainError(e.name, "non-finite input")
        return v
    if isinstance(e, Neg):
        return -_eval_scalar(e.operand, t, x)
    if isinstance(e, Binary):
        a = _eval_scalar(e.left, t, x)
        b = _eval_scalar(e.right, t, x)
        if e.op == "+":
            out = a + b
        elif e.op == "-":
            out = a - b
        elif e.op == "*":
            out = a * b
        else:
            if b == 0:
                raise ExprDomainError(to_source(e), "division by zero")
            out = a / b
    elif isinstance(e, Call):
        a = _eval_scalar(e.args[0], t, x)
        if e.func == "exp":
            out = np.exp(a)
        elif e.func == "log":
            if a <= 0:
                raise ExprDomainError(to_source(e), "log of a non-positive value")
            out = np.log(a)
        elif e.func == "sqrt":
            if a < 0:
                raise ExprDomainError(to_source(e), "sqrt of a negative value")
            out = np.sqrt(a)
        elif e.func == "abs":
            out = np.abs(a)
        else:
            b = _eval_scalar(e.args[1], t, x)
            if e.func == "min":
                out = np.minimum(a, b)
            elif e.func == "max":
                out = np.maximum(a, b)
            else:
                _check_pow_domain(float(a), float(b), e)
                out = np.power(a, b)
    else:
        raise TypeError(f"not an Expr: {e!r}")
    if not np.isfinite(out):
        raise ExprDomainError(to_source(e), "overflow to a non-finite value")
    return out


def evaluate(e: Expr, t: float, x: Sequence[float]) -> float:
    """Reference tree-walking evaluation at a single point ``(t, x)``."""
    with np.errstate(all="ignore"):
        out = _eval_scalar(e, np.float64(t), [np.float64(v) for v in x])
    return float(out)


# ---------------------------------------------------------------------------
# Vectorised evaluation


def _fail_where(mask, node: Expr, reason: str):
    if bool(np.any(mask)):
        raise ExprDomainError(to_source(node), reason)


def _eval_array(e: Expr, t, x):
    if isinstance(e, Num):
        return np.float64(e.value)
    if isinstance(e, Var):
        if e.index < 0:
            v = t
        else:
            if e.index >= len(x):
                raise ValueError(
                    f"state arrays have dimension {len(x)}, expression uses {e.name}"
                )
            v = x[e.index]
        _fail_where(~np.isfinite(v), e, "non-finite input")
        return v
    if isinstance(e, Neg):
        return np.negative(_eval_array(e.operand, t, x))
    if isinstance(e, Binary):
        a = _eval_array(e.left, t, x)
        b = _eval_array(e.right, t, x)
        if e.op == "+":
            out = np.add(a, b)
        elif e.op == "-":
            out = np.subtract(a, b)
        elif e.op == "*":
            out = np.multiply(a, b)
        else:
            _fail_where(b == 0, e, "division by zero")
            out = np.divide(a, b)
    elif isinstance(e, Call):
        a = _eval_array(e.args[0], t, x)
        if e.func == "exp":
            out = np.exp(a)
        elif e.func == "log":
            _fail_where(a <= 0, e, "log of a non-positive value")
            out = np.log(a)
        elif e.func == "sqrt":
            _fail_where(a < 0, e, "sqrt of a negative value")
            out = np.sqrt(a)
        elif e.func == "abs":
            out = np.abs(a)
        else:
            b = _eval_array(e.args[1], t, x)
            if e.func == "min":
                out = np.minimum(a, b)
            elif e.func == "max":
                out = np.maximum(a, b)
            else:
                _fail_where((a < 0) & (b != np.trunc(b)), e, "non-integer power of a negative base")
                _fail_where((a == 0) & (b < 0), e, "zero raised to a negative power")
                out = np.power(a, b)
    else:
        raise TypeError(f"not an Expr: {e!r}")
    _fail_where(~np.isfinite(out), e, "overflow to a non-finite value")
    return out


def evaluate_many(e: Expr, t, x: Sequence) -> np.ndarray:
    """Evaluate over arrays: ``t`` scalar or shape (n,), ``x`` a sequence of
    per-dimension arrays (each scalar or shape (n,)).  Applies the exact same
    operations in the exact same order as :func:`evaluate`."""
    t_arr = np.asarray(t, dtype=np.float64)
    x_arrs = [np.asarray(v, dtype=np.float64) for v in x]
    with np.errstate(all="ignore"):
        out = _eval_array(e, t_arr, x_arrs)
    shape = np.broadcast_shapes(t_arr.shape, *(v.shape for v in x_arrs))
    return np.broadcast_to(np.asarray(out, dtype=np.float64), shape).copy()


# ---------------------------------------------------------------------------
# Postfix compilation (for the simulation kernels)

OP_CONST = 0
OP_VAR_T = 1
OP_VAR_X = 2
OP_ADD = 3
OP_SUB = 4
OP_MUL = 5
OP_DIV = 6
OP_NEG = 7
OP_EXP = 8
OP_LOG = 9
OP_SQRT = 10
OP_ABS = 11
OP_MIN = 12
OP_MAX = 13
OP_POW = 14

_CALL_OPS = {"exp": OP_EXP, "log": OP_LOG, "sqrt": OP_SQRT, "abs": OP_ABS,
             "min": OP_MIN, "max": OP_MAX, "pow": OP_POW}


@dataclass(frozen=True)
class Program:
    """Postfix form of one expression.  ``fragments[i]`` is the source text of
    the sub-expression rooted at instruction ``i`` (for error reporting)."""

    code: np.ndarray       # int32 opcodes
    arg: np.ndarray        # int32 operand (const slot or state index)
    consts: np.ndarray     # float64 constant pool
    stack_need: int
    fragments: tuple[str, ...]


def _emit(e: Expr, code, arg, consts, frags) -> int:
    """Append postfix instructions; returns the stack depth needed."""
    if isinstance(e, Num):
        code.append(OP_CONST)
        arg.append(len(consts))
        consts.append(float(e.value))
        frags.append(to_source(e))
        return 1
    if isinstance(e, Var):
        if e.index < 0:
            code.append(OP_VAR_T)
            arg.append(0)
        else:
            code.append(OP_VAR_X)
            arg.append(e.index)
        frags.append(e.name)
        return 1
    if isinstance(e, Neg):
        depth = _emit(e.operand, code, arg, consts, frags)
        code.append(OP_NEG)
        arg.append(0)
        frags.append(to_source(e))
        return depth
    if isinstance(e, Binary):
        d1 = _emit(e.left, code, arg, consts, frags)
        d2 = _emit(e.right, code, arg, consts, frags)
        code.append({"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV}[e.op])
        arg.append(0)
        frags.append(to_source(e))
        return max(d1, d2 + 1)
    if isinstance(e, Call):
        d1 = _emit(e.args[0], code, arg, consts, frags)
        depth = d1
        if len(e.args) == 2:
            d2 = _emit(e.args[1], code, arg, consts, frags)
            depth = max(d1, d2 + 1)
        code.append(_CALL_OPS[e.func])
        arg.append(0)
        frags.append(to_source(e))
        return depth
    raise TypeError(f"not an Expr: {e!r}")


def compile_expr(e: Expr) -> Program:
    code: list[int] = []
    arg: list[int] = []
    consts: list[float] = []
    frags: list[str] = []
    depth = _emit(e, code, arg, consts, frags)
    return Program(
        code=np.asarray(code, dtype=np.int32),
        arg=np.asarray(arg, dtype=np.int32),
        consts=np.asarray(consts, dtype=np.float64),
        stack_need=depth,
        fragments=tuple(frags),
    )


@dataclass(frozen=True)
class PackedPrograms:
    """Several programs concatenated into flat arrays for kernel use.

    ``table[i] = (start, length)`` delimits program ``i`` inside ``code``/
    ``arg``; the constant pool is shared and indexed absolutely."""

    code: np.ndarray
    arg: np.ndarray
    consts: np.ndarray
    table: np.ndarray      # int32 (n_programs, 2)
    stack_need: int
    fragments: tuple[tuple[str, ...], ...]

    def fragment(self, program: int, local_op: int) -> str:
        return self.fragments[program][local_op]


def pack_programs(exprs: Sequence[Expr]) -> PackedPrograms:
    programs = [compile_expr(e) for e in exprs]
    code = np.concatenate([p.code for p in programs]) if programs else np.zeros(0, np.int32)
    arg_parts = []
    consts_parts = []
    offset = 0
    for p in programs:
        shifted = p.arg.copy()
        shifted[p.code == OP_CONST] += offset
        arg_parts.append(shifted)
        consts_parts.append(p.consts)
        offset += len(p.consts)
    arg = np.concatenate(arg_parts) if arg_parts else np.zeros(0, np.int32)
    consts = np.concatenate(consts_parts) if consts_parts else np.zeros(0, np.float64)
    table = np.zeros((len(programs), 2), dtype=np.int32)
    start = 0
    for i, p in enumerate(programs):
        table[i, 0] = start
        table[i, 1] = len(p.code)
        start += len(p.code)
    return PackedPrograms(
        code=code,
        arg=arg,
        consts=consts,
        table=table,
        stack_need=max((p.stack_need for p in programs), default=1),
        fragments=tuple(p.fragments for p in programs),
    )


def run_program(packed: PackedPrograms, program: int, t: float, x: Sequence[float]):
    """Pure-python stack machine mirroring the numba kernel semantics.

    Returns ``(value, -1)`` on success or ``(nan, local_op_index)`` on a
    domain violation.  Used for testing and as executable documentation of
    the kernel's instruction set.
    """
    start, length = int(packed.table[program, 0]), int(packed.table[program, 1])
    stack = [0.0] * packed.stack_need
    sp = 0
    for pc in range(start, start + length):
        op = int(packed.code[pc])
        if op == OP_CONST:
            stack[sp] = float(packed.consts[packed.arg[pc]])
            sp += 1
        elif op == OP_VAR_T:
            stack[sp] = float(t)
            sp += 1
        elif op == OP_VAR_X:
            stack[sp] = float(x[packed.arg[pc]])
            sp += 1
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == OP_ADD:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] + stack[sp]
        elif op == OP_SUB:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] - stack[sp]
        elif op == OP_MUL:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] * stack[sp]
        elif op == OP_DIV:
            sp -= 1
            if stack[sp] == 0.0:
                return math.nan, pc - start
            stack[sp - 1] = stack[sp - 1] / stack[sp]
        elif op == OP_EXP:
            v = stack[sp - 1]
            if v > 709.782712893384:  # exp overflows double beyond this
                return math.nan, pc - start
            stack[sp - 1] = math.exp(v)
        elif op == OP_LOG:
            if stack[sp - 1] <= 0.0:
                return math.nan, pc - start
            stack[sp - 1] = math.log(stack[sp - 1])
        elif op == OP_SQRT:
            if stack[sp - 1] < 0.0:
                return math.nan, pc - start
            stack[sp - 1] = math.sqrt(stack[sp - 1])
        elif op == OP_ABS:
            stack[sp - 1] = abs(stack[sp - 1])
        elif op == OP_MIN:
            sp -= 1
            b = stack[sp]
            if b < stack[sp - 1]:
                stack[sp - 1] = b
        elif op == OP_MAX:
            sp -= 1
            b = stack[sp]
            if b > stack[sp - 1]:
                stack[sp - 1] = b
        elif op == OP_POW:
            sp -= 1
            base, expo = stack[sp - 1], stack[sp]
            if base < 0.0 and expo != math.trunc(expo):
                return math.nan, pc - start
            if base == 0.0 and expo < 0.0:
                return math.nan, pc - start
            try:
                stack[sp - 1] = base ** expo
            except OverflowError:  # C pow would yield inf; classify uniformly
                return math.nan, pc - start
        if not math.isfinite(stack[sp - 1]):
            return math.nan, pc - start
    return stack[0], -1
