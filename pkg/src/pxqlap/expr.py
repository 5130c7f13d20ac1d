"""Arithmetic expressions over ``x``, ``y`` and ``d`` for exponent and coefficient fields.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?          # right associative, binds tighter than unary minus
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

so ``-2^2 == -4`` and ``2^-1 == 0.5``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

VARIABLES = ("x", "y", "d")
CONSTANTS = {"pi": math.pi}
UNARY_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "abs": np.abs,
}
NARY_FUNCS = {"min": np.minimum, "max": np.maximum}


class ExprSyntaxError(ValueError):
    """Malformed expression text; ``offset`` is the byte offset of the offending token."""

    def __init__(self, message: str, offset: int, source: str):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} at offset {offset} in {source!r}")


class ExprEvalError(ValueError):
    pass


# -- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Node = Union[Num, Var, Neg, BinOp, Call]


# -- tokenizer / parser ----------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            # skip whitespace to report the offending character itself
            bad = pos
            while bad < n and source[bad].isspace():
                bad += 1
            raise ExprSyntaxError(f"unexpected character {source[bad]!r}", bad, source)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        found = "end of input" if tok[0] == "end" else repr(tok[1])
        raise ExprSyntaxError(f"{msg}, found {found}", tok[2], self.source)

    def expect_op(self, op):
        tok = self.peek()
        if tok[0] != "op" or tok[1] != op:
            self.error(f"expected {op!r}")
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.peek()[0] != "end":
            self.error("unexpected token")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.advance()
            return Neg(self.unary())
        if tok[0] == "op" and tok[1] == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.peek()
        kind, text, offset = tok
        if kind == "num":
            self.advance()
            return Num(float(text))
        if kind == "name":
            self.advance()
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if text not in UNARY_FUNCS and text not in NARY_FUNCS:
                    raise ExprSyntaxError(f"unknown function {text!r}", offset, self.source)
                self.advance()
                args = [self.expr()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect_op(")")
                if text in UNARY_FUNCS and len(args) != 1:
                    raise ExprSyntaxError(f"{text} takes 1 argument, got {len(args)}", offset, self.source)
                if text in NARY_FUNCS and len(args) < 2:
                    raise ExprSyntaxError(f"{text} takes at least 2 arguments", offset, self.source)
                return Call(text, tuple(args))
            if text in CONSTANTS:
                return Var(text)
            if text in VARIABLES:
                return Var(text)
            raise ExprSyntaxError(f"unknown identifier {text!r}", offset, self.source)
        if kind == "op" and text == "(":
            self.advance()
            node = self.expr()
            self.expect_op(")")
            return node
        self.error("expected a number, name or '('")


# -- printing ----------------------------------------------------------------


def to_source(node: Node) -> str:
    """Fully parenthesized text that parses back to an equivalent tree."""
    if isinstance(node, Num):
        text = repr(float(node.value))
        return f"(-{text[1:]})" if text.startswith("-") else text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_source(a) for a in node.args)})"
    raise TypeError(node)


# -- evaluation --------------------------------------------------------------


def _power(base, expo):
    base = np.asarray(base, dtype=float)
    expo = np.asarray(expo, dtype=float)
    bad = (base < 0) & (expo != np.round(expo))
    if np.any(bad):
        raise ExprEvalError("negative base raised to a non-integer power")
    return np.power(base, expo)


def _eval(node: Node, env: dict):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name in CONSTANTS:
            return CONSTANTS[node.name]
        try:
            return env[node.name]
        except KeyError:
            raise ExprEvalError(f"variable {node.name!r} is not bound here") from None
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, BinOp):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        if node.op == "+":
            return np.add(a, b)
        if node.op == "-":
            return np.subtract(a, b)
        if node.op == "*":
            return np.multiply(a, b)
        if node.op == "/":
            return np.true_divide(a, b)
        return _power(a, b)
    if isinstance(node, Call):
        vals = [_eval(a, env) for a in node.args]
        if node.func in UNARY_FUNCS:
            return UNARY_FUNCS[node.func](vals[0])
        out = vals[0]
        for v in vals[1:]:
            out = NARY_FUNCS[node.func](out, v)
        return out
    raise TypeError(node)


def _free_vars(node: Node, acc: set):
    if isinstance(node, Var) and node.name in VARIABLES:
        acc.add(node.name)
    elif isinstance(node, Neg):
        _free_vars(node.operand, acc)
    elif isinstance(node, BinOp):
        _free_vars(node.left, acc)
        _free_vars(node.right, acc)
    elif isinstance(node, Call):
        for a in node.args:
            _free_vars(a, acc)
    return acc


@dataclass(frozen=True)
class ExprField:
    source: str
    ast: Node = field(compare=False, repr=False)

    @property
    def variables(self) -> frozenset:
        return frozenset(_free_vars(self.ast, set()))

    @property
    def is_constant(self) -> bool:
        return not self.variables

    def __call__(self, x=0.0, y=0.0, d=0.0):
        """Evaluate pointwise; array arguments broadcast. Non-finite values are returned as is."""
        x = np.asarray(x, dtype=float)
        shape = np.broadcast(x, np.asarray(y, dtype=float), np.asarray(d, dtype=float)).shape
        with np.errstate(all="ignore"):
            out = _eval(self.ast, {"x": x, "y": y, "d": d})
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def constant_value(self) -> float:
        if not self.is_constant:
            raise ValueError(f"{self.source!r} is not constant")
        return float(self(0.0))

    def __str__(self):
        return self.source


def parse(source: str) -> ExprField:
    if not isinstance(source, str):
        source = repr(float(source))
    return ExprField(source, _Parser(source).parse())


def as_expr(value) -> ExprField:
    """Coerce a number, expression text or ExprField into an ExprField."""
    if isinstance(value, ExprField):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return parse(repr(float(value)))
    return parse(str(value))


# -- grid evaluation ---------------------------------------------------------


@dataclass(frozen=True)
class RangeSummary:
    inf: float
    sup: float
    argmin: int
    argmax: int
    probe_gap: float = 0.0  # disagreement with the 4x finer probe grid

    def to_dict(self):
        return {"inf": self.inf, "sup": self.sup, "argmin": self.argmin, "argmax": self.argmax,
                "probe_gap": self.probe_gap}


def _bind(e: ExprField, grid, x, y, d):
    if "y" in e.variables and grid.dim == 1:
        raise ExprEvalError(f"{e.source!r} uses y on a 1D grid")
    return e(x, y if y is not None else 0.0, d)


def eval_on_grid(e, grid):
    """Nodal values of ``e`` as a Field; ``d`` is bound to the grid distance."""
    from .grid import Field

    e = as_expr(e)
    vals = _bind(e, grid, grid.x, grid.y, grid.dist.values)
    bad = ~np.isfinite(vals) & grid.inside
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise ExprEvalError(f"{e.source!r} is not finite at node {k} ({grid.describe_node(k)})")
    vals = np.where(grid.inside, vals, 0.0)
    return Field(grid, vals)


def eval_on_elements(e, grid) -> np.ndarray:
    """Values at element quadrature points (cell midpoints in 1D, triangle centroids in 2D)."""
    e = as_expr(e)
    ex, ey, ed = grid.element_points()
    vals = _bind(e, grid, ex, ey, ed)
    if not np.all(np.isfinite(vals)):
        k = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise ExprEvalError(f"{e.source!r} is not finite at element {k}")
    return vals


def range_on_grid(e, grid, interior_only: bool = False, probe: bool = True) -> RangeSummary:
    e = as_expr(e)
    vals = eval_on_grid(e, grid).values
    mask = grid.interior if interior_only else grid.inside
    idx = np.flatnonzero(mask)
    sub = vals[idx]
    imin, imax = int(idx[np.argmin(sub)]), int(idx[np.argmax(sub)])
    lo, hi = float(vals[imin]), float(vals[imax])
    gap = 0.0
    if probe and not e.is_constant:
        fine = grid.refined(4)
        fvals = eval_on_grid(e, fine).values
        fmask = fine.interior if interior_only else fine.inside
        gap = float(max(abs(fvals[fmask].min() - lo), abs(fvals[fmask].max() - hi)))
    return RangeSummary(lo, hi, imin, imax, gap)
