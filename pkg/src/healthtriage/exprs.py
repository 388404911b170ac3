"""Safe arithmetic expression DSL for engineered features.

Grammar (left-associative, usual precedence):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := NUMBER | IDENT | '(' expr ')' | FUNC '(' expr (',' expr)* ')'
    FUNC   := min | max | abs

Evaluation propagates MISSING (None): any MISSING operand or a division by
zero yields MISSING. There is no other failure mode on numeric content.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ExprSyntaxError, UnknownFunction, UnresolvedIdent

FUNCTIONS = ("min", "max", "abs")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Ident:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]


Expr = Num | Ident | BinOp | Call

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/(),]))"
)


def _byte_offset(source: str, char_offset: int) -> int:
    return len(source[:char_offset].encode("utf-8"))


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            rest = source[pos:]
            if rest.strip() == "":
                break
            bad = pos + (len(rest) - len(rest.lstrip()))
            raise ExprSyntaxError(f"unexpected character {source[bad]!r}", _byte_offset(source, bad))
        if match.lastgroup == "num":
            tokens.append(("num", match.group("num"), match.start("num")))
        elif match.lastgroup == "ident":
            tokens.append(("ident", match.group("ident"), match.start("ident")))
        else:
            tokens.append(("op", match.group("op"), match.start("op")))
        pos = match.end()
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

    def fail(self, message: str, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, _byte_offset(self.source, tok[2]))

    def expect_op(self, symbol: str):
        kind, text, _ = self.peek()
        if kind != "op" or text != symbol:
            self.fail(f"expected {symbol!r}")
        return self.advance()

    def parse(self) -> Expr:
        tree = self.expr()
        if self.peek()[0] != "end":
            self.fail("trailing input")
        return tree

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.advance()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        kind, text, offset = self.peek()
        if kind == "num":
            self.advance()
            return Num(float(text))
        if kind == "ident":
            self.advance()
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if text not in FUNCTIONS:
                    raise UnknownFunction(
                        f"unknown function {text!r}", _byte_offset(self.source, offset)
                    )
                self.advance()
                args = [self.expr()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect_op(")")
                if text == "abs" and len(args) != 1:
                    raise ExprSyntaxError("abs takes exactly one argument", _byte_offset(self.source, offset))
                return Call(text, tuple(args))
            return Ident(text)
        if kind == "op" and text == "(":
            self.advance()
            node = self.expr()
            self.expect_op(")")
            return node
        self.fail("expected a number, name, or '('")


def parse_expr(source: str) -> Expr:
    return _Parser(source).parse()


def _print_num(value: float) -> str:
    return repr(int(value)) if value == int(value) and abs(value) < 1e15 else repr(value)


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


def print_expr(expr: Expr) -> str:
    """Source form that re-parses to an identical tree."""
    if isinstance(expr, Num):
        return _print_num(expr.value)
    if isinstance(expr, Ident):
        return expr.name
    if isinstance(expr, Call):
        return f"{expr.func}({', '.join(print_expr(a) for a in expr.args)})"
    prec = _PRECEDENCE[expr.op]
    left = print_expr(expr.left)
    right = print_expr(expr.right)
    if isinstance(expr.left, BinOp) and _PRECEDENCE[expr.left.op] < prec:
        left = f"({left})"
    # Right operands of equal precedence need parens to survive left associativity.
    if isinstance(expr.right, BinOp) and _PRECEDENCE[expr.right.op] <= prec:
        right = f"({right})"
    return f"{left} {expr.op} {right}"


def expr_idents(expr: Expr) -> set[str]:
    if isinstance(expr, Ident):
        return {expr.name}
    if isinstance(expr, BinOp):
        return expr_idents(expr.left) | expr_idents(expr.right)
    if isinstance(expr, Call):
        names: set[str] = set()
        for arg in expr.args:
            names |= expr_idents(arg)
        return names
    return set()


def eval_expr(expr: Expr, values: dict[str, float | None]) -> float | None:
    """Evaluate over a feature mapping; MISSING (None) propagates, x/0 is MISSING."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Ident):
        if expr.name not in values:
            raise UnresolvedIdent(f"unknown feature {expr.name!r}")
        return values[expr.name]
    if isinstance(expr, Call):
        args = [eval_expr(a, values) for a in expr.args]
        if any(a is None for a in args):
            return None
        if expr.func == "min":
            return float(min(args))
        if expr.func == "max":
            return float(max(args))
        return float(abs(args[0]))
    left = eval_expr(expr.left, values)
    right = eval_expr(expr.right, values)
    if left is None or right is None:
        return None
    if expr.op == "+":
        return left + right
    if expr.op == "-":
        return left - right
    if expr.op == "*":
        return left * right
    if right == 0.0:
        return None
    return left / right
