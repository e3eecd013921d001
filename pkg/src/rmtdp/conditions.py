"""Closed predicate language over belief states.

Grammar (lowest to highest precedence)::

    expr   := term ('|' term)*
    term   := factor ('&' factor)*
    factor := '~' factor | '(' expr ')' | 'MB' TEAM factor | atom
    atom   := operand (('<' | '>' | '=' | '!=' | '<=' | '>=') operand)?
    operand:= NAME | NAME '(' ARG ')' | INT

A bare operand is a proposition test.  ``Achieved(X)``, ``Unachievable(X)``
and ``Irrelevant(X)`` are resolved against the plan named ``X``.
Mutual-belief prefixes ``MB <Team>`` are accepted and read as private belief.
"""
from __future__ import annotations

import operator
import re
from dataclasses import dataclass

PLAN_PREDICATES = ("Achieved", "Unachievable", "Irrelevant")

_TOKEN = re.compile(r"\s*(?:(<=|>=|!=|[<>=&|~()])|([A-Za-z_]\w*(?:\([^()\s]*\))?)|(-?\d+))")

_CMP = {"<": operator.lt, ">": operator.gt, "=": operator.eq, "!=": operator.ne,
        "<=": operator.le, ">=": operator.ge}


class ConditionError(ValueError):
    pass


class Cond:
    def evaluate(self, ctx) -> bool:
        raise NotImplementedError

    def props(self) -> set:
        """Proposition identifiers this condition can test."""
        return set()


@dataclass(frozen=True)
class Const(Cond):
    value: bool

    def evaluate(self, ctx):
        return self.value

    def __str__(self):
        return "true" if self.value else "false"


TRUE = Const(True)
FALSE = Const(False)


@dataclass(frozen=True)
class Prop(Cond):
    name: str

    def evaluate(self, ctx):
        return ctx.has(self.name)

    def props(self):
        return {self.name}

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class PlanTest(Cond):
    predicate: str
    plan: str

    def evaluate(self, ctx):
        return ctx.plan_status(self.predicate, self.plan)

    def __str__(self):
        return f"{self.predicate}({self.plan})"


@dataclass(frozen=True)
class Compare(Cond):
    op: str
    left: object
    right: object

    def evaluate(self, ctx):
        return _CMP[self.op](ctx.scalar(self.left), ctx.scalar(self.right))

    def __str__(self):
        return f"{self.left} {self.op} {self.right}"


@dataclass(frozen=True)
class Not(Cond):
    inner: Cond

    def evaluate(self, ctx):
        return not self.inner.evaluate(ctx)

    def props(self):
        return self.inner.props()

    def __str__(self):
        return f"~{self.inner}"


@dataclass(frozen=True)
class And(Cond):
    parts: tuple

    def evaluate(self, ctx):
        return all(p.evaluate(ctx) for p in self.parts)

    def props(self):
        return set().union(*(p.props() for p in self.parts))

    def __str__(self):
        return "(" + " & ".join(map(str, self.parts)) + ")"


@dataclass(frozen=True)
class Or(Cond):
    parts: tuple

    def evaluate(self, ctx):
        return any(p.evaluate(ctx) for p in self.parts)

    def props(self):
        return set().union(*(p.props() for p in self.parts))

    def __str__(self):
        return "(" + " | ".join(map(str, self.parts)) + ")"


def _tokenize(text: str) -> list:
    out = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ConditionError(f"unexpected character {text[pos:].strip()[:1]!r} in {text!r}")
        sym, name, num = m.groups()
        if sym:
            out.append(("sym", sym))
        elif name:
            out.append(("name", name))
        else:
            out.append(("int", int(num)))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, sym):
        kind, val = self.take()
        if kind != "sym" or val != sym:
            raise ConditionError(f"expected {sym!r} in {self.text!r}")

    def parse(self) -> Cond:
        if not self.toks:
            raise ConditionError("empty condition")
        node = self.expr()
        if self.i != len(self.toks):
            raise ConditionError(f"trailing input {self.toks[self.i][1]!r} in {self.text!r}")
        return node

    def expr(self):
        parts = [self.term()]
        while self.peek() == ("sym", "|"):
            self.take()
            parts.append(self.term())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def term(self):
        parts = [self.factor()]
        while self.peek() == ("sym", "&"):
            self.take()
            parts.append(self.factor())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def factor(self):
        kind, val = self.peek()
        if kind == "sym" and val == "~":
            self.take()
            return Not(self.factor())
        if kind == "sym" and val == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name" and val == "MB":
            self.take()
            bracketed = self.peek() == ("sym", "<")
            if bracketed:
                self.take()
            k2, _ = self.take()
            if k2 != "name":
                raise ConditionError(f"MB needs a team name in {self.text!r}")
            if bracketed:
                self.expect(">")
            return self.factor()
        return self.atom()

    def operand(self):
        kind, val = self.take()
        if kind not in ("name", "int"):
            raise ConditionError(f"expected operand in {self.text!r}")
        return val

    def atom(self):
        left = self.operand()
        kind, val = self.peek()
        if kind == "sym" and val in _CMP:
            self.take()
            return Compare(val, left, self.operand())
        if isinstance(left, int):
            raise ConditionError(f"bare number {left} in {self.text!r}")
        if left == "true":
            return TRUE
        if left == "false":
            return FALSE
        m = re.fullmatch(r"(\w+)\((.*)\)", left)
        if m and m.group(1) in PLAN_PREDICATES:
            return PlanTest(m.group(1), m.group(2))
        return Prop(left)


def parse_condition(text: str | None, default: Cond = TRUE) -> Cond:
    if text is None or not text.strip() or text.strip() in ("{}", "none"):
        return default
    return _Parser(text).parse()


class EvalContext:
    """Binds a belief state, named constants and a plan-status resolver."""

    def __init__(self, belief, constants=None, resolver=None):
        self.belief = belief
        self.constants = constants or {}
        self.resolver = resolver

    def has(self, name):
        return name in self.belief.props

    def scalar(self, x):
        if isinstance(x, int):
            return x
        v = self.belief.get(x)
        if v is not None:
            return v
        if x in self.constants:
            return self.constants[x]
        raise ConditionError(f"unknown scalar {x!r}")

    def plan_status(self, predicate, plan):
        if self.resolver is None:
            raise ConditionError(f"{predicate}({plan}) needs a plan resolver")
        return self.resolver(predicate, plan, self)
