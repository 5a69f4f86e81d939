"""Text format for order-(<= 1) equation systems.

    // statements end with ';'
    f(x, y | u, v) = x*u + 0.5*f(y, x, u, v);
    g() = 0.5 + f(0, 0, 1, 0)*g();
    %group f g;
    %target f(1, 0, 0.5, 0.5);

`|` splits a function's parameters into argument groups (sum over each
group stays in [0, 1] on valid inputs); without it all parameters form one
group.  `%group` declares a function group.  Constants are decimals
(`0.25`), rationals (`1/4`), or integers.  Calls pass flat argument lists.

This is the on-disk form produced by the grammar-to-equations translation
and consumed by the upper-bound solver.  Higher-order systems (from
order-3 grammars) can be printed, in a tuple-slot syntax, but only
order-(<= 1) systems parse back.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .equations import (
    Add,
    Apply,
    Const,
    EqExpr,
    EqSystem,
    Equation,
    EVar,
    FunRef,
    Mul,
    R,
    Slot,
    TupleOf,
    expr_to_str,
    typecheck_eqs,
)
from .syntax import PhorsError


class EqParseError(PhorsError):
    pass


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<number>\d+(?:\.\d+)?(?:/\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_.']*)
  | (?P<punct>[()=;,|%*+])
""",
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    out, pos, line = [], 0, 1
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise EqParseError(f"line {line}: cannot read {text[pos:pos+20]!r}")
        line += text[pos : m.end()].count("\n")
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        out.append((m.lastgroup, m.group(), line))
    out.append(("eof", "", line))
    return out


@dataclass
class _Call(EqExpr):
    """Unresolved flat call; re-chunked into slots in the second pass."""

    name: str
    args: list[EqExpr]


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, val: str):
        kind, got, line = self.next()
        if got != val:
            raise EqParseError(f"line {line}: expected {val!r}, found {got or kind!r}")

    def parse(self):
        heads: list[tuple[str, list[list[str]]]] = []
        bodies: list[EqExpr] = []
        fun_groups: list[tuple[str, ...]] = []
        target: EqExpr | None = None
        probabilistic = True
        while True:
            kind, val, line = self.peek()
            if kind == "eof":
                break
            if val == "%":
                self.next()
                kind, word, line = self.next()
                if word == "nonprob":
                    self.expect(";")
                    probabilistic = False
                elif word == "group":
                    grp = []
                    while self.peek()[0] == "name":
                        grp.append(self.next()[1])
                    self.expect(";")
                    if not grp:
                        raise EqParseError(f"line {line}: empty %group")
                    fun_groups.append(tuple(grp))
                elif word == "target":
                    target = self.expr()
                    self.expect(";")
                else:
                    raise EqParseError(f"line {line}: unknown directive %{word}")
                continue
            heads.append(self.head())
            self.expect("=")
            bodies.append(self.expr())
            self.expect(";")
        if target is None:
            raise EqParseError("missing %target directive")
        return heads, bodies, fun_groups, target, probabilistic

    def head(self) -> tuple[str, list[list[str]]]:
        kind, name, line = self.next()
        if kind != "name":
            raise EqParseError(f"line {line}: expected a function name, found {name!r}")
        self.expect("(")
        groups: list[list[str]] = [[]]
        while True:
            kind, val, line = self.peek()
            if val == ")":
                self.next()
                break
            if val == "|":
                self.next()
                groups.append([])
                continue
            if val == ",":
                self.next()
                continue
            if kind != "name":
                raise EqParseError(f"line {line}: expected a parameter, found {val!r}")
            self.next()
            groups[-1].append(val)
        if groups == [[]]:
            groups = []
        if any(not grp for grp in groups):
            raise EqParseError(f"{name}: empty parameter group")
        return name, groups

    def expr(self) -> EqExpr:
        t = self.term()
        while self.peek()[1] == "+":
            self.next()
            t = Add(t, self.term())
        return t

    def term(self) -> EqExpr:
        t = self.factor()
        while self.peek()[1] == "*":
            self.next()
            t = Mul(t, self.factor())
        return t

    def factor(self) -> EqExpr:
        kind, val, line = self.next()
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "number":
            if "/" in val:
                num, den = val.split("/")
                return Const(Fraction(num) / Fraction(den))
            return Const(Fraction(val))
        if kind == "name":
            if self.peek()[1] == "(":
                self.next()
                args: list[EqExpr] = []
                while self.peek()[1] != ")":
                    args.append(self.expr())
                    if self.peek()[1] == ",":
                        self.next()
                self.expect(")")
                return _Call(val, args)
            return EVar(val)  # resolved to FunRef later if it names an equation
        raise EqParseError(f"line {line}: expected an expression, found {val or kind!r}")


def parse_equations(text: str) -> EqSystem:
    heads, bodies, fun_groups, target, probabilistic = _Parser(text).parse()
    names = [h[0] for h in heads]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise EqParseError(f"function defined twice: {dupes}")
    slots_by_name: dict[str, tuple[Slot, ...]] = {}
    groups_by_name: dict[str, tuple[tuple[int, ...], ...]] = {}
    for name, groups in heads:
        slots = tuple(Slot(tuple(grp), tuple(R for _ in grp)) for grp in groups)
        slots_by_name[name] = slots
        out, i = [], 0
        for grp in groups:
            out.append(tuple(range(i, i + len(grp))))
            i += len(grp)
        groups_by_name[name] = tuple(out)

    def resolve(e: EqExpr, params: set[str], where: str) -> EqExpr:
        if isinstance(e, _Call):
            if e.name not in slots_by_name:
                raise EqParseError(f"{where}: call of unknown function {e.name}")
            slots = slots_by_name[e.name]
            flat = [n for s in slots for n in s.names]
            if len(e.args) != len(flat):
                raise EqParseError(
                    f"{where}: {e.name} takes {len(flat)} arguments, got {len(e.args)}"
                )
            out: EqExpr = FunRef(e.name)
            i = 0
            for s in slots:
                k = len(s.names)
                chunk = [resolve(a, params, where) for a in e.args[i : i + k]]
                out = Apply(out, chunk[0] if k == 1 else TupleOf(tuple(chunk)))
                i += k
            return out
        if isinstance(e, EVar):
            if e.name in params:
                return e
            if e.name in slots_by_name:
                if slots_by_name[e.name]:
                    raise EqParseError(
                        f"{where}: {e.name} is a function of arity > 0; call it"
                    )
                return FunRef(e.name)
            raise EqParseError(f"{where}: unbound name {e.name}")
        if isinstance(e, Add):
            return Add(resolve(e.a, params, where), resolve(e.b, params, where))
        if isinstance(e, Mul):
            return Mul(resolve(e.a, params, where), resolve(e.b, params, where))
        if isinstance(e, Const):
            return e
        raise EqParseError(f"{where}: unexpected node {e!r}")

    equations: dict[str, Equation] = {}
    for (name, _), body in zip(heads, bodies):
        params = {n for s in slots_by_name[name] for n in s.names}
        if params & set(names):
            raise EqParseError(f"{name}: parameter shadows a function name")
        equations[name] = Equation(name, slots_by_name[name], resolve(body, params, name))
    sys = EqSystem(
        equations=equations,
        target=resolve(target, set(), "target"),
        arg_groups=groups_by_name,
        fun_groups=tuple(fun_groups) if fun_groups else None,
        probabilistic=probabilistic,
    )
    typecheck_eqs(sys)
    return sys


def _print_expr(sys: EqSystem, e: EqExpr, prec: int = 0) -> str:
    """Like expr_to_str, but full applications of a defined function print
    as flat calls `f(a, b, c)` so order-(<= 1) output re-parses."""
    if isinstance(e, Apply):
        fun, slot_args = e, []
        while isinstance(fun, Apply):
            slot_args.append(fun.arg)
            fun = fun.fun
        slot_args.reverse()
        if isinstance(fun, FunRef) and len(slot_args) == len(sys.equations[fun.name].slots):
            flat: list[str] = []
            for a in slot_args:
                if isinstance(a, TupleOf):
                    flat.extend(_print_expr(sys, i) for i in a.items)
                else:
                    flat.append(_print_expr(sys, a))
            return f"{fun.name}({', '.join(flat)})"
        return expr_to_str(e, prec)
    if isinstance(e, FunRef):
        return f"{e.name}()" if not sys.equations[e.name].slots else e.name
    if isinstance(e, Add):
        s = f"{_print_expr(sys, e.a, 0)} + {_print_expr(sys, e.b, 0)}"
        return f"({s})" if prec > 0 else s
    if isinstance(e, Mul):
        s = f"{_print_expr(sys, e.a, 1)}*{_print_expr(sys, e.b, 1)}"
        return f"({s})" if prec > 1 else s
    return expr_to_str(e, prec)


def equations_to_text(sys: EqSystem) -> str:
    """Print a system.  Order-(<= 1) systems round-trip through
    parse_equations; higher-order systems fall back to tuple-slot display."""
    lines = []
    for name, eq in sys.equations.items():
        if all(s == R for slot in eq.slots for s in slot.sorts):
            flat = sys.flat_params(name)
            groups = sys.groups_of(name)
            parts = [", ".join(flat[i] for i in grp) for grp in groups]
            head = f"{name}({' | '.join(parts)})"
        else:
            head = name + "".join(
                f"(({', '.join(slot.names)}))" if len(slot.names) > 1 else f"({slot.names[0]})"
                for slot in eq.slots
            )
        lines.append(f"{head} = {_print_expr(sys, eq.body)};")
    if sys.fun_groups:
        for grp in sys.fun_groups:
            if len(grp) > 1:
                lines.append(f"%group {' '.join(grp)};")
    if not sys.probabilistic:
        lines.append("%nonprob;")
    lines.append(f"%target {_print_expr(sys, sys.target)};")
    return "\n".join(lines) + "\n"
