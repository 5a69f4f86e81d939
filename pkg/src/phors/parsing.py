"""Text format for grammars.

One rule per line, terminated by `.`:

    // binary random walk
    %start S
    S = F Te.
    F x = x <1/4> F (F x).

`<p>` carries the left-branch probability as a rational (`<1/2>`) or a
decimal (`<0.25>`); omitting `<p> term` means probability 1 on the left.
Application is juxtaposition, parentheses group, `Te` and `Omega` are
keywords, `//` starts a line comment.  Choices may be nested inside terms
and chained (`t1 <p> t2 <q> t3`, resolved left to right); such grammars
need `normalize_choices` before analysis.  Without `%start`, the first
rule's nonterminal starts.
"""

from __future__ import annotations

import re
from fractions import Fraction

from .inference import infer_sorts
from .syntax import (
    OMEGA,
    TE,
    App,
    Choice,
    Grammar,
    NonTerm,
    PhorsError,
    Rule,
    Term,
    Var,
    term_to_str,
)


class ParseError(PhorsError):
    pass


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<prob><[^<>]*>)
  | (?P<name>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<punct>[()=.%])
""",
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    line = 1
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"line {line}: cannot read input at {text[pos:pos+20]!r}")
        line += text[pos : m.end()].count("\n")
        pos = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        out.append((kind, m.group(), line))
    out.append(("eof", "", line))
    return out


def _parse_prob(tok: str, line: int) -> Fraction:
    body = tok[1:-1].strip()
    try:
        p = Fraction(body)
    except (ValueError, ZeroDivisionError):
        raise ParseError(f"line {line}: bad probability {tok!r}") from None
    return p


class _Parser:
    def __init__(self, text: str) -> None:
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.toks[self.i]

    def next(self) -> tuple[str, str, int]:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, value: str) -> None:
        kind, val, line = self.next()
        if val != value:
            raise ParseError(f"line {line}: expected {value!r}, found {val or kind!r}")

    def parse(self) -> tuple[list[_RawRule], str | None]:
        rules: list[_RawRule] = []
        start = None
        while True:
            kind, val, line = self.peek()
            if kind == "eof":
                break
            if val == "%":
                self.next()
                kind, val, line = self.next()
                if val != "start":
                    raise ParseError(f"line {line}: unknown directive %{val}")
                kind, val, line = self.next()
                if kind != "name":
                    raise ParseError(f"line {line}: %start needs a name")
                start = val
                continue
            rules.append(self.rule())
        if not rules:
            raise ParseError("no rules in input")
        return rules, start

    def rule(self) -> "_RawRule":
        kind, name, line = self.next()
        if kind != "name" or name in ("Te", "Omega"):
            raise ParseError(f"line {line}: expected a rule head, found {name!r}")
        params: list[str] = []
        while True:
            kind, val, l2 = self.peek()
            if val == "=":
                self.next()
                break
            if kind != "name" or val in ("Te", "Omega"):
                raise ParseError(f"line {l2}: expected parameter or '=', found {val!r}")
            self.next()
            params.append(val)
        body = self.body()
        self.expect(".")
        return _RawRule(name, tuple(params), body, line)

    def body(self) -> Term:
        """term (<p> term)* with the chain nested to the right:
        t1 <p1> t2 <p2> t3 reads as t1 <p1> (t2 <p2> t3)."""
        first = self.term()
        kind, val, line = self.peek()
        if kind != "prob":
            return first
        self.next()
        p = _parse_prob(val, line)
        rest = self.body()
        return Choice(first, p, rest)

    def term(self) -> Term:
        t = self.atom()
        while True:
            kind, val, _ = self.peek()
            if kind == "name" or val == "(":
                t = App(t, self.atom())
            else:
                return t

    def atom(self) -> Term:
        kind, val, line = self.next()
        if val == "(":
            t = self.body()
            self.expect(")")
            return t
        if kind != "name":
            raise ParseError(f"line {line}: expected a term, found {val or kind!r}")
        if val == "Te":
            return TE
        if val == "Omega":
            return OMEGA
        return _Name(val)


class _Name(Term):
    """Placeholder resolved to Var / NonTerm once rule heads are known."""

    __slots__ = ("name",)

    def __init__(self, name: str) -> None:
        self.name = name


class _RawRule:
    def __init__(self, name: str, params: tuple[str, ...], body: Term, line: int) -> None:
        self.name = name
        self.params = params
        self.body = body
        self.line = line


def _resolve(t: Term, nonterms: set[str]) -> Term:
    if isinstance(t, _Name):
        return NonTerm(t.name) if t.name in nonterms else Var(t.name)
    if isinstance(t, App):
        return App(_resolve(t.fun, nonterms), _resolve(t.arg, nonterms))
    if isinstance(t, Choice):
        return Choice(_resolve(t.left, nonterms), t.prob, _resolve(t.right, nonterms))
    return t


def parse_rules(text: str) -> tuple[list[Rule], str]:
    """Parse rule syntax; names are resolved but sorts are not inferred."""
    raw, start = _Parser(text).parse()
    names = [r.name for r in raw]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise ParseError(f"duplicate rules for {sorted(dupes)}")
    nonterms = set(names)
    rules: list[Rule] = []
    for r in raw:
        body = _resolve(r.body, nonterms)
        if isinstance(body, Choice):
            left, prob, right = body.left, body.prob, body.right
        else:
            left, prob, right = body, Fraction(1), OMEGA
        rules.append(Rule(name=r.name, params=r.params, left=left, prob=prob, right=right))
    return rules, start or raw[0].name


def parse_grammar(text: str) -> Grammar:
    """Parse and infer sorts.  The result may still contain nested choices;
    run `normalize_choices` before handing it to semantics or translation."""
    rules, start = parse_rules(text)
    return infer_sorts(rules, start)


def grammar_to_text(g: Grammar) -> str:
    lines = [f"%start {g.start}"]
    for name, r in g.rules.items():
        head = " ".join([name, *r.params])
        if r.prob == 1 and r.right == OMEGA:
            lines.append(f"{head} = {term_to_str(r.left)}.")
        else:
            lines.append(f"{head} = {term_to_str(r.left)} <{r.prob}> {term_to_str(r.right)}.")
    return "\n".join(lines) + "\n"
