"""Core calculus for probabilistic higher-order recursion schemes (pHORS).

Simple sorts over a single ground sort `o`, applicative terms with the two
ground constants Te (termination) and Omega (divergence), rules with one
top-level binary probabilistic choice, and grammar-level validation.

Probabilities are exact `fractions.Fraction` values everywhere in the AST;
floating point enters only in the numeric solver modules.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Mapping, Optional


class PhorsError(Exception):
    """Base class for errors raised by this package."""


class SortError(PhorsError):
    """A term does not have a sort under the given environment."""


# ---------------------------------------------------------------------------
# Sorts


class Sort:
    __slots__ = ()


@dataclass(frozen=True)
class Ground(Sort):
    __slots__ = ()

    def __repr__(self) -> str:
        return "o"


@dataclass(frozen=True)
class Arrow(Sort):
    __slots__ = ("param", "result")
    param: Sort
    result: Sort

    def __repr__(self) -> str:
        p = repr(self.param)
        if isinstance(self.param, Arrow):
            p = f"({p})"
        return f"{p} -> {self.result!r}"


O = Ground()


def arrow(*sorts: Sort) -> Sort:
    """Right-fold s1 -> s2 -> ... -> sn."""
    if not sorts:
        raise ValueError("arrow() needs at least one sort")
    out = sorts[-1]
    for s in reversed(sorts[:-1]):
        out = Arrow(s, out)
    return out


def params_of(s: Sort) -> list[Sort]:
    out = []
    while isinstance(s, Arrow):
        out.append(s.param)
        s = s.result
    return out


def result_of(s: Sort) -> Sort:
    while isinstance(s, Arrow):
        s = s.result
    return s


def order_of(s: Sort) -> int:
    """order(o) = 0, order(s1 -> s2) = max(order(s1) + 1, order(s2))."""
    if isinstance(s, Ground):
        return 0
    assert isinstance(s, Arrow)
    return max(order_of(s.param) + 1, order_of(s.result))


def arity_of(s: Sort) -> int:
    """Length of the maximal all-ground parameter suffix (the l in
    s1 -> ... -> sk => o^l -> o)."""
    ps = params_of(s)
    n = 0
    for p in reversed(ps):
        if isinstance(p, Ground):
            n += 1
        else:
            break
    return n


def ground_split(params: list[Sort]) -> tuple[list[Sort], list[Sort]]:
    """Split a parameter list into (prefix, maximal all-ground suffix)."""
    k = len(params)
    while k > 0 and isinstance(params[k - 1], Ground):
        k -= 1
    return params[:k], params[k:]


# ---------------------------------------------------------------------------
# Terms


class Term:
    __slots__ = ()


@dataclass(frozen=True)
class End(Term):
    """The terminated computation, written Te."""

    __slots__ = ()


@dataclass(frozen=True)
class Div(Term):
    """The diverging computation, written Omega."""

    __slots__ = ()


@dataclass(frozen=True)
class Var(Term):
    __slots__ = ("name",)
    name: str


@dataclass(frozen=True)
class NonTerm(Term):
    __slots__ = ("name",)
    name: str


@dataclass(frozen=True)
class App(Term):
    __slots__ = ("fun", "arg")
    fun: Term
    arg: Term


@dataclass(frozen=True)
class Choice(Term):
    """Extended surface syntax only: a probabilistic choice nested inside a
    term.  normalize_choices lifts these to rule level; the operational
    semantics and translations require choice-free bodies."""

    __slots__ = ("left", "prob", "right")
    left: Term
    prob: Fraction
    right: Term


TE = End()
OMEGA = Div()


def app(fun: Term, *args: Term) -> Term:
    for a in args:
        fun = App(fun, a)
    return fun


def spine(t: Term) -> tuple[Term, list[Term]]:
    """Decompose nested applications into (head, arguments)."""
    args: list[Term] = []
    while isinstance(t, App):
        args.append(t.arg)
        t = t.fun
    args.reverse()
    return t, args


def subterms(t: Term) -> Iterator[Term]:
    yield t
    if isinstance(t, App):
        yield from subterms(t.fun)
        yield from subterms(t.arg)
    elif isinstance(t, Choice):
        yield from subterms(t.left)
        yield from subterms(t.right)


def contains_end(t: Term) -> bool:
    return any(isinstance(s, End) for s in subterms(t))


def contains_choice(t: Term) -> bool:
    return any(isinstance(s, Choice) for s in subterms(t))


def subst(t: Term, env: Mapping[str, Term]) -> Term:
    """Substitute terms for variables.  Applicative terms have no binders,
    so plain replacement is capture-avoiding."""
    if isinstance(t, Var):
        return env.get(t.name, t)
    if isinstance(t, App):
        return App(subst(t.fun, env), subst(t.arg, env))
    if isinstance(t, Choice):
        return Choice(subst(t.left, env), t.prob, subst(t.right, env))
    return t


def term_to_str(t: Term, parens: bool = False) -> str:
    if isinstance(t, End):
        return "Te"
    if isinstance(t, Div):
        return "Omega"
    if isinstance(t, (Var, NonTerm)):
        return t.name
    if isinstance(t, App):
        head, args = spine(t)
        parts = [term_to_str(head)] + [term_to_str(a, parens=True) for a in args]
        s = " ".join(parts)
        return f"({s})" if parens else s
    if isinstance(t, Choice):
        s = f"{term_to_str(t.left)} <{t.prob}> {term_to_str(t.right)}"
        return f"({s})" if parens else s
    raise TypeError(t)


# ---------------------------------------------------------------------------
# Rules and grammars


@dataclass(frozen=True)
class Rule:
    """F x1 ... xk = left <p> right.  `right` defaults to Omega when the
    source omitted the choice (probability 1 on the left)."""

    name: str
    params: tuple[str, ...]
    left: Term
    prob: Fraction
    right: Term


@dataclass(frozen=True)
class Grammar:
    env: dict[str, Sort]
    rules: dict[str, Rule]
    start: str

    @property
    def order(self) -> int:
        return max(order_of(s) for s in self.env.values())

    def param_env(self, rule: Rule) -> dict[str, Sort]:
        sorts = params_of(self.env[rule.name])
        return dict(zip(rule.params, sorts))

    def start_ground(self) -> bool:
        return isinstance(self.env[self.start], Ground)

    def start_term(self) -> Term:
        """The queried term: S for a ground start, S Te for an
        end-eliminated (o -> o) start."""
        if self.start_ground():
            return NonTerm(self.start)
        return App(NonTerm(self.start), TE)


def typecheck_term(env: Mapping[str, Sort], t: Term) -> Sort:
    """Return the unique sort of `t` or raise SortError.

    Choice nodes are accepted at ground sort (extended surface syntax)."""
    if isinstance(t, (End, Div)):
        return O
    if isinstance(t, (Var, NonTerm)):
        try:
            return env[t.name]
        except KeyError:
            raise SortError(f"unbound name {t.name!r}") from None
    if isinstance(t, App):
        f = typecheck_term(env, t.fun)
        if not isinstance(f, Arrow):
            raise SortError(f"application of non-arrow: {term_to_str(t.fun)} : {f!r}")
        a = typecheck_term(env, t.arg)
        if a != f.param:
            raise SortError(
                f"argument sort mismatch in {term_to_str(t)}: "
                f"expected {f.param!r}, got {a!r}"
            )
        return f.result
    if isinstance(t, Choice):
        for side in (t.left, t.right):
            s = typecheck_term(env, side)
            if not isinstance(s, Ground):
                raise SortError(f"choice at non-ground sort: {term_to_str(side)} : {s!r}")
        return O
    raise TypeError(t)


def validate(g: Grammar, require_ground_start: bool = False) -> list[str]:
    """Return diagnostics; empty iff the grammar invariants hold.

    The start sort may be `o`, or `o -> o` for end-eliminated grammars
    (queried as S Te) unless require_ground_start is set.
    """
    out: list[str] = []
    if set(g.env) != set(g.rules):
        missing = set(g.env) ^ set(g.rules)
        out.append(f"environment/rules domain mismatch: {sorted(missing)}")
        return out
    if g.start not in g.env:
        out.append(f"start symbol {g.start!r} undefined")
        return out
    ssort = g.env[g.start]
    if require_ground_start:
        if not isinstance(ssort, Ground):
            out.append(f"start sort: {g.start} : {ssort!r}, expected o")
    elif ssort not in (O, Arrow(O, O)):
        out.append(f"start sort: {g.start} : {ssort!r}, expected o or o -> o")
    for name, rule in g.rules.items():
        sort = g.env[name]
        want = len(params_of(sort))
        if len(rule.params) != want:
            out.append(f"{name}: rule has {len(rule.params)} parameters, sort has {want}")
            continue
        if len(set(rule.params)) != len(rule.params):
            out.append(f"{name}: duplicate parameters")
        if not (0 <= rule.prob <= 1):
            out.append(f"{name}: probability out of range: {rule.prob}")
        env = dict(g.env)
        env.update(g.param_env(rule))
        for label, body in (("left", rule.left), ("right", rule.right)):
            try:
                s = typecheck_term(env, body)
            except SortError as e:
                out.append(f"{name} ({label}): {e}")
                continue
            if not isinstance(s, Ground):
                out.append(f"{name} ({label}): body sort {s!r}, expected o")
    return out


def is_normalized(g: Grammar) -> bool:
    """True when no rule body contains a nested Choice node."""
    return not any(
        contains_choice(r.left) or contains_choice(r.right) for r in g.rules.values()
    )
