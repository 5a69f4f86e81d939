"""Operational semantics: single steps, path probabilities, and the
computable partial termination probability.

`partial_prob` is the brute-force oracle the rest of the test suite trusts:
breadth-first expansion of the reduction tree with exact rational mass,
merging duplicate terms per level (sound: it only aggregates path weights).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .syntax import (
    TE,
    App,
    Div,
    End,
    Grammar,
    NonTerm,
    PhorsError,
    Term,
    Var,
    spine,
    subst,
)

DEFAULT_NODE_BUDGET = 10**6
BUDGET_ENV_VAR = "PHORS_ORACLE_BUDGET"


class OracleBudgetError(PhorsError):
    """The reduction-tree expansion exceeded its node budget."""


def node_budget(override: Optional[int] = None) -> int:
    if override is not None:
        return override
    env = os.environ.get(BUDGET_ENV_VAR)
    return int(env) if env else DEFAULT_NODE_BUDGET


@dataclass(frozen=True)
class Redex:
    direction: str  # "L" or "R"
    prob: Fraction
    result: Term


def step(g: Grammar, t: Term) -> Optional[tuple[Redex, Redex]]:
    """One head-unfolding step: both branches of the rule for the head
    nonterminal, or None when `t` is Te, Omega, or head-stuck.

    Terms of sort o are either Te, Omega, or a full application of a
    nonterminal, so no reduction-strategy choice arises.
    """
    if isinstance(t, (End, Div)):
        return None
    head, args = spine(t)
    if not isinstance(head, NonTerm):
        return None  # head-stuck: a free variable in an open term
    rule = g.rules[head.name]
    if len(args) != len(rule.params):
        return None  # partial application: not ground, no redex
    env = dict(zip(rule.params, args))
    return (
        Redex("L", rule.prob, subst(rule.left, env)),
        Redex("R", 1 - rule.prob, subst(rule.right, env)),
    )


def prob_of_path(g: Grammar, cs: str, start: Optional[Term] = None) -> Fraction:
    """Probability of the unique reduction along `cs` ending in Te, else 0."""
    t = g.start_term() if start is None else start
    p = Fraction(1)
    for d in cs:
        if d not in ("L", "R"):
            raise ValueError(f"path labels are L/R, got {d!r}")
        redexes = step(g, t)
        if redexes is None:
            return Fraction(0)
        r = redexes[0] if d == "L" else redexes[1]
        p *= r.prob
        t = r.result
    return p if t == TE else Fraction(0)


def partial_prob(
    g: Grammar,
    depth: int,
    start: Optional[Term] = None,
    budget: Optional[int] = None,
) -> Fraction:
    """Sum of Prob over all reduction paths of length <= depth ending in Te.

    Zero-probability branches are pruned (they contribute nothing to any
    path weight).  Raises OracleBudgetError past the node budget, settable
    via the PHORS_ORACLE_BUDGET environment variable.
    """
    limit = node_budget(budget)
    frontier: dict[Term, Fraction] = {g.start_term() if start is None else start: Fraction(1)}
    total = Fraction(0)
    nodes = 0
    for _ in range(depth):
        if not frontier:
            break
        nxt: dict[Term, Fraction] = {}
        for t, mass in frontier.items():
            if t == TE:
                total += mass
                continue
            redexes = step(g, t)
            if redexes is None:
                continue
            for r in redexes:
                if r.prob == 0:
                    continue
                nodes += 1
                if nodes > limit:
                    raise OracleBudgetError(
                        f"oracle expansion exceeded {limit} nodes at depth budget {depth}"
                    )
                nxt[r.result] = nxt.get(r.result, Fraction(0)) + mass * r.prob
        frontier = nxt
    total += frontier.get(TE, Fraction(0))
    return total
