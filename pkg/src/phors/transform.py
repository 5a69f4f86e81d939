"""Grammar preprocessing: choice normalization and end-marker elimination.

Both transformations preserve the partial termination probabilities; the
test suite checks this against the enumeration oracle in `semantics`.
"""

from __future__ import annotations

from fractions import Fraction

from .syntax import (
    O,
    OMEGA,
    App,
    Arrow,
    Choice,
    Div,
    End,
    Grammar,
    NonTerm,
    PhorsError,
    Rule,
    Sort,
    Term,
    Var,
    app,
    contains_choice,
    contains_end,
    params_of,
    spine,
    subterms,
    validate,
)


class TransformError(PhorsError):
    pass


# ---------------------------------------------------------------------------
# Choice normalization


def _extract_one(t: Term, aux_call: Term) -> tuple[Term, Choice] | None:
    """Replace the leftmost-outermost Choice inside `t` by `aux_call`;
    return (new term, extracted choice), or None if `t` is choice-free."""
    if isinstance(t, Choice):
        return aux_call, t
    if isinstance(t, App):
        got = _extract_one(t.fun, aux_call)
        if got is not None:
            return App(got[0], t.arg), got[1]
        got = _extract_one(t.arg, aux_call)
        if got is not None:
            return App(t.fun, got[0]), got[1]
    return None


def normalize_choices(g: Grammar) -> Grammar:
    """Lift nested probabilistic choices to rule level.

    A rule F x.. = C[tL <p> tR] becomes F x.. = C[G x..] with a fresh
    auxiliary G x.. = tL <p> tR carrying F's full parameter list.  N-ary
    chains t1 <p1> t2 <p2> t3 (right-nested in the AST) desugar into one
    auxiliary per inner choice, emitted left to right.  Idempotent on
    already-normal grammars.
    """
    env = dict(g.env)
    rules: dict[str, Rule] = {}
    counters: dict[str, int] = {}
    # queue entries: (rule name, source nonterminal, params, raw body)
    queue: list[tuple[str, str, tuple[str, ...], Term]] = [
        (name, name, r.params, Choice(r.left, r.prob, r.right))
        for name, r in g.rules.items()
    ]

    def fresh_aux(src: str) -> str:
        counters[src] = counters.get(src, 0) + 1
        cand = f"{src}_ch{counters[src]}"
        while cand in env:
            counters[src] += 1
            cand = f"{src}_ch{counters[src]}"
        return cand

    while queue:
        name, src, params, body = queue.pop(0)
        if isinstance(body, Choice):
            left, prob, right = body.left, body.prob, body.right
        else:
            left, prob, right = body, Fraction(1), OMEGA
        sides: list[Term] = []
        for side in (left, right):
            while contains_choice(side):
                aux = fresh_aux(src)
                env[aux] = env[src]  # auxiliaries share the source signature
                call = app(NonTerm(aux), *(Var(p) for p in params))
                if isinstance(side, Choice):
                    # whole side is a choice: the n-ary chain case
                    queue.append((aux, src, params, side))
                    side = call
                else:
                    side, extracted = _extract_one(side, call)  # type: ignore[misc]
                    queue.append((aux, src, params, extracted))
            sides.append(side)
        rules[name] = Rule(name=name, params=params, left=sides[0], prob=prob, right=sides[1])

    out = Grammar(env=env, rules=rules, start=g.start)
    diags = validate(out)
    if diags:
        raise TransformError("normalize_choices produced an invalid grammar: " + "; ".join(diags))
    return out


# ---------------------------------------------------------------------------
# End-marker elimination


def _need_set(g: Grammar) -> set[str]:
    """Nonterminals that must carry the end marker: their rule mentions Te,
    or mentions another nonterminal in the set."""
    need: set[str] = set()
    mentions: dict[str, set[str]] = {}
    for name, r in g.rules.items():
        if contains_end(r.left) or contains_end(r.right):
            need.add(name)
        used: set[str] = set()
        for body in (r.left, r.right):
            for s in subterms(body):
                if isinstance(s, NonTerm):
                    used.add(s.name)
        mentions[name] = used
    changed = True
    while changed:
        changed = False
        for name, used in mentions.items():
            if name not in need and used & need:
                need.add(name)
                changed = True
    return need


def eliminate_end(g: Grammar, param: str = "z") -> Grammar:
    """Remove Te from rule bodies; the start symbol becomes o -> o and takes
    the end marker as its new trailing parameter.

    Only nonterminals that (transitively) reach a Te are threaded, so the
    rest keep their sorts; the start symbol always gains the parameter.
    Raises TransformError when a threaded nonterminal occurs partially
    applied or in argument position (its sort change would have to
    propagate into parameter sorts, which this selective pass does not do).
    """
    diags = validate(g, require_ground_start=True)
    if diags:
        raise TransformError("eliminate_end precondition: " + "; ".join(diags))
    if not all(
        not contains_choice(r.left) and not contains_choice(r.right)
        for r in g.rules.values()
    ):
        raise TransformError("eliminate_end needs a choice-normalized grammar")
    need = _need_set(g) | {g.start}

    env: dict[str, Sort] = {}
    for name, sort in g.env.items():
        if name in need:
            ps = params_of(sort)
            new: Sort = Arrow(O, O)
            for p in reversed(ps):
                new = Arrow(p, new)
            env[name] = new
        else:
            env[name] = sort

    def rewrite(t: Term, z: str, rule: str) -> Term:
        if isinstance(t, End):
            return Var(z)
        if isinstance(t, (Div, Var)):
            return t
        if isinstance(t, (NonTerm, App)):
            head, args = spine(t)
            new_args = [rewrite(a, z, rule) for a in args]
            if isinstance(head, NonTerm) and head.name in need:
                if len(args) != len(params_of(g.env[head.name])):
                    raise TransformError(
                        f"{rule}: {head.name} needs the end marker but occurs "
                        f"partially applied; selective threading cannot type this"
                    )
                return app(head, *new_args, Var(z))
            return app(head, *new_args) if new_args else head
        raise TransformError(f"{rule}: unexpected term node {t!r}")

    rules: dict[str, Rule] = {}
    for name, r in g.rules.items():
        if name in need:
            z = param
            while z in r.params:
                z += "'"
            rules[name] = Rule(
                name=name,
                params=r.params + (z,),
                left=rewrite(r.left, z, name),
                prob=r.prob,
                right=rewrite(r.right, z, name),
            )
        else:
            rules[name] = r

    out = Grammar(env=env, rules=rules, start=g.start)
    diags = validate(out)
    if diags:
        raise TransformError("eliminate_end produced an invalid grammar: " + "; ".join(diags))
    return out


def ensure_end_free(g: Grammar) -> Grammar:
    """Return `g` unchanged when already end-eliminated (start o -> o and
    Te-free), else apply eliminate_end."""
    if not g.start_ground():
        for r in g.rules.values():
            if contains_end(r.left) or contains_end(r.right):
                raise TransformError(
                    f"grammar with o -> o start still contains Te (rule {r.name})"
                )
        return g
    return eliminate_end(g)
