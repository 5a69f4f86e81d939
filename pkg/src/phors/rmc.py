"""Recursive Markov chains and the conversions to and from order-1
grammars.

An RMC is a family of components; each component has nodes, entries,
exits, boxes mapped to callee components, and probabilistic transitions
over nodes and the boxes' call/return ports.  Reachability of one exit
from one start vertex corresponds exactly to the termination probability
of an order-1 grammar, in both directions.

Text format (one component block per component):

    component A1 {
      entry F;
      exit x;
      box b : A1;
      F -> 1/4 x, 3/4 (b, F);
      (b, x) -> 1/4 x, 3/4 (b, F);
    }
    %query A1 F x

Vertices are node names or `(box, node)` ports; transition lines list
`probability vertex` pairs separated by commas.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

from .syntax import (
    OMEGA,
    TE,
    App,
    Arrow,
    Choice,
    Div,
    End,
    Grammar,
    Ground,
    NonTerm,
    O,
    PhorsError,
    Rule,
    Sort,
    Term,
    Var,
    app,
    arrow,
    contains_end,
    params_of,
    spine,
    validate,
)
from .transform import eliminate_end, normalize_choices

Vertex = Union[str, tuple[str, str]]  # node, or (box, callee node) port


class RmcError(PhorsError):
    pass


@dataclass
class Component:
    name: str
    nodes: list[str] = field(default_factory=list)
    entries: list[str] = field(default_factory=list)
    exits: list[str] = field(default_factory=list)
    boxes: dict[str, str] = field(default_factory=dict)  # box -> component
    transitions: list[tuple[Vertex, Fraction, Vertex]] = field(default_factory=list)


@dataclass
class Rmc:
    components: dict[str, Component]


@dataclass(frozen=True)
class ReachQuery:
    component: str
    start: Vertex
    exit: str


def _vertex_str(v: Vertex) -> str:
    return v if isinstance(v, str) else f"({v[0]}, {v[1]})"


def validate_rmc(r: Rmc) -> list[str]:
    out: list[str] = []
    for cname, c in r.components.items():
        where = f"component {cname}"
        known = set(c.nodes)
        for lst, kind in ((c.entries, "entry"), (c.exits, "exit")):
            for n in lst:
                if n not in known:
                    out.append(f"{where}: {kind} {n} is not a node")
        for b, target in c.boxes.items():
            if target not in r.components:
                out.append(f"{where}: box {b} maps to unknown component {target}")

        def port_ok(v: Vertex, want_exit_port: bool) -> Optional[str]:
            if isinstance(v, str):
                return None if v in known else f"unknown node {v}"
            b, n = v
            if b not in c.boxes:
                return f"unknown box {b}"
            callee = r.components.get(c.boxes[b])
            if callee is None:
                return None  # reported above
            pool = callee.exits if want_exit_port else callee.entries
            side = "exit" if want_exit_port else "entry"
            if n not in pool:
                return f"{n} is not an {side} of {c.boxes[b]}"
            return None

        outgoing: dict[Vertex, Fraction] = {}
        for src, p, dst in c.transitions:
            for v, is_return in ((src, True), (dst, False)):
                err = port_ok(v, want_exit_port=is_return)
                if err:
                    out.append(f"{where}: {err}")
            if isinstance(src, str):
                if src in c.exits:
                    out.append(f"{where}: transition out of exit {src}")
            if not (0 <= p <= 1):
                out.append(f"{where}: probability {p} out of range")
            if isinstance(dst, str) and dst not in known:
                pass  # already reported
            outgoing[src] = outgoing.get(src, Fraction(0)) + p
        # every non-exit node and every return port must have total mass 1
        must_emit: list[Vertex] = [n for n in c.nodes if n not in c.exits]
        for b in c.boxes:
            callee = r.components.get(c.boxes[b])
            if callee:
                must_emit.extend((b, ex) for ex in callee.exits)
        for v in must_emit:
            total = outgoing.get(v, Fraction(0))
            if total != 1:
                out.append(
                    f"{where}: outgoing probabilities of {_vertex_str(v)} sum to {total}"
                )
    return out


# ---------------------------------------------------------------------------
# Text format


_TOK = re.compile(
    r"""(?P<ws>\s+|//[^\n]*)
      | (?P<num>\d+(?:\.\d+)?(?:/\d+)?)
      | (?P<name>[A-Za-z_][A-Za-z0-9_.']*)
      | (?P<punct>[{}();:,%]|->)
""",
    re.VERBOSE,
)


def _tokens(text: str):
    pos, line = 0, 1
    out = []
    while pos < len(text):
        m = _TOK.match(text, pos)
        if not m:
            raise RmcError(f"line {line}: cannot read {text[pos:pos+16]!r}")
        line += text[pos : m.end()].count("\n")
        pos = m.end()
        if m.lastgroup != "ws":
            out.append((m.lastgroup, m.group(), line))
    out.append(("eof", "", line))
    return out


def parse_rmc(text: str) -> tuple[Rmc, Optional[ReachQuery]]:
    toks = _tokens(text)
    i = 0

    def peek():
        return toks[i]

    def take(expect: Optional[str] = None):
        nonlocal i
        kind, val, line = toks[i]
        i += 1
        if expect is not None and val != expect:
            raise RmcError(f"line {line}: expected {expect!r}, found {val or kind!r}")
        return kind, val, line

    def name():
        kind, val, line = take()
        if kind != "name":
            raise RmcError(f"line {line}: expected a name, found {val or kind!r}")
        return val

    def vertex() -> Vertex:
        if peek()[1] == "(":
            take("(")
            b = name()
            take(",")
            n = name()
            take(")")
            return (b, n)
        return name()

    comps: dict[str, Component] = {}
    query: Optional[ReachQuery] = None
    while peek()[0] != "eof":
        kind, val, line = peek()
        if val == "%":
            take()
            kind, word, line = take()
            if word != "query":
                raise RmcError(f"line {line}: unknown directive %{word}")
            cname = name()
            start = vertex()
            exit_ = name()
            query = ReachQuery(cname, start, exit_)
            continue
        take("component")
        cname = name()
        c = Component(name=cname)
        comps[cname] = c
        take("{")
        while peek()[1] != "}":
            kind, word, line = peek()
            if word in ("entry", "exit", "node"):
                take()
                names = [name()]
                while peek()[1] == ",":
                    take(",")
                    names.append(name())
                take(";")
                for n in names:
                    if n not in c.nodes:
                        c.nodes.append(n)
                if word == "entry":
                    c.entries.extend(n for n in names if n not in c.entries)
                elif word == "exit":
                    c.exits.extend(n for n in names if n not in c.exits)
                continue
            if word == "box":
                take()
                b = name()
                take(":")
                c.boxes[b] = name()
                take(";")
                continue
            src = vertex()
            take("->")
            while True:
                kind, num, line = take()
                if kind != "num":
                    raise RmcError(f"line {line}: expected a probability")
                p = Fraction(num) if "/" not in num else Fraction(*map(int, num.split("/")))
                dst = vertex()
                c.transitions.append((src, p, dst))
                if peek()[1] == ",":
                    take(",")
                    continue
                break
            take(";")
        take("}")
    if not comps:
        raise RmcError("no components in input")
    return Rmc(comps), query


def rmc_to_text(r: Rmc, query: Optional[ReachQuery] = None) -> str:
    lines = []
    for c in r.components.values():
        lines.append(f"component {c.name} {{")
        plain = [n for n in c.nodes if n not in c.entries and n not in c.exits]
        if c.entries:
            lines.append(f"  entry {', '.join(c.entries)};")
        if c.exits:
            lines.append(f"  exit {', '.join(c.exits)};")
        if plain:
            lines.append(f"  node {', '.join(plain)};")
        for b, target in c.boxes.items():
            lines.append(f"  box {b} : {target};")
        by_src: dict[Vertex, list[tuple[Fraction, Vertex]]] = {}
        for src, p, dst in c.transitions:
            by_src.setdefault(src, []).append((p, dst))
        for src, outs in by_src.items():
            rhs = ", ".join(f"{p} {_vertex_str(dst)}" for p, dst in outs)
            lines.append(f"  {_vertex_str(src)} -> {rhs};")
        lines.append("}")
    if query:
        lines.append(f"%query {query.component} {_vertex_str(query.start)} {query.exit}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# RMC -> grammar


def _nt_names(r: Rmc) -> dict[tuple[str, Vertex], str]:
    """Deterministic, collision-free nonterminal names per vertex."""
    taken: set[str] = {"S"}
    out: dict[tuple[str, Vertex], str] = {}
    for cname, c in r.components.items():
        vertices: list[Vertex] = list(c.nodes)
        for b in c.boxes:
            callee = r.components[c.boxes[b]]
            vertices.extend((b, en) for en in callee.entries)
            vertices.extend((b, ex) for ex in callee.exits)
        for v in vertices:
            base = f"F_{cname}_{v}" if isinstance(v, str) else f"F_{cname}_{v[0]}_{v[1]}"
            base = re.sub(r"[^A-Za-z0-9_]", "_", base)
            uniq = base
            k = 1
            while uniq in taken:
                k += 1
                uniq = f"{base}_{k}"
            taken.add(uniq)
            out[(cname, v)] = uniq
    return out


def rmc_to_phors(r: Rmc, query: ReachQuery) -> Grammar:
    """Order-1 grammar whose termination probability equals the RMC's
    probability of reaching the query exit from the query start.

    One nonterminal per vertex, of sort o^|Ex_i| -> o; exits project
    their argument, other vertices branch over their transitions, call
    ports invoke the callee's entry with the return-port continuations.
    """
    diags = validate_rmc(r)
    if diags:
        raise RmcError("invalid RMC: " + "; ".join(diags))
    if query.component not in r.components:
        raise RmcError(f"query names unknown component {query.component}")
    qc = r.components[query.component]
    if query.exit not in qc.exits:
        raise RmcError(f"query target {query.exit} is not an exit of {query.component}")
    names = _nt_names(r)

    env: dict[str, Sort] = {}
    rules: dict[str, Rule] = {}

    def params_for(c: Component) -> tuple[str, ...]:
        return tuple(f"x{i + 1}" for i in range(len(c.exits)))

    def enc(cname: str, v: Vertex, params: tuple[str, ...]) -> Term:
        return app(NonTerm(names[(cname, v)]), *(Var(p) for p in params))

    for cname, c in r.components.items():
        ps = params_for(c)
        sort = arrow(*([O] * len(c.exits)), O) if c.exits else O
        by_src: dict[Vertex, list[tuple[Fraction, Vertex]]] = {}
        for src, p, dst in c.transitions:
            if p != 0:
                by_src.setdefault(src, []).append((p, dst))
        vertices: list[Vertex] = list(c.nodes)
        for b in c.boxes:
            callee = r.components[c.boxes[b]]
            vertices.extend((b, en) for en in callee.entries)
            vertices.extend((b, ex) for ex in callee.exits)
        for v in vertices:
            nt = names[(cname, v)]
            env[nt] = sort
            if isinstance(v, str) and v in c.exits:
                j = c.exits.index(v)
                rules[nt] = Rule(nt, ps, Var(ps[j]), Fraction(1), OMEGA)
                continue
            if not isinstance(v, str):
                b, n = v
                callee = r.components[c.boxes[b]]
                if n in callee.entries:
                    # call port: enter the callee, plugging the return
                    # ports in as its exit continuations
                    conts = [enc(cname, (b, ex), ps) for ex in callee.exits]
                    body = app(NonTerm(names[(c.boxes[b], n)]), *conts)
                    rules[nt] = Rule(nt, ps, body, Fraction(1), OMEGA)
                    continue
            outs = by_src.get(v, [])
            if not outs:
                rules[nt] = Rule(nt, ps, OMEGA, Fraction(1), OMEGA)
                continue
            # fold the distribution into a chain of binary choices with
            # conditional probabilities
            terms = [enc(cname, dst, ps) for _, dst in outs]
            body = terms[-1]
            remaining = outs[-1][0]
            for (p, _), t in zip(reversed(outs[:-1]), reversed(terms[:-1])):
                remaining += p
                body = Choice(t, p / remaining, body)
            rules[nt] = (
                Rule(nt, ps, body.left, body.prob, body.right)
                if isinstance(body, Choice)
                else Rule(nt, ps, body, Fraction(1), OMEGA)
            )

    j = qc.exits.index(query.exit)
    start_args = [TE if i == j else OMEGA for i in range(len(qc.exits))]
    if (query.component, query.start) not in names:
        raise RmcError(f"query start {_vertex_str(query.start)} not a vertex")
    start_body = app(NonTerm(names[(query.component, query.start)]), *start_args)
    env["S"] = O
    rules["S"] = Rule("S", (), start_body, Fraction(1), OMEGA)
    g = normalize_choices(Grammar(env=env, rules=rules, start="S"))
    diags = validate(g)
    if diags:
        raise RmcError("generated grammar does not validate: " + "; ".join(diags))
    return g


# ---------------------------------------------------------------------------
# grammar -> RMC


def _is_plain_normal(g: Grammar) -> bool:
    """Fast path: start rule is F applied to one Te and otherwise Omega
    arguments, every other rule is Te-free with bodies that are a
    parameter or a two-level full application over the full parameter
    tuple, and all non-start nonterminals share one arity."""
    start = g.rules[g.start]
    if start.params or start.prob != 1:
        return False
    head, args = spine(start.left)
    if not isinstance(head, NonTerm) or head.name == g.start:
        return False
    if sum(isinstance(a, End) for a in args) != 1:
        return False
    if not all(isinstance(a, (End, Div)) for a in args):
        return False
    arities = {len(r.params) for n, r in g.rules.items() if n != g.start}
    if len(arities) != 1 or len(args) not in arities:
        return False

    def body_ok(rule: Rule, t: Term) -> bool:
        if isinstance(t, Var):
            return True
        if isinstance(t, Div):
            return False
        head, args = spine(t)
        if not isinstance(head, NonTerm) or head.name == g.start:
            return False
        if len(args) != len(g.rules[head.name].params):
            return False
        for a in args:
            h2, a2 = spine(a)
            if not isinstance(h2, NonTerm) or h2.name == g.start:
                return False
            if tuple(x.name if isinstance(x, Var) else None for x in a2) != rule.params:
                return False
        return True

    for n, r in g.rules.items():
        if n == g.start:
            continue
        if contains_end(r.left) or contains_end(r.right):
            return False
        for side, p in ((r.left, r.prob), (r.right, 1 - r.prob)):
            if p == 0:
                continue
            if not body_ok(r, side):
                return False
    return True


def _normalize_for_rmc(g: Grammar) -> Grammar:
    """Bring an order-1 grammar into the single-component normal form:
    ground start rule S = F Te .. (one live Te position), all other
    nonterminals Te-free with uniform arity and two-level bodies (a
    parameter, or F applied to full applications over the parameters)."""
    if not g.start_ground():
        # an already end-eliminated grammar: give it a fresh ground start
        g = _wrap_ground_start(g)
    if not _is_plain_normal(g):
        g = _wrap_ground_start(eliminate_end(g))
    arity = max(
        [len(r.params) for n, r in g.rules.items() if n != g.start] or [1]
    )
    arity = max(arity, 1)
    names = tuple(f"x{i + 1}" for i in range(arity))
    out_rules: dict[str, Rule] = {}
    taken = set(g.rules)
    fresh_idx = [0]

    def fresh(prefix: str) -> str:
        while True:
            fresh_idx[0] += 1
            cand = f"{prefix}{fresh_idx[0]}"
            if cand not in taken:
                taken.add(cand)
                return cand

    # queue of (name, body-with-x-parameters, probability, right-body)
    todo: list[tuple[str, Term, Fraction, Term]] = []
    div_name: list[Optional[str]] = [None]
    proj: dict[int, str] = {}

    def full_x(nt: str) -> Term:
        return app(NonTerm(nt), *(Var(x) for x in names))

    def div_nt() -> Term:
        if div_name[0] is None:
            nm = fresh("Dv")
            div_name[0] = nm
            body = app(NonTerm(nm), *([full_x(nm)] * arity))
            out_rules[nm] = Rule(nm, names, body, Fraction(1), OMEGA)
        return full_x(div_name[0])

    def projection(i: int) -> Term:
        if i not in proj:
            nm = fresh("Pr")
            proj[i] = nm
            out_rules[nm] = Rule(nm, names, Var(names[i]), Fraction(1), OMEGA)
        return full_x(proj[i])

    def norm_arg(t: Term) -> Term:
        """Arguments must be full applications NT x1 .. xk."""
        if isinstance(t, Var):
            return projection(names.index(t.name))
        if isinstance(t, Div):
            return div_nt()
        head, args = spine(t)
        if (
            isinstance(head, NonTerm)
            and len(args) == arity
            and all(isinstance(a, Var) for a in args)
            and tuple(a.name for a in args) == names
        ):
            return t
        nm = fresh("Ax")
        todo.append((nm, t, Fraction(1), OMEGA))
        return full_x(nm)

    def norm_body(t: Term) -> Term:
        if isinstance(t, (Var,)):
            return t
        if isinstance(t, Div):
            return div_nt()
        head, args = spine(t)
        if not isinstance(head, NonTerm):
            raise RmcError("unexpected body shape in order-1 normalization")
        new_args = [norm_arg(a) for a in args]
        # unused padded positions get the diverging continuation
        if len(new_args) < arity:
            new_args += [div_nt()] * (arity - len(new_args))
        return app(head, *new_args)

    def rename(t: Term, rn: dict[str, str]) -> Term:
        if isinstance(t, Var):
            return Var(rn[t.name])
        if isinstance(t, App):
            return App(rename(t.fun, rn), rename(t.arg, rn))
        return t

    for n, r in g.rules.items():
        if n == g.start:
            continue
        rn = dict(zip(r.params, names))
        todo.append((n, rename(r.left, rn), r.prob, rename(r.right, rn)))
    while todo:
        n, left, prob, right = todo.pop(0)
        out_rules[n] = Rule(
            n,
            names,
            norm_body(left),
            prob,
            norm_body(right) if prob != 1 else OMEGA,
        )

    start = g.rules[g.start]
    head, args = spine(start.left)
    start_args = list(args) + [OMEGA] * (arity - len(args))
    env: dict[str, Sort] = {g.start: O}
    base_sort = arrow(*([O] * arity), O)
    for n in out_rules:
        env[n] = base_sort
    out_rules[g.start] = Rule(g.start, (), app(head, *start_args), Fraction(1), OMEGA)
    out = Grammar(env=env, rules=out_rules, start=g.start)
    diags = validate(out)
    if diags:
        raise RmcError("normalization failed: " + "; ".join(diags))
    return out


def _wrap_ground_start(g: Grammar) -> Grammar:
    old = g.start
    arity = len(params_of(g.env[old]))
    new_start = old + "0"
    while new_start in g.env:
        new_start += "0"
    body = app(NonTerm(old), *([TE] + [OMEGA] * (arity - 1)))
    env = dict(g.env)
    env[new_start] = O
    rules = dict(g.rules)
    rules[new_start] = Rule(new_start, (), body, Fraction(1), OMEGA)
    return Grammar(env=env, rules=rules, start=new_start)


def phors_to_rmc(g: Grammar) -> tuple[Rmc, ReachQuery]:
    """Single-component RMC with the grammar's termination probability as
    the reachability probability of the queried exit."""
    if g.order > 1:
        raise RmcError(f"grammar has order {g.order}; only order <= 1 converts")
    diags = validate(g)
    if diags:
        raise RmcError("grammar does not validate: " + "; ".join(diags))
    g = _normalize_for_rmc(g)

    start = g.rules[g.start]
    head, args = spine(start.left)
    assert isinstance(head, NonTerm)
    j = next(i for i, a in enumerate(args) if isinstance(a, End))
    nts = [n for n in g.rules if n != g.start]
    arity = len(g.rules[nts[0]].params)
    exits = [f"x{i + 1}" for i in range(arity)]

    comp = Component(name="A1", nodes=list(nts) + exits, entries=list(nts), exits=exits)
    boxes: dict[Term, str] = {}

    def box_of(t: Term) -> str:
        if t not in boxes:
            boxes[t] = f"b{len(boxes) + 1}"
            comp.boxes[boxes[t]] = "A1"
        return boxes[t]

    def enc(t: Term) -> Vertex:
        if isinstance(t, Var):
            return t.name  # parameters are exactly x1..xk = the exits
        h, _ = spine(t)
        assert isinstance(h, NonTerm)
        return (box_of(t), h.name)

    def branches(rule: Rule) -> list[tuple[Fraction, Term]]:
        out = []
        if rule.prob != 0:
            out.append((rule.prob, rule.left))
        if rule.prob != 1:
            out.append((Fraction(1) - rule.prob, rule.right))
        return out

    for n in nts:
        for p, t in branches(g.rules[n]):
            comp.transitions.append((n, p, enc(t)))
    # return ports mimic the rules of the argument nonterminals
    done: set[Term] = set()
    frontier = list(boxes)
    while frontier:
        t = frontier.pop(0)
        if t in done:
            continue
        done.add(t)
        _, targs = spine(t)
        b = boxes[t]
        for i, a in enumerate(targs):
            h, _ = spine(a)
            assert isinstance(h, NonTerm)
            for p, dst in branches(g.rules[h.name]):
                comp.transitions.append(((b, exits[i]), p, enc(dst)))
        frontier.extend(x for x in boxes if x not in done)

    rmc = Rmc({"A1": comp})
    query = ReachQuery("A1", head.name, exits[j])
    diags = validate_rmc(rmc)
    if diags:
        raise RmcError("generated RMC does not validate: " + "; ".join(diags))
    return rmc, query
