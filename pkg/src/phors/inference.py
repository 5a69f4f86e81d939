"""Sort reconstruction for rule sets without annotations.

First-order unification over sort terms with a ground-result constraint per
rule body.  The inferred environment is the unique most-general one with
ground result `o`; parameters left unconstrained default to `o`.
"""

from __future__ import annotations

from dataclasses import dataclass

from .syntax import (
    O,
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
    term_to_str,
)


class InferenceError(PhorsError):
    pass


@dataclass(frozen=True)
class _SVar(Sort):
    """Unification variable; only lives inside this module."""

    __slots__ = ("id", "hint")
    id: int
    hint: str

    def __repr__(self) -> str:
        return f"?{self.hint}{self.id}"


class _Unifier:
    def __init__(self) -> None:
        self.subst: dict[_SVar, Sort] = {}
        self._n = 0

    def fresh(self, hint: str) -> _SVar:
        self._n += 1
        return _SVar(self._n, hint)

    def walk(self, s: Sort) -> Sort:
        while isinstance(s, _SVar) and s in self.subst:
            s = self.subst[s]
        return s

    def occurs(self, v: _SVar, s: Sort) -> bool:
        s = self.walk(s)
        if s == v:
            return True
        if isinstance(s, Arrow):
            return self.occurs(v, s.param) or self.occurs(v, s.result)
        return False

    def unify(self, a: Sort, b: Sort, where: str) -> None:
        a, b = self.walk(a), self.walk(b)
        if a == b:
            return
        if isinstance(a, _SVar):
            if self.occurs(a, b):
                raise InferenceError(f"occurs check failed in {where}")
            self.subst[a] = b
            return
        if isinstance(b, _SVar):
            self.unify(b, a, where)
            return
        if isinstance(a, Arrow) and isinstance(b, Arrow):
            self.unify(a.param, b.param, where)
            self.unify(a.result, b.result, where)
            return
        raise InferenceError(f"inconsistent sorts in {where}: {a!r} vs {b!r}")

    def resolve(self, s: Sort) -> Sort:
        s = self.walk(s)
        if isinstance(s, _SVar):
            return O  # unconstrained: default to ground
        if isinstance(s, Arrow):
            return Arrow(self.resolve(s.param), self.resolve(s.result))
        return s


def _constrain(u: _Unifier, env: dict[str, Sort], t: Term, where: str) -> Sort:
    if isinstance(t, (End, Div)):
        return O
    if isinstance(t, (Var, NonTerm)):
        try:
            return env[t.name]
        except KeyError:
            raise InferenceError(f"unbound name {t.name!r} in {where}") from None
    if isinstance(t, App):
        fs = _constrain(u, env, t.fun, where)
        as_ = _constrain(u, env, t.arg, where)
        res = u.fresh("r")
        u.unify(fs, Arrow(as_, res), f"{where}: {term_to_str(t)}")
        return res
    if isinstance(t, Choice):
        u.unify(_constrain(u, env, t.left, where), O, where)
        u.unify(_constrain(u, env, t.right, where), O, where)
        return O
    raise TypeError(t)


def infer_sorts(rules: list[Rule], start: str) -> Grammar:
    """Build a Grammar from annotation-free rules.

    Raises InferenceError on occurs-check failure, inconsistent constraints,
    or a nonterminal used at incompatible sorts.
    """
    u = _Unifier()
    nt_sorts: dict[str, Sort] = {r.name: u.fresh(r.name) for r in rules}
    if start not in nt_sorts:
        raise InferenceError(f"start symbol {start!r} has no rule")
    for r in rules:
        param_sorts: dict[str, Sort] = {}
        for p in r.params:
            if p in param_sorts:
                raise InferenceError(f"{r.name}: duplicate parameter {p!r}")
            param_sorts[p] = u.fresh(p)
        # N(F) = s1 -> ... -> sk -> o
        sig: Sort = O
        for p in reversed(r.params):
            sig = Arrow(param_sorts[p], sig)
        u.unify(nt_sorts[r.name], sig, f"rule {r.name}")
        env = dict(nt_sorts)
        env.update(param_sorts)
        for label, body in (("left", r.left), ("right", r.right)):
            s = _constrain(u, env, body, f"{r.name} ({label})")
            u.unify(s, O, f"{r.name} ({label})")
    env_out = {name: u.resolve(s) for name, s in nt_sorts.items()}
    return Grammar(env=env_out, rules={r.name: r for r in rules}, start=start)
