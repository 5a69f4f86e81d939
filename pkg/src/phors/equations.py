"""Fixpoint equation systems over the nonnegative reals extended with
infinity: syntax, simple types, semantics, and Kleene lower bounds.

A system is a set of equations `f (x..) (y..) = e` where each parameter
slot is a scalar or a tuple, expressions are built from constants, `+`,
`*`, application and tupling, and each function is defined at most once.
The least solution lives in the omega-cpo of monotone functions; Kleene
iterates from bottom give certified lower bounds at any depth.

Extended arithmetic: x + inf = inf, 0 * inf = inf * 0 = 0, x * inf = inf
for x != 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Optional

from .syntax import PhorsError

INF = float("inf")


class EqTypeError(PhorsError):
    pass


# ---------------------------------------------------------------------------
# Sorts


class EqSort:
    __slots__ = ()


@dataclass(frozen=True)
class Real(EqSort):
    __slots__ = ()

    def __repr__(self) -> str:
        return "r"


@dataclass(frozen=True)
class FunSort(EqSort):
    __slots__ = ("param", "result")
    param: EqSort
    result: EqSort

    def __repr__(self) -> str:
        p = repr(self.param)
        if isinstance(self.param, FunSort):
            p = f"({p})"
        return f"{p} -> {self.result!r}"


@dataclass(frozen=True)
class TupleSort(EqSort):
    __slots__ = ("items",)
    items: tuple[EqSort, ...]

    def __repr__(self) -> str:
        return "(" + " x ".join(map(repr, self.items)) + ")"


R = Real()


def eq_order(s: EqSort) -> int:
    if isinstance(s, Real):
        return 0
    if isinstance(s, FunSort):
        return max(eq_order(s.param) + 1, eq_order(s.result))
    if isinstance(s, TupleSort):
        return max((eq_order(i) for i in s.items), default=0)
    raise TypeError(s)


# ---------------------------------------------------------------------------
# Expressions


class EqExpr:
    __slots__ = ()


@dataclass(frozen=True)
class Const(EqExpr):
    __slots__ = ("value",)
    value: Fraction

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError("constants are nonnegative")


@dataclass(frozen=True)
class EVar(EqExpr):
    __slots__ = ("name",)
    name: str


@dataclass(frozen=True)
class FunRef(EqExpr):
    __slots__ = ("name",)
    name: str


@dataclass(frozen=True)
class Add(EqExpr):
    __slots__ = ("a", "b")
    a: EqExpr
    b: EqExpr


@dataclass(frozen=True)
class Mul(EqExpr):
    __slots__ = ("a", "b")
    a: EqExpr
    b: EqExpr


@dataclass(frozen=True)
class Apply(EqExpr):
    __slots__ = ("fun", "arg")
    fun: EqExpr
    arg: EqExpr


@dataclass(frozen=True)
class TupleOf(EqExpr):
    __slots__ = ("items",)
    items: tuple[EqExpr, ...]


def const(x: Any) -> Const:
    return Const(Fraction(x))


def add(*es: EqExpr) -> EqExpr:
    out = es[0]
    for e in es[1:]:
        out = Add(out, e)
    return out


def apply_slots(f: EqExpr, *slot_args: EqExpr) -> EqExpr:
    for a in slot_args:
        f = Apply(f, a)
    return f


def expr_to_str(e: EqExpr, prec: int = 0) -> str:
    # prec: 0 additive context, 1 multiplicative, 2 atomic
    if isinstance(e, Const):
        v = e.value
        s = str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
        return s
    if isinstance(e, EVar) or isinstance(e, FunRef):
        return e.name
    if isinstance(e, Add):
        s = f"{expr_to_str(e.a, 0)} + {expr_to_str(e.b, 0)}"
        return f"({s})" if prec > 0 else s
    if isinstance(e, Mul):
        s = f"{expr_to_str(e.a, 1)}*{expr_to_str(e.b, 1)}"
        return f"({s})" if prec > 1 else s
    if isinstance(e, TupleOf):
        return "(" + ", ".join(expr_to_str(i, 0) for i in e.items) + ")"
    if isinstance(e, Apply):
        fun, slots = e, []
        while isinstance(fun, Apply):
            slots.append(fun.arg)
            fun = fun.fun
        slots.reverse()
        parts = []
        for s in slots:
            if isinstance(s, TupleOf):
                parts.append("(" + ", ".join(expr_to_str(i, 0) for i in s.items) + ")")
            else:
                parts.append(f"({expr_to_str(s, 0)})")
        return expr_to_str(fun, 2) + "".join(parts)
    raise TypeError(e)


def walk(e: EqExpr) -> Iterable[EqExpr]:
    yield e
    if isinstance(e, (Add, Mul)):
        yield from walk(e.a)
        yield from walk(e.b)
    elif isinstance(e, Apply):
        yield from walk(e.fun)
        yield from walk(e.arg)
    elif isinstance(e, TupleOf):
        for i in e.items:
            yield from walk(i)


# ---------------------------------------------------------------------------
# Equations and systems


@dataclass(frozen=True)
class Slot:
    """One parameter slot: a bare scalar-or-function name, or a tuple."""

    names: tuple[str, ...]
    sorts: tuple[EqSort, ...]

    @property
    def sort(self) -> EqSort:
        return self.sorts[0] if len(self.sorts) == 1 else TupleSort(self.sorts)


def scalar_slot(*names: str) -> Slot:
    return Slot(tuple(names), tuple(R for _ in names))


@dataclass(frozen=True)
class Equation:
    name: str
    slots: tuple[Slot, ...]
    body: EqExpr


@dataclass
class EqSystem:
    """Equations plus the queried target expression and group metadata.

    arg_groups partitions each function's flattened argument list into
    groups whose value sums stay in [0, 1] on valid inputs; fun_groups
    partitions function names into tuples whose values at a shared valid
    point are probabilities of mutually exclusive events.
    """

    equations: dict[str, Equation]
    target: EqExpr
    arg_groups: Optional[dict[str, tuple[tuple[int, ...], ...]]] = None
    fun_groups: Optional[tuple[tuple[str, ...], ...]] = None
    # Systems obtained from grammars satisfy the probability invariants
    # (on valid inputs every subexpression's value lies in [0, 1]); the
    # upper solver's clamping and group caps are justified by them.  Hand
    # fixtures that break the invariants (constants > 1) set this False.
    probabilistic: bool = True

    def flat_params(self, fname: str) -> list[str]:
        return [n for slot in self.equations[fname].slots for n in slot.names]

    def signature(self, fname: str) -> EqSort:
        out: EqSort = R
        for slot in reversed(self.equations[fname].slots):
            out = FunSort(slot.sort, out)
        return out

    def order(self) -> int:
        return max((eq_order(self.signature(f)) for f in self.equations), default=0)

    def groups_of(self, fname: str) -> tuple[tuple[int, ...], ...]:
        """Argument groups, defaulting to one group per parameter slot."""
        if self.arg_groups and fname in self.arg_groups:
            return self.arg_groups[fname]
        groups = []
        i = 0
        for slot in self.equations[fname].slots:
            groups.append(tuple(range(i, i + len(slot.names))))
            i += len(slot.names)
        return tuple(groups)

    def fgroup_of(self, fname: str) -> tuple[str, ...]:
        if self.fun_groups:
            for grp in self.fun_groups:
                if fname in grp:
                    return grp
        return (fname,)


# ---------------------------------------------------------------------------
# Type checking (per the tuple-typed simple type system for equations)


def typecheck_eqs(sys: EqSystem) -> dict[str, EqSort]:
    """Return the typing environment or raise EqTypeError listing every
    per-equation diagnostic."""
    gamma = {f: sys.signature(f) for f in sys.equations}
    diags: list[str] = []

    def sort_of(e: EqExpr, env: dict[str, EqSort], where: str) -> EqSort | None:
        if isinstance(e, Const):
            return R
        if isinstance(e, EVar):
            if e.name not in env:
                diags.append(f"{where}: unbound variable {e.name}")
                return None
            return env[e.name]
        if isinstance(e, FunRef):
            if e.name not in gamma:
                diags.append(f"{where}: unknown function {e.name}")
                return None
            return gamma[e.name]
        if isinstance(e, (Add, Mul)):
            op = "+" if isinstance(e, Add) else "*"
            for side in (e.a, e.b):
                s = sort_of(side, env, where)
                if s is not None and s != R:
                    diags.append(f"{where}: operand of {op} has sort {s!r}, expected r")
            return R
        if isinstance(e, Apply):
            fs = sort_of(e.fun, env, where)
            as_ = sort_of(e.arg, env, where)
            if fs is None or as_ is None:
                return None
            if not isinstance(fs, FunSort):
                diags.append(f"{where}: application of non-function sort {fs!r}")
                return None
            if fs.param != as_:
                diags.append(
                    f"{where}: argument sort {as_!r} does not match parameter {fs.param!r}"
                )
            return fs.result
        if isinstance(e, TupleOf):
            items = tuple(sort_of(i, env, where) for i in e.items)
            if any(i is None for i in items):
                return None
            return TupleSort(items)  # type: ignore[arg-type]
        raise TypeError(e)

    for name, eq in sys.equations.items():
        env = {n: s for slot in eq.slots for n, s in zip(slot.names, slot.sorts)}
        flat = sys.flat_params(name)
        if len(set(flat)) != len(flat):
            diags.append(f"{name}: duplicate parameter names")
        s = sort_of(eq.body, env, name)
        if s is not None and s != R:
            diags.append(f"{name}: body has sort {s!r}, expected r")
    s = sort_of(sys.target, {}, "target")
    if s is not None and s != R:
        diags.append(f"target: sort {s!r}, expected r")
    if sys.arg_groups:
        for name, groups in sys.arg_groups.items():
            flat = sys.flat_params(name)
            covered = sorted(i for grp in groups for i in grp)
            if covered != list(range(len(flat))):
                diags.append(f"{name}: argument groups do not partition the arguments")
    if sys.fun_groups:
        seen: set[str] = set()
        for grp in sys.fun_groups:
            for f in grp:
                if f not in sys.equations:
                    diags.append(f"function group member {f} is not defined")
                if f in seen:
                    diags.append(f"function {f} appears in two groups")
                seen.add(f)
    if diags:
        raise EqTypeError("; ".join(diags))
    return gamma


# ---------------------------------------------------------------------------
# Extended arithmetic and evaluation


def ext_add(a, b):
    return a + b


def ext_mul(a, b):
    if a == 0:
        return a
    if b == 0:
        return b
    return a * b


@dataclass(frozen=True)
class Closure:
    """Denotation of `name` under the depth-th Kleene approximant, applied
    to `applied` slot values so far.  Hashable so memo keys and argument
    tuples can contain function values (order-2 systems)."""

    name: str
    depth: int
    applied: tuple[Any, ...]


class KleeneBudgetError(PhorsError):
    """Depth-indexed evaluation exceeded its memo budget."""


class KleeneEvaluator:
    """Depth-indexed on-demand evaluation of Kleene approximants.

    A function referenced under the depth-d approximant evaluates its body
    at depth d-1 when fully applied; at depth 0 every function denotes the
    constant-0 function.  Results are memoised on (name, depth, arguments)
    so repeated and incremental queries share work.
    """

    def __init__(self, sys: EqSystem, exact: bool = False, max_nodes: int | None = None):
        self.sys = sys
        self.exact = exact
        self.max_nodes = max_nodes
        self.memo: dict[tuple[str, int, tuple], Any] = {}
        # deep approximants of higher-order systems recurse through growing
        # closure spines; the default interpreter limit is too tight
        import sys as _sys

        if _sys.getrecursionlimit() < 100_000:
            _sys.setrecursionlimit(100_000)

    def _const(self, c: Fraction):
        return c if self.exact else float(c)

    def eval(self, e: EqExpr, env: dict[str, Any], depth: int):
        if isinstance(e, Const):
            return self._const(e.value)
        if isinstance(e, EVar):
            return env[e.name]
        if isinstance(e, FunRef):
            return self._ref(e.name, depth)
        if isinstance(e, Add):
            return ext_add(self.eval(e.a, env, depth), self.eval(e.b, env, depth))
        if isinstance(e, Mul):
            a = self.eval(e.a, env, depth)
            if a == 0:
                return a  # 0 * x = 0 even for x = inf; skips the right branch
            b = self.eval(e.b, env, depth)
            if b == 0:
                return b
            return a * b
        if isinstance(e, TupleOf):
            return tuple(self.eval(i, env, depth) for i in e.items)
        if isinstance(e, Apply):
            f = self.eval(e.fun, env, depth)
            a = self.eval(e.arg, env, depth)
            return self._apply(f, a)
        raise TypeError(e)

    def _ref(self, name: str, depth: int):
        eq = self.sys.equations[name]
        if not eq.slots:
            return self._call(name, depth, ())
        return Closure(name, depth, ())

    def _apply(self, f, arg):
        if not isinstance(f, Closure):
            raise EqTypeError(f"application of non-function value {f!r}")
        applied = f.applied + (arg,)
        eq = self.sys.equations[f.name]
        if len(applied) < len(eq.slots):
            return Closure(f.name, f.depth, applied)
        return self._call(f.name, f.depth, applied)

    def _call(self, name: str, depth: int, applied: tuple):
        if depth <= 0:
            return Fraction(0) if self.exact else 0.0
        key = (name, depth, applied)
        got = self.memo.get(key)
        if got is not None:
            return got
        if self.max_nodes is not None and len(self.memo) >= self.max_nodes:
            raise KleeneBudgetError(f"memo exceeded {self.max_nodes} entries")
        eq = self.sys.equations[name]
        env: dict[str, Any] = {}
        for slot, value in zip(eq.slots, applied):
            if len(slot.names) == 1:
                env[slot.names[0]] = value
            else:
                if not isinstance(value, tuple) or len(value) != len(slot.names):
                    raise EqTypeError(f"{name}: tuple arity mismatch for {slot.names}")
                env.update(zip(slot.names, value))
        out = self.eval(eq.body, env, depth - 1)
        self.memo[key] = out
        return out

    def target_at(self, depth: int):
        return self.eval(self.sys.target, {}, depth)

    def value_at(self, name: str, args: tuple, depth: int):
        """Value of `name` at flat scalar arguments under the depth-th
        approximant.  Arguments are re-chunked into the equation's slots."""
        eq = self.sys.equations[name]
        applied: list[Any] = []
        i = 0
        for slot in eq.slots:
            k = len(slot.names)
            applied.append(args[i] if k == 1 else tuple(args[i : i + k]))
            i += k
        return self._call(name, depth, tuple(applied))


def quantize_point(args: tuple, grid_bits: int = 20) -> tuple:
    """Floor each coordinate onto the 2^-grid_bits lattice (exact in
    binary floating point for the magnitudes seen here)."""
    scale = float(1 << grid_bits)
    out = []
    for x in args:
        if x == INF:
            out.append(INF)
        elif x <= 0.0:
            out.append(0.0)
        else:
            out.append(math.floor(x * scale) / scale)
    return tuple(out)


def kleene_lower_bound(
    sys: EqSystem, iters: int, exact: bool = False, max_nodes: int | None = None
):
    """Target value under the iters-th Kleene approximant: a certified
    lower bound of the least solution, nondecreasing in `iters`.

    Evaluated by warming the memo depth by depth, so recursion stays
    shallow and chains like s = f(s) cost O(iters) instead of blowing the
    stack.
    """
    ev = KleeneEvaluator(sys, exact=exact, max_nodes=max_nodes)
    out = Fraction(0) if exact else 0.0
    for d in range(1, iters + 1):
        out = ev.target_at(d)
    return out


def iterate_lower_bound(
    sys: EqSystem,
    min_sweeps: int = 0,
    tol: float = 1e-12,
    max_sweeps: int = 200_000,
    point_budget: int = 200_000,
    work_budget: int = 20_000_000,
    seeds: Optional[dict[str, Iterable[tuple]]] = None,
    _collect: Optional[dict[str, dict[tuple, float]]] = None,
    grid_bits: int = 20,
) -> tuple[float, int]:
    """Chaotic-iteration lower bound for order-(<= 1) systems.

    Maintains value tables over the dynamically discovered set of
    evaluation points; each sweep re-evaluates every tabled point in
    place.  Any lookup at an unknown point registers it at 0 (or just
    reads 0 once the point budget is hit), so every intermediate table is
    below the least solution and the reported target value is a sound
    lower bound.  Call points are floored onto a 2^-grid_bits lattice
    first: every function here is monotone (the syntax has no
    subtraction), so reading the floored point only lowers the result,
    and value-dependent call points stop drifting off freshly registered
    entries.  Entries not read during a sweep are dropped, keeping chains
    like s = f(s) at O(1) live entries.

    Returns (best target value seen, sweeps run).  Stops after the point
    set is stable and no cell moved by at least `tol`, or at the sweep or
    work budget.  Deterministic.
    """
    if sys.order() > 1:
        raise EqTypeError("iterate_lower_bound handles order-(<= 1) systems only")
    tables: dict[str, dict[tuple, float]] = {f: {} for f in sys.equations}
    pinned: dict[str, set[tuple]] = {f: set() for f in sys.equations}
    if seeds:
        for f, pts in seeds.items():
            for pt in pts:
                qpt = quantize_point(pt, grid_bits)
                tables[f][qpt] = 0.0
                pinned[f].add(qpt)
    accessed: dict[str, set[tuple]] = {f: set() for f in sys.equations}
    flat_slots = {
        f: [len(s.names) for s in eq.slots] for f, eq in sys.equations.items()
    }
    work = 0

    def lookup(name: str, args: tuple) -> float:
        args = quantize_point(args, grid_bits)
        accessed[name].add(args)
        tab = tables[name]
        got = tab.get(args)
        if got is not None:
            return got
        if sum(len(t) for t in tables.values()) < point_budget:
            tab[args] = 0.0
        return 0.0

    def ev(e: EqExpr, env: dict[str, float]) -> float:
        nonlocal work
        work += 1
        if isinstance(e, Const):
            return float(e.value)
        if isinstance(e, EVar):
            return env[e.name]
        if isinstance(e, FunRef):
            if flat_slots[e.name]:
                raise EqTypeError(f"unapplied function {e.name} in order-1 system")
            return lookup(e.name, ())
        if isinstance(e, Add):
            return ext_add(ev(e.a, env), ev(e.b, env))
        if isinstance(e, Mul):
            a = ev(e.a, env)
            if a == 0:
                return a
            b = ev(e.b, env)
            return 0.0 if b == 0 else a * b
        if isinstance(e, Apply):
            fun, slot_args = e, []
            while isinstance(fun, Apply):
                slot_args.append(fun.arg)
                fun = fun.fun
            slot_args.reverse()
            assert isinstance(fun, FunRef)
            args: list[float] = []
            for a in slot_args:
                if isinstance(a, TupleOf):
                    args.extend(ev(i, env) for i in a.items)
                else:
                    args.append(ev(a, env))
            return lookup(fun.name, tuple(args))
        raise EqTypeError(f"unsupported node in order-1 iteration: {e!r}")

    best = 0.0
    sweeps = 0
    while sweeps < max_sweeps and work < work_budget:
        sweeps += 1
        for s in accessed.values():
            s.clear()
        before = sum(len(t) for t in tables.values())
        moved = False
        for name, eq in sys.equations.items():
            tab = tables[name]
            names = [n for slot in eq.slots for n in slot.names]
            for point in list(tab.keys()):
                env = dict(zip(names, point))
                new = ev(eq.body, env)
                old = tab[point]
                if new != old and not (abs(new - old) <= tol):
                    moved = True
                tab[point] = new
        tval = ev(sys.target, {})
        if tval > best:
            best = tval
        grew = sum(len(t) for t in tables.values()) > before
        for name, tab in tables.items():
            live = accessed[name] | pinned[name]
            if len(live) < len(tab):
                tables[name] = {k: v for k, v in tab.items() if k in live}
        if sweeps >= min_sweeps and not moved and not grew:
            break
    if _collect is not None:
        for name, tab in tables.items():
            _collect[name] = dict(tab)
    return best, sweeps


def iterate_lower_tables(
    sys: EqSystem,
    seeds: dict[str, Iterable[tuple]],
    **kw,
) -> dict[str, dict[tuple, float]]:
    """Chaotic-iteration lower-bound tables at the seeded points (plus any
    points the iteration reaches).  Every entry is a certified lower bound
    of the least solution at that point."""
    out: dict[str, dict[tuple, float]] = {}
    iterate_lower_bound(sys, seeds=seeds, _collect=out, **kw)
    return out
