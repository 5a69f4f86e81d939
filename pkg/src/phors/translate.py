"""Compilation of grammars to fixpoint equation systems.

Two routes:

* `to_order_n`: same-order characterization.  Te and Omega become the
  termination probabilities 1 and 0, the rule's choice becomes
  p * left + (1-p) * right, and everything else maps structurally.

* `to_order_n_minus_1`: the order-decreasing characterization.  The
  behaviour of an order-1 value of arity l is a tuple of probabilities
  (reach the caller's current target, reach the i-th ground argument,
  reach a target yet to be set); higher orders lift this pointwise.  A
  nonterminal F with ground-parameter postfix x1..xk compiles to
  components F.0 (current target) and F.i (reach xi); every bound
  non-ground variable y of arity m compiles to the name tuple
  y.0 .. y.(m+1).  The start symbol must be end-eliminated (o -> o) and
  the queried value is S.1.

`simplify` is an optional semantics-preserving cleanup pass: constant
folding, removal of arguments that are always 0 and of functions that
denote the constant-0 function, and dead-equation elimination.  Only
rewrites that keep every subexpression within [0, 1] on valid inputs are
applied (no distribution or factoring).
"""

from __future__ import annotations

from fractions import Fraction

from .equations import (
    Add,
    Apply,
    Const,
    EqExpr,
    EqSort,
    EqSystem,
    Equation,
    EVar,
    FunRef,
    FunSort,
    Mul,
    R,
    Slot,
    TupleOf,
    TupleSort,
    typecheck_eqs,
)
from .syntax import (
    App,
    Arrow,
    Div,
    End,
    Grammar,
    Ground,
    NonTerm,
    PhorsError,
    Sort,
    Term,
    Var,
    arity_of,
    ground_split,
    is_normalized,
    params_of,
    typecheck_term,
    validate,
)
from .transform import ensure_end_free


class TranslateError(PhorsError):
    pass


def _check(g: Grammar) -> None:
    diags = validate(g)
    if diags:
        raise TranslateError("grammar does not validate: " + "; ".join(diags))
    if not is_normalized(g):
        raise TranslateError("grammar has nested choices; run normalize_choices first")


# ---------------------------------------------------------------------------
# Order-n translation


def _sharp(s: Sort) -> EqSort:
    if isinstance(s, Ground):
        return R
    assert isinstance(s, Arrow)
    return FunSort(_sharp(s.param), _sharp(s.result))


def to_order_n(g: Grammar) -> EqSystem:
    """Same-order fixpoint characterization; target is S (or S applied to
    the end probability 1 when the start sort is o -> o)."""
    _check(g)

    def tr(t: Term) -> EqExpr:
        if isinstance(t, End):
            return Const(Fraction(1))
        if isinstance(t, Div):
            return Const(Fraction(0))
        if isinstance(t, Var):
            return EVar(t.name)
        if isinstance(t, NonTerm):
            return FunRef(t.name)
        if isinstance(t, App):
            return Apply(tr(t.fun), tr(t.arg))
        raise TranslateError(f"unexpected term {t!r}")

    equations: dict[str, Equation] = {}
    for name, rule in g.rules.items():
        sorts = params_of(g.env[name])
        slots = tuple(
            Slot((p,), (_sharp(s),)) for p, s in zip(rule.params, sorts)
        )
        body = Add(
            Mul(Const(rule.prob), tr(rule.left)),
            Mul(Const(1 - rule.prob), tr(rule.right)),
        )
        equations[name] = Equation(name, slots, body)
    target: EqExpr = FunRef(g.start)
    if not g.start_ground():
        target = Apply(target, Const(Fraction(1)))
    sys = EqSystem(equations=equations, target=target)
    typecheck_eqs(sys)
    return sys


# ---------------------------------------------------------------------------
# Order-(n-1) translation


def _split_sort(s: Sort) -> tuple[list[Sort], int]:
    """(non-ground parameter prefix, ground-arity l) of a source sort."""
    prefix, suffix = ground_split(params_of(s))
    return prefix, len(suffix)


def _comp_sort(s: Sort, current_target: bool) -> EqSort:
    """Sort of one tuple component of the translated value of sort `s`:
    a function over the translated prefix parameters returning r.  The
    current-target component takes full tuples, the reach-argument
    components take the tuples without their first element."""
    prefix, _ = _split_sort(s)
    out: EqSort = R
    for p in reversed(prefix):
        out = FunSort(_slot_sort(p, current_target), out)
    return out


def _tuple_sorts(s: Sort, full: bool) -> tuple[EqSort, ...]:
    """Component sorts of the translated tuple for source sort `s`:
    (current-target, reach-arg x l, fresh-target) when full, else
    (reach-arg x l, fresh-target)."""
    _, l = _split_sort(s)
    reach = _comp_sort(s, current_target=False)
    tgt = _comp_sort(s, current_target=True)
    if full:
        return (tgt, *([reach] * l), tgt)
    return (*([reach] * l), tgt)


def _slot_sort(s: Sort, full: bool) -> EqSort:
    items = _tuple_sorts(s, full)
    return items[0] if len(items) == 1 else TupleSort(items)


def _pack(items: list[EqExpr]) -> EqExpr:
    return items[0] if len(items) == 1 else TupleOf(tuple(items))


def to_order_n_minus_1(g: Grammar) -> EqSystem:
    """Order-decreasing fixpoint characterization; target is S.1.

    Requires an end-eliminated grammar (o -> o start, no Te in bodies);
    apply `transform.ensure_end_free` first if needed.  Output function
    groups collect the components of each source nonterminal; when the
    output is an order-(<= 1) system, the reach-argument components are
    padded with a leading dummy argument per tuple so that all members of
    a function group share one signature.
    """
    _check(g)
    if g.start_ground():
        raise TranslateError("order-(n-1) translation needs an end-eliminated grammar")
    for rule in g.rules.values():
        for body in (rule.left, rule.right):
            if _mentions_end(body):
                raise TranslateError(f"{rule.name}: Te must be eliminated first")

    equations: dict[str, Equation] = {}
    fun_groups: list[tuple[str, ...]] = []

    for name, rule in g.rules.items():
        sorts = params_of(g.env[name])
        split = len(sorts)
        while split > 0 and isinstance(sorts[split - 1], Ground):
            split -= 1
        prefix = list(zip(rule.params[:split], sorts[:split]))
        ground_vars = list(rule.params[split:])
        k = len(ground_vars)

        env = dict(g.env)
        env.update(zip(rule.params, sorts))

        def tr(t: Term) -> list[EqExpr]:
            sort = typecheck_term(env, t)
            if isinstance(t, Div):
                return [Const(Fraction(0))] * (k + 2)
            if isinstance(t, End):
                raise TranslateError("Te in a supposedly end-free body")
            if isinstance(t, Var) and t.name in ground_vars:
                i = ground_vars.index(t.name) + 1
                out: list[EqExpr] = [Const(Fraction(0))] * (k + 2)
                out[i] = Const(Fraction(1))
                return out
            if isinstance(t, Var):
                l = arity_of(sort)
                comps = [EVar(f"{t.name}.{j}") for j in range(l + 2)]
                return comps[: l + 1] + [comps[l + 1]] * (k + 1)
            if isinstance(t, NonTerm):
                l = arity_of(sort)
                comps = [FunRef(f"{t.name}.{j}") for j in range(l + 1)]
                return comps + [comps[0]] * (k + 1)
            if isinstance(t, App):
                arg_sort = typecheck_term(env, t.arg)
                fun_sort = typecheck_term(env, t.fun)
                l = arity_of(sort)
                ss = tr(t.fun)
                ts = tr(t.arg)
                if all(isinstance(p, Ground) for p in params_of(fun_sort)):
                    # the argument lands in the ground suffix: weave s1 * t
                    # through the components
                    out = [Add(ss[0], Mul(ss[1], ts[0]))]
                    out += ss[2 : l + 2]
                    for i in range(1, k + 2):
                        out.append(Add(ss[l + 1 + i], Mul(ss[1], ts[i])))
                    return out
                lp = arity_of(arg_sort)
                part = ts[1 : lp + 1] + [ts[-1]]
                out = [Apply(ss[0], _pack([ts[0]] + part))]
                for i in range(1, l + 1):
                    out.append(Apply(ss[i], _pack(part)))
                for i in range(1, k + 2):
                    out.append(Apply(ss[l + i], _pack([ts[lp + i]] + part)))
                return out
            raise TranslateError(f"unexpected term {t!r}")

        trL = tr(rule.left)
        trR = tr(rule.right)
        p = rule.prob

        def mk_body(i: int) -> EqExpr:
            return Add(Mul(Const(p), trL[i]), Mul(Const(1 - p), trR[i]))

        full_slots = tuple(
            Slot(
                tuple(f"{y}.{j}" for j in range(arity_of(s) + 2)),
                _tuple_sorts(s, full=True),
            )
            for y, s in prefix
        )
        part_slots = tuple(
            Slot(
                tuple(f"{y}.{j}" for j in range(1, arity_of(s) + 2)),
                _tuple_sorts(s, full=False),
            )
            for y, s in prefix
        )
        group = [f"{name}.0"]
        equations[f"{name}.0"] = Equation(f"{name}.0", full_slots, mk_body(0))
        for i in range(1, k + 1):
            group.append(f"{name}.{i}")
            equations[f"{name}.{i}"] = Equation(f"{name}.{i}", part_slots, mk_body(i))
        fun_groups.append(tuple(group))

    sys = EqSystem(
        equations=equations,
        target=FunRef(f"{g.start}.1"),
        fun_groups=tuple(fun_groups),
    )
    if sys.order() <= 1:
        _pad_groups(sys)
    typecheck_eqs(sys)
    return sys


def _mentions_end(t: Term) -> bool:
    if isinstance(t, End):
        return True
    if isinstance(t, App):
        return _mentions_end(t.fun) or _mentions_end(t.arg)
    return False


def _pad_groups(sys: EqSystem) -> None:
    """Give every reach-argument component a leading dummy argument per
    tuple so each function group shares one signature (needed by the
    upper solver's group constraint).  Call sites pass the constant 0."""
    padded: dict[str, tuple[int, ...]] = {}
    for grp in sys.fun_groups or ():
        head = sys.equations[grp[0]]
        for member in grp[1:]:
            eq = sys.equations[member]
            assert len(eq.slots) == len(head.slots)
            which = tuple(
                j
                for j, (hs, ms) in enumerate(zip(head.slots, eq.slots))
                if len(ms.names) == len(hs.names) - 1
            )
            if not which:
                continue
            slots = list(eq.slots)
            for j in which:
                s = slots[j]
                slots[j] = Slot((f"{s.names[0]}.d", *s.names), (R, *s.sorts))
            sys.equations[member] = Equation(member, tuple(slots), eq.body)
            padded[member] = which

    def fix(e: EqExpr) -> EqExpr:
        if isinstance(e, Apply):
            fun, slot_args = e, []
            while isinstance(fun, Apply):
                slot_args.append(fix(fun.arg))
                fun = fun.fun
            slot_args.reverse()
            if isinstance(fun, FunRef) and fun.name in padded:
                for j in padded[fun.name]:
                    a = slot_args[j]
                    items = a.items if isinstance(a, TupleOf) else (a,)
                    slot_args[j] = TupleOf((Const(Fraction(0)), *items))
            out: EqExpr = fun
            for a in slot_args:
                out = Apply(out, a)
            return out
        if isinstance(e, Add):
            return Add(fix(e.a), fix(e.b))
        if isinstance(e, Mul):
            return Mul(fix(e.a), fix(e.b))
        if isinstance(e, TupleOf):
            return TupleOf(tuple(fix(i) for i in e.items))
        return e

    if padded:
        for name, eq in sys.equations.items():
            sys.equations[name] = Equation(name, eq.slots, fix(eq.body))
        sys.target = fix(sys.target)


# ---------------------------------------------------------------------------
# Simplification


def fold_expr(e: EqExpr) -> EqExpr:
    """Constant folding and unit/zero laws; keeps the [0, 1] subexpression
    invariant (every rewrite preserves each remaining node's value)."""
    if isinstance(e, Add):
        a, b = fold_expr(e.a), fold_expr(e.b)
        if isinstance(a, Const) and a.value == 0:
            return b
        if isinstance(b, Const) and b.value == 0:
            return a
        if isinstance(a, Const) and isinstance(b, Const):
            return Const(a.value + b.value)
        return Add(a, b)
    if isinstance(e, Mul):
        a, b = fold_expr(e.a), fold_expr(e.b)
        for x, y in ((a, b), (b, a)):
            if isinstance(x, Const):
                if x.value == 0:
                    return Const(Fraction(0))
                if x.value == 1:
                    return y
        if isinstance(a, Const) and isinstance(b, Const):
            return Const(a.value * b.value)
        return Mul(a, b)
    if isinstance(e, Apply):
        return Apply(fold_expr(e.fun), fold_expr(e.arg))
    if isinstance(e, TupleOf):
        return TupleOf(tuple(fold_expr(i) for i in e.items))
    return e


def _flat_call_args(sys: EqSystem, e: EqExpr) -> tuple[str, list[EqExpr]] | None:
    """(fname, flat args) when `e` is a full application of a defined
    function, else None."""
    fun, slot_args = e, []
    while isinstance(fun, Apply):
        slot_args.append(fun.arg)
        fun = fun.fun
    slot_args.reverse()
    if not isinstance(fun, FunRef) or fun.name not in sys.equations:
        return None
    eq = sys.equations[fun.name]
    if len(slot_args) != len(eq.slots):
        return None
    flat: list[EqExpr] = []
    for slot, a in zip(eq.slots, slot_args):
        if len(slot.names) == 1:
            flat.append(a)
        elif isinstance(a, TupleOf) and len(a.items) == len(slot.names):
            flat.extend(a.items)
        else:
            return None
    return fun.name, flat


def simplify(sys: EqSystem) -> EqSystem:
    """Semantics-preserving cleanup of a translated system.

    Detects functions whose least solution is the constant-0 function and
    argument positions that are always instantiated with 0 (a greatest
    fixpoint over both assumptions, sound for least-solution semantics),
    rewrites them away, folds constants, and drops equations unreachable
    from the target.  Argument removal is applied group-consistently so
    function-group members keep one signature.
    """
    typecheck_eqs(sys)
    const0: set[str] = set(sys.equations)
    # functions referenced other than as the head of a full application
    # escape our view: no argument position of theirs may be assumed 0,
    # and their signatures must stay intact
    escaped: set[str] = set()

    def find_escapes(e: EqExpr) -> None:
        call = _flat_call_args(sys, e)
        if call is not None:
            for a in call[1]:
                find_escapes(a)
            return
        if isinstance(e, FunRef):
            if sys.equations[e.name].slots:
                escaped.add(e.name)
            return
        if isinstance(e, (Add, Mul)):
            find_escapes(e.a)
            find_escapes(e.b)
        elif isinstance(e, Apply):
            find_escapes(e.fun)
            find_escapes(e.arg)
        elif isinstance(e, TupleOf):
            for i in e.items:
                find_escapes(i)

    for eq in sys.equations.values():
        find_escapes(eq.body)
    find_escapes(sys.target)

    zero_args: dict[str, set[int]] = {
        f: set() if f in escaped else set(range(len(sys.flat_params(f))))
        for f in sys.equations
    }

    def assume_fold(e: EqExpr, fname: str | None) -> EqExpr:
        """Fold under the current const0/zero_args assumptions."""
        call = _flat_call_args(sys, e)
        if call is not None:
            g, flat = call
            if g in const0:
                return Const(Fraction(0))
            folded = [assume_fold(a, fname) for a in flat]
            return _rebuild_call(sys, g, folded)
        if isinstance(e, EVar) and fname is not None:
            flat = sys.flat_params(fname)
            if e.name in flat and flat.index(e.name) in zero_args[fname]:
                return Const(Fraction(0))
            return e
        if isinstance(e, Add):
            return fold_expr(Add(assume_fold(e.a, fname), assume_fold(e.b, fname)))
        if isinstance(e, Mul):
            return fold_expr(Mul(assume_fold(e.a, fname), assume_fold(e.b, fname)))
        if isinstance(e, Apply):
            return Apply(assume_fold(e.fun, fname), assume_fold(e.arg, fname))
        if isinstance(e, TupleOf):
            return TupleOf(tuple(assume_fold(i, fname) for i in e.items))
        return e

    def visit_calls(e: EqExpr, fname: str | None, out: list) -> None:
        call = _flat_call_args(sys, e)
        if call is not None:
            g, flat = call
            out.append((g, flat, fname))
            for a in flat:
                visit_calls(a, fname, out)
            return
        if isinstance(e, (Add, Mul)):
            visit_calls(e.a, fname, out)
            visit_calls(e.b, fname, out)
        elif isinstance(e, Apply):
            visit_calls(e.fun, fname, out)
            visit_calls(e.arg, fname, out)
        elif isinstance(e, TupleOf):
            for i in e.items:
                visit_calls(i, fname, out)
        elif isinstance(e, FunRef) and not sys.equations[e.name].slots:
            out.append((e.name, [], fname))

    changed = True
    while changed:
        changed = False
        for f, eq in sys.equations.items():
            if f in const0:
                folded = assume_fold(eq.body, f)
                if not (isinstance(folded, Const) and folded.value == 0):
                    const0.discard(f)
                    changed = True
        calls: list = []
        for f, eq in sys.equations.items():
            visit_calls(eq.body, f, calls)
        visit_calls(sys.target, None, calls)
        for g, flat, src in calls:
            for pos, a in enumerate(flat):
                if pos in zero_args[g]:
                    folded = assume_fold(a, src)
                    if not (isinstance(folded, Const) and folded.value == 0):
                        zero_args[g].discard(pos)
                        changed = True

    # group-consistent argument drops (members share flat positions)
    drop: dict[str, set[int]] = {}
    for f in sys.equations:
        if f in escaped:
            drop[f] = set()
            continue
        members = [m for m in sys.fgroup_of(f) if m in sys.equations]
        if any(m in escaped for m in members):
            drop[f] = set()
            continue
        grp = [m for m in members if m not in const0]
        if not grp:
            drop[f] = set(zero_args[f])
            continue
        arities = {len(sys.flat_params(m)) for m in grp}
        if len(arities) == 1:
            common = set.intersection(*(zero_args[m] for m in grp))
        else:  # unpadded members (higher-order output); drop per function
            common = zero_args[f]
        drop[f] = set(common)

    def rewrite(e: EqExpr, fname: str | None) -> EqExpr:
        call = _flat_call_args(sys, e)
        if call is not None:
            g, flat = call
            if g in const0:
                return Const(Fraction(0))
            kept = [rewrite(a, fname) for p, a in enumerate(flat) if p not in drop[g]]
            return _rebuild_call_slots(new_slots[g], g, kept)
        if isinstance(e, EVar) and fname is not None:
            flatp = sys.flat_params(fname)
            if e.name in flatp and flatp.index(e.name) in drop[fname]:
                return Const(Fraction(0))
            return e
        if isinstance(e, FunRef) and e.name in const0 and not sys.equations[e.name].slots:
            return Const(Fraction(0))
        if isinstance(e, Add):
            return Add(rewrite(e.a, fname), rewrite(e.b, fname))
        if isinstance(e, Mul):
            return Mul(rewrite(e.a, fname), rewrite(e.b, fname))
        if isinstance(e, Apply):
            return Apply(rewrite(e.fun, fname), rewrite(e.arg, fname))
        if isinstance(e, TupleOf):
            return TupleOf(tuple(rewrite(i, fname) for i in e.items))
        return e

    # new slot layout after drops
    new_slots: dict[str, tuple[Slot, ...]] = {}
    for f, eq in sys.equations.items():
        slots: list[Slot] = []
        pos = 0
        for slot in eq.slots:
            names, sorts = [], []
            for n, s in zip(slot.names, slot.sorts):
                if pos not in drop[f]:
                    names.append(n)
                    sorts.append(s)
                pos += 1
            if names:
                slots.append(Slot(tuple(names), tuple(sorts)))
        new_slots[f] = tuple(slots)

    equations: dict[str, Equation] = {}
    for f, eq in sys.equations.items():
        equations[f] = Equation(f, new_slots[f], fold_expr(rewrite(eq.body, f)))
    target = fold_expr(rewrite(sys.target, None))

    # drop equations unreachable from the target
    reachable: set[str] = set()
    frontier = [target]
    while frontier:
        e = frontier.pop()
        for sub in _refs(e):
            if sub in equations and sub not in reachable:
                reachable.add(sub)
                frontier.append(equations[sub].body)
    equations = {f: eq for f, eq in equations.items() if f in reachable}

    # remap groups
    arg_groups = None
    if sys.arg_groups is not None:
        arg_groups = {}
        for f, groups in sys.arg_groups.items():
            if f not in equations:
                continue
            old_flat = sys.flat_params(f)
            keep = [i for i in range(len(old_flat)) if i not in drop[f]]
            remap = {old: new for new, old in enumerate(keep)}
            out = []
            for grp in groups:
                g2 = tuple(remap[i] for i in grp if i in remap)
                if g2:
                    out.append(g2)
            arg_groups[f] = tuple(out)
    fun_groups = None
    if sys.fun_groups is not None:
        kept_groups = []
        for grp in sys.fun_groups:
            g2 = tuple(m for m in grp if m in equations)
            if g2:
                kept_groups.append(g2)
        fun_groups = tuple(kept_groups) or None

    out_sys = EqSystem(
        equations=equations, target=target, arg_groups=arg_groups, fun_groups=fun_groups
    )
    typecheck_eqs(out_sys)
    return out_sys


def _refs(e: EqExpr) -> set[str]:
    out: set[str] = set()
    stack = [e]
    while stack:
        cur = stack.pop()
        if isinstance(cur, FunRef):
            out.add(cur.name)
        elif isinstance(cur, (Add, Mul)):
            stack += [cur.a, cur.b]
        elif isinstance(cur, Apply):
            stack += [cur.fun, cur.arg]
        elif isinstance(cur, TupleOf):
            stack += list(cur.items)
    return out


def _rebuild_call(sys: EqSystem, fname: str, flat: list[EqExpr]) -> EqExpr:
    return _rebuild_call_slots(sys.equations[fname].slots, fname, flat)


def _rebuild_call_slots(slots: tuple[Slot, ...], fname: str, flat: list[EqExpr]) -> EqExpr:
    out: EqExpr = FunRef(fname)
    i = 0
    for slot in slots:
        k = len(slot.names)
        chunk = flat[i : i + k]
        out = Apply(out, chunk[0] if k == 1 else TupleOf(tuple(chunk)))
        i += k
    return out


def translate(g: Grammar, mode: str = "order-n-1", simplify_out: bool = False) -> EqSystem:
    """End-to-end translation; normalizes and end-eliminates as needed."""
    from .transform import normalize_choices

    g = normalize_choices(g)
    if mode == "order-n":
        sys = to_order_n(g)
    elif mode == "order-n-1":
        sys = to_order_n_minus_1(ensure_end_free(g))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return simplify(sys) if simplify_out else sys
