"""Command-line driver.

Subcommands: check, translate, lower, upper, bench, rmc2phors, phors2rmc,
gen-diophantine, list-gallery.  Inputs are files or gallery names (gallery
names may carry parameters, e.g. `treeeven(0.49)`).

Exit codes: 0 success, 1 diagnostics or failed expectations, 2 usage,
3 resource budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction

from . import bench as bench_mod
from . import gallery
from .equations import (
    Apply,
    Const,
    EqSystem,
    FunRef,
    TupleOf,
    kleene_lower_bound,
)
from .eqio import equations_to_text, parse_equations
from .parsing import grammar_to_text, parse_grammar
from .rmc import ReachQuery, parse_rmc, phors_to_rmc, rmc_to_phors, rmc_to_text
from .semantics import OracleBudgetError, partial_prob
from .syntax import Grammar, PhorsError, validate
from .transform import ensure_end_free, normalize_choices
from .translate import simplify as simplify_sys
from .translate import to_order_n, to_order_n_minus_1
from .upper import SolverConfig, solve_upper


def _load_grammar(target: str) -> Grammar:
    if os.path.exists(target):
        with open(target) as fh:
            return normalize_choices(parse_grammar(fh.read()))
    return gallery.load_grammar(target)


def _load_system(target: str) -> EqSystem:
    if os.path.exists(target):
        with open(target) as fh:
            return parse_equations(fh.read())
    return gallery.load_fixture(target).system()


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_check(args) -> int:
    with open(args.file) as fh:
        g = parse_grammar(fh.read())
    diags = validate(g)
    if diags:
        for d in diags:
            print(f"error: {d}")
        return 1
    norm = normalize_choices(g)
    print(f"ok: {len(g.rules)} rules, order {g.order}, start {g.start}")
    if len(norm.rules) != len(g.rules):
        print(f"note: {len(norm.rules) - len(g.rules)} auxiliary rule(s) after choice normalization")
    return 0


def cmd_translate(args) -> int:
    g = _load_grammar(args.target)
    if args.mode == "order-n":
        sys_ = to_order_n(g)
    else:
        sys_ = to_order_n_minus_1(ensure_end_free(g))
    if args.simplify:
        sys_ = simplify_sys(sys_)
    _emit(equations_to_text(sys_), args.output)
    return 0


def cmd_lower(args) -> int:
    if args.oracle:
        g = _load_grammar(args.target)
        p = partial_prob(g, args.depth)
        print(f"Prob(G,{args.depth}) = {p} = {float(p):.12g}")
        return 0
    sys_ = _load_system(args.target)
    value = kleene_lower_bound(sys_, args.iters)
    if args.json:
        print(json.dumps({"target": args.target, "iters": args.iters, "lower": float(value)}))
    else:
        print(bench_mod.fmt_lower(float(value)))
    return 0


def _override_target(sys_: EqSystem, spec: str) -> None:
    point = [Fraction(v.strip()) for v in spec.split(",")]
    fun, slot_args = sys_.target, []
    while isinstance(fun, Apply):
        slot_args.append(fun.arg)
        fun = fun.fun
    if not isinstance(fun, FunRef):
        raise PhorsError("--target needs a system whose target is a direct query f(c..)")
    eq = sys_.equations[fun.name]
    flat = sys_.flat_params(fun.name)
    if len(point) != len(flat):
        raise PhorsError(f"--target needs {len(flat)} coordinates for {fun.name}")
    out = FunRef(fun.name)
    i = 0
    for slot in eq.slots:
        k = len(slot.names)
        chunk = [Const(v) for v in point[i : i + k]]
        out = Apply(out, chunk[0] if k == 1 else TupleOf(tuple(chunk)))
        i += k
    sys_.target = out


def cmd_upper(args) -> int:
    sys_ = _load_system(args.target)
    if args.query:
        _override_target(sys_, args.query)
    cfg = SolverConfig(
        dom=args.dom,
        codom=args.codom,
        cap=Fraction(args.cap),
        mode=args.interp,
        lb_iters=args.lb_iters,
        group_trick=not args.no_group_trick,
        gauss_seidel=args.gauss_seidel,
    )
    res = solve_upper(sys_, cfg)
    record = {
        "target": args.target,
        "upper": min(res.value, 1.0),
        "raw": res.value,
        "config": {
            "dom": cfg.dom,
            "codom": cfg.codom,
            "cap": str(cfg.cap),
            "interp": cfg.mode,
            "group_trick": cfg.group_trick,
            "gauss_seidel": cfg.gauss_seidel,
        },
        "sweeps": res.sweeps,
        "time": round(res.wall_time, 4),
    }
    if args.json:
        print(json.dumps(record))
    else:
        print(bench_mod.fmt_upper(min(res.value, 1.0)))
        if args.dump_tables:
            for fname in sys_.equations:
                print(f"{fname}:")
                for pt, v in res.table_points(fname):
                    coords = ", ".join(f"{c:g}" for c in pt)
                    print(f"  ({coords}) -> {v:g}")
    return 0


def cmd_bench(args) -> int:
    rows = bench_mod.run_bench(args.fixtures or None, json_path=args.json)
    print(bench_mod.render_rows(rows))
    return 1 if any(r.failures for r in rows) else 0


def cmd_rmc2phors(args) -> int:
    with open(args.file) as fh:
        rmc, query = parse_rmc(fh.read())
    if args.query:
        comp, vertex, exit_ = (s.strip() for s in args.query.split(","))
        query = ReachQuery(comp, vertex, exit_)
    if query is None:
        print("error: no %query in file and no --target given", file=sys.stderr)
        return 1
    g = rmc_to_phors(rmc, query)
    _emit(grammar_to_text(g), args.output)
    return 0


def cmd_phors2rmc(args) -> int:
    g = _load_grammar(args.file)
    rmc, query = phors_to_rmc(g)
    _emit(rmc_to_text(rmc, query), args.output)
    return 0


def cmd_gen_diophantine(args) -> int:
    P = gallery.parse_polynomial(args.poly_p)
    Q = gallery.parse_polynomial(args.poly_q, k=P.k)
    if Q.k > P.k:
        P = gallery.parse_polynomial(args.poly_p, k=Q.k)
    g = gallery.gen_diophantine_phors(P, Q, args.order)
    _emit(grammar_to_text(g), args.output)
    return 0


def cmd_list_gallery(args) -> int:
    print("grammars:")
    for name in gallery.grammar_names():
        e = gallery.grammar_entry(name)
        exact = "?" if e.exact is None else f"{e.exact:.6g}"
        print(f"  {name:16s} Prob = {exact:10s} {e.note}")
    print("equation fixtures:")
    for name in gallery.fixture_names():
        fx = gallery.load_fixture(name)
        exact = "?" if fx.exact is None else f"{fx.exact:.6g}"
        print(f"  {name:16s} value = {exact:10s} {fx.note}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="phors",
        description="termination probabilities of probabilistic higher-order recursion schemes",
    )
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="parse, infer sorts, and validate a grammar file")
    c.add_argument("file")
    c.set_defaults(fn=cmd_check)

    c = sub.add_parser("translate", help="compile a grammar to fixpoint equations")
    c.add_argument("target", help="grammar file or gallery grammar name")
    c.add_argument("--mode", choices=["order-n", "order-n-1"], default="order-n-1")
    c.add_argument("--simplify", action="store_true")
    c.add_argument("-o", "--output")
    c.set_defaults(fn=cmd_translate)

    c = sub.add_parser("lower", help="certified lower bound (Kleene iteration or oracle)")
    c.add_argument("target", help="equation file/fixture, or grammar with --oracle")
    c.add_argument("--iters", type=int, default=1000)
    c.add_argument("--oracle", action="store_true", help="enumerate reduction paths of a grammar")
    c.add_argument("--depth", type=int, default=20, help="path length bound for --oracle")
    c.add_argument("--json", action="store_true")
    c.set_defaults(fn=cmd_lower)

    c = sub.add_parser("upper", help="sound upper bound by grid discretization")
    c.add_argument("target", help="equation file or fixture name")
    c.add_argument("--dom", type=int, default=16)
    c.add_argument("--codom", type=int, default=512)
    c.add_argument("--cap", default="2", help="lattice cap h (rational, >= 1)")
    c.add_argument("--interp", choices=["linear", "step"], default="linear")
    c.add_argument("--lb-iters", type=int, default=None)
    c.add_argument("--no-group-trick", action="store_true")
    c.add_argument("--gauss-seidel", action="store_true")
    c.add_argument("--target", dest="query", help="override query point, e.g. 0.3,0.3")
    c.add_argument("--dump-tables", action="store_true")
    c.add_argument("--json", action="store_true")
    c.set_defaults(fn=cmd_upper)

    c = sub.add_parser("bench", help="run the recorded benchmark rows")
    c.add_argument("--fixtures", nargs="*")
    c.add_argument("--json", help="write machine-readable rows to this file")
    c.set_defaults(fn=cmd_bench)

    c = sub.add_parser("rmc2phors", help="encode a recursive Markov chain as a grammar")
    c.add_argument("file")
    c.add_argument("--target", dest="query", help="component,vertex,exit (else %%query)")
    c.add_argument("-o", "--output")
    c.set_defaults(fn=cmd_rmc2phors)

    c = sub.add_parser("phors2rmc", help="encode an order-1 grammar as an RMC")
    c.add_argument("file", help="grammar file or gallery name")
    c.add_argument("-o", "--output")
    c.set_defaults(fn=cmd_phors2rmc)

    c = sub.add_parser("gen-diophantine", help="emit an undecidability gadget grammar")
    c.add_argument("--order", type=int, choices=[2, 3], required=True)
    c.add_argument("--poly-p", required=True, help='e.g. "x1^2 + 2*x1*x2 + 3"')
    c.add_argument("--poly-q", required=True)
    c.add_argument("-o", "--output")
    c.set_defaults(fn=cmd_gen_diophantine)

    c = sub.add_parser("list-gallery", help="list built-in grammars and fixtures")
    c.set_defaults(fn=cmd_list_gallery)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except OracleBudgetError as e:
        print(f"resource budget exceeded: {e}", file=sys.stderr)
        return 3
    except (PhorsError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
