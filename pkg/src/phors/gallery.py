"""Built-in corpus: the worked grammars, the equation-system fixtures the
benchmark harness runs, and the Diophantine gadget generator.

Grammar sources are kept in the text format (also exercising the parser);
equation fixtures use hand-applied simplifications of the translator
output where wholesale translation would obscure them (double, treegen,
determinize), with value-level agreement against the automated pipeline
asserted in the test suite.  Names accept parenthesized parameters:
g1(1/3), treeeven(0.49), ex5.4(0.3,0.3).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

from .equations import EqSystem
from .eqio import parse_equations
from .parsing import parse_grammar
from .syntax import Grammar, PhorsError
from .transform import normalize_choices


class GalleryError(PhorsError):
    pass


GOLDEN = (math.sqrt(5) - 1) / 2
INV_SQRT2 = 1 / math.sqrt(2)


@dataclass(frozen=True)
class GrammarEntry:
    name: str
    source: str
    exact: Optional[float]  # known termination probability, if any
    note: str


def _g1(p: Fraction = Fraction(1, 4)) -> str:
    return f"""// binary random walk started at 1; terminates with min(p/(1-p), 1)
%start S
S = F Te.
F x = x <{p}> F (F x).
"""


_G2 = """// order-2 doubling walk; Prob = sum over i of 2^-(2^i + i + 1)
%start S
S = F H.
H x = x <1/2> Omega.
F g = g Te <1/2> F (D g).
D g x = g (g x).
"""

_G3 = """// random list-of-lists generator, almost surely terminating
%start S
S = Listgen (Listgen Boolgen) Te.
Boolgen k = k.
Listgen f k = k <1/2> f (Listgen f k).
"""

_G4 = """// random ternary tree generator; Prob = (sqrt(5)-1)/2
%start S
S = Treegen Boolgen Te.
Boolgen k = k.
Treegen f k = k <1/2> f (Treegen f (Treegen f (Treegen f k))).
"""

_G5 = """// tree generator with success probability rising per level (AST)
%start S
S = Treegen H Boolgen Te.
Boolgen k = k.
H x y = x <1/2> y.
G p x y = x <1/2> p x y.
Treegen p f k = p k (f (Treegen (G p) f (Treegen (G p) f (Treegen (G p) f k)))).
"""

_G6 = """// probability that a random list has even length: 2/3
%start S
S = ListgenE Boolgen Te.
Boolgen k = k.
ListgenE f k = k <1/2> f (ListgenO f k).
ListgenO f k = Omega <1/2> f (ListgenE f k).
"""

_G6B = """// probability that a random boolean list holds evenly many trues: 3/4
%start S
S = ListgenE Boolgen Te.
Boolgen k1 k2 = k1 <1/2> k2.
ListgenE f k = k <1/2> f (ListgenO f k) (ListgenE f k).
ListgenO f k = Omega <1/2> f (ListgenE f k) (ListgenO f k).
"""

_G7 = """// Las-Vegas determinizer tried against every dyadic success rate (AST)
%start S
S = Det One <1/2> Forall Zero One.
One y z = y.
Zero y z = z.
Avg p q y z = p y z <1/2> q y z.
Det g = g Te (Det g).
Forall p q = Det (Avg p q) <1/2> (Forall p (Avg p q) <1/2> Forall (Avg p q) q).
"""

_ORDER3 = """// order-3: the reachability target hides inside a closure; Prob(S Te) = 1/2
%start S
S x = F (C x).
F g = g H.
C x f = f x.
H x = x <1/2> Omega.
"""


def _treeeven(p: Fraction = Fraction(1, 2)) -> str:
    return f"""// random binary tree holds evenly many leaves; exact 1 - 1/sqrt(2) at p = 1/2
%start S
S z = F z Omega.
F x1 x2 = x2 <{p}> F (F x1 x2) (F x2 x1).
"""


_DOUBLE = """// order-2 walk whose step function doubles both continuations
%start S
S = F H.
H x y = x <1/2> y.
F g = g Te (F (D g)).
D g x y = g (g x y) y.
"""

_GRAMMARS: dict[str, Callable[..., GrammarEntry]] = {}


def _register(name: str, builder: Callable[..., GrammarEntry]) -> None:
    _GRAMMARS[name] = builder


_register(
    "g1",
    lambda p=Fraction(1, 4): GrammarEntry(
        f"g1({p})",
        _g1(Fraction(p)),
        min(float(Fraction(p) / (1 - Fraction(p))), 1.0) if p != 1 else 1.0,
        "random walk; closed form p/(1-p) below 1/2",
    ),
)
_register("g2", lambda: GrammarEntry("g2", _G2, 0.3205571174657962, "doubling walk"))
_register("g3-listgen", lambda: GrammarEntry("g3-listgen", _G3, 1.0, "list of lists"))
_register("g4-treegen", lambda: GrammarEntry("g4-treegen", _G4, GOLDEN, "ternary trees"))
_register("g5-treegenp", lambda: GrammarEntry("g5-treegenp", _G5, 1.0, "rising success"))
_register("g6-listeven", lambda: GrammarEntry("g6-listeven", _G6, 2 / 3, "even length"))
_register("g6-listeven2", lambda: GrammarEntry("g6-listeven2", _G6B, 3 / 4, "even trues"))
_register("g7-determinize", lambda: GrammarEntry("g7-determinize", _G7, 1.0, "determinizer"))
_register("order3", lambda: GrammarEntry("order3", _ORDER3, 0.5, "order-3 closure"))
_register(
    "treeeven",
    lambda p=Fraction(1, 2): GrammarEntry(
        f"treeeven({p})",
        _treeeven(Fraction(p)),
        1 - INV_SQRT2 if Fraction(p) == Fraction(1, 2) else None,
        "even number of leaves",
    ),
)
_register("double", lambda: GrammarEntry("double", _DOUBLE, 0.6498214087347555, "double walk"))
# exact for double: 1 - prod_i (1 - 2^-2^i); for g2: sum_i 2^-(2^i+i+1)


def grammar_names() -> list[str]:
    return sorted(_GRAMMARS)


def builtin_grammars() -> dict[str, Grammar]:
    """Every built-in grammar at its default parameters, normalized."""
    return {name: load_grammar(name) for name in grammar_names()}


def grammar_entry(name: str) -> GrammarEntry:
    base, args = _split_args(name)
    if base not in _GRAMMARS:
        raise GalleryError(f"unknown grammar {name!r}; try list-gallery")
    try:
        return _GRAMMARS[base](*args)
    except TypeError:
        raise GalleryError(f"{base} does not take {len(args)} parameter(s)") from None


def load_grammar(name: str) -> Grammar:
    return normalize_choices(parse_grammar(grammar_entry(name).source))


def _split_args(name: str) -> tuple[str, list[Fraction]]:
    m = re.fullmatch(r"([^()]+)\(([^()]*)\)", name.strip())
    if not m:
        return name.strip(), []
    args = [Fraction(a.strip()) for a in m.group(2).split(",") if a.strip()]
    return m.group(1).strip(), args


# ---------------------------------------------------------------------------
# Equation-system fixtures (the benchmark corpus)


@dataclass(frozen=True)
class EqFixture:
    name: str
    text: str
    exact: Optional[float]
    note: str = ""

    def system(self) -> EqSystem:
        return parse_equations(self.text)


def _f(x: float) -> str:
    return repr(x)


def _treeeven_sys(p: Fraction = Fraction(1, 2)) -> EqFixture:
    p = Fraction(p)
    q = 1 - p
    # distributed products keep every subexpression within [0,1]
    text = f"""f1() = {q}*f1()*f1() + {q}*f2()*f2();
f2() = {p} + {q}*f1()*f2() + {q}*f2()*f1();
%group f1 f2;
%target f1();
"""
    if p == Fraction(1, 2):
        exact: Optional[float] = 1 - INV_SQRT2
    else:
        # least solution of f1 = q(f1^2+f2^2), f2 = p + 2q f1 f2
        exact = _treeeven_exact(float(p))
    return EqFixture(f"treeeven({p})", text, exact, "group constraint f1 + f2 <= 1")


def _treeeven_exact(p: float) -> float:
    f1, f2 = 0.0, 0.0
    for _ in range(200000):
        f1, f2 = (1 - p) * (f1 * f1 + f2 * f2), p + (1 - p) * 2 * f1 * f2
    return f1


def _ex54_sys(x: Fraction = Fraction(1, 2), y: Fraction = Fraction(1, 2)) -> EqFixture:
    if x == 0 and y == 0:
        exact: Optional[float] = 0.0
    elif float(x) * float(y) <= 0.25:
        xf, yf = float(x), float(y)
        exact = xf if yf == 0 else (1 - math.sqrt(1 - 4 * xf * yf)) / (2 * yf)
    else:
        exact = None
    text = f"""f(x, y) = x + y*f(x, y)*f(x, y);
%target f({x}, {y});
"""
    return EqFixture(f"ex5.4({x},{y})", text, exact, "binary; one argument group")


def _discont_sys(p: Fraction = Fraction(0), q: Fraction = Fraction(1)) -> EqFixture:
    exact = 0.0 if p == 0 else min(float(p) / (1 - float(q)) if q != 1 else 1.0, 1.0)
    text = f"""s() = f({p}, {q});
f(x0, x1) = x0 + x1*f(x0, x1);
%target s();
"""
    return EqFixture(f"discont({p},{q})", text, exact, "discontinuous at (0,1)")


_FIXTURES: dict[str, Callable[..., EqFixture]] = {
    "ex2.3-1": lambda: EqFixture(
        "ex2.3-1",
        "s() = f(1);\nf(x) = 0.25*x + 0.75*f(f(x));\n%target s();",
        1 / 3,
        "same-order translation of g1(1/4)",
    ),
    "ex2.3-0": lambda: EqFixture(
        "ex2.3-0",
        "f0() = 0.75*(f0() + f1()*f0());\nf1() = 0.25 + 0.75*f1()*f1();\n"
        "s() = f0() + f1();\n%group f0 f1;\n%target s();",
        1 / 3,
        "order-decreased translation of g1(1/4)",
    ),
    "ex2.3-v1": lambda: EqFixture(
        "ex2.3-v1",
        "s() = f(1);\nf(x) = 0.25*x + 0.75*f(f(x*x));\n%target s();",
        None,
        "variant: inner argument squared",
    ),
    "ex2.3-v2": lambda: EqFixture(
        "ex2.3-v2",
        "s() = f(1);\nf(x) = 0.25*x + 0.75*f(f(f(x*x)));\n%target s();",
        None,
        "variant: triple composition",
    ),
    "ex2.3-v3": lambda: EqFixture(
        "ex2.3-v3",
        "s() = f(1);\nf(x) = 0.25*x + 0.75*f(x)*f(x);\n%target s();",
        1 / 3,
        "variant: squared value; s = f(1) makes the target 1/3 exactly",
    ),
    "ex2.4": lambda: EqFixture(
        "ex2.4",
        "s() = f(0.5);\nf(g) = 0.5*g + 0.5*f(g*g);\n%target s();",
        0.3205571174657962,
        "g2 after simplification; exact sum_i 2^-(2^i+i+1)",
    ),
    "double": lambda: EqFixture(
        "double",
        "s() = f(0.5, 0.5);\nf(x | y) = x + y*f(x*x, x*y + y);\n%target s();",
        0.6498214087347555,
        "per-argument groups; exact 1 - prod_i (1 - 2^-2^i)",
    ),
    "listgen": lambda: EqFixture(
        "listgen",
        "s() = a(1);\nb(k) = k;\nl2(k) = 0.5*k + 0.5*b(l2(k));\n"
        "a(k) = 0.5*k + 0.5*l2(a(k));\n%target s();",
        1.0,
        "order-1 specialization of the list-of-lists generator",
    ),
    "treegen": lambda: EqFixture(
        "treegen",
        "s() = f(1);\nf(x) = 0.5 + 0.5*x*f(x)*f(x)*f(x);\n%target s();",
        GOLDEN,
        "g4 reach-argument component",
    ),
    "treegenp": lambda: EqFixture(
        "treegenp",
        "s() = f(0.5, 0.5);\ng1(p1, p2) = 0.5 + 0.5*p1;\ng2(p1, p2) = 0.5*p2;\n"
        "f(p1, p2) = p1 + p2*f(g1(p1,p2), g2(p1,p2))*f(g1(p1,p2), g2(p1,p2))"
        "*f(g1(p1,p2), g2(p1,p2));\n%group g1 g2;\n%target s();",
        1.0,
        "probability pair walks toward certainty",
    ),
    "listeven": lambda: EqFixture(
        "listeven",
        "s() = le(1);\nle(x) = 0.5 + 0.5*x*lo(x);\nlo(x) = 0.5*x*le(x);\n%target s();",
        2 / 3,
        "even list length",
    ),
    "listeven2": lambda: EqFixture(
        "listeven2",
        "s() = le(0.5, 0.5);\nle(x, y) = 0.5 + 0.5*x*lo(x, y) + 0.5*y*le(x, y);\n"
        "lo(x, y) = 0.5*x*le(x, y) + 0.5*y*lo(x, y);\n%target s();",
        3 / 4,
        "evenly many trues",
    ),
    "determinize": lambda: EqFixture(
        "determinize",
        "s() = 0.5*d(1, 0) + 0.5*fa(0, 1, 1, 0);\n"
        "d(g1, g2) = g1 + g2*d(g1, g2);\n"
        "fa(p1, p2 | q1, q2) = 0.5*d(0.5*p1 + 0.5*q1, 0.5*p2 + 0.5*q2)"
        " + 0.5*(0.5*fa(p1, p2, 0.5*p1 + 0.5*q1, 0.5*p2 + 0.5*q2)"
        " + 0.5*fa(0.5*p1 + 0.5*q1, 0.5*p2 + 0.5*q2, q1, q2));\n"
        "%target s();",
        1.0,
        "averaging operators inlined into the enumeration loop",
    ),
    "treeeven": _treeeven_sys,
    "ex5.4": _ex54_sys,
    "discont": _discont_sys,
    "incomp": lambda: EqFixture(
        "incomp",
        "s() = f(s());\nf(x) = x*x + 0.4*x + 0.09;\n%target s();",
        0.3,
        "only the exact value 0.3 is a valid upper bound",
    ),
    "incomp2": lambda: EqFixture(
        "incomp2",
        "s() = f(0.5);\nf(x) = 0.5*x*x + 2*f(0.5*x);\n%nonprob;\n%target s();",
        0.25,
        "grid refinement never converges near 0; no probability invariants",
    ),
}


def fixture_names() -> list[str]:
    return sorted(_FIXTURES)


def load_fixture(name: str) -> EqFixture:
    base, args = _split_args(name)
    if base not in _FIXTURES:
        raise GalleryError(f"unknown equation fixture {name!r}; try list-gallery")
    try:
        return _FIXTURES[base](*args)
    except TypeError:
        raise GalleryError(f"{base} does not take {len(args)} parameter(s)") from None


def builtin_eq_systems() -> dict[str, EqSystem]:
    return {name: load_fixture(name).system() for name in fixture_names()}


# ---------------------------------------------------------------------------
# Diophantine gadgets


@dataclass(frozen=True)
class Polynomial:
    """Multivariate polynomial with nonnegative integer coefficients over
    variables x1..xk, stored as exponent-vector -> coefficient."""

    k: int
    coeffs: dict[tuple[int, ...], int]

    def __post_init__(self) -> None:
        for exps, c in self.coeffs.items():
            if len(exps) != self.k or c < 0:
                raise ValueError("malformed polynomial")

    def degrees(self) -> tuple[int, ...]:
        out = [0] * self.k
        for exps in self.coeffs:
            for j, e in enumerate(exps):
                out[j] = max(out[j], e)
        return tuple(out)

    def __str__(self) -> str:
        if not self.coeffs:
            return "0"
        terms = []
        for exps in sorted(self.coeffs):
            c = self.coeffs[exps]
            factors = [str(c)] if (c != 1 or not any(exps)) else []
            for j, e in enumerate(exps):
                if e == 1:
                    factors.append(f"x{j + 1}")
                elif e > 1:
                    factors.append(f"x{j + 1}^{e}")
            terms.append("*".join(factors))
        return " + ".join(terms)


_POLY_TERM = re.compile(r"^\s*(\d+)?\s*((?:\*?\s*x\d+(?:\^\d+)?\s*)*)$")
_POLY_VAR = re.compile(r"x(\d+)(?:\^(\d+))?")


def parse_polynomial(text: str, k: Optional[int] = None) -> Polynomial:
    """Mini-syntax: terms joined by '+', each `c * x1^e1 * x2^e2 ...` with
    optional coefficient and exponents, e.g. "x1^2 + 2*x1*x2 + 3"."""
    coeffs: dict[tuple[int, ...], int] = {}
    maxvar = k or 0
    parsed = []
    for chunk in text.split("+"):
        m = _POLY_TERM.match(chunk)
        if not m or not chunk.strip():
            raise GalleryError(f"cannot parse polynomial term {chunk.strip()!r}")
        c = int(m.group(1)) if m.group(1) else 1
        exps: dict[int, int] = {}
        for vm in _POLY_VAR.finditer(m.group(2) or ""):
            j = int(vm.group(1))
            e = int(vm.group(2) or 1)
            exps[j] = exps.get(j, 0) + e
            maxvar = max(maxvar, j)
        parsed.append((c, exps))
    if k is not None and maxvar > k:
        raise GalleryError(f"polynomial uses x{maxvar} but k = {k}")
    kk = k or max(maxvar, 1)
    for c, exps in parsed:
        vec = tuple(exps.get(j + 1, 0) for j in range(kk))
        coeffs[vec] = coeffs.get(vec, 0) + c
    coeffs = {v: c for v, c in coeffs.items() if c != 0}
    return Polynomial(kk, coeffs)


def _church_numeral(c: int) -> str:
    out = "Zero"
    for _ in range(c):
        out = f"(Succ {out})"
    return out


def _church_monomial(c: int, exps: tuple[int, ...]) -> str:
    factors = []
    if c != 1 or not any(exps):
        factors.append(_church_numeral(c))
    for j, e in enumerate(exps):
        factors.extend([f"x{j + 1}"] * e)
    out = factors[-1]
    for f in reversed(factors[:-1]):
        out = f"(Mult {f} {out})"
    return out


def _church_poly(p: Polynomial) -> str:
    if not p.coeffs:
        return "Zero"
    monos = [_church_monomial(c, exps) for exps, c in sorted(p.coeffs.items())]
    out = monos[-1]
    for m in reversed(monos[:-1]):
        out = f"(Add {m} {out})"
    return out


def _balanced_addpr(leaves: list[str]) -> str:
    """Balanced tree of AddPr over probabilistic-function terms."""
    if not leaves:
        return "ZeroPr"
    level = leaves
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nxt.append(f"(AddPr {level[i]} {level[i + 1]})")
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def _pf_var(idx: tuple[int, ...]) -> str:
    return "x_" + "_".join(map(str, idx))


def _pf_poly(p: Polynomial, degrees: tuple[int, ...]) -> str:
    leaves: list[str] = []
    for exps in sorted(p.coeffs):
        leaves.extend([_pf_var(exps)] * p.coeffs[exps])
    return _balanced_addpr(leaves)


def _index_space(degrees: tuple[int, ...]) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = [()]
    for d in degrees:
        out = [i + (e,) for i in out for e in range(d + 1)]
    return out


def gen_diophantine_phors(P: Polynomial, Q: Polynomial, order: int) -> Grammar:
    """Grammar that fails to terminate almost surely iff P < Q somewhere
    on the naturals; `order` picks the Church-numeral construction (3) or
    the probabilistic-function-encoding construction (2)."""
    if P.k != Q.k:
        raise GalleryError("P and Q must range over the same variables")
    if order == 3:
        src = _gen_order3(P, Q)
    elif order == 2:
        src = _gen_order2(P, Q)
    else:
        raise GalleryError("order must be 2 or 3")
    return normalize_choices(parse_grammar(src))


def _gen_order3(P: Polynomial, Q: Polynomial) -> str:
    k = P.k
    xs = " ".join(f"x{j + 1}" for j in range(k))
    loop_args = [
        " ".join(f"(Succ x{j + 1})" if j == step else f"x{j + 1}" for j in range(k))
        for step in range(k)
    ]
    chain = " <1/2> ".join(
        [f"Lt (P {xs}) (Q {xs})"] + [f"Loop {args}" for args in loop_args]
    )
    zeros = " ".join(["Zero"] * k)
    return f"""%start S
S = Loop {zeros}.
Loop {xs} = {chain}.
Lt m1 m2 = CheckHalf (CheckLt m1 m2).
CheckHalf y = Fp y Te.
Fp g x = g x (Fp g (Fp g x)).
CheckLt m1 m2 x y = NatToPr m1 x y <1/2> NatToPr m2 y x.
NatToPr m x y = m (H x) y.
H x y = x <1/2> y.
Zero s z = z.
Succ n s z = s (n s z).
Add n m s z = n s (m s z).
Mult n m s z = n (m s) z.
P {xs} = {_church_poly(P)}.
Q {xs} = {_church_poly(Q)}.
"""


def _gen_order2(P: Polynomial, Q: Polynomial) -> str:
    k = P.k
    degrees = tuple(
        max(d1, d2) for d1, d2 in zip(P.degrees(), Q.degrees())
    )
    idxs = _index_space(degrees)
    xs = " ".join(_pf_var(i) for i in idxs)
    # Inc_{j,i}: the PF value of x^i with x_j replaced by x_j + 1, as a
    # linear combination through the binomial expansion
    inc_rules = []
    inc_name: dict[tuple[int, tuple[int, ...]], str] = {}
    for j in range(k):
        for idx in idxs:
            name = f"Inc_{j + 1}_" + "_".join(map(str, idx))
            inc_name[(j, idx)] = name
            leaves: list[str] = []
            for t in range(idx[j], -1, -1):
                tgt = idx[:j] + (t,) + idx[j + 1 :]
                leaves.extend([_pf_var(tgt)] * math.comb(idx[j], t))
            body = leaves[-1]
            for leaf in reversed(leaves[:-1]):
                body = f"(AddPr {leaf} {body})"
            inc_rules.append(f"{name} {xs} y z = {body} y z.")
    loop_args = [
        " ".join(f"({inc_name[(j, idx)]} {xs})" for idx in idxs) for j in range(k)
    ]
    chain = " <1/2> ".join(
        [f"LtPr (Pp {xs}) (Qp {xs})"] + [f"LoopPr {args}" for args in loop_args]
    )
    start_args = " ".join("OnePr" if not any(i) else "ZeroPr" for i in idxs)
    lines = [
        "%start S",
        f"S = LoopPr {start_args}.",
        f"LoopPr {xs} = {chain}.",
        "LtPr g1 g2 = CheckHalf (CheckLtPr g1 g2).",
        "CheckLtPr g1 g2 x y = g1 x y <1/2> g2 y x.",
        "CheckHalf y = Fp y Te.",
        "Fp g x = g x (Fp g (Fp g x)).",
        "ZeroPr x y = y.",
        "OnePr x y = x <1/2> y.",
        "SuccPr g x y = x <1/2> g x y.",
        "AddPr g1 g2 x y = g1 x (g2 x y).",
        f"Pp {xs} y z = {_pf_poly(P, degrees)} y z.",
        f"Qp {xs} y z = {_pf_poly(Q, degrees)} y z.",
    ]
    lines.extend(inc_rules)
    return "\n".join(lines) + "\n"
