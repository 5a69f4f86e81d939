"""Sound upper bounds on least solutions of order-1 equation systems.

The domain of each function is discretized to the integer grid points
D_i = { (i1..il) : 0 <= ij <= n, per-group sums <= n+2 } with the valid
sub-grid D_i' (group sums <= n); the codomain is rounded up onto the
finite lattice {0, 1/m, .., h, infinity}.  Repeated Jacobi sweeps

    rho'(f)[v] := alpha_h( eval(body_f, rho, v in D') )

run until nothing changes; by monotonicity the per-cell sequences are
nondecreasing over a finite lattice, so the loop terminates without any
sweep cap.  The returned tables are an abstract pre-fixpoint, hence their
concretization dominates the least solution: reading the target off them
gives a certified upper bound.  Values at valid points are additionally
capped by 1 - sum of lower bounds of the other members of the function's
group (mutually exclusive events), which is what makes systems with
group-sum-1 least solutions converge below 1.

Queries interpolate the surrounding grid values coordinatewise
(multilinear); pointwise convexity of every Kleene iterate makes the
interpolation an upper bound.  A step-function mode (value at the
coordinatewise ceiling) is available for comparison.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .equations import (
    INF,
    Add,
    Apply,
    Const,
    EqExpr,
    EqSystem,
    EqTypeError,
    EVar,
    FunRef,
    KleeneEvaluator,
    Mul,
    R,
    TupleOf,
    iterate_lower_tables,
    quantize_point,
    typecheck_eqs,
)
from .syntax import PhorsError

# relative slop forgiving float rounding in the two discrete decisions
# (lattice rounding and grid membership); see the float discussion in the
# module docstring of `bench`
_SLOP = 1e-12


class SolverError(PhorsError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dom: int = 16  # n: subdivisions of [0,1] per argument
    codom: int = 512  # m: subdivisions of [0,1] in the value lattice
    cap: Fraction = Fraction(2)  # h: largest finite lattice value
    mode: str = "linear"  # "linear" or "step"
    lb_iters: Optional[int] = None  # None: iterate lower bounds to a stall
    group_trick: bool = True
    gauss_seidel: bool = False
    max_sweeps: int = 1_000_000

    def __post_init__(self) -> None:
        if self.dom < 1 or self.codom < 1:
            raise ValueError("dom and codom must be >= 1")
        if self.cap < 1:
            raise ValueError("cap must be >= 1")
        if (self.cap * self.codom).denominator != 1:
            raise ValueError("cap must be a multiple of 1/codom")
        if self.mode not in ("linear", "step"):
            raise ValueError(f"unknown mode {self.mode!r}")


class CodomainLattice:
    """{0, 1/m, ..., (mh-1)/m, h, infinity} with the rounding-up map."""

    def __init__(self, m: int, h: Fraction):
        self.m = m
        self.h = h
        self.top = int(m * h)  # index of the largest finite value

    def alpha(self, x: np.ndarray) -> np.ndarray:
        """Least lattice element >= x (up to 1e-12 relative float slop);
        monotone, inflationary, identity on the lattice."""
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore"):
            y = x * self.m
            k = np.ceil(y - np.abs(y) * _SLOP - 1e-300)
            out = np.where(k <= 0, 0.0, k / self.m)
            return np.where((x == INF) | (k > self.top), INF, out)

    def carrier(self) -> list[float]:
        return [i / self.m for i in range(self.top + 1)] + [INF]


def alpha_h(x: float, m: int, h: Fraction = Fraction(2)) -> float:
    """Scalar convenience wrapper for the lattice rounding."""
    return float(CodomainLattice(m, h).alpha(np.asarray([x]))[0])


class DomainGrid:
    """Discretized domain of one function: integer points over the
    argument groups, the valid sub-grid, and the membership test."""

    def __init__(self, arity: int, groups: tuple[tuple[int, ...], ...], n: int):
        self.arity = arity
        self.groups = groups
        self.n = n
        shape = (n + 1,) * arity
        self.shape = shape
        if arity == 0:
            idx = np.zeros((1, 0), dtype=np.int64)
        else:
            grids = np.indices(shape).reshape(arity, -1).T
            keep = np.ones(len(grids), dtype=bool)
            for grp in groups:
                keep &= grids[:, list(grp)].sum(axis=1) <= n + 2
            idx = grids[keep]
        self.points = idx  # (P, arity) integer coordinates, lexicographic
        self.valid = self._valid_mask(idx)
        self.strides = np.array(
            [(n + 1) ** (arity - 1 - j) for j in range(arity)], dtype=np.int64
        )
        self.flat = idx @ self.strides if arity else np.zeros(1, dtype=np.int64)

    def _valid_mask(self, idx: np.ndarray) -> np.ndarray:
        ok = np.ones(len(idx), dtype=bool)
        for grp in self.groups:
            ok &= idx[:, list(grp)].sum(axis=1) <= self.n
        return ok

    def ceil_indices(self, coords: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """(ceil index per coordinate stacked (P, arity), in-D mask)."""
        n = self.n
        cols = []
        ok = np.ones(coords[0].shape if coords else (1,), dtype=bool)
        with np.errstate(invalid="ignore"):
            for x in coords:
                y = x * n
                c = np.ceil(y - np.abs(y) * _SLOP - 1e-300)
                c = np.where(c <= 0, 0.0, c)
                good = (x >= 0) & (c <= n) & (x != INF)
                ok &= good
                cols.append(np.where(good, c, 0).astype(np.int64))
        idx = np.stack(cols, axis=-1) if cols else np.zeros((len(ok), 0), np.int64)
        for grp in self.groups:
            ok &= idx[:, list(grp)].sum(axis=1) <= n + 2
        return idx, ok


class AbstractTable:
    """Dense (flattened) lattice-valued table over one function's grid;
    cells outside D hold infinity and are never read for in-grid queries."""

    def __init__(self, grid: DomainGrid):
        self.grid = grid
        size = (grid.n + 1) ** grid.arity if grid.arity else 1
        self.data = np.full(size, INF)
        self.data[grid.flat] = 0.0

    def copy(self) -> "AbstractTable":
        out = AbstractTable.__new__(AbstractTable)
        out.grid = self.grid
        out.data = self.data.copy()
        return out

    def values_at_points(self) -> np.ndarray:
        return self.data[self.grid.flat]

    def set_points(self, vals: np.ndarray) -> None:
        self.data[self.grid.flat] = vals

    def apply(self, coords: list[np.ndarray], mode: str) -> np.ndarray:
        """Value at real points: multilinear interpolation of the 2^l
        surrounding grid values, or the coordinatewise-ceiling value in
        step mode; infinity outside the covered region."""
        grid = self.grid
        n = grid.n
        cidx, ok = grid.ceil_indices(coords)
        if grid.arity == 0:
            base = np.full(ok.shape, self.data[0])
            return np.where(ok, base, INF)
        if mode == "step":
            flat = cidx @ grid.strides
            vals = self.data[flat]
            return np.where(ok, vals, INF)
        los, fracs = [], []
        for j, x in enumerate(coords):
            y = np.where(ok, x, 0.0) * n
            lo = np.floor(y).astype(np.int64)
            lo = np.minimum(np.maximum(lo, 0), n - 1)
            p = y - lo
            p = np.minimum(np.maximum(p, 0.0), 1.0)
            los.append(lo)
            fracs.append(p)
        total = np.zeros(ok.shape)
        with np.errstate(invalid="ignore"):
            for corner in range(1 << grid.arity):
                w = np.ones(ok.shape)
                flat = np.zeros(ok.shape, dtype=np.int64)
                for j in range(grid.arity):
                    bit = (corner >> j) & 1
                    w = w * (fracs[j] if bit else 1.0 - fracs[j])
                    flat = flat + (los[j] + bit) * grid.strides[j]
                vals = self.data[flat]
                total = total + np.where(w == 0.0, 0.0, w * vals)
        return np.where(ok, total, INF)


@dataclass
class SolveResult:
    value: float
    tables: dict[str, AbstractTable]
    sweeps: int
    config: SolverConfig
    lb_value: Optional[float] = None
    wall_time: float = 0.0
    history: Optional[list[dict[str, np.ndarray]]] = None

    def table_points(self, fname: str) -> list[tuple[tuple[float, ...], float]]:
        grid = self.tables[fname].grid
        vals = self.tables[fname].values_at_points()
        return [
            (tuple(pt / grid.n for pt in grid.points[i]), float(vals[i]))
            for i in range(len(grid.points))
        ]


def _mul_vec(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where((a == 0.0) | (b == 0.0), 0.0, a * b)


def _eval_vec(
    sys: EqSystem,
    e: EqExpr,
    tables: dict[str, AbstractTable],
    env: dict[str, np.ndarray],
    b: np.ndarray,
    shape,
    mode: str,
) -> np.ndarray:
    """Figure-style evaluation over point vectors: every node's value is
    clamped to 1 where `b` holds (valid-domain points), applications
    outside the covered grid region evaluate to infinity."""

    def ev(e: EqExpr) -> np.ndarray:
        if isinstance(e, Const):
            r = np.full(shape, float(e.value))
        elif isinstance(e, EVar):
            r = env[e.name]
        elif isinstance(e, Add):
            r = ev(e.a) + ev(e.b)
        elif isinstance(e, Mul):
            r = _mul_vec(ev(e.a), ev(e.b))
        elif isinstance(e, (Apply, FunRef)):
            fun, slot_args = e, []
            while isinstance(fun, Apply):
                slot_args.append(fun.arg)
                fun = fun.fun
            if not isinstance(fun, FunRef):
                raise SolverError("higher-order application in an order-1 system")
            slot_args.reverse()
            coords: list[np.ndarray] = []
            for a in slot_args:
                items = a.items if isinstance(a, TupleOf) else (a,)
                coords.extend(ev(i) for i in items)
            if coords:
                r = tables[fun.name].apply(coords, mode)
            else:  # nullary function: a plain cell read
                r = np.full(shape, tables[fun.name].data[0])
        else:
            raise SolverError(f"unsupported node {e!r}")
        return np.where(b, np.minimum(r, 1.0), r)

    return ev(e)


def _lb_caps(
    sys: EqSystem,
    grids: dict[str, DomainGrid],
    cfg: SolverConfig,
) -> tuple[dict[str, np.ndarray], Optional[float]]:
    """Per-function cap arrays over D (infinity where no constraint):
    at valid points, 1 - sum of lower bounds of the other group members.

    Lower bounds come from a Kleene evaluation at cfg.lb_iters, or from
    chaotic iteration to a numeric stall when lb_iters is None."""
    needed = [
        f for f in sys.equations if len([m for m in sys.fgroup_of(f) if m in sys.equations]) > 1
    ]
    caps = {f: np.full(len(grids[f].points), INF) for f in sys.equations}
    if not needed:
        return caps, None
    pts: dict[str, list[tuple[float, ...]]] = {}
    for f in needed:
        g = grids[f]
        pts[f] = [tuple(p / g.n for p in g.points[i]) for i in np.nonzero(g.valid)[0]]
    lb: dict[str, dict[tuple, float]] = {}
    if cfg.lb_iters is None:
        tabs = iterate_lower_tables(sys, seeds={f: pts[f] for f in needed})
        for f in needed:
            lb[f] = tabs.get(f, {})
    else:
        ev = KleeneEvaluator(sys)
        for f in needed:
            lb[f] = {
                quantize_point(pt): float(ev.value_at(f, pt, cfg.lb_iters))
                for pt in pts[f]
            }
    for f in needed:
        g = grids[f]
        cap = np.full(len(g.points), INF)
        others = [m for m in sys.fgroup_of(f) if m != f and m in sys.equations]
        for row, i in enumerate(np.nonzero(g.valid)[0]):
            q = quantize_point(pts[f][row])
            total = 0.0
            for m in others:
                total += lb[m].get(q, 0.0)
            cap[i] = max(1.0 - total, 0.0)
        caps[f] = cap
    target_lb = None
    return caps, target_lb


def solve_upper(
    sys: EqSystem,
    cfg: SolverConfig = SolverConfig(),
    record_history: bool = False,
) -> SolveResult:
    """Compute abstract pre-fixpoint tables and the target upper bound.

    Sweeps are Jacobi (all cells from the previous snapshot) unless
    cfg.gauss_seidel, which updates function by function in place (also
    sound; usually fewer sweeps).  Sweep values are cellwise nondecreasing
    and the loop stops at the first unchanged sweep; cfg.max_sweeps is a
    guard only, hitting it raises SolverError.
    """
    t0 = time.monotonic()
    typecheck_eqs(sys)
    if sys.order() > 1:
        raise SolverError("the grid solver handles order-(<= 1) systems only")
    grids = {
        f: DomainGrid(len(sys.flat_params(f)), sys.groups_of(f), cfg.dom)
        for f in sys.equations
    }
    lattice = CodomainLattice(cfg.codom, cfg.cap)
    tables = {f: AbstractTable(grids[f]) for f in sys.equations}
    # the [0,1] clamp at valid points and the group caps are only
    # justified by the probability invariants of grammar-derived systems
    caps, _ = (
        _lb_caps(sys, grids, cfg)
        if cfg.group_trick and sys.probabilistic
        else ({f: np.full(len(grids[f].points), INF) for f in sys.equations}, None)
    )
    valid_mask = {
        f: (grids[f].valid if sys.probabilistic else np.zeros(len(grids[f].points), bool))
        for f in sys.equations
    }
    coord_env = {}
    for f, eq in sys.equations.items():
        g = grids[f]
        names = sys.flat_params(f)
        coord_env[f] = {
            nm: g.points[:, j].astype(float) / cfg.dom for j, nm in enumerate(names)
        }
    history: Optional[list[dict[str, np.ndarray]]] = [] if record_history else None
    if history is not None:
        history.append({f: t.values_at_points().copy() for f, t in tables.items()})

    sweeps = 0
    while True:
        if sweeps >= cfg.max_sweeps:
            raise SolverError(f"no fixpoint after {cfg.max_sweeps} sweeps")
        sweeps += 1
        changed = False
        source = tables if cfg.gauss_seidel else {f: t.copy() for f, t in tables.items()}
        for f, eq in sys.equations.items():
            g = grids[f]
            raw = _eval_vec(
                sys, eq.body, source, coord_env[f], valid_mask[f], (len(g.points),), cfg.mode
            )
            capped = np.where(valid_mask[f], np.minimum(raw, caps[f]), raw)
            new = lattice.alpha(capped)
            old = tables[f].values_at_points()
            if not np.array_equal(new, old):
                changed = True
                tables[f].set_points(new)
        if history is not None:
            history.append({f: t.values_at_points().copy() for f, t in tables.items()})
        if not changed:
            break

    b_target = np.full(1, sys.probabilistic)
    val = float(
        _eval_vec(sys, sys.target, tables, {}, b_target, (1,), cfg.mode)[0]
    )
    return SolveResult(
        value=val,
        tables=tables,
        sweeps=sweeps,
        config=cfg,
        wall_time=time.monotonic() - t0,
        history=history,
    )


def pre_fixpoint_holds(
    sys: EqSystem, cfg: SolverConfig, result: SolveResult, tol: float = 0.0
) -> bool:
    """Re-evaluate one sweep without the group caps and check
    rho >= alpha(F(gamma(rho))) cellwise (the abstract pre-fixpoint
    property underpinning soundness)."""
    lattice = CodomainLattice(cfg.codom, cfg.cap)
    for f, eq in sys.equations.items():
        g = result.tables[f].grid
        names = sys.flat_params(f)
        env = {nm: g.points[:, j].astype(float) / g.n for j, nm in enumerate(names)}
        b = g.valid if sys.probabilistic else np.zeros(len(g.points), bool)
        raw = _eval_vec(
            sys, eq.body, result.tables, env, b, (len(g.points),), cfg.mode
        )
        new = lattice.alpha(raw)
        old = result.tables[f].values_at_points()
        bad = new > old + tol
        # infinity <= infinity
        bad &= ~((new == INF) & (old == INF))
        if bad.any():
            return False
    return True
