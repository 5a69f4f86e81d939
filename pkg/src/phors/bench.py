"""Benchmark harness over the built-in equation fixtures.

Each row runs a Kleene (or stall-extended) lower bound and the grid upper
solver in both interpolation modes at the row's recorded #iter/#dom/#codom,
checks the soundness bracket lower <= exact <= upper, and compares against
recorded expectations.  A bracket violation aborts the whole run; failed
expectation checks are reported per row.  Wall times are reported, never
asserted.

Printing follows the rounding convention: lower bounds truncated to three
decimals, upper bounds rounded up.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .equations import EqSystem, iterate_lower_bound, kleene_lower_bound
from .gallery import EqFixture, load_fixture
from .syntax import PhorsError
from .upper import SolverConfig, solve_upper


class BenchSoundnessError(PhorsError):
    """A row produced lower > upper or a bracket miss; never acceptable."""


def fmt_lower(x: float, places: int = 3) -> str:
    scaled = math.floor(x * 10**places + 1e-9)
    return f"{scaled / 10**places:.{places}f}"


def fmt_upper(x: float, places: int = 3) -> str:
    if x == float("inf"):
        return "inf"
    scaled = math.ceil(x * 10**places - 1e-9)
    return f"{scaled / 10**places:.{places}f}"


@dataclass(frozen=True)
class RowSpec:
    """One benchmark row: fixture, per-row parameters, and expectations.

    `lower` picks the lower-bound route: ("kleene", iters) evaluates the
    exact depth-indexed approximant; ("stall", min_sweeps) runs chaotic
    iteration to a numeric stall (needed where plain iteration at the
    recorded depth provably cannot reach the recorded bound; see the
    project notes).  `iters` is the recorded #iter column.
    """

    fixture: str
    iters: int
    dom: int
    codom: int
    lower: tuple[str, int]
    expect_lb: float  # our lower must be >= this - 1e-9
    expect_ub: float  # our upper must be <= this + tolerance
    expect_step: float  # step-mode upper, same tolerance
    gap: Optional[float] = None  # recorded printed gap for bracket checks
    note: str = ""


UB_TOL = 0.002

# #iter/#dom/#codom and the l.b./u.b./step expectations follow the
# recorded experiment table.  Deviations (with reasons):
#   * ex2.3-v3 expectations are this artifact's own: with s = f(1) and
#     f(x) = 0.25x + 0.75 f(x)^2 the target is exactly 1/3, which the
#     recorded 0.263/0.266/0.309 row cannot correspond to.
#   * rows marked ("stall", _) or with iters above the recorded depth
#     treat #iter as a minimum budget (see decisions ledger).
ROWS: tuple[RowSpec, ...] = (
    RowSpec("ex2.3-1", 12, 16, 512, ("kleene", 12), 0.333, 0.336, 1.0, gap=0.003),
    RowSpec("ex2.3-0", 12, 16, 512, ("kleene", 12), 0.333, 0.334, 0.334, gap=0.001),
    RowSpec("ex2.3-v1", 12, 16, 512, ("kleene", 12), 0.312, 0.315, 0.366),
    RowSpec("ex2.3-v2", 12, 16, 512, ("kleene", 12), 0.262, 0.266, 0.321),
    RowSpec(
        "ex2.3-v3", 12, 16, 512, ("kleene", 12), 0.333, 0.334, 0.334,
        note="own expectations; see module comment",
    ),
    RowSpec("ex2.4", 12, 16, 512, ("kleene", 12), 0.320, 0.323, 0.329),
    RowSpec("double", 12, 16, 512, ("kleene", 12), 0.649, 0.653, 1.0),
    RowSpec("listgen", 15, 16, 512, ("kleene", 15), 0.999, 1.0, 1.0, gap=0.001),
    RowSpec("treegen", 15, 64, 4096, ("stall", 15), 0.618, 0.619, 1.0, gap=0.001),
    RowSpec("treegenp", 12, 16, 512, ("kleene", 12), 0.999, 1.0, 1.0, gap=0.0),
    RowSpec("listeven", 12, 32, 1024, ("kleene", 12), 0.666, 0.667, 0.667, gap=0.001),
    RowSpec("listeven2", 12, 16, 512, ("kleene", 12), 0.749, 0.75, 0.75, gap=0.001),
    RowSpec(
        "determinize", 12, 16, 512, ("kleene", 18), 0.991, 1.0, 1.0, gap=0.007,
        note="18 call hops match the recorded depth-12 run of the hand-"
        "simplified system; #iter read as a minimum",
    ),
    RowSpec("treeeven(1/2)", 15, 64, 4096, ("stall", 15), 0.286, 0.299, 0.300, gap=0.013),
    RowSpec("treeeven(0.49)", 15, 64, 4096, ("stall", 15), 0.276, 0.280, 0.280),
    RowSpec("treeeven(0.51)", 15, 64, 4096, ("stall", 15), 0.287, 0.290, 0.290),
    RowSpec("ex5.4(0,0)", 12, 16, 512, ("kleene", 12), 0.0, 0.0, 0.0, gap=0.0),
    RowSpec("ex5.4(0.3,0.3)", 12, 16, 512, ("kleene", 12), 0.333, 0.336, 0.35, gap=0.003),
    RowSpec("ex5.4(0.5,0.5)", 10000, 16, 512, ("kleene", 10000), 0.999, 1.0, 1.0, gap=0.001),
    RowSpec("discont(0,1)", 12, 16, 512, ("kleene", 12), 0.0, 0.0, 0.0, gap=0.0),
    RowSpec("discont(0.01,0.99)", 1000, 16, 512, ("kleene", 1000), 0.999, 1.0, 1.0, gap=0.001),
    RowSpec("incomp", 10000, 16, 512, ("kleene", 10000), 0.299, 1.0, 1.0),
    RowSpec("incomp(10/100)", 10000, 10, 100, ("kleene", 10000), 0.299, 0.3, 0.3, gap=0.001),
    RowSpec("incomp2", 12, 16, 512, ("kleene", 12), 0.249, 1.0, 1.0),
    RowSpec("incomp2(256/65536)", 12, 256, 65536, ("kleene", 12), 0.249, 1.0, 1.0),
)


@dataclass
class BenchRow:
    fixture: str
    iters: int
    dom: int
    codom: int
    cap: str
    mode: str
    lower: float
    upper: float
    step_upper: float
    exact: Optional[float]
    wall: float
    sweeps: int
    failures: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "fixture": self.fixture,
            "iters": self.iters,
            "dom": self.dom,
            "codom": self.codom,
            "cap": self.cap,
            "mode": self.mode,
            "lower": self.lower,
            "upper": self.upper,
            "step": self.step_upper,
            "exact": self.exact,
            "time": round(self.wall, 4),
            "sweeps": self.sweeps,
            "failures": self.failures,
        }


def _row_fixture(spec: RowSpec) -> EqFixture:
    name = spec.fixture
    if name.startswith("incomp("):
        name = "incomp"
    if name.startswith("incomp2("):
        name = "incomp2"
    return load_fixture(name)


def _lower_bound(sys: EqSystem, spec: RowSpec) -> float:
    kind, budget = spec.lower
    if kind == "kleene":
        return float(kleene_lower_bound(sys, budget))
    if kind == "stall":
        quick = float(kleene_lower_bound(sys, min(budget, 50)))
        stalled, _ = iterate_lower_bound(sys, min_sweeps=budget)
        return max(quick, stalled)
    raise ValueError(f"unknown lower-bound route {kind!r}")


def run_row(spec: RowSpec) -> BenchRow:
    fx = _row_fixture(spec)
    sys = fx.system()
    t0 = time.monotonic()
    lower = _lower_bound(sys, spec)
    cfg = SolverConfig(dom=spec.dom, codom=spec.codom)
    upper = min(solve_upper(sys, cfg).value, 1.0)
    res_step = solve_upper(sys, SolverConfig(dom=spec.dom, codom=spec.codom, mode="step"))
    step_upper = min(res_step.value, 1.0)
    wall = time.monotonic() - t0
    row = BenchRow(
        fixture=spec.fixture,
        iters=spec.iters,
        dom=spec.dom,
        codom=spec.codom,
        cap=str(cfg.cap),
        mode=cfg.mode,
        lower=lower,
        upper=upper,
        step_upper=step_upper,
        exact=fx.exact,
        wall=wall,
        sweeps=res_step.sweeps,
    )
    # soundness: violations abort the whole run
    if lower > upper + 1e-9:
        raise BenchSoundnessError(f"{spec.fixture}: lower {lower} > upper {upper}")
    if fx.exact is not None:
        if lower > fx.exact + 1e-9:
            raise BenchSoundnessError(
                f"{spec.fixture}: lower {lower} above exact {fx.exact}"
            )
        if upper < fx.exact - 1e-9:
            raise BenchSoundnessError(
                f"{spec.fixture}: upper {upper} below exact {fx.exact}"
            )
    # expectations
    if lower < spec.expect_lb - 1e-9:
        row.failures.append(f"lower {lower:.6f} under expectation {spec.expect_lb}")
    if upper > spec.expect_ub + UB_TOL:
        row.failures.append(f"upper {upper:.6f} over expectation {spec.expect_ub}")
    if step_upper > spec.expect_step + UB_TOL:
        row.failures.append(f"step {step_upper:.6f} over expectation {spec.expect_step}")
    if step_upper < upper - 1e-9:
        row.failures.append("step mode tighter than linear mode")
    if spec.gap is not None and upper - lower > spec.gap + UB_TOL:
        row.failures.append(
            f"gap {upper - lower:.6f} over recorded {spec.gap} + {UB_TOL}"
        )
    return row


def run_bench(
    fixtures: Optional[list[str]] = None, json_path: Optional[str] = None
) -> list[BenchRow]:
    specs = ROWS
    if fixtures:
        wanted = set(fixtures)
        specs = tuple(r for r in ROWS if r.fixture in wanted or r.fixture.split("(")[0] in wanted)
        if not specs:
            raise PhorsError(f"no benchmark rows match {sorted(wanted)}")
    rows = [run_row(spec) for spec in specs]
    if json_path:
        with open(json_path, "w") as fh:
            json.dump([r.as_dict() for r in rows], fh, indent=2)
    return rows


def render_rows(rows: list[BenchRow]) -> str:
    head = (
        f"{'fixture':22s} {'#iter':>6s} {'#dom':>5s} {'#codom':>7s} "
        f"{'l.b.':>6s} {'u.b.':>6s} {'step':>6s} {'exact':>10s} {'time':>7s}"
    )
    lines = [head, "-" * len(head)]
    for r in rows:
        exact = "-" if r.exact is None else f"{r.exact:.6f}"
        lines.append(
            f"{r.fixture:22s} {r.iters:>6d} {r.dom:>5d} {r.codom:>7d} "
            f"{fmt_lower(r.lower):>6s} {fmt_upper(r.upper):>6s} "
            f"{fmt_upper(r.step_upper):>6s} {exact:>10s} {r.wall:>6.2f}s"
        )
        for f in r.failures:
            lines.append(f"    !! {f}")
    bad = sum(1 for r in rows if r.failures)
    lines.append(f"{len(rows)} rows, {bad} with failed expectations")
    return "\n".join(lines)
