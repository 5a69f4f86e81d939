"""Termination-probability analysis for probabilistic higher-order
recursion schemes: grammar front-end, enumeration oracle, fixpoint
equation translations, Kleene lower bounds, and grid-based upper bounds.
"""

from .equations import (
    EqSystem,
    iterate_lower_bound,
    kleene_lower_bound,
)
from .eqio import equations_to_text, parse_equations
from .gallery import builtin_eq_systems, builtin_grammars, gen_diophantine_phors
from .inference import infer_sorts
from .parsing import grammar_to_text, parse_grammar
from .rmc import parse_rmc, phors_to_rmc, rmc_to_phors, rmc_to_text, validate_rmc
from .semantics import partial_prob, prob_of_path, step
from .syntax import Grammar, Rule, Sort, Term, typecheck_term, validate
from .transform import eliminate_end, ensure_end_free, normalize_choices
from .translate import simplify, to_order_n, to_order_n_minus_1, translate
from .upper import SolverConfig, SolveResult, alpha_h, solve_upper

__all__ = [
    "EqSystem",
    "Grammar",
    "Rule",
    "Sort",
    "SolveResult",
    "SolverConfig",
    "Term",
    "alpha_h",
    "builtin_eq_systems",
    "builtin_grammars",
    "eliminate_end",
    "ensure_end_free",
    "equations_to_text",
    "gen_diophantine_phors",
    "grammar_to_text",
    "infer_sorts",
    "iterate_lower_bound",
    "kleene_lower_bound",
    "normalize_choices",
    "parse_equations",
    "parse_grammar",
    "parse_rmc",
    "partial_prob",
    "phors_to_rmc",
    "prob_of_path",
    "rmc_to_phors",
    "rmc_to_text",
    "simplify",
    "solve_upper",
    "step",
    "to_order_n",
    "to_order_n_minus_1",
    "translate",
    "typecheck_term",
    "validate",
    "validate_rmc",
]
