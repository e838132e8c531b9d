"""Datalog with says: parsing, indexing and tabled evaluation."""
from .builtins import ipv4_contains
from .context import ArityConflictError, IndexedContext, StaleContentError, build_context
from .parser import LogicSyntaxError, RangeRestrictionError, parse_program, parse_query
from .solver import (AnswerLimitExceeded, DeadlineExceeded, LimitExceeded, Limits,
                     ProofResult, StepLimitExceeded, Trace, prove, solve,
                     solve_with_stats)
from .terms import SELF, Atom, Statement, Var, format_statement, resolve_self, term_kind

__all__ = [
    "ipv4_contains", "ArityConflictError", "IndexedContext", "StaleContentError",
    "build_context", "LogicSyntaxError", "RangeRestrictionError", "parse_program",
    "parse_query", "AnswerLimitExceeded", "DeadlineExceeded", "LimitExceeded",
    "Limits", "ProofResult", "StepLimitExceeded", "Trace", "prove", "solve",
    "solve_with_stats", "SELF", "Atom", "Statement", "Var", "format_statement",
    "resolve_self", "term_kind",
]
