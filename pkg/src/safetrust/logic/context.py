"""Immutable, indexed statement collections that queries run against."""
from __future__ import annotations

import math
from typing import Iterable, Mapping, Optional, Sequence

from .terms import SELF, Atom, Statement, Var

__all__ = ["IndexedContext", "build_context", "ArityConflictError",
           "StaleContentError"]


class ArityConflictError(ValueError):
    pass


class StaleContentError(ValueError):
    """A statement from an expired certificate reached context construction."""


class IndexedContext:
    """Statements indexed by (predicate, arity) and by first explicit argument.

    The primary index maps ``(pred, arity)`` to every statement with that
    head.  The secondary index maps ``(pred, arity, value)`` to the statements
    whose head has the ground first argument ``value``; statements whose first
    argument is a variable are kept in a per-key open list that is consulted on
    every secondary lookup.
    """

    __slots__ = ("statements", "primary", "secondary", "_open",
                 "earliest_expiry", "origins")

    def __init__(self, statements: Sequence[Statement], earliest_expiry: float,
                 origins: frozenset):
        self.statements = tuple(statements)
        self.earliest_expiry = earliest_expiry
        self.origins = origins
        primary: dict = {}
        secondary: dict = {}
        open_: dict = {}
        arities: dict = {}
        for st in self.statements:
            head = st.head
            pred, arity = head.predicate, len(head.args) - 1
            seen = arities.setdefault(pred, arity)
            if seen != arity:
                raise ArityConflictError(
                    f"predicate {pred} used with arity {seen} and {arity}")
            for b in st.body:
                if not b.builtin:
                    seen = arities.setdefault(b.predicate, len(b.args) - 1)
                    if seen != len(b.args) - 1:
                        raise ArityConflictError(
                            f"predicate {b.predicate} used with arity {seen} "
                            f"and {len(b.args) - 1}")
            key = (pred, arity)
            primary.setdefault(key, []).append(st)
            if arity >= 1 and not isinstance(head.args[1], Var):
                secondary.setdefault((pred, arity, head.args[1]), []).append(st)
            else:
                open_.setdefault(key, []).append(st)
        self.primary = {k: tuple(v) for k, v in primary.items()}
        self.secondary = {k: tuple(v) for k, v in secondary.items()}
        self._open = {k: tuple(v) for k, v in open_.items()}

    def __len__(self):
        return len(self.statements)

    def candidates(self, goal: Atom, use_secondary: bool = True) -> tuple:
        """Statements whose heads may match ``goal``."""
        key = goal.key
        if use_secondary and len(goal.args) > 1:
            first = goal.args[1]
            if not isinstance(first, Var):
                hit = self.secondary.get((key[0], key[1], first), ())
                rest = self._open.get(key, ())
                return hit + rest if rest else hit
        return self.primary.get(key, ())

    def is_fresh(self, now: float) -> bool:
        return now < self.earliest_expiry

    def extended(self, statements: Iterable[Statement]) -> "IndexedContext":
        return IndexedContext(self.statements + tuple(statements),
                              self.earliest_expiry, self.origins)


def build_context(statements: Iterable[Statement], now: float = 0.0,
                  expiries: Optional[Mapping] = None) -> IndexedContext:
    """Index ``statements``.

    ``expiries`` maps a statement origin (set token) to its certificate
    expiry.  The context's ``earliest_expiry`` is the minimum over the origins
    present; local statements (origin ``None``) do not expire.  Raises
    :class:`StaleContentError` if any origin has already expired at ``now``.
    """
    statements = list(statements)
    expiries = expiries or {}
    earliest = math.inf
    origins = set()
    for st in statements:
        if st.origin is not None:
            origins.add(st.origin)
        if _has_self(st):
            raise ValueError(f"unresolved $Self in statement: {st}")
        if not st.body and not st.head.is_ground():
            raise ValueError(f"non-ground fact: {st}")
    for o in origins:
        exp = expiries.get(o)
        if exp is not None:
            if exp <= now:
                raise StaleContentError(f"statement origin expired at {exp}")
            earliest = min(earliest, exp)
    return IndexedContext(statements, earliest, frozenset(origins))


def _has_self(st: Statement) -> bool:
    if any(a is SELF for a in st.head.args):
        return True
    return any(a is SELF for b in st.body for a in b.args)
