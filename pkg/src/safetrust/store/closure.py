"""Breadth-first, cycle-safe fetch of a set's transitive link closure."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

from ..certset import CertificateError, Token, ValidatedSet, decode, verify_certificate
from .core import NotFoundError, StoreError

__all__ = ["ClosureLimits", "ClosureResult", "fetch_closure", "closure_of",
           "store_getter", "TokenMismatchError"]


@dataclass(frozen=True)
class ClosureLimits:
    max_sets: int = 512
    max_statements: int = 8192
    max_depth: int = 32
    concurrency: int = 8

    def __post_init__(self):
        if min(self.max_sets, self.max_statements, self.concurrency) < 1 or self.max_depth < 0:
            raise ValueError("closure limits must be positive")


@dataclass
class ClosureResult:
    sets: List[ValidatedSet] = field(default_factory=list)
    skipped: List[Tuple[Token, str]] = field(default_factory=list)
    truncated: bool = False

    @property
    def tokens(self) -> List[Token]:
        return [s.token for s in self.sets]

    def statements(self) -> list:
        return [st for s in self.sets for st in s.statements]

    def expiries(self) -> dict:
        return {s.token: s.expiry for s in self.sets}

    @property
    def statement_count(self) -> int:
        return sum(len(s.statements) for s in self.sets)


class TokenMismatchError(CertificateError):
    code = "token-mismatch"


Getter = Callable[[Token], ValidatedSet]


def store_getter(store, now: Optional[float] = None) -> Getter:
    """Fetch + decode + verify through ``store.fetch``; checks that the set
    returned really is the one the token names."""

    def get(token: Token) -> ValidatedSet:
        raw = store.fetch(token)
        vs = verify_certificate(decode(raw), time.time() if now is None else now)
        if vs.token != token:
            raise TokenMismatchError("store returned a set for another token")
        return vs

    return get


def _attempt(get: Getter, token: Token):
    try:
        return get(token), None
    except NotFoundError:
        return None, "not-found"
    except CertificateError as exc:
        return None, exc.code
    except StoreError as exc:
        return None, exc.code


def closure_of(roots: Sequence[Token], get: Getter,
               limits: Optional[ClosureLimits] = None,
               require_root: bool = True) -> ClosureResult:
    """Union of the closures of ``roots`` with one shared visited set.

    Each token is fetched at most once.  ``truncated`` is set exactly when a
    limit stops an unvisited, reachable token from being processed."""
    limits = limits or ClosureLimits()
    out = ClosureResult()
    visited = set()
    frontier: List[Token] = []
    for r in roots:
        if r not in visited:
            visited.add(r)
            frontier.append(r)
    depth = 0
    attempts = 0
    n_statements = 0
    pool = None
    try:
        while frontier:
            budget = limits.max_sets - attempts
            if budget <= 0:
                out.truncated = True
                break
            if len(frontier) > budget:
                out.truncated = True
                frontier = frontier[:budget]
            attempts += len(frontier)
            if limits.concurrency > 1 and len(frontier) > 1:
                if pool is None:
                    pool = ThreadPoolExecutor(limits.concurrency,
                                              thread_name_prefix="closure")
                results = list(pool.map(lambda t: _attempt(get, t), frontier))
            else:
                results = [_attempt(get, t) for t in frontier]
            nxt: List[Token] = []
            stop = False
            for tok, (vs, why) in zip(frontier, results):
                if vs is None:
                    if depth == 0 and require_root and why == "not-found" \
                            and len(roots) == 1:
                        raise NotFoundError(f"root set {tok.text} not found")
                    out.skipped.append((tok, why))
                    continue
                if stop:
                    out.truncated = True
                    continue
                if n_statements + len(vs.statements) > limits.max_statements:
                    out.truncated = True
                    stop = True
                    continue
                n_statements += len(vs.statements)
                out.sets.append(vs)
                for link in vs.links:
                    if link in visited:
                        continue
                    if depth + 1 > limits.max_depth:
                        out.truncated = True
                        continue
                    visited.add(link)
                    nxt.append(link)
            if stop:
                if nxt:
                    out.truncated = True
                break
            frontier = nxt
            depth += 1
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    return out


def fetch_closure(store, root: Token, limits: Optional[ClosureLimits] = None,
                  now: Optional[float] = None) -> ClosureResult:
    """Validated closure of ``root``; invalid or dangling links are skipped."""
    return closure_of([root], store_getter(store, now), limits)
