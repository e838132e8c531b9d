"""TTL-bounded set and context caches with failure-driven refresh."""
from __future__ import annotations

import hashlib
import logging
import random
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

from .certset import Token, ValidatedSet, decode, verify_certificate
from .logic import IndexedContext, Statement, build_context, format_statement
from .store.closure import ClosureLimits, ClosureResult, TokenMismatchError, closure_of

__all__ = ["SetCache", "ContextCache", "AssembledContext", "RefreshOutcome",
           "ContextError", "context_key"]

log = logging.getLogger("safetrust.cache")


class ContextError(RuntimeError):
    """Context assembly failed (as opposed to a query returning false)."""

    def __init__(self, message: str, code: str, closure: Optional[ClosureResult] = None):
        super().__init__(message)
        self.code = code
        self.closure = closure


class _Flight:
    __slots__ = ("done", "result", "error")

    def __init__(self):
        self.done = threading.Event()
        self.result = None
        self.error = None


class SetCache:
    """Validated sets keyed by token, LRU-bounded, never served past expiry.

    Concurrent misses on one token share a single store fetch."""

    def __init__(self, store, capacity: int = 4096,
                 clock: Callable[[], float] = time.time):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.store = store
        self.capacity = capacity
        self.clock = clock
        self._entries: "OrderedDict[Token, ValidatedSet]" = OrderedDict()
        self._flights: dict = {}
        self._lock = threading.Lock()
        self.stats = {"hits": 0, "misses": 0, "fetches": 0, "evictions": 0}

    def __len__(self):
        return len(self._entries)

    def __contains__(self, token):
        return token in self._entries

    def get_set(self, token: Token, now: Optional[float] = None) -> ValidatedSet:
        now = self.clock() if now is None else now
        with self._lock:
            vs = self._entries.get(token)
            if vs is not None:
                if now < vs.expiry:
                    self._entries.move_to_end(token)
                    self.stats["hits"] += 1
                    return vs
                del self._entries[token]
            self.stats["misses"] += 1
            flight = self._flights.get(token)
            leader = flight is None
            if leader:
                flight = self._flights[token] = _Flight()
        if not leader:
            flight.done.wait()
            if flight.error is not None:
                raise flight.error
            return flight.result
        try:
            vs = self._load(token, now)
            flight.result = vs
        except BaseException as exc:
            flight.error = exc
            raise
        finally:
            with self._lock:
                if flight.result is not None:
                    self._entries[token] = flight.result
                    self._entries.move_to_end(token)
                    while len(self._entries) > self.capacity:
                        self._entries.popitem(last=False)
                        self.stats["evictions"] += 1
                del self._flights[token]
            flight.done.set()
        return vs

    def _load(self, token: Token, now: float) -> ValidatedSet:
        with self._lock:
            self.stats["fetches"] += 1
        raw = self.store.fetch(token)
        vs = verify_certificate(decode(raw), now)
        if vs.token != token:
            raise TokenMismatchError(f"store returned another set for {token.text}")
        return vs

    def invalidate(self, tokens: Iterable[Token]) -> None:
        with self._lock:
            for t in tokens:
                self._entries.pop(t, None)

    def clear(self):
        with self._lock:
            self._entries.clear()


def context_key(tokens: Iterable[Token], local: Sequence[Statement] = ()) -> str:
    """Order-insensitive key over the token set plus any local statements."""
    h = hashlib.sha256()
    for t in sorted(set(tokens)):
        h.update(t.raw)
    h.update(b"\x00")
    for st in local:
        h.update(format_statement(st).encode())
        h.update(b"\n")
    return h.hexdigest()


@dataclass
class AssembledContext:
    key: str
    context: IndexedContext
    roots: Tuple[Token, ...]
    closure: ClosureResult
    built_at: float

    @property
    def tokens(self) -> List[Token]:
        return self.closure.tokens

    @property
    def statement_count(self) -> int:
        return len(self.context)

    @property
    def earliest_expiry(self) -> float:
        return self.context.earliest_expiry


@dataclass
class RefreshOutcome:
    refreshed: bool
    retry_after: float
    context: Optional[AssembledContext] = None


class ContextCache:
    """Rendered proof contexts keyed by their sorted root-token set.

    A context is served only while every member certificate is unexpired.
    Answers are never cached."""

    def __init__(self, sets: SetCache, capacity: int = 1024,
                 throttle_delay: float = 1.0,
                 limits: Optional[ClosureLimits] = None,
                 rng: Optional[random.Random] = None,
                 clock: Optional[Callable[[], float]] = None):
        self.sets = sets
        self.capacity = capacity
        self.throttle_delay = throttle_delay
        self.limits = limits or ClosureLimits()
        self.rng = rng or random.Random()
        self.clock = clock or sets.clock
        self._entries: "OrderedDict[str, AssembledContext]" = OrderedDict()
        self._recipes: dict = {}
        self._throttle: dict = {}
        self._lock = threading.RLock()
        self._key_locks: dict = {}
        self.stats = {"hits": 0, "misses": 0, "refreshes": 0, "throttled": 0,
                      "builds": 0}

    def _key_lock(self, key):
        with self._lock:
            lk = self._key_locks.get(key)
            if lk is None:
                lk = self._key_locks[key] = threading.Lock()
            return lk

    def assemble_context(self, tokens: Sequence[Token], now: Optional[float] = None,
                         local: Sequence[Statement] = ()) -> AssembledContext:
        if not tokens:
            raise ValueError("token list must be non-empty")
        now = self.clock() if now is None else now
        key = context_key(tokens, local)
        with self._lock:
            hit = self._entries.get(key)
            if hit is not None and hit.context.is_fresh(now):
                self._entries.move_to_end(key)
                self.stats["hits"] += 1
                return hit
        with self._key_lock(key):
            with self._lock:
                hit = self._entries.get(key)
                if hit is not None and hit.context.is_fresh(now):
                    self.stats["hits"] += 1
                    return hit
                self.stats["misses"] += 1
            return self._build(key, tuple(tokens), tuple(local), now)

    def _build(self, key, roots, local, now) -> AssembledContext:
        roots_sorted = tuple(sorted(set(roots)))
        res = closure_of(roots_sorted, lambda t: self.sets.get_set(t, now),
                         self.limits, require_root=False)
        if res.truncated:
            raise ContextError("closure limits exceeded while assembling context",
                               "closure-limit", res)
        if not res.sets:
            raise ContextError("none of the context tokens could be fetched",
                               "all-tokens-missing", res)
        ctx = build_context(res.statements() + list(local), now, res.expiries())
        entry = AssembledContext(key, ctx, roots_sorted, res, now)
        with self._lock:
            self.stats["builds"] += 1
            self._recipes[key] = (roots_sorted, local)
            self._entries[key] = entry
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)
        log.debug("context built", extra={"key": key, "sets": len(res.sets),
                                          "statements": len(ctx)})
        return entry

    def invalidate(self, key: str) -> None:
        with self._lock:
            entry = self._entries.pop(key, None)
        if entry is not None:
            self.sets.invalidate(entry.tokens)
            self.sets.invalidate(t for t, _ in entry.closure.skipped)

    def refresh_on_failure(self, key: str, now: Optional[float] = None) -> RefreshOutcome:
        """After a false guard result: drop and rebuild the context unless
        the key is still throttled."""
        now = self.clock() if now is None else now
        with self._lock:
            deadline = self._throttle.get(key, float("-inf"))
            if now < deadline:
                self.stats["throttled"] += 1
                return RefreshOutcome(False, deadline - now, self._entries.get(key))
            recipe = self._recipes.get(key)
            if recipe is None:
                raise KeyError(f"unknown context key {key}")
            self._throttle[key] = now + self.throttle_delay * self.rng.uniform(0.5, 1.0)
            self.stats["refreshes"] += 1
        self.invalidate(key)
        roots, local = recipe
        with self._key_lock(key):
            entry = self._build(key, roots, local, now)
        return RefreshOutcome(True, 0.0, entry)

    def metrics(self) -> dict:
        out = {f"context_{k}": v for k, v in self.stats.items()}
        out.update({f"set_{k}": v for k, v in self.sets.stats.items()})
        return out
