"""Measurement plumbing shared by the bench scenarios."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from ..cache import AssembledContext
from ..logic import IndexedContext, LimitExceeded, Limits, build_context, prove, solve
from ..slang import instantiate_guard

__all__ = ["Row", "COLUMNS", "Evaluation", "evaluate", "guard_request", "write_csv",
           "read_csv", "percentile", "linear_fit", "answers_digest", "SCENARIOS",
           "scenario", "run_scenario"]


@dataclass
class Row:
    scenario: str
    seed: int
    variant: str
    x: int
    trial: int
    allowed: bool
    answers: str          # digest of the full answer set, "" when censored
    steps: int            # prover steps to the decision
    censored: bool        # the step budget ran out; steps is a lower bound
    statements: int       # statements in the proof context
    sets: int             # logic sets in the context
    fetches: int          # store fetches caused by this request
    cache_hit: bool       # context served from the context cache
    refreshes: int
    latency_ms: float

    NON_TIMING = ("scenario", "seed", "variant", "x", "trial", "allowed", "answers",
                  "steps", "censored", "statements", "sets", "fetches", "cache_hit",
                  "refreshes")


COLUMNS = [f.name for f in fields(Row)]


def answers_digest(answers: Iterable[dict]) -> str:
    rows = sorted(json.dumps(a, sort_keys=True) for a in answers)
    return hashlib.sha256("\n".join(rows).encode()).hexdigest()[:16]


@dataclass
class Evaluation:
    allowed: bool
    steps: int
    censored: bool
    answers: str
    latency_ms: float
    statements: int = -1   # context size when it differs from the assembled one


def evaluate(ctx: IndexedContext, query, use_secondary: bool,
             budget: Optional[int] = None) -> Evaluation:
    """Prove the query (the decision and its step count), then enumerate the
    full answer set under the same budget for index-transparency checks."""
    limits = Limits(max_steps=budget) if budget else Limits()
    t0 = time.perf_counter()
    try:
        res = prove(ctx, query, limits, use_secondary)
    except LimitExceeded as exc:
        ms = (time.perf_counter() - t0) * 1000
        return Evaluation(bool(exc.partial), exc.steps, True, "", ms)
    ms = (time.perf_counter() - t0) * 1000
    try:
        digest = answers_digest(solve(ctx, query, limits, use_secondary))
    except LimitExceeded:
        digest = ""
    return Evaluation(res.holds, res.trace.steps, False, digest, ms)


def guard_request(principal, mod, name: str, args: Sequence[str], use_secondary: bool,
                  budget: Optional[int] = None, noise: Sequence = (),
                  **vars) -> "tuple[Evaluation, AssembledContext, int, bool]":
    """One guard evaluation without the refresh retry.  ``noise`` statements
    are placed ahead of the assembled context, bypassing pruning.

    Returns (evaluation, context entry, store fetches, context cache hit)."""
    env = principal.env.child(**vars)
    plan = instantiate_guard(mod, name, list(args), env)
    cc = principal.contexts
    store = env.store
    fetches0, hits0 = store.stats["fetches"], cc.stats["hits"]
    entry = cc.assemble_context(plan.links, env.clock(), plan.local)
    fetches = store.stats["fetches"] - fetches0
    hit = cc.stats["hits"] > hits0
    ctx = entry.context
    if noise:
        ctx = build_context(list(noise) + list(ctx.statements), env.clock())
    ev = evaluate(ctx, plan.query, use_secondary, budget)
    ev.statements = len(ctx)
    return ev, entry, fetches, hit


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile."""
    if not values:
        raise ValueError("no values")
    s = sorted(values)
    k = max(0, min(len(s) - 1, int(-(-q * len(s) // 100)) - 1))
    return s[k]


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> "tuple[float, float, float]":
    """Least squares y = a*x + b; returns (a, b, max relative residual)."""
    a, b = np.polyfit(np.asarray(xs, float), np.asarray(ys, float), 1)
    pred = a * np.asarray(xs, float) + b
    rel = np.abs(np.asarray(ys, float) - pred) / np.maximum(np.abs(np.asarray(ys, float)), 1e-9)
    return float(a), float(b), float(rel.max())


def write_csv(rows: Sequence[Row], out) -> None:
    own = isinstance(out, (str, bytes)) or hasattr(out, "__fspath__")
    fh = open(out, "w", newline="") if own else out
    try:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        for r in rows:
            d = asdict(r)
            d["latency_ms"] = f"{r.latency_ms:.3f}"
            w.writerow(d)
    finally:
        if own:
            fh.close()


def read_csv(src) -> List[dict]:
    text = open(src).read() if not isinstance(src, io.StringIO) else src.getvalue()
    return list(csv.DictReader(io.StringIO(text)))


SCENARIOS: Dict[str, Callable] = {}


def scenario(name: str):
    def deco(fn):
        SCENARIOS[name] = fn
        return fn
    return deco


def run_scenario(name: str, seed: int = 0, index: Optional[bool] = None,
                 quick: bool = False, **params) -> List[Row]:
    """``index`` forces the secondary index on or off for every evaluation;
    None lets the scenario choose per variant."""
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    return SCENARIOS[name](seed=seed, index=index, quick=quick, **params)
