"""Tabled top-down evaluation for pure Datalog with says.

Every call pattern (a goal up to variable renaming) gets a table of ground
answers.  Recursive call patterns form strongly connected components; the
oldest table of a component on the evaluation stack re-runs its clauses until
a pass adds no new answer anywhere, then the whole component is completed.
That makes evaluation terminate on every program and complete with respect
to the minimal model.
"""
from __future__ import annotations

import math
import sys
import time
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from . import builtins as _builtins
from .context import IndexedContext
from .parser import check_statement
from .terms import Atom, Statement, Var

__all__ = ["Limits", "Trace", "ProofResult", "LimitExceeded",
           "StepLimitExceeded", "DeadlineExceeded", "AnswerLimitExceeded",
           "solve", "prove", "solve_with_stats"]

_INF = math.inf


@dataclass(frozen=True)
class Limits:
    max_answers: int = 100_000
    max_steps: int = 10_000_000
    deadline: Optional[float] = None  # absolute time.monotonic() value

    @classmethod
    def with_timeout(cls, seconds: float, **kw) -> "Limits":
        return cls(deadline=time.monotonic() + seconds, **kw)


class LimitExceeded(RuntimeError):
    reason = "limit"

    def __init__(self, message, steps=0, partial=()):
        super().__init__(message)
        self.steps = steps
        self.partial = list(partial)


class StepLimitExceeded(LimitExceeded):
    reason = "steps"


class DeadlineExceeded(LimitExceeded):
    reason = "deadline"


class AnswerLimitExceeded(LimitExceeded):
    reason = "answers"


@dataclass
class Trace:
    """Derivation summary for one proof."""

    steps: int
    tables: int
    statements: List[Statement] = field(default_factory=list)
    origins: List[Optional[bytes]] = field(default_factory=list)

    def as_record(self) -> dict:
        return {"steps": self.steps, "tables": self.tables,
                "statements_used": len(self.statements),
                "origins": len({o for o in self.origins if o is not None})}


@dataclass
class ProofResult:
    holds: bool
    trace: Trace
    bindings: Dict[str, object] = field(default_factory=dict)

    def __bool__(self):
        return self.holds


class _Found(Exception):
    pass


class _Table:
    __slots__ = ("goal", "answers", "answer_set", "support", "complete",
                 "on_stack", "index", "low", "epoch", "queued", "clauses",
                 "eq_groups", "seqs", "cutoff", "last_start")

    def __init__(self, goal: Atom, clauses=None):
        self.goal = goal
        self.answers: list = []
        self.seqs: list = []        # global insertion number of each answer
        self.cutoff = 0             # answers before this were seen by the last run
        self.last_start = -1
        self.answer_set: set = set()
        self.support: dict = {}
        self.complete = False
        self.on_stack = False
        self.index = -1
        self.low = _INF
        self.epoch = -1
        self.queued = False
        self.clauses = clauses
        groups: dict = {}
        for i, a in enumerate(goal.args):
            if isinstance(a, Var):
                groups.setdefault(a, []).append(i)
        self.eq_groups = [g for g in groups.values() if len(g) > 1]


def _variant(atom: Atom) -> tuple:
    names: dict = {}
    key = [atom.predicate]
    for a in atom.args:
        if isinstance(a, Var):
            key.append(("?", names.setdefault(a, len(names))))
        else:
            key.append(a)
    return tuple(key)


class _Engine:
    def __init__(self, ctx: IndexedContext, limits: Limits, use_secondary: bool,
                 record: bool, stop_after: Optional[int]):
        self.ctx = ctx
        self.limits = limits
        self.use_secondary = use_secondary
        self.record = record
        self.stop_after = stop_after
        self.tables: dict = {}
        self.stack: list = []
        self.incomplete: list = []
        self.steps = 0
        self.epoch = 0
        self.new_answers = 0
        self.seq = 0
        self._last_atom: dict = {}
        self.top: Optional[_Table] = None

    # bookkeeping ----------------------------------------------------------

    def tick(self):
        self.steps += 1
        if self.steps > self.limits.max_steps:
            raise StepLimitExceeded(
                f"step budget of {self.limits.max_steps} exhausted", self.steps)
        if (self.limits.deadline is not None and not self.steps & 255
                and time.monotonic() > self.limits.deadline):
            raise DeadlineExceeded("deadline passed", self.steps)

    # evaluation -----------------------------------------------------------

    def call(self, goal: Atom):
        key = _variant(goal)
        t = self.tables.get(key)
        if t is None:
            t = _Table(goal)
            self.tables[key] = t
        elif t.complete:
            return t, _INF
        elif t.on_stack:
            return t, t.index
        elif t.epoch == self.epoch:
            return t, t.low
        return t, self.evaluate(t)

    def evaluate(self, t: _Table) -> float:
        t.index = len(self.stack)
        t.on_stack = True
        self.stack.append(t)
        mark = len(self.incomplete)
        try:
            while True:
                t.low = _INF
                t.epoch = self.epoch
                before = self.new_answers
                # a rerun can skip derivations built only from answers that
                # already existed when the previous run started
                t.cutoff, t.last_start = t.last_start, self.seq
                self.run_clauses(t)
                if t.low < t.index:
                    for m in self.incomplete[mark:]:
                        if m.low > t.low:
                            m.low = t.low
                    if not t.queued:
                        t.queued = True
                        self.incomplete.append(t)
                    return t.low
                if t.low == _INF or self.new_answers == before:
                    t.complete = True
                    for m in self.incomplete[mark:]:
                        m.complete = True
                    del self.incomplete[mark:]
                    return _INF
                self.epoch += 1
        finally:
            self.stack.pop()
            t.on_stack = False

    def run_clauses(self, t: _Table):
        goal = t.goal
        clauses = t.clauses
        if clauses is None:
            clauses = self.ctx.candidates(goal, self.use_secondary)
        gargs = goal.args
        n = len(gargs)
        for st in clauses:
            self.tick()
            head = st.head.args
            if len(head) != n:
                continue
            env = {}
            ok = True
            for g, h in zip(gargs, head):
                if isinstance(g, Var):
                    continue
                if isinstance(h, Var):
                    prev = env.get(h)
                    if prev is None:
                        env[h] = g
                    elif not _same(prev, g):
                        ok = False
                        break
                elif not _same(h, g):
                    ok = False
                    break
            if not ok:
                continue
            if st.body:
                self.join(t, st, 0, env, (), t.cutoff < 0)
            else:
                self.emit(t, st, env, ())

    def _last(self, st: Statement) -> int:
        k = self._last_atom.get(id(st))
        if k is None:
            k = max((j for j, a in enumerate(st.body) if not a.builtin), default=-1)
            self._last_atom[id(st)] = k
        return k

    def join(self, t: _Table, st: Statement, i: int, env: dict, used: tuple,
             fresh: bool):
        body = st.body
        if i == len(body):
            if fresh:
                self.emit(t, st, env, used)
            return
        atom = body[i]
        args = tuple(env.get(a, a) if isinstance(a, Var) else a for a in atom.args)
        if atom.builtin:
            self.tick()
            spec = _builtins.lookup(atom.predicate, len(args) - 1)
            for res in spec.fn(args[1:]):
                env2 = _bind(env, atom.args[1:], res)
                if env2 is not None:
                    self.join(t, st, i + 1, env2,
                              used + ((None, atom, res),) if self.record else used, fresh)
            return
        sub, low = self.call(Atom(atom.predicate, args))
        if low < t.low:
            t.low = low
        answers = sub.answers
        seqs = sub.seqs
        cutoff = t.cutoff
        k = 0
        if not fresh and i == self._last(st):
            k = bisect_right(seqs, cutoff)
        while k < len(answers):
            ans = answers[k]
            new = fresh or seqs[k] > cutoff
            k += 1
            self.tick()
            env2 = _bind(env, atom.args, ans)
            if env2 is not None:
                self.join(t, st, i + 1, env2,
                          used + ((sub, ans),) if self.record else used, new)

    def emit(self, t: _Table, st: Statement, env: dict, used: tuple):
        ans = tuple(env[a] if isinstance(a, Var) else a for a in st.head.args)
        for grp in t.eq_groups:
            v = ans[grp[0]]
            if any(not _same(ans[j], v) for j in grp[1:]):
                return
        if ans in t.answer_set:
            return
        t.answer_set.add(ans)
        t.answers.append(ans)
        self.seq += 1
        t.seqs.append(self.seq)
        self.new_answers += 1
        if self.record:
            t.support[ans] = (st, used)
        if t is self.top and self.stop_after is not None \
                and len(t.answers) >= self.stop_after:
            raise _Found()
        if t is self.top and len(t.answers) > self.limits.max_answers:
            raise AnswerLimitExceeded(
                f"more than {self.limits.max_answers} answers", self.steps,
                t.answers[:self.limits.max_answers])

    # proof reconstruction ------------------------------------------------

    def explain(self, t: _Table, ans: tuple) -> List[Statement]:
        out, seen, todo = [], set(), [(t, ans)]
        while todo:
            tab, a = todo.pop()
            if (id(tab), a) in seen:
                continue
            seen.add((id(tab), a))
            st, used = tab.support[a]
            if tab is not self.top:
                out.append(st)
            for ref in used:
                if ref[0] is not None:
                    todo.append(ref)
        return out


def _same(x, y) -> bool:
    return x == y and type(x) is type(y)


def _bind(env: dict, pattern: Sequence, values: Sequence) -> Optional[dict]:
    env2 = None
    for p, v in zip(pattern, values):
        if isinstance(p, Var):
            cur = env.get(p) if env2 is None else env2.get(p)
            if cur is None:
                if env2 is None:
                    env2 = dict(env)
                env2[p] = v
            elif not _same(cur, v):
                return None
        elif not _same(p, v):
            return None
    return env2 if env2 is not None else env


def _query_table(query: Sequence[Atom]):
    qvars: list = []
    for a in query:
        for x in a.args:
            if isinstance(x, Var) and x not in qvars:
                qvars.append(x)
    for a in query:
        if not a.builtin and any(x is not None and not isinstance(x, (Var, str, int))
                                 for x in a.args):
            raise ValueError(f"unresolved placeholder in query atom {a}")
    head = Atom("$query", ("",) + tuple(qvars))
    pseudo = Statement(head, tuple(query))
    check_statement(pseudo)
    return _Table(head, clauses=(pseudo,)), qvars


def _run(ctx, query, limits, use_secondary, record, stop_after):
    if isinstance(query, Atom):
        query = [query]
    limits = limits or Limits()
    top, qvars = _query_table(query)
    eng = _Engine(ctx, limits, use_secondary, record, stop_after)
    eng.top = top
    if sys.getrecursionlimit() < 10_000:
        sys.setrecursionlimit(10_000)
    try:
        eng.evaluate(top)
    except _Found:
        pass
    except LimitExceeded as exc:
        exc.steps = eng.steps
        if not exc.partial:
            exc.partial = [_bindings(qvars, a) for a in top.answers]
        else:
            exc.partial = [_bindings(qvars, a) for a in exc.partial]
        raise
    return eng, top, qvars


def _bindings(qvars, ans) -> dict:
    return {v.name: val for v, val in zip(qvars, ans[1:])}


def solve(ctx: IndexedContext, query, limits: Optional[Limits] = None,
          use_secondary: bool = True) -> List[dict]:
    """All answers to a conjunctive query, as variable-name -> value maps."""
    eng, top, qvars = _run(ctx, query, limits, use_secondary, False, None)
    return [_bindings(qvars, a) for a in top.answers]


def solve_with_stats(ctx: IndexedContext, query, limits: Optional[Limits] = None,
                     use_secondary: bool = True):
    """Like :func:`solve` but also returns ``{"steps", "tables"}``."""
    eng, top, qvars = _run(ctx, query, limits, use_secondary, False, None)
    return ([_bindings(qvars, a) for a in top.answers],
            {"steps": eng.steps, "tables": len(eng.tables)})


def prove(ctx: IndexedContext, query, limits: Optional[Limits] = None,
          use_secondary: bool = True) -> ProofResult:
    """Stop at the first answer; the trace lists the statements it used."""
    eng, top, qvars = _run(ctx, query, limits, use_secondary, True, 1)
    trace = Trace(steps=eng.steps, tables=len(eng.tables))
    if not top.answers:
        return ProofResult(False, trace)
    ans = top.answers[0]
    used = eng.explain(top, ans)
    trace.statements = used
    trace.origins = [st.origin for st in used]
    return ProofResult(True, trace, _bindings(qvars, ans))
