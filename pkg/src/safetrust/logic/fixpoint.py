"""Bottom-up semi-naive evaluation.

A deliberately separate evaluator used as a reference for the tabled
prover: it shares only the term/atom types and the builtin table.
"""
from __future__ import annotations

from collections import defaultdict
from typing import Iterable, List, Sequence

from . import builtins as _builtins
from .terms import Atom, Statement, Var

__all__ = ["least_model", "query_model", "fixpoint_answers"]


def _match(pattern, values, env):
    out = dict(env)
    for p, v in zip(pattern, values):
        if isinstance(p, Var):
            if p in out:
                if out[p] != v or type(out[p]) is not type(v):
                    return None
            else:
                out[p] = v
        elif p != v or type(p) is not type(v):
            return None
    return out


def _eval_body(body: Sequence[Atom], rel, env, delta_pos=None, delta=None):
    envs = [env]
    for i, atom in enumerate(body):
        nxt = []
        if atom.builtin:
            spec = _builtins.lookup(atom.predicate, len(atom.args) - 1)
            for e in envs:
                args = tuple(e.get(a, a) if isinstance(a, Var) else a
                             for a in atom.args[1:])
                for res in spec.fn(args):
                    m = _match(atom.args[1:], res, e)
                    if m is not None:
                        nxt.append(m)
        else:
            source = delta if i == delta_pos else rel
            facts = source.get((atom.predicate, len(atom.args)), ())
            for e in envs:
                for f in facts:
                    m = _match(atom.args, f, e)
                    if m is not None:
                        nxt.append(m)
        envs = nxt
        if not envs:
            break
    return envs


def least_model(statements: Iterable[Statement]) -> dict:
    """Map ``(predicate, len(args))`` to the set of derivable argument tuples."""
    statements = list(statements)
    rel = defaultdict(set)
    rules = []
    for st in statements:
        if st.body:
            rules.append(st)
        else:
            rel[(st.head.predicate, len(st.head.args))].add(st.head.args)
    delta = {k: set(v) for k, v in rel.items()}
    # first round: rules whose bodies are builtin-only never see a delta
    for r in rules:
        if all(b.builtin for b in r.body):
            for env in _eval_body(r.body, rel, {}):
                fact = tuple(env[a] if isinstance(a, Var) else a for a in r.head.args)
                key = (r.head.predicate, len(fact))
                if fact not in rel[key]:
                    rel[key].add(fact)
                    delta.setdefault(key, set()).add(fact)
    while delta:
        new = defaultdict(set)
        for r in rules:
            for pos, atom in enumerate(r.body):
                if atom.builtin or (atom.predicate, len(atom.args)) not in delta:
                    continue
                for env in _eval_body(r.body, rel, {}, pos, delta):
                    fact = tuple(env[a] if isinstance(a, Var) else a
                                 for a in r.head.args)
                    key = (r.head.predicate, len(fact))
                    if fact not in rel[key]:
                        new[key].add(fact)
        for k, v in new.items():
            rel[k] |= v
        delta = {k: v for k, v in new.items() if v}
    return dict(rel)


def query_model(model: dict, query: Sequence[Atom]) -> List[dict]:
    envs = _eval_body(query, model, {})
    seen, out = set(), []
    for e in envs:
        key = tuple(sorted((v.name, repr(val)) for v, val in e.items()))
        if key not in seen:
            seen.add(key)
            out.append({v.name: val for v, val in e.items()})
    return out


def fixpoint_answers(statements: Iterable[Statement], query) -> List[dict]:
    if isinstance(query, Atom):
        query = [query]
    return query_model(least_model(statements), query)
