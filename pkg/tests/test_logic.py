import ipaddress
import random
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randprog import random_program, random_query
from safetrust.logic import (ArityConflictError, Atom, Limits, LogicSyntaxError,
                             RangeRestrictionError, SELF, StaleContentError,
                             Statement, Var, build_context, format_statement,
                             ipv4_contains, parse_program, parse_query, prove,
                             resolve_self, solve, solve_with_stats)
from safetrust.logic.fixpoint import fixpoint_answers
from safetrust.logic.solver import AnswerLimitExceeded, DeadlineExceeded, StepLimitExceeded

CAP_RULE = ("cap(?S,?O,?P,?D) :- ?Dg: delegateCap(?S,?O,?P,?D), "
                "cap(?Dg,?O,?P,true).")


def norm(answers):
    return sorted(tuple(sorted((k, repr(v)) for k, v in a.items())) for a in answers)


def chain_program(n, flags=None, guard="g"):
    """Root p0 holds cap; p_{i-1} delegates to p_i with flag flags[i-1]."""
    flags = flags or ["true"] * n
    src = [f"{guard}: cap(p0, obj, read, true)."]
    for i in range(1, n + 1):
        src.append(f"p{i-1}: delegateCap(p{i}, obj, read, {flags[i-1]}).")
    return resolve_self(parse_program("\n".join(src) + CAP_RULE), guard)


# --- parser --------------------------------------------------------------

def test_parse_capability_rule():
    [rule] = parse_program(CAP_RULE)
    assert rule.head.speaker is SELF
    assert rule.body[0].speaker == Var("Dg")
    assert rule.body[1].args[-1] == "true"


def test_parse_empty():
    assert parse_program("") == []
    assert parse_program("  % just a comment\n") == []


def test_range_restriction():
    with pytest.raises(RangeRestrictionError, match=r"head variable \?X unbound in body"):
        parse_program("p(?X) :- q(?Y).")
    with pytest.raises(RangeRestrictionError):
        parse_program("p(?X).")


@pytest.mark.parametrize("src", [
    "p(a) :- not q(a).", "p(a) :- \\+ q(a).", "p(f(a)).", "p(a) :- q(a)",
    "p(a) :- @nosuch(a).", "p($Foo).", "@eq(a, a).",
    "p(?X) :- @lt(?X, 3), q(?X).",
])
def test_parse_errors(src):
    with pytest.raises(LogicSyntaxError):
        parse_program(src)


def test_syntax_error_position():
    with pytest.raises(LogicSyntaxError) as ei:
        parse_program("p(a).\nq(b) :- r(c) s(d).")
    assert ei.value.line == 2 and ei.value.col > 1


def test_typed_literals():
    [s] = parse_program('p(ipv4"10.0.0.0/8").')
    assert s.head.args[1] == "10.0.0.0/8"
    with pytest.raises(LogicSyntaxError):
        parse_program('p(ipv4"10.0.0.1/8").')


_ident = st.from_regex(r"[a-z][a-z0-9_]{0,5}", fullmatch=True)
_const = st.one_of(_ident, st.integers(-1000, 1000), st.text(max_size=8))


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(_ident, _const, st.lists(_const, max_size=3)),
                min_size=1, max_size=5))
def test_format_parse_roundtrip(facts):
    stmts = [Statement(Atom(p if p != "not" else "n", (sp,) + tuple(args)))
             for p, sp, args in facts]
    text = "\n".join(format_statement(s) for s in stmts)
    assert parse_program(text) == stmts


# --- context -------------------------------------------------------------

def test_secondary_buckets():
    sts = chain_program(6)
    ctx = build_context(sts)
    buckets = {k: v for k, v in ctx.secondary.items() if k[0] == "delegateCap"}
    assert len(buckets) == 6 and all(len(v) == 1 for v in buckets.values())


def test_empty_context():
    ctx = build_context([])
    assert solve(ctx, parse_query("s: p(a, ?X)")) == []
    assert ctx.candidates(parse_query("s: p(a)")[0]) == ()


def test_arity_conflict():
    with pytest.raises(ArityConflictError):
        build_context(resolve_self(parse_program("p(a). p(a, b)."), "s"))


def test_stale_content_rejected():
    [s] = resolve_self(parse_program("p(a)."), "s")
    s = s.with_origin(b"tok")
    with pytest.raises(StaleContentError):
        build_context([s], now=10, expiries={b"tok": 10})
    ctx = build_context([s], now=5, expiries={b"tok": 10})
    assert ctx.earliest_expiry == 10 and ctx.is_fresh(9) and not ctx.is_fresh(10)


def test_unresolved_self_rejected():
    with pytest.raises(ValueError):
        build_context(parse_program("p(a)."))


def test_index_covers_large_random_fact_set():
    rng = random.Random(7)
    facts = [Statement(Atom(f"f{rng.randrange(5)}", ("s", f"k{rng.randrange(500)}", i)))
             for i in range(10_000)]
    ctx = build_context(facts)
    assert sum(map(len, ctx.secondary.values())) == len(facts)
    assert sum(map(len, ctx.primary.values())) == len(facts)
    for f in facts[::97]:
        goal = f.head
        assert f in ctx.candidates(goal, True) and f in ctx.candidates(goal, False)


def test_index_build_roughly_linear():
    sizes = [1000, 4000, 10000]
    per_item = []
    for n in sizes:
        facts = [Statement(Atom("f", ("s", f"k{i % 300}", i))) for i in range(n)]
        best = min(_timed(build_context, facts) for _ in range(5))
        per_item.append(best / n)
    # linear build: per-statement cost stays flat across a 10x size range
    assert max(per_item) / min(per_item) < 3.0


def _timed(fn, *args):
    t0 = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t0


# --- solver --------------------------------------------------------------

def test_capability_chain_answers():
    ctx = build_context(chain_program(5))
    assert norm(solve(ctx, parse_query("g: cap(p5, obj, read, ?D)"))) == norm([{"D": "true"}])
    flags = ["true"] * 4 + ["false"]
    ctx = build_context(chain_program(5, flags))
    assert solve(ctx, parse_query("g: cap(p5, obj, read, ?D)")) == [{"D": "false"}]


def test_prove_mid_chain_nondelegatable():
    ctx = build_context(chain_program(4, ["true", "false", "true", "true"]))
    assert not prove(ctx, parse_query("g: cap(p4, obj, read, ?D)"))
    assert prove(ctx, parse_query("g: cap(p2, obj, read, false)"))


def test_prove_direct_fact_and_trace():
    ctx = build_context(resolve_self(parse_program("p: f(a)."), "x"))
    r = prove(ctx, parse_query("p: f(a)"))
    assert r.holds and r.trace.statements == list(ctx.statements)
    r = prove(build_context(chain_program(3)), parse_query("g: cap(p3, obj, read, true)"))
    assert r.holds and len(r.trace.statements) == 7
    assert r.trace.as_record()["statements_used"] == 7


def test_oracle_equivalence_random():
    for seed in range(60):
        rng = random.Random(seed)
        sts, preds = random_program(rng)
        ctx = build_context(sts)
        for _ in range(2):
            q = random_query(rng, preds)
            exp = norm(fixpoint_answers(sts, q))
            assert norm(solve(ctx, q)) == exp, seed
            assert norm(solve(ctx, q, use_secondary=False)) == exp, seed


def test_conjunctive_query_with_builtin():
    sts = resolve_self(parse_program(
        'owns(a, ipv4"10.0.0.0/8"). owns(b, ipv4"192.168.0.0/16").'), "t")
    ctx = build_context(sts)
    q = parse_query('t: owns(?X, ?P), @ipv4_contains(?P, ipv4"10.1.0.0/16")')
    assert solve(ctx, q) == [{"X": "a", "P": "10.0.0.0/8"}]


def test_termination_left_and_right_recursion():
    src = """
    path(?X, ?Y) :- edge(?X, ?Y).
    path(?X, ?Z) :- path(?X, ?Y), edge(?Y, ?Z).
    rpath(?X, ?Z) :- edge(?X, ?Y), rpath(?Y, ?Z).
    rpath(?X, ?Y) :- edge(?X, ?Y).
    """ + " ".join(f"edge(n{i}, n{(i + 1) % 30})." for i in range(30))
    sts = resolve_self(parse_program(src), "s")
    ctx = build_context(sts)
    for q in ("path(n0, ?Y)", "rpath(?X, n5)", "path(?X, ?X)"):
        query = resolve_self([Statement(a) for a in parse_query(q)], "s")
        got = solve(ctx, [s.head for s in query])
        assert norm(got) == norm(fixpoint_answers(sts, [s.head for s in query]))
    assert len(solve(ctx, parse_query("s: path(n0, ?Y)"))) == 30


def test_monotonicity():
    rng = random.Random(3)
    for seed in range(20):
        rng = random.Random(seed)
        sts, preds = random_program(rng)
        q = random_query(rng, preds)
        base = set(norm(solve(build_context(sts[: len(sts) // 2]), q)))
        assert base <= set(norm(solve(build_context(sts), q)))


def test_speaker_integrity():
    sts = resolve_self(parse_program("p(?X) :- q: r(?X). q: r(a)."), "s")
    ctx = build_context(sts)
    assert solve(ctx, parse_query("?W: p(?X)")) == [{"W": "s", "X": "a"}]


def test_limits():
    sts = resolve_self(parse_program(
        " ".join(f"e(n{i}, n{i+1})." for i in range(200))
        + " t(?X,?Y) :- e(?X,?Y). t(?X,?Z) :- t(?X,?Y), e(?Y,?Z)."), "s")
    ctx = build_context(sts)
    with pytest.raises(StepLimitExceeded) as ei:
        solve(ctx, parse_query("s: t(?A, ?B)"), Limits(max_steps=500))
    assert ei.value.reason == "steps"
    with pytest.raises(AnswerLimitExceeded) as ei:
        solve(ctx, parse_query("s: t(?A, ?B)"), Limits(max_answers=10))
    assert len(ei.value.partial) == 10
    with pytest.raises(DeadlineExceeded):
        solve(ctx, parse_query("s: t(?A, ?B)"), Limits(deadline=time.monotonic() - 1))


def test_unknown_builtin_in_query():
    with pytest.raises(LogicSyntaxError):
        parse_query("@frob(a)")


def test_pruned_chain_steps_linear():
    ns = list(range(2, 21))
    steps = []
    for n in ns:
        ctx = build_context(chain_program(n))
        steps.append(prove(ctx, parse_query(f"g: cap(p{n}, obj, read, ?D)")).trace.steps)
    slope, icpt = np.polyfit(ns, steps, 1)
    resid = np.abs(np.polyval([slope, icpt], ns) - steps) / steps
    assert resid.max() < 0.1
    lin_err = np.sum((np.polyval([slope, icpt], ns) - steps) ** 2)
    a, b = np.polyfit(ns, np.log(steps), 1)
    exp_err = np.sum((np.exp(np.polyval([a, b], ns)) - steps) ** 2)
    assert lin_err < exp_err


def test_stats_reports_tables():
    ctx = build_context(chain_program(3))
    ans, stats = solve_with_stats(ctx, parse_query("g: cap(?S, obj, read, ?D)"))
    assert len(ans) == 4 and stats["steps"] > 0 and stats["tables"] >= 1


# --- ipv4 ----------------------------------------------------------------

def test_ipv4_examples():
    assert ipv4_contains("152.3.136.0/24", "152.3.136.0/24")
    assert ipv4_contains("10.0.0.0/8", "10.1.0.0/16")
    assert not ipv4_contains("10.1.0.0/16", "10.0.0.0/8")
    with pytest.raises(ValueError):
        ipv4_contains("10.0.0.1/8", "10.0.0.0/8")
    with pytest.raises(ValueError):
        ipv4_contains("300.0.0.0/8", "10.0.0.0/8")


def _rand_prefix(rng):
    ln = rng.randint(0, 32)
    addr = rng.getrandbits(32) if rng.random() < 0.5 else (10 << 24) | rng.getrandbits(16)
    mask = ((1 << 32) - 1) ^ ((1 << (32 - ln)) - 1)
    addr &= mask
    return f"{ipaddress.IPv4Address(addr)}/{ln}", addr, mask


def test_ipv4_against_mask_oracle():
    rng = random.Random(11)
    for _ in range(1000):
        o, oa, om = _rand_prefix(rng)
        i, ia, im = _rand_prefix(rng)
        expected = (im & om) == om and (ia & om) == oa
        assert ipv4_contains(o, i) == expected, (o, i)
