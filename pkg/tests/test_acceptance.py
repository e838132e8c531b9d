"""Acceptance criteria 1-12.  Each test records one PASS/FAIL line (shown in
the terminal summary, or inline with ``-s``) and then asserts."""
import random
import sys
import time

import pytest
from fastapi.testclient import TestClient

from helpers import NOW, forged_posts, report
from randprog import random_program, random_query
from safetrust.apps import World, script_source
from safetrust.apps.attest import Attestation
from safetrust.apps.routing import Routing
from safetrust.apps.strong import Names, Strong
from safetrust.bench import SCENARIOS, linear_fit, percentile, run_scenario
from safetrust.certset import KeyPair, build_and_sign, make_token
from safetrust.guardd import GuardService, LoadedScripts, ServiceConfig, create_guard_app
from safetrust.logic import build_context, solve
from safetrust.logic.fixpoint import fixpoint_answers
from safetrust.slang import instantiate_guard
from safetrust.store import ClosureLimits, PostRejected, SafeStore, closure_of, store_getter


def _norm(answers):
    return sorted(repr(sorted(a.items(), key=repr)) for a in answers)


def test_c01_prover_matches_fixpoint_oracle():
    t0 = time.monotonic()
    mismatches, programs = [], 0
    for seed in range(200):
        rng = random.Random(seed)
        sts, preds = random_program(rng, max_statements=60, n_preds=8)
        assert len(sts) <= 60 and len(preds) <= 8
        ctx = build_context(sts)
        for _ in range(3):
            q = [random_query(rng, preds)]
            exp = _norm(fixpoint_answers(sts, q))
            if any(_norm(solve(ctx, q, use_secondary=sec)) != exp for sec in (True, False)):
                mismatches.append(seed)
        programs += 1
    elapsed = time.monotonic() - t0
    ok = not mismatches and programs >= 200 and elapsed < 60
    report(1, ok, f"{programs} programs x 3 queries, {len(mismatches)} mismatches, {elapsed:.1f}s")
    assert ok, mismatches[:10]


def test_c02_linear_pruned_inference():
    ns = list(range(2, 17, 2))
    pruned = run_scenario("pruning-groups", seed=0, ns=ns, variants=["pruned-secondary"])
    steps = [r.steps for r in pruned]
    a, b, resid = linear_fit(ns, steps)
    noisy = run_scenario("pruning-groups", seed=0, ns=[12], variants=["noisy-primary"],
                         budget=200_000)[0]
    p12 = steps[ns.index(12)]
    ratio = noisy.steps / p12
    allowed = all(r.allowed for r in pruned)
    ok = resid < 0.10 and ratio >= 10 and allowed
    report(2, ok, f"pruned steps {steps} fit {a:.2f}n+{b:.2f} (max rel resid {resid:.3f}); "
                  f"noisy/primary n=12: {noisy.steps}{'+ (censored)' if noisy.censored else ''} "
                  f"= {ratio:.0f}x pruned")
    assert ok


def test_c03_index_transparency():
    bad, counts = [], {}
    for name in sorted(SCENARIOS):
        on = run_scenario(name, seed=7, index=True, quick=True)
        off = run_scenario(name, seed=7, index=False, quick=True)
        key = lambda r: (r.variant, r.x, r.trial, r.allowed, r.answers, r.censored)
        if [key(r) for r in on] != [key(r) for r in off] or any(r.censored for r in on + off):
            bad.append(name)
        counts[name] = len(on)
    ok = not bad
    report(3, ok, f"{sum(counts.values())} requests over {len(counts)} scenarios, "
                  f"differing: {bad or 'none'}")
    assert ok


def test_c04_forgery_fuzz():
    victim, attacker = KeyPair.from_seed(b"victim"), KeyPair.from_seed(b"mallory")
    store = SafeStore(clock=lambda: NOW)
    store.post(build_and_sign("subject", "id(victim). member(victim, g1).",
                              [make_token(victim.principal_id, "cap/x")], 3600, victim, now=NOW))
    before = {t: store.fetch(t) for t in [make_token(victim.principal_id, "subject")]}
    wrong, accepted, codes = 0, 0, {}
    for raw, tok, expected in forged_posts(victim, attacker, random.Random(1), 1200):
        try:
            store.post(raw, tok)
            accepted += 1
        except PostRejected as exc:
            codes[exc.code] = codes.get(exc.code, 0) + 1
            wrong += exc.code != expected
    intact = all(store.fetch(t) == v for t, v in before.items()) and len(store) == 1
    ok = accepted == 0 and wrong == 0 and intact and sum(codes.values()) >= 1000
    report(4, ok, f"{sum(codes.values())} forgeries rejected {codes}; accepted {accepted}, "
                  f"wrong code {wrong}")
    assert ok


def _closure_case(store, key, edges, root, limits):
    pid = key.principal_id
    for label, targets in edges.items():
        store.post(build_and_sign(label, "f(a).", [make_token(pid, t) for t in targets],
                                  3600, key, now=NOW))
    get = store_getter(store, NOW)
    seen = []

    def counting(tok):
        seen.append(tok)
        return get(tok)
    res = closure_of([make_token(pid, root)], counting, limits)
    return res, len(seen) == len(set(seen))


def test_c05_closure_cycle_safety():
    key = KeyPair.from_seed(b"closure")
    cases = {
        "self-link": ({"s": ["s"]}, "s", ClosureLimits(), 1, False),
        "two-cycle": ({"x": ["y"], "y": ["x"]}, "x", ClosureLimits(), 2, False),
        "cycle-100": ({f"c{i}": [f"c{(i + 1) % 100}"] for i in range(100)}, "c0",
                      ClosureLimits(max_depth=128), 100, False),
        "cycle-100-depth-bound": ({f"c{i}": [f"c{(i + 1) % 100}"] for i in range(100)},
                                  "c0", ClosureLimits(), 33, True),
        "chain-at-depth": ({f"d{i}": [f"d{i + 1}"] if i < 32 else [] for i in range(33)},
                           "d0", ClosureLimits(max_depth=32), 33, False),
        "chain-past-depth": ({f"e{i}": [f"e{i + 1}"] if i < 59 else [] for i in range(60)},
                             "e0", ClosureLimits(max_depth=32), 33, True),
        "dense-cycles": ({f"k{i}": [f"k{j}" for j in range(20)] for i in range(20)}, "k0",
                         ClosureLimits(), 20, False),
        "wide-past-sets": ({"w": [f"w{i}" for i in range(600)], **{f"w{i}": ["w"] for i in range(600)}},
                           "w", ClosureLimits(max_sets=512), 512, True),
    }
    failures = []
    for name, (edges, root, limits, n_sets, truncated) in cases.items():
        store = SafeStore(clock=lambda: NOW)
        t0 = time.monotonic()
        res, once = _closure_case(store, key, edges, root, limits)
        fine = (once and res.truncated == truncated and len(res.sets) == n_sets
                and time.monotonic() - t0 < 30)
        if not fine:
            failures.append((name, len(res.sets), res.truncated, once))
    ok = not failures
    report(5, ok, f"{len(cases)} adversarial graphs terminate, validate once, truncation exact; "
                  f"failures: {failures or 'none'}")
    assert ok


def test_c06_capability_semantics():
    mismatches, rows = [], 0
    for length in range(1, 7):
        for mask in range(1 << length):
            flags = [bool(mask >> i & 1) for i in range(length)]
            w = World(1000 + length * 100 + mask)
            s = Strong(w)
            chain = [w.principal("owner")] + [w.principal(f"p{i}") for i in range(length)]
            obj = s.create_object(chain[0])
            for i, flag in enumerate(flags):
                s.delegate_capability(chain[i], chain[i + 1], obj, "read", flag, check=False)
            guard = w.principal("guard")
            last = chain[-1]
            res = s.check_access(guard, last, obj, "read")
            # bottom-up oracle over the bearer's closure and the guard's rules
            env = guard.env.child(BearerRef=s.bearer(last, obj).text)
            plan = instantiate_guard(s.mod, "accessObject", [last.pid, obj, "read"], env)
            closure = closure_of(plan.links, store_getter(w.store, w.clock()),
                                 require_root=False)
            oracle = bool(fixpoint_answers(closure.statements() + plan.local, plan.query))
            closed_form = all(flags[:-1])
            rows += 1
            if not (res.allowed == oracle == closed_form):
                mismatches.append((length, flags, res.allowed, oracle))
    ok = not mismatches and rows == 126
    report(6, ok, f"{rows} chains (lengths 1-6 x delegatable flags): "
                  f"{len(mismatches)} disagreements with the bottom-up oracle")
    assert ok, mismatches[:5]


def test_c07_naming_cache():
    w = World(70)
    names = Names(w)
    root = names.build_tree(5, 4)
    leaves = names.leaves()
    resolver = w.principal("resolver")
    p1 = [names.resolve_name(resolver, root.pid, leaf) for leaf in leaves]
    fetches_before = w.store.stats["fetches"]
    p2 = [names.resolve_name(resolver, root.pid, leaf) for leaf in leaves]
    p2_fetches = w.store.stats["fetches"] - fetches_before
    correct = all(r.target == names.targets[leaf] for r, leaf in zip(p1 + p2, leaves + leaves))
    ok = (len(leaves) == 1024 and all(r.validated for r in p1 + p2) and correct
          and p2_fetches == 0 and sum(r.fetches for r in p1) > 0)
    report(7, ok, f"{len(leaves)} leaves; pass 1 fetched {sum(r.fetches for r in p1)} sets, "
                  f"pass 2 fetched {p2_fetches}; validated {sum(r.validated for r in p1 + p2)}")
    assert ok


def test_c08_update_refresh():
    w = World(80, throttle_delay=1.0)
    s = Strong(w)
    owner, bob, carol = w.principal("owner"), w.principal("bob"), w.principal("carol")
    guard = w.principal("guard")
    obj = s.create_object(owner)
    s.delegate_capability(owner, bob, obj, "read", False)
    assert s.check_access(guard, bob, obj, "read").allowed        # warm the guard
    w.clock.tick(0.1)
    s.delegate_capability(owner, bob, obj, "write", False)
    w.clock.tick(0.1)
    r = s.check_access(guard, bob, obj, "write")
    cycle_ok = r.allowed and r.diagnostics["refreshes"] == 1
    # failure storm: 50 denied queries inside one second
    w.clock.tick(5)
    before = guard.contexts.stats["refreshes"]
    for _ in range(50):
        w.clock.tick(0.02)
        assert not s.check_access(guard, carol, obj, "read", bearer=s.bearer(bob, obj)).allowed
    storm = guard.contexts.stats["refreshes"] - before
    ok = cycle_ok and storm <= 2
    report(8, ok, f"deny->refresh->allow with {r.diagnostics['refreshes']} refresh; "
                  f"50 failures in 1s caused {storm} refresh rounds (limit 2)")
    assert ok


def test_c09_linking_granularity():
    rows = run_scenario("linking-granularity", seed=9)
    direct = [r for r in rows if r.variant == "direct"]
    coarse = [r for r in rows if r.variant == "coarse"]
    same = [d.allowed for d in direct] == [c.allowed for c in coarse]
    le = sum(d.statements <= c.statements for d, c in zip(direct, coarse))
    p95d = percentile([r.statements for r in direct], 95)
    p95c = percentile([r.statements for r in coarse], 95)
    ok = same and le == len(direct) and p95c >= 2 * p95d and len(direct) > 0
    report(9, ok, f"{len(direct)} requests, decisions identical: {same}; direct <= coarse on "
                  f"{le}/{len(direct)}; p95 statements direct {p95d} vs coarse {p95c} "
                  f"({p95c / max(p95d, 1):.1f}x)")
    assert ok


def test_c10_routing():
    w = World(100)
    r = Routing(w, n_as=1024)
    r.allocate_tree("10.0.0.0/8", branching=8, depth=4)
    rng = random.Random(100)
    origins = rng.sample([o for o in r.origins() if o[0] >= 73], 2)
    validator = w.principal("validator")
    adverts, valid = [], 0
    for origin, prefix in origins:
        ads = r.propagate(origin, prefix)
        adverts += ads
        valid += sum(r.validate(validator, ad, retry=False).allowed for ad in ads)
    # single-hop corruptions along sampled paths, each checked by a cold validator
    corrupt_total = corrupt_denied = 0
    for j, ad in enumerate(rng.sample(adverts, 6)):
        for k, hop in enumerate(r.path(ad.prefix, ad.receiver)):
            r.break_link(hop)
            v = w.principal(f"cold-{j}-{k}")
            corrupt_total += 1
            corrupt_denied += not r.validate(v, ad, retry=False).allowed
            r.restore(hop)
    for j, (origin, prefix) in enumerate(origins):
        far = max((a for a in adverts if a.prefix == prefix), key=lambda a: a.hops)
        path = [origin] + [h.receiver for h in r.path(prefix, far.receiver)]
        hj = r.hijack(origin, path, r.foreign_prefix(origin))
        corrupt_total += 1
        corrupt_denied += not r.validate(w.principal(f"hj-{j}"), hj, retry=False).allowed
    mean_hops = sum(a.hops for a in adverts) / len(adverts)
    ok = valid == len(adverts) and corrupt_denied == corrupt_total and r.graph.number_of_nodes() >= 1024
    report(10, ok, f"{r.graph.number_of_nodes()} ASes, {len(r.allocations)} allocations; "
                   f"{valid}/{len(adverts)} adverts validate (mean path {mean_hops:.1f}); "
                   f"{corrupt_denied}/{corrupt_total} corruptions denied")
    assert ok


def test_c11_attestation_linearity():
    w = World(110)
    a = Attestation(w)
    owner, guard = w.principal("owner"), w.principal("guard")
    acl = [f"acl{j}" for j in range(1999)] + ["shared"]
    obj = a.create_object(owner, acl)
    rng = random.Random(11)
    ks = list(range(50, 451, 50))
    steps, mismatches, cases = [], 0, 0
    for k in ks:
        variants = {
            "overlap": [f"p{k}-{i}" for i in range(k - 1)] + ["shared"],
            "disjoint": [f"p{k}-{i}" for i in range(k)],
            "random": [f"acl{rng.randrange(4000)}" for _ in range(k)],
        }
        for name, props in variants.items():
            img = f"{name}-{k}"
            client = w.principal(f"client-{img}")
            a.endorse(img, props)
            res = a.check_access(guard, client.pid, obj, a.attest(client.pid, img))
            cases += 1
            mismatches += res.allowed != bool(set(props) & set(acl))
            if name == "overlap":
                steps.append(res.diagnostics["steps"])
    slope, icpt, resid = linear_fit(ks, steps)
    ok = resid < 0.10 and mismatches == 0
    report(11, ok, f"ACL 2000; steps {steps} over props {ks[0]}..{ks[-1]} fit "
                   f"{slope:.2f}k+{icpt:.1f} (max rel resid {resid:.3f}); "
                   f"{mismatches}/{cases} decisions differ from set intersection")
    assert ok


def test_c12_statelessness():
    w = World(120)
    s = Strong(w)
    owner = w.principal("owner")
    objs = [s.create_object(owner) for _ in range(5)]
    people = [w.principal(f"u{i}") for i in range(12)]
    rng = random.Random(12)
    can = {(owner.pid, o) for o in objs}
    for _ in range(40):
        o = rng.choice(objs)
        src = rng.choice([p for p in [owner] + people if (p.pid, o) in can])
        dst = rng.choice(people)
        flag = rng.random() < 0.6
        s.delegate_capability(src, dst, o, rng.choice(["read", "write"]), flag, check=False)
        if flag:
            can.add((dst.pid, o))
    trace = []
    for _ in range(500):
        p, o = rng.choice(people), rng.choice(objs)
        trace.append({"Subject": p.pid, "Obj": o, "Priv": rng.choice(["read", "write"]),
                      "BearerRef": s.bearer(rng.choice(people + [p]), o).text})
    key = KeyPair.from_seed(b"guardd")
    scripts = LoadedScripts.from_sources([script_source("strong")])

    def boot():
        svc = GuardService(key, scripts, w.store, ServiceConfig("", []), clock=w.clock,
                           rng=random.Random(0))
        return TestClient(create_guard_app(svc))

    before = [boot().post("/api/accessObject", json=b).json()["allowed"] for b in trace]
    client = boot()   # restart: fresh process state, same key, scripts and store
    after = [client.post("/api/accessObject", json=b).json()["allowed"] for b in trace]
    ok = before == after and 0 < sum(before) < len(before)
    report(12, ok, f"{len(trace)}-request trace: {sum(before)} allows; identical after "
                   f"restart: {before == after}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
