"""Workload generators for the bench scenarios.

Each scenario takes ``seed``, ``index`` (force the secondary index on/off,
or None for the scenario's own variants), ``quick`` (a small preset used by
the test suite) and scenario-specific keyword parameters, and returns rows.
"""
from __future__ import annotations

import random
import time
import uuid
from typing import Dict, List

from ..certset import KeyPair
from ..logic import Atom, Statement
from ..apps.attest import Attestation
from ..apps.routing import Routing
from ..apps.strong import Names, Strong, build_membership_chain
from ..apps.world import World
from .core import Evaluation, Row, guard_request, scenario

__all__ = ["group_noise", "name_noise", "DEFAULTS", "QUICK"]

VARIANTS = ["pruned-secondary", "pruned-primary", "noisy-secondary", "noisy-primary"]

DEFAULTS: Dict[str, dict] = {
    "pruning-groups": dict(ns=list(range(2, 17, 2)), budget=300_000, variants=VARIANTS),
    "pruning-names": dict(ns=list(range(2, 17, 2)), budget=300_000, variants=VARIANTS),
    "naming-cache": dict(height=5, branching=4, passes=2),
    "dual-index": dict(heights=[2, 4, 6, 8], branching=2, sample=16),
    "routing": dict(n_as=1024, k=4, p=0.2, branching=8, depth=4, origins=6, queries=200),
    "attestation": dict(acl=2000, props=list(range(50, 451, 50))),
    "linking-granularity": dict(principals=40, objects=12, delegations=240, requests=200,
                                p_delegatable=0.7),
    "update-mix": dict(ops=300, update_ratio=0.2, interval=0.25, throttle=1.0),
}

QUICK: Dict[str, dict] = {
    "pruning-groups": dict(ns=[2, 4, 6], budget=50_000, variants=VARIANTS),
    "pruning-names": dict(ns=[2, 4, 6], budget=50_000, variants=VARIANTS),
    "naming-cache": dict(height=3, branching=3, passes=2),
    "dual-index": dict(heights=[2, 4], branching=2, sample=4),
    "routing": dict(n_as=64, k=4, p=0.2, branching=4, depth=3, origins=3, queries=15),
    "attestation": dict(acl=100, props=[10, 20, 30]),
    "linking-granularity": dict(principals=10, objects=4, delegations=30, requests=30,
                                p_delegatable=0.7),
    "update-mix": dict(ops=40, update_ratio=0.25, interval=0.25, throttle=1.0),
}



def _params(name, quick, overrides) -> dict:
    p = dict((QUICK if quick else DEFAULTS)[name])
    unknown = set(overrides) - set(p)
    if unknown:
        raise TypeError(f"{name}: unknown parameters {sorted(unknown)}")
    p.update(overrides)
    return p


def _row(name, seed, variant, x, trial, ev: Evaluation, entry=None, fetches=0,
         hit=False, refreshes=0) -> Row:
    return Row(name, seed, variant, x, trial, ev.allowed, ev.answers, ev.steps, ev.censored,
               ev.statements if ev.statements >= 0 else
               (len(entry.context) if entry is not None else 0),
               len(entry.tokens) if entry is not None else 0,
               fetches, hit, refreshes, ev.latency_ms)


def _scid(owner: str, i: int) -> str:
    return f"{owner}:{uuid.UUID(int=i, version=4)}"


def _fact(pred, speaker, *args) -> Statement:
    return Statement(Atom(pred, (speaker,) + args))


def group_noise(root_owner: str, root_group: str, height: int, decoy: KeyPair) -> List[Statement]:
    """A complete binary tree of nested groups under ``root_group`` whose
    leaves admit only a decoy member."""
    d = decoy.principal_id.text
    out, level, n = [], [(root_owner, root_group)], 0
    for depth in range(height):
        nxt = []
        for speaker, g in level:
            for _ in range(2):
                n += 1
                child = _scid(d, n)
                out.append(_fact("nestGroup", speaker, g, child))
                nxt.append((d, child))
        level = nxt
    for speaker, g in level:
        out.append(_fact("groupMember", speaker, g, "decoy"))
    return out


def name_noise(root: str, height: int) -> List[Statement]:
    """A binary tree of decoy subdomains under ``root``, stated in both
    parameter orders like genuine name delegations."""
    out, level, n = [], [root], 0
    for depth in range(height):
        nxt = []
        for parent in level:
            for _ in range(2):
                n += 1
                child = f"decoy-{n}"
                out.append(_fact("childOf", parent, child, parent))
                out.append(_fact("parentOf", parent, parent, child))
                nxt.append(child)
        level = nxt
    return out


def _variants(names, index):
    """(label, context mode, secondary index).  A forced index collapses the
    variants to their context mode so runs with the index on and off line up."""
    out = []
    for name in names:
        mode, _, idx = name.partition("-")
        if index is None:
            out.append((name, mode, idx == "secondary"))
        elif (mode, mode, index) not in out:
            out.append((mode, mode, index))
    return out


@scenario("pruning-groups")
def pruning_groups(seed=0, index=None, quick=False, **kw):
    """Membership through an n-hop nested-group chain; the noisy variants
    add a height-n binary tree of decoy subgroups ahead of the context."""
    p = _params("pruning-groups", quick, kw)
    rows = []
    for n in p["ns"]:
        w = World(seed)
        s = Strong(w)
        ch = build_membership_chain(s, n, prefix=f"n{n}")
        guard = w.principal("guard")
        owner0 = w.principal(f"n{n}-owner0").pid
        variants = _variants(p["variants"], index)
        noise = ()
        if any(m == "noisy" for _, m, _ in variants):
            noise = group_noise(owner0, ch.groups[0], n,
                                KeyPair.from_seed(f"{seed}:decoy".encode()))
        for label, mode, secondary in variants:
            ev, entry, fetches, hit = guard_request(
                guard, s.mod, "queryMembership", [ch.member.pid, ch.groups[0]], secondary,
                p["budget"], noise if mode == "noisy" else (), BearerRef=ch.bearer.text)
            rows.append(_row("pruning-groups", seed, label, n, 0, ev,
                             entry, fetches, hit))
    return rows


@scenario("pruning-names")
def pruning_names(seed=0, index=None, quick=False, **kw):
    """Directory ACL at the root, object n levels below; noisy variants add a
    height-n tree of decoy subdomains."""
    p = _params("pruning-names", quick, kw)
    rows = []
    for n in p["ns"]:
        w = World(seed)
        s, names = Strong(w), Names(w)
        root = names.build_tree(n, 1, root=f"r{n}")
        gowner = w.principal("group-owner")
        group = s.create_group(gowner)
        member = w.principal("member")
        bearer = s.add_member(gowner, group, member.pid)
        names.set_acl("", group, "read")
        leaf = names.leaves()[0]
        variants = _variants(p["variants"], index)
        noise = name_noise(root.pid, n) if any(m == "noisy" for _, m, _ in variants) else ()
        guard = w.principal("guard")
        for label, mode, secondary in variants:
            ev, entry, fetches, hit = guard_request(
                guard, names.mod, "prefixAccess",
                [member.pid, names.targets[leaf], "read", names.entries[leaf].text], secondary,
                p["budget"], noise if mode == "noisy" else (), BearerRef=bearer.text)
            rows.append(_row("pruning-names", seed, label, n, 0, ev,
                             entry, fetches, hit))
    return rows


@scenario("naming-cache")
def naming_cache(seed=0, index=None, quick=False, **kw):
    """Resolve and validate every leaf, in several passes through one
    resolver's set cache."""
    p = _params("naming-cache", quick, kw)
    w = World(seed, use_secondary=True if index is None else index)
    names = Names(w)
    root = names.build_tree(p["height"], p["branching"])
    resolver = w.principal("resolver")
    rows = []
    for pas in range(1, p["passes"] + 1):
        for i, leaf in enumerate(names.leaves()):
            t0 = time.perf_counter()
            r = names.resolve_name(resolver, root.pid, leaf)
            ms = (time.perf_counter() - t0) * 1000
            ev = Evaluation(r.validated, 0, False, r.target[-16:], ms)
            row = _row("naming-cache", seed, f"pass{pas}", p["height"], i, ev,
                       fetches=r.fetches, hit=r.fetches == 0)
            row.sets = len(r.tokens)
            rows.append(row)
    return rows


@scenario("dual-index")
def dual_index(seed=0, index=None, quick=False, **kw):
    """Prefix-ACL checks with name delegations stated in one or both
    parameter orders."""
    p = _params("dual-index", quick, kw)
    rows = []
    secondary = True if index is None else index
    for h in p["heights"]:
        for dual in (True, False):
            w = World(seed, use_secondary=secondary)
            s, names = Strong(w), Names(w, dual=dual)
            names.build_tree(h, p["branching"], root=f"h{h}")
            gowner = w.principal("group-owner")
            group = s.create_group(gowner)
            member = w.principal("member")
            bearer = s.add_member(gowner, group, member.pid)
            names.set_acl("c1", group, "read")
            guard = w.principal("guard")
            leaves = names.leaves()
            step = max(1, len(leaves) // p["sample"])
            for i, leaf in enumerate(leaves[::step]):
                ev, entry, fetches, hit = guard_request(
                    guard, names.mod, "prefixAccess" if dual else "prefixAccessSingle",
                    [member.pid, names.targets[leaf], "read", names.entries[leaf].text],
                    secondary, BearerRef=bearer.text)
                rows.append(_row("dual-index", seed, "dual" if dual else "single", h, i,
                                 ev, entry, fetches, hit))
    return rows


@scenario("routing")
def routing(seed=0, index=None, quick=False, **kw):
    """Route validation under three query models: same origin, random, and
    same receiver.  Each model gets a validator with cold caches."""
    p = _params("routing", quick, kw)
    secondary = True if index is None else index
    w = World(seed, use_secondary=secondary)
    r = Routing(w, n_as=p["n_as"], k=p["k"], p=p["p"])
    r.allocate_tree(branching=p["branching"], depth=p["depth"])
    rng = random.Random(seed)
    leaf_origins = [o for o in r.origins() if o[0] >= len(r.allocations) - p["branching"] ** (p["depth"] - 1)]
    chosen = rng.sample(leaf_origins, min(p["origins"], len(leaf_origins)))
    adverts = {}
    for origin, prefix in chosen:
        adverts[prefix] = r.propagate(origin, prefix)
    prefixes = [pf for _, pf in chosen]
    receivers = sorted(set.intersection(*[{a.receiver for a in ads} for ads in adverts.values()]))
    q = p["queries"]
    models = {
        "same-origin": [rng.choice(adverts[prefixes[0]]) for _ in range(q)],
        "random": [rng.choice(adverts[rng.choice(prefixes)]) for _ in range(q)],
    }
    recv = rng.choice(receivers)
    by_recv = {pf: next(a for a in ads if a.receiver == recv) for pf, ads in adverts.items()}
    models["same-receiver"] = [by_recv[rng.choice(prefixes)] for _ in range(q)]
    rows = []
    for model, ads in models.items():
        v = w.principal(f"validator-{model}")
        for i, ad in enumerate(ads):
            ev, entry, fetches, hit = guard_request(
                v, r.mod, "validateRoute",
                [r.as_(ad.receiver).pid, ad.prefix, r.as_(ad.advertiser).pid], secondary,
                BearerRef=ad.token.text, Anchor=r.anchor.pid)
            rows.append(_row("routing", seed, model, ad.hops, i, ev, entry, fetches, hit))
    return rows


@scenario("attestation")
def attestation(seed=0, index=None, quick=False, **kw):
    """Fixed-size object ACL; image property lists of growing length with the
    one shared property placed last, or no shared property."""
    p = _params("attestation", quick, kw)
    secondary = True if index is None else index
    w = World(seed, use_secondary=secondary)
    a = Attestation(w)
    owner, guard = w.principal("owner"), w.principal("guard")
    acl = [f"acl{j}" for j in range(p["acl"] - 1)] + ["shared"]
    obj = a.create_object(owner, acl)
    rows = []
    for k in p["props"]:
        for variant in ("overlap", "disjoint"):
            props = [f"p{k}-{i}" for i in range(k - 1)] + ["shared" if variant == "overlap" else f"p{k}-last"]
            img = f"img-{variant}-{k}"
            client = w.principal(f"client-{variant}-{k}")
            a.endorse(img, props)
            bearer = a.attest(client.pid, img)
            ev, entry, fetches, hit = guard_request(
                guard, a.mod, "checkAccess", [client.pid, obj], secondary,
                BearerRef=bearer.text, **a._vars())
            rows.append(_row("attestation", seed, variant, k, 0, ev, entry, fetches, hit))
    return rows


def _delegation_workload(strong: Strong, p: dict, seed: int):
    """Random delegations among principals; the generator tracks who may
    delegate so every issued delegation is supported."""
    w = strong.world
    rng = random.Random(seed)
    owner = w.principal("owner")
    people = [w.principal(f"u{i}") for i in range(p["principals"])]
    objs = [strong.create_object(owner) for _ in range(p["objects"])]
    can = {(owner.pid, o) for o in objs}
    holders = {o: [owner] for o in objs}
    for _ in range(p["delegations"]):
        o = rng.choice(objs)
        delegators = [h for h in holders[o] if (h.pid, o) in can]
        src = rng.choice(delegators)
        dst = rng.choice([x for x in people if x is not src])
        flag = rng.random() < p["p_delegatable"]
        strong.delegate_capability(src, dst, o, "read", flag, check=False)
        if dst not in holders[o]:
            holders[o].append(dst)
        if flag:
            can.add((dst.pid, o))
    reqs = []
    for _ in range(p["requests"]):
        o = rng.choice(objs)
        subj = rng.choice(holders[o][1:] or people) if rng.random() < 0.8 else rng.choice(people)
        reqs.append((subj, o))
    return reqs


@scenario("linking-granularity")
def linking_granularity(seed=0, index=None, quick=False, **kw):
    """The same delegation workload under direct and coarse linking."""
    p = _params("linking-granularity", quick, kw)
    secondary = True if index is None else index
    rows = []
    for mode in ("direct", "coarse"):
        w = World(seed, use_secondary=secondary)
        strong = Strong(w, mode)
        reqs = _delegation_workload(strong, p, seed)
        guard = w.principal("guard")
        for i, (subj, o) in enumerate(reqs):
            ev, entry, fetches, hit = guard_request(
                guard, strong.mod, "accessObject", [subj.pid, o, "read"], secondary,
                BearerRef=strong.bearer(subj, o).text)
            rows.append(_row("linking-granularity", seed, mode, p["delegations"], i, ev,
                             entry, fetches, hit))
    return rows


@scenario("update-mix")
def update_mix(seed=0, index=None, quick=False, **kw):
    """A warm guard under a mix of queries and new delegations.  Updates add
    a privilege to an existing capability set, so the guard's cached context
    is stale until a failed query triggers a refresh."""
    p = _params("update-mix", quick, kw)
    secondary = True if index is None else index
    w = World(seed, use_secondary=secondary, throttle_delay=p["throttle"])
    strong = Strong(w)
    rng = random.Random(seed)
    owner = w.principal("owner")
    guard = w.principal("guard")
    obj = strong.create_object(owner)
    users = [w.principal(f"u{i}") for i in range(8)]
    granted = {u.pid: {"read"} for u in users}
    for u in users:
        strong.delegate_capability(owner, u, obj, "read", False, check=False)
    rows = []
    for i in range(p["ops"]):
        w.clock.tick(p["interval"])
        u = rng.choice(users)
        if rng.random() < p["update_ratio"]:
            if "write" not in granted[u.pid]:
                strong.delegate_capability(owner, u, obj, "write", False, check=False)
                granted[u.pid].add("write")
                rows.append(Row("update-mix", seed, "update", 0, i, True, "", 0, False,
                                0, 0, 0, False, 0, 0.0))
                continue
        priv = "write" if rng.random() < 0.5 else "read"
        t0 = time.perf_counter()
        res = strong.check_access(guard, u, obj, priv)
        ms = (time.perf_counter() - t0) * 1000
        d = res.diagnostics
        expected = priv in granted[u.pid]
        rows.append(Row("update-mix", seed, "query-expected" if expected else "query-unexpected",
                        1 if expected else 0, i, res.allowed, "", d["steps"], False,
                        d["statements"], len(d["context_tokens"]), 0, False, d["refreshes"], ms))
    return rows
