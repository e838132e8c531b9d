import pytest

from safetrust.apps import World
from safetrust.apps.attest import Attestation
from safetrust.apps.routing import Routing, split_prefix
from safetrust.apps.strong import (DelegationRefused, Names, NameError_, Strong,
                                   build_membership_chain)


@pytest.fixture
def world():
    return World(21)


@pytest.mark.parametrize("mode", ["direct", "coarse"])
def test_capability_chain(world, mode):
    s = Strong(world, mode)
    owner, a, b, c = (world.principal(n) for n in ("owner", "a", "b", "c"))
    guard = world.principal("guard")
    obj = s.create_object(owner)
    assert s.check_access(guard, owner, obj, "read").allowed
    s.delegate_capability(owner, a, obj, "read", True)
    s.delegate_capability(a, b, obj, "read", False)
    assert s.check_access(guard, a, obj, "read").bindings == [{"D": "true"}]
    assert s.check_access(guard, b, obj, "read").allowed
    assert not s.check_access(guard, b, obj, "write").allowed
    with pytest.raises(DelegationRefused):
        s.delegate_capability(b, c, obj, "read", True)
    s.delegate_capability(b, c, obj, "read", True, check=False)
    assert not s.check_access(guard, c, obj, "read").allowed


def test_forged_root_rejected(world):
    """A principal that is not the object's root cannot mint the base case."""
    s = Strong(world)
    owner, mallory = world.principal("owner"), world.principal("mallory")
    obj = s.create_object(owner)
    s.create_object(mallory)
    fake = mallory.defcon(s.mod, "createObject", obj).token
    mallory.defcon(s.mod, "capSet", obj, fake.text)
    assert not s.check_access(world.principal("g"), mallory, obj, "read").allowed


def test_membership_pruned(world):
    s = Strong(world)
    guard = world.principal("guard")
    ch = build_membership_chain(s, 5, siblings=3)
    r = s.query_membership(guard, ch.member.pid, ch.groups[0], ch.bearer)
    assert r.allowed
    inventory = set(r.diagnostics["context_tokens"])
    assert inventory == {t.text for t in ch.tokens}
    assert not inventory & {t.text for t in ch.siblings}
    assert not s.query_membership(guard, "nobody", ch.groups[0], ch.bearer).allowed


def test_empty_group_denies(world):
    s = Strong(world)
    owner = world.principal("o")
    g = s.create_group(owner)
    tok = s.add_member(owner, s.create_group(owner), "x")
    assert not s.query_membership(world.principal("guard"), "x", g, tok).allowed


def test_names_resolve_cache_and_errors(world):
    n = Names(world)
    root = n.build_tree(3, 3)
    res = world.principal("resolver")
    leaf = n.leaves()[7]
    r1 = n.resolve_name(res, root.pid, leaf)
    assert r1.validated and r1.target == n.targets[leaf] and r1.fetches == 3
    r2 = n.resolve_name(res, root.pid, leaf)
    assert r2.validated and r2.fetches == 0
    with pytest.raises(NameError_) as ei:
        n.resolve_name(res, root.pid, "c1/zz/c0")
    assert ei.value.hop == 1


def _acl_world(dual, seed=5):
    w = World(seed)
    s, n = Strong(w), Names(w, dual=dual)
    n.build_tree(7, 2)
    gowner = w.principal("group-owner")
    group = s.create_group(gowner)
    member = w.principal("member")
    bearer = s.add_member(gowner, group, member.pid)
    n.set_acl("c1", group, "read")
    return w, n, member, bearer


def test_prefix_access_dual_vs_single():
    outcomes = {}
    for dual in (True, False):
        w, n, member, bearer = _acl_world(dual)
        guard = w.principal("guard")
        rows = []
        for leaf in n.leaves()[::16]:
            for priv in ("read", "write"):
                r = n.check_prefix_access(guard, member.pid, leaf, priv, bearer)
                rows.append((leaf, priv, r.allowed, r.diagnostics["steps"]))
        outcomes[dual] = rows
    decisions = {d: [r[:3] for r in rows] for d, rows in outcomes.items()}
    assert decisions[True] == decisions[False]
    assert any(a for _, _, a in decisions[True]) and not all(a for _, _, a in decisions[True])
    assert all(d[3] < s[3] for d, s in zip(outcomes[True], outcomes[False]))


def test_prefix_access_without_acl():
    w, n, member, bearer = _acl_world(True)
    leaf = [p for p in n.leaves() if p.startswith("c0/")][0]
    assert not n.check_prefix_access(w.principal("guard"), member.pid, leaf, "read", bearer).allowed


def test_routing_small(world):
    import networkx as nx
    g = nx.connected_watts_strogatz_graph(64, 4, 0.2, seed=1)
    r = Routing(world, graph=g)
    r.allocate_tree("10.0.0.0/8", branching=4, depth=3)
    assert split_prefix("10.0.0.0/8", 4)[1] == "10.64.0.0/10"
    origin, prefix = r.origins()[-1]
    ads = r.propagate(origin, prefix)
    v = world.principal("validator")
    assert all(r.validate(v, ad).allowed for ad in ads)
    far = max(ads, key=lambda a: a.hops)
    path = r.path(prefix, far.receiver)
    assert path[0].advertiser == origin and len(path) == far.hops
    for hop in path:
        r.break_link(hop)
        assert not r.validate(world.principal("fresh"), far, retry=False).allowed
        r.restore(hop)
        world.principals.pop("fresh")
    assert r.validate(world.principal("v2"), far).allowed
    bogus = r.foreign_prefix(origin)
    hijack = r.hijack(origin, [origin] + [h.receiver for h in path], bogus)
    assert not r.validate(v, hijack).allowed


def test_attestation(world):
    a = Attestation(world)
    owner, guard = world.principal("owner"), world.principal("guard")
    obj = a.create_object(owner, [f"acl{i}" for i in range(6)] + ["p4"])
    a.endorse("img", [f"p{i}" for i in range(5)])
    a.endorse("other", ["q1", "q2"])
    c1, c2 = world.principal("c1"), world.principal("c2")
    assert a.check_access(guard, c1.pid, obj, a.attest(c1.pid, "img")).allowed
    r = a.check_access(guard, c2.pid, obj, a.attest(c2.pid, "other"))
    assert not r.allowed and r.diagnostics["reason"] == "access-denied"
    r = a.check_access(guard, c2.pid, obj, a.attest("someone-else", "img"))
    assert not r.allowed and r.diagnostics["reason"] == "no-attestation"


def test_fixture_files_round_trip(tmp_path, world):
    import networkx as nx
    from safetrust.apps.fixtures import load_paths, load_topology, save_paths, save_topology
    g = nx.connected_watts_strogatz_graph(40, 4, 0.2, seed=3)
    save_topology(g, tmp_path / "topo.txt")
    back = load_topology(tmp_path / "topo.txt")
    assert {frozenset(e) for e in back.edges()} == {frozenset(e) for e in g.edges()}
    save_paths(["a/x", "a/y", "b"], tmp_path / "names.txt")
    paths = load_paths(tmp_path / "names.txt")
    names = Names(world)
    root = names.build_paths(paths)
    assert names.leaves() == ["a/x", "a/y", "b"]
    res = names.resolve_name(world.principal("r"), root.pid, "a/y")
    assert res.validated and res.target == names.targets["a/y"]
