"""Groups, capabilities and hierarchical names on top of the strong script.

Standard labels (so peers can synthesize tokens):

* ``subject``          a principal's subject set
* ``cap/<scid>``       a principal's capability set for one object
* ``<scid>``           an object's ID set, issued by the object's root
* ``member/<g>/<p>``   a group membership, issued by the group's root
* ``nest/<g>/<sub>``   a nested-group delegation
* ``name/<comp>``      a name entry, issued by the parent domain
* ``acl``              a directory's ACL set
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from ..certset import Token, make_token, new_scid
from ..logic import build_context, parse_query, solve
from ..slang import GuardResult, split_head, split_tail
from ..store import NotFoundError
from .world import Principal, World, load_app

__all__ = ["Strong", "Names", "NameResolution", "NameError_", "DelegationRefused",
           "MembershipChain", "build_membership_chain", "join_links"]

DIRECT, COARSE = "direct", "coarse"


def join_links(tokens: Sequence[Token]) -> str:
    return " ".join(t.text for t in tokens)


class DelegationRefused(PermissionError):
    """The delegator's own guard found no delegatable capability."""


class Strong:
    """Capability delegation under one of two linking layouts.

    ``direct``: the subject set holds identity only; each received
    delegation is linked from the recipient's ``cap/<scid>`` set.
    ``coarse``: one subject set links every delegation a principal received.
    """

    def __init__(self, world: World, mode: str = DIRECT):
        if mode not in (DIRECT, COARSE):
            raise ValueError(f"unknown linking mode {mode!r}")
        self.world = world
        self.mode = mode
        self.mod = load_app("strong")
        self._received: Dict[Tuple[str, str], List[Token]] = {}
        self._subjects: set = set()

    def _held(self, p: Principal, obj: Optional[str] = None) -> List[Token]:
        if obj is None:
            return [t for (who, _), ts in self._received.items() if who == p.pid for t in ts]
        return list(self._received.get((p.pid, obj), []))

    def publish_subject(self, p: Principal) -> Token:
        links = self._held(p) if self.mode == COARSE else []
        self._subjects.add(p.pid)
        return p.defcon(self.mod, "subjectSet", join_links(links)).token

    def create_object(self, owner: Principal) -> str:
        scid = new_scid(owner.key.principal_id, owner.env.guid_source).text
        obj_set = owner.defcon(self.mod, "createObject", scid).token
        owner.defcon(self.mod, "capSet", scid, obj_set.text)
        if owner.pid not in self._subjects:
            self.publish_subject(owner)
        return scid

    def bearer(self, p: Principal, obj: str) -> Token:
        """The token a principal presents when acting on ``obj``."""
        return p.token("cap/" + obj) if self.mode == DIRECT else p.token("subject")

    def delegate_capability(self, delegator: Principal, subject: Principal, obj: str,
                            priv: str, delegatable: bool, check: bool = True) -> Token:
        if check:
            ok = delegator.guard(self.mod, "canDelegate", delegator.pid, obj, priv,
                                 bearer=self.bearer(delegator, obj))
            if not ok:
                raise DelegationRefused(f"{delegator.name} holds no delegatable {priv} on {obj}")
        if delegator.pid not in self._subjects:
            self.publish_subject(delegator)
        name = "delegateCapability" if self.mode == DIRECT else "delegateCapabilityCoarse"
        tok = delegator.defcon(self.mod, name, subject.pid, obj, priv,
                               "true" if delegatable else "false").token
        self.accept(subject, obj, tok)
        return tok

    def accept(self, subject: Principal, obj: str, token: Token) -> None:
        """Recipient side: record the delegation and relink its own sets."""
        self._received.setdefault((subject.pid, obj), []).append(token)
        if self.mode == DIRECT:
            subject.defcon(self.mod, "capSet", obj, join_links(self._held(subject, obj)))
            if subject.pid not in self._subjects:
                self.publish_subject(subject)
        else:
            self.publish_subject(subject)

    def check_access(self, guard: Principal, subject: Principal, obj: str, priv: str,
                     bearer: Optional[Token] = None, retry: bool = True) -> GuardResult:
        bearer = bearer or self.bearer(subject, obj)
        return guard.guard(self.mod, "accessObject", subject.pid, obj, priv,
                           bearer=bearer, retry=retry)

    # groups -----------------------------------------------------------------

    def create_group(self, owner: Principal) -> str:
        return new_scid(owner.key.principal_id, owner.env.guid_source).text

    def add_member(self, owner: Principal, group: str, member: str,
                   links: Sequence[Token] = ()) -> Token:
        return owner.defcon(self.mod, "addMember", group, member, join_links(links)).token

    def nest_group(self, owner: Principal, group: str, sub: str,
                   links: Sequence[Token] = ()) -> Token:
        return owner.defcon(self.mod, "nestGroup", group, sub, join_links(links)).token

    def query_membership(self, guard: Principal, member: str, group: str,
                         bearer: Token, retry: bool = True) -> GuardResult:
        return guard.guard(self.mod, "queryMembership", member, group,
                           bearer=bearer, retry=retry)


@dataclass
class MembershipChain:
    member: Principal
    groups: List[str]
    bearer: Token
    tokens: List[Token]
    siblings: List[Token] = field(default_factory=list)


def build_membership_chain(strong: Strong, n: int, siblings: int = 0,
                           prefix: str = "grp") -> MembershipChain:
    """``member`` belongs to ``groups[0]`` through ``n`` delegations:
    n-1 nested-group hops and one direct membership.  Each set links the one
    before it, so the bearer's closure is exactly the chain.  ``siblings``
    extra subgroups per hop are posted but never linked."""
    if n < 1:
        raise ValueError("chain length must be at least 1")
    w = strong.world
    owners = [w.principal(f"{prefix}-owner{i}") for i in range(n)]
    groups = [strong.create_group(o) for o in owners]
    member = w.principal(f"{prefix}-member")
    tokens: List[Token] = []
    sibs: List[Token] = []
    for i in range(n - 1):
        links = tokens[-1:]
        tokens.append(strong.nest_group(owners[i], groups[i], groups[i + 1], links))
        for _ in range(siblings):
            sub = strong.create_group(owners[i])
            sibs.append(strong.nest_group(owners[i], groups[i], sub, links))
    tokens.append(strong.add_member(owners[-1], groups[-1], member.pid, tokens[-1:]))
    return MembershipChain(member, groups, tokens[-1], tokens, sibs)


# --- names -------------------------------------------------------------------

class NameError_(LookupError):
    """Resolution failed at a hop (0-based)."""

    def __init__(self, message: str, hop: int):
        super().__init__(message)
        self.hop = hop


@dataclass
class NameResolution:
    target: str
    validated: bool
    hops: List[str]
    tokens: List[Token]
    fetches: int


class Names:
    """Hierarchical names: each domain principal issues one entry set per
    child component.  In ``dual`` mode an entry states the delegation as
    both ``parentOf(parent, child)`` and ``childOf(child, parent)`` so lookups
    from either end hit the first-argument index; ``single`` keeps only
    ``parentOf``."""

    def __init__(self, world: World, dual: bool = True):
        self.world = world
        self.dual = dual
        self.mod = load_app("strong")
        self.entries: Dict[str, Token] = {}    # pathname -> entry token
        self.targets: Dict[str, str] = {}      # pathname -> child id
        self.domains: Dict[str, Principal] = {}

    def entry_name(self):
        return "nameEntry" if self.dual else "nameEntrySingle"

    def add_entry(self, parent: Principal, parent_path: str, comp: str, child: str) -> Token:
        links = [parent.token("acl")]
        if parent_path:
            links.insert(0, self.entries[parent_path])
        tok = parent.defcon(self.mod, self.entry_name(), comp, child, join_links(links)).token
        path = f"{parent_path}/{comp}" if parent_path else comp
        self.entries[path] = tok
        self.targets[path] = child
        return tok

    def build_tree(self, height: int, branching: int, root: str = "root") -> Principal:
        """Domains down to ``height - 1``; the last level holds object scids
        owned by their parent domain.  Components are ``c0..c{b-1}``."""
        top = self.world.principal(f"dom:{root}")
        self.domains[""] = top
        frontier = [("", top)]
        for level in range(height):
            nxt = []
            for path, dom in frontier:
                for b in range(branching):
                    comp = f"c{b}"
                    child_path = f"{path}/{comp}" if path else comp
                    if level == height - 1:
                        child = new_scid(dom.key.principal_id, dom.env.guid_source).text
                        self.add_entry(dom, path, comp, child)
                    else:
                        sub = self.world.principal(f"dom:{root}/{child_path}")
                        self.domains[child_path] = sub
                        self.add_entry(dom, path, comp, sub.pid)
                        nxt.append((child_path, sub))
            frontier = nxt
        return top

    def build_paths(self, paths: Sequence[str], root: str = "root") -> Principal:
        """Build a tree from explicit pathnames.  A path that prefixes another
        becomes a domain; every other path becomes a leaf object."""
        full = set()
        for p in paths:
            comps = p.strip("/").split("/")
            full.update("/".join(comps[:i]) for i in range(1, len(comps) + 1))
        domains = {p.rsplit("/", 1)[0] for p in full if "/" in p}
        top = self.world.principal(f"dom:{root}")
        self.domains[""] = top
        for path in sorted(full, key=lambda p: (p.count("/"), p)):
            parent_path, _, comp = path.rpartition("/")
            dom = self.domains[parent_path]
            if path in domains:
                sub = self.world.principal(f"dom:{root}/{path}")
                self.domains[path] = sub
                self.add_entry(dom, parent_path, comp, sub.pid)
            else:
                self.add_entry(dom, parent_path, comp,
                               new_scid(dom.key.principal_id, dom.env.guid_source).text)
        return top

    def leaves(self) -> List[str]:
        return sorted(p for p, t in self.targets.items() if p not in self.domains)

    def set_acl(self, domain_path: str, group: str, priv: str) -> Token:
        return self.domains[domain_path].defcon(self.mod, "dirAcl", group, priv).token

    def resolve_name(self, resolver: Principal, root: str, pathname: str) -> NameResolution:
        """Walk the path one component at a time through the resolver's set
        cache, then re-validate the whole chain with one conjunctive query."""
        sets = resolver.contexts.sets
        store = self.world.store
        before = store.stats["fetches"]
        now = self.world.clock()
        cur, rest = root, pathname
        hops, tokens, statements = [], [], []
        while rest:
            hop = len(hops)
            comp, rest = split_head(rest), split_tail(rest)
            tok = make_token(Token.from_text(cur), "name/" + comp)
            try:
                vs = sets.get_set(tok, now)
            except (NotFoundError, ValueError) as exc:
                raise NameError_(f"no entry for {comp!r} at hop {hop}: {exc}", hop) from None
            q = parse_query(f"{json.dumps(cur)}: nameEntry({json.dumps(comp)}, ?C)")
            found = solve(build_context(vs.statements, now), q,
                          use_secondary=self.world.use_secondary)
            if len(found) != 1:
                raise NameError_(f"entry for {comp!r} names {len(found)} children", hop)
            cur = found[0]["C"]
            hops.append(cur)
            tokens.append(tok)
            statements.extend(vs.statements)
        validated = self._validate(root, pathname, hops, statements, now,
                                   self.world.use_secondary)
        return NameResolution(cur, validated, hops, tokens, store.stats["fetches"] - before)

    @staticmethod
    def _validate(root, pathname, hops, statements, now, use_secondary=True) -> bool:
        comps = pathname.split("/")
        speaker = json.dumps(root)
        atoms = []
        for i, (comp, child) in enumerate(zip(comps, hops)):
            atoms.append(f"{speaker}: nameEntry({json.dumps(comp)}, ?X{i})")
            speaker = f"?X{i}"
        ans = solve(build_context(statements, now), parse_query(", ".join(atoms)),
                    use_secondary=use_secondary)
        return any([a[f"X{i}"] for i in range(len(hops))] == hops for a in ans)

    def check_prefix_access(self, guard: Principal, subject: str, path: str, priv: str,
                            bearer: Token, retry: bool = True) -> GuardResult:
        name = "prefixAccess" if self.dual else "prefixAccessSingle"
        return guard.guard(self.mod, name, subject, self.targets[path], priv,
                           self.entries[path].text, bearer=bearer, retry=retry)
