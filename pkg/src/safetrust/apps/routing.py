"""Prefix allocation and route validation over a generated AS topology.

An anchor principal allocates a root prefix; each allocation holder splits
its prefix among ``branching`` children.  Origins advertise their prefix
along a shortest-path tree; every advertisement links its predecessor (or,
at the origin, the origin's allocation), so the closure of the last hop
carries the whole path plus the ownership chain.
"""
from __future__ import annotations

import ipaddress
import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import networkx as nx

from ..certset import Token
from ..slang import GuardResult
from .strong import join_links
from .world import Principal, World, load_app

__all__ = ["Routing", "Advert", "split_prefix"]


def split_prefix(prefix: str, branching: int) -> List[str]:
    bits = int(math.log2(branching))
    if 1 << bits != branching:
        raise ValueError("branching must be a power of two")
    net = ipaddress.ip_network(prefix)
    return [str(n) for n in net.subnets(prefixlen_diff=bits)]


@dataclass
class Advert:
    advertiser: int
    receiver: int
    prefix: str
    prev: int
    token: Token
    hops: int


@dataclass
class Allocation:
    holder: int
    delegator: str          # principal name
    prefix: str
    token: Token
    parent: Optional[str] = None


class Routing:
    def __init__(self, world: World, n_as: int = 1024, k: int = 4, p: float = 0.2,
                 graph: Optional[nx.Graph] = None):
        self.world = world
        self.mod = load_app("routing")
        self.graph = graph if graph is not None else nx.connected_watts_strogatz_graph(
            n_as, k, p, seed=world.seed)
        self.anchor = world.principal("anchor")
        self.allocations: Dict[str, Allocation] = {}
        self.owned: Dict[int, List[str]] = {}
        self.adverts: Dict[Tuple[str, int], Advert] = {}

    def as_(self, i: int) -> Principal:
        return self.world.principal(f"as{i}")

    # allocation -------------------------------------------------------------

    def allocate_tree(self, root_prefix: str = "10.0.0.0/8", branching: int = 8,
                      depth: int = 4) -> None:
        """Allocation holders are ASes 0.. in level order."""
        sizes = sum(branching ** d for d in range(depth))
        if sizes > self.graph.number_of_nodes():
            raise ValueError("topology too small for the allocation tree")
        nxt = 0
        level: List[Tuple[Optional[str], Principal, str]] = [(None, self.anchor, root_prefix)]
        for d in range(depth):
            children = []
            for parent_prefix, delegator, prefix in level:
                holder = nxt
                nxt += 1
                links = [self.allocations[parent_prefix].token] if parent_prefix else []
                tok = delegator.defcon(self.mod, "allocate", self.as_(holder).pid, prefix,
                                       join_links(links)).token
                self.allocations[prefix] = Allocation(holder, delegator.name, prefix, tok,
                                                      parent_prefix)
                self.owned.setdefault(holder, []).append(prefix)
                if d < depth - 1:
                    for sub in split_prefix(prefix, branching):
                        children.append((prefix, self.as_(holder), sub))
            level = children

    def origins(self) -> List[Tuple[int, str]]:
        return sorted((h, p) for h, ps in self.owned.items() for p in ps)

    # advertisements ---------------------------------------------------------

    def advertise(self, advertiser: int, receiver: int, prefix: str, prev: int,
                  links: List[Token]) -> Token:
        return self.as_(advertiser).defcon(
            self.mod, "advertise", self.as_(receiver).pid, prefix,
            self.as_(prev).pid, join_links(links)).token

    def propagate(self, origin: int, prefix: str, alloc_token: Optional[Token] = None
                  ) -> List[Advert]:
        """Advertise ``prefix`` from ``origin`` along a BFS shortest-path tree."""
        if alloc_token is None:
            alloc_token = self.allocations[prefix].token
        out = []
        prev_of = {origin: origin}
        hops = {origin: 0}
        queue = deque([origin])
        while queue:
            u = queue.popleft()
            for v in sorted(self.graph.neighbors(u)):
                if v in prev_of:
                    continue
                prev_of[v] = u
                hops[v] = hops[u] + 1
                if u == origin:
                    links = [alloc_token]
                else:
                    links = [self.adverts[(prefix, u)].token]
                tok = self.advertise(u, v, prefix, prev_of[u], links)
                ad = Advert(u, v, prefix, prev_of[u], tok, hops[v])
                self.adverts[(prefix, v)] = ad
                out.append(ad)
                queue.append(v)
        return out

    def path(self, prefix: str, receiver: int) -> List[Advert]:
        """Adverts from the origin to ``receiver``, origin first."""
        out = []
        ad = self.adverts.get((prefix, receiver))
        while ad is not None:
            out.append(ad)
            if ad.advertiser == ad.prev:
                break
            ad = self.adverts.get((prefix, ad.advertiser))
        return out[::-1]

    def validate(self, validator: Principal, ad: Advert, retry: bool = True) -> GuardResult:
        return validator.guard(self.mod, "validateRoute", self.as_(ad.receiver).pid,
                               ad.prefix, self.as_(ad.advertiser).pid, bearer=ad.token,
                               retry=retry, Anchor=self.anchor.pid)

    # corruptions ------------------------------------------------------------

    def break_link(self, ad: Advert) -> Token:
        """Reissue ``ad`` without its support link."""
        return self.advertise(ad.advertiser, ad.receiver, ad.prefix, ad.prev, [])

    def restore(self, ad: Advert) -> Token:
        if ad.advertiser == ad.prev:
            links = [self.allocations[ad.prefix].token] if ad.prefix in self.allocations else []
        else:
            links = [self.adverts[(ad.prefix, ad.advertiser)].token]
        return self.advertise(ad.advertiser, ad.receiver, ad.prefix, ad.prev, links)

    def hijack(self, origin: int, path: List[int], prefix: str) -> Advert:
        """``origin`` claims ``prefix`` (not its own) and the claim is relayed
        along ``path`` (origin first).  The origin links its genuine
        allocation, the best support it has.  Returns the last advert."""
        own = self.allocations[self.owned[origin][0]].token
        links = [own]
        prev = origin
        ad = None
        for i in range(len(path) - 1):
            u, v = path[i], path[i + 1]
            tok = self.advertise(u, v, prefix, prev, links)
            ad = Advert(u, v, prefix, prev, tok, i + 1)
            links, prev = [tok], u
        return ad

    def foreign_prefix(self, origin: int) -> str:
        """A prefix outside the origin's allocation that is not being
        advertised yet (a hijack reuses advertisement labels)."""
        live = {p for p, _ in self.adverts}
        mine = self.owned[origin][0]
        mine_net = ipaddress.ip_network(mine)
        for p, al in sorted(self.allocations.items()):
            net = ipaddress.ip_network(p)
            if (p not in live and not net.subnet_of(mine_net)
                    and net.prefixlen >= mine_net.prefixlen):
                return p
        raise ValueError("no foreign prefix")
