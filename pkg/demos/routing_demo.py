"""Prefix delegation and route validation over an AS topology.

    python3 demos/routing_demo.py [--topology demos/fixtures/topology-128.txt]

The anchor delegates address space down a tree of ASes; one origin
advertises its prefix hop by hop, a validator checks every advertisement,
then a broken hop and a hijack are shown to fail.
"""
import argparse
import random
from pathlib import Path

from safetrust.apps import World
from safetrust.apps.fixtures import load_topology
from safetrust.apps.routing import Routing

HERE = Path(__file__).parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--topology", default=HERE / "fixtures" / "topology-128.txt")
    ap.add_argument("--branching", type=int, default=4)
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--seed", type=int, default=2)
    args = ap.parse_args()

    w = World(args.seed)
    r = Routing(w, graph=load_topology(args.topology))
    r.allocate_tree("10.0.0.0/8", args.branching, args.depth)
    print(f"{r.graph.number_of_nodes()} ASes, {len(r.allocations)} prefix allocations")
    origin, prefix = random.Random(args.seed).choice(r.origins()[-args.branching ** 2:])
    ads = r.propagate(origin, prefix)
    v = w.principal("validator")
    ok = sum(r.validate(v, ad).allowed for ad in ads)
    print(f"AS{origin} advertises {prefix}: {ok}/{len(ads)} advertisements validate, "
          f"mean path {sum(a.hops for a in ads) / len(ads):.1f} hops")

    far = max(ads, key=lambda a: a.hops)
    path = r.path(prefix, far.receiver)
    print("path: " + " -> ".join(f"AS{h.advertiser}" for h in path) + f" -> AS{far.receiver}")
    mid = path[len(path) // 2]
    r.break_link(mid)
    res = r.validate(w.principal("cold-validator"), far, retry=False)
    print(f"AS{mid.advertiser} drops its support link: {'allow' if res.allowed else 'deny'}")
    r.restore(mid)

    bogus = r.foreign_prefix(origin)
    hj = r.hijack(origin, [origin] + [h.receiver for h in path], bogus)
    res = r.validate(w.principal("hijack-validator"), hj, retry=False)
    print(f"AS{origin} claims {bogus}: {'allow' if res.allowed else 'deny'}")


if __name__ == "__main__":
    main()
