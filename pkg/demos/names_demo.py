"""Hierarchical names with a directory ACL.

    python3 demos/names_demo.py [--tree demos/fixtures/names.txt]

Builds the name tree (one issuer per domain), resolves every leaf twice
through one resolver's cache, then grants a group read access on a
directory and checks objects below it.
"""
import argparse
from pathlib import Path

from safetrust.apps import World
from safetrust.apps.fixtures import load_paths
from safetrust.apps.strong import Names, NameError_, Strong

HERE = Path(__file__).parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tree", default=HERE / "fixtures" / "names.txt")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    w = World(args.seed)
    names = Names(w)
    root = names.build_paths(load_paths(args.tree))
    resolver = w.principal("resolver")
    print(f"{len(names.leaves())} leaves under root {root.pid[:12]}...")
    for rnd in (1, 2):
        for leaf in names.leaves():
            r = names.resolve_name(resolver, root.pid, leaf)
            print(f"  pass {rnd} {leaf:<20} -> ...{r.target[-12:]}  valid={r.validated} "
                  f"fetches={r.fetches}")
    try:
        names.resolve_name(resolver, root.pid, "com/nowhere/x")
    except NameError_ as exc:
        print(f"  com/nowhere/x: {exc}")

    s = Strong(w)
    admin, alice = w.principal("admin"), w.principal("alice")
    staff = s.create_group(admin)
    badge = s.add_member(admin, staff, alice.pid)
    directory = names.leaves()[0].rsplit("/", 1)[0]
    names.set_acl(directory, staff, "read")
    print(f"group {staff[:16]}... may read under {directory}/")
    guard = w.principal("guard")
    for leaf in names.leaves():
        r = names.check_prefix_access(guard, alice.pid, leaf, "read", badge)
        print(f"  alice read {leaf:<20} {'allow' if r.allowed else 'deny'}")


if __name__ == "__main__":
    main()
