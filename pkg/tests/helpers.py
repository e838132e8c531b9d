"""Fixtures shared by the store, cache and acceptance tests."""
import random

from safetrust.certset import (KeyPair, LogicSet, build_and_sign, decode, encode,
                               make_token, sign_logic_set)
from safetrust.logic import parse_program, resolve_self

NOW = 1_000_000.0


def post_graph(store, key, edges, now=NOW, ttl=3600, stmts_per_set=1):
    """Post one set per label in ``edges`` (label -> linked labels)."""
    pid = key.principal_id
    tokens = {}
    for label, targets in edges.items():
        links = [make_token(pid, t) for t in targets]
        body = " ".join(f'node("{label}", {i}).' for i in range(stmts_per_set))
        cert = build_and_sign(label, body, links, ttl, key, now=now)
        tokens[label] = store.post(cert)
    return tokens


def forged_posts(victim, attacker, rng, n, now=NOW):
    """Yield (raw_bytes, claimed_token, expected_code) forgeries."""
    genuine = build_and_sign("subject", "id(victim). member(victim, g1).",
                             [make_token(victim.principal_id, "cap/x")], 3600,
                             victim, now=now)
    raw = encode(genuine)
    kinds = ["wrong-key", "mutation", "token", "speaker"]
    for i in range(n):
        kind = kinds[i % 4]
        label = f"set{rng.randrange(10**6)}"
        if kind == "wrong-key":
            ls = LogicSet(label, victim.principal_id,
                          tuple(resolve_self(parse_program("f(a)."), victim.principal_id.text)),
                          (), now, now + 60)
            c = sign_logic_set(ls, attacker)
            yield encode(c), make_token(victim.principal_id, label), "key-mismatch"
        elif kind == "mutation":
            b = bytearray(raw)
            pos = rng.randrange(len(b))
            b[pos] = (b[pos] + rng.randrange(1, 256)) % 256
            try:
                decode(bytes(b))
                code = "bad-signature"
            except ValueError:
                code = "decode-failure"
            yield bytes(b), genuine.token, code
        elif kind == "token":
            c = build_and_sign(label, "f(a).", [], 60, attacker, now=now)
            yield encode(c), make_token(victim.principal_id, label), "token-mismatch"
        else:
            sts = tuple(resolve_self(parse_program("member(mallory, g1)."),
                                     victim.principal_id.text))
            ls = LogicSet(label, attacker.principal_id, sts, (), now, now + 60)
            c = sign_logic_set(ls, attacker)
            yield encode(c), c.token, "speaker-mismatch"


# criterion number -> (passed, detail); printed in the terminal summary
ACCEPTANCE = {}


def report(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok
