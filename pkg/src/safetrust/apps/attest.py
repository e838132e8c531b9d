"""Property-based access from attested images.

A provider attests which image a client runs (label ``attest/<client>``),
a certifier endorses the properties of an image (label
``endorse/<image>``), and an object's ID set lists the properties that
grant access.  Property and ACL lists can run to thousands of facts, so the
driver builds those sets directly rather than through a template.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, List

from ..certset import Token, build_and_sign, new_scid
from ..logic import parse_query, solve
from ..slang import GuardResult, instantiate_guard
from .strong import join_links
from .world import Principal, World, load_app

__all__ = ["Attestation"]


def _facts(pred: str, rows: Iterable[tuple]) -> str:
    return " ".join(f"{pred}({', '.join(json.dumps(v) for v in row)})." for row in rows)


@dataclass
class Attestation:
    world: World
    provider: Principal = None
    certifier: Principal = None

    def __post_init__(self):
        self.mod = load_app("attest")
        self.provider = self.provider or self.world.principal("cloud")
        self.certifier = self.certifier or self.world.principal("certifier")

    def _post(self, who: Principal, label: str, body: str, links=()) -> Token:
        clock = self.world.clock
        clock.tick()
        cert = build_and_sign(label, body, list(links), self.world.default_ttl, who.key,
                              now=clock())
        return self.world.store.post(cert)

    def endorse(self, image: str, properties: List[str]) -> Token:
        return self._post(self.certifier, "endorse/" + image,
                          _facts("endorseProperty", ((image, p) for p in properties)))

    def create_object(self, owner: Principal, acl: List[str]) -> str:
        obj = new_scid(owner.key.principal_id, owner.env.guid_source).text
        self._post(owner, obj, _facts("aclEntry", ((p, obj) for p in acl)))
        return obj

    def attest(self, client: str, image: str) -> Token:
        endorsement = self.certifier.token("endorse/" + image)
        return self.provider.defcon(self.mod, "attest", client, image,
                                    join_links([endorsement])).token

    def _vars(self):
        return {"Attester": self.provider.pid, "Certifier": self.certifier.pid}

    def check_access(self, guard: Principal, client: str, obj: str, bearer: Token,
                     retry: bool = True) -> GuardResult:
        res = guard.guard(self.mod, "checkAccess", client, obj, bearer=bearer,
                          retry=retry, **self._vars())
        if not res.allowed:
            res.diagnostics["reason"] = ("access-denied" if self._attested(guard, client, obj, bearer)
                                         else "no-attestation")
        return res

    def _attested(self, guard, client, obj, bearer) -> bool:
        env = guard.env.child(BearerRef=bearer.text, **self._vars())
        plan = instantiate_guard(self.mod, "checkAccess", [client, obj], env)
        entry = guard.contexts.assemble_context(plan.links, env.clock(), plan.local)
        q = parse_query(f"{json.dumps(self.provider.pid)}: attestImage({json.dumps(client)}, ?I)")
        return bool(solve(entry.context, q))
