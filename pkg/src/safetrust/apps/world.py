"""A deterministic multi-principal harness shared by the app drivers."""
from __future__ import annotations

import random
import uuid
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Dict, Optional

from ..cache import ContextCache, SetCache
from ..certset import KeyPair, Token, make_token
from ..logic import Limits
from ..slang import Env, GuardResult, ScriptModule, invoke_defcon, invoke_defguard, load_script
from ..store import SafeStore

__all__ = ["ManualClock", "Principal", "World", "load_app", "script_source", "script_path"]


def script_path(name: str):
    """Filesystem path of a bundled script (strong, routing, attest)."""
    return resources.files("safetrust.apps").joinpath("scripts", f"{name}.slang")


def script_source(name: str) -> str:
    return script_path(name).read_text()


@lru_cache(maxsize=None)
def load_app(name: str) -> ScriptModule:
    return load_script(script_source(name))


class ManualClock:
    """Wall clock for simulations. Each ``tick`` moves time forward by 1 ms so
    that reissued sets always carry a later timestamp."""

    def __init__(self, start: float = 1_700_000_000.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def tick(self, dt: float = 0.001) -> float:
        self.now += dt
        return self.now


@dataclass
class Principal:
    name: str
    key: KeyPair
    env: Env

    @property
    def pid(self) -> str:
        return self.key.principal_id.text

    @property
    def contexts(self) -> ContextCache:
        return self.env.contexts

    def token(self, label: str) -> Token:
        return make_token(self.key.principal_id, label)

    def defcon(self, mod: ScriptModule, name: str, *args: str, **vars):
        self.env.clock.tick()
        env = self.env.child(**vars) if vars else self.env
        return invoke_defcon(mod, name, list(args), env)

    def guard(self, mod: ScriptModule, name: str, *args: str, bearer=None,
              retry: bool = True, **vars) -> GuardResult:
        if bearer is not None:
            vars["BearerRef"] = bearer.text if isinstance(bearer, Token) else bearer
        env = self.env.child(**vars) if vars else self.env
        return invoke_defguard(mod, name, list(args), env, retry=retry)


class World:
    """Principals with reproducible keys sharing one store and clock; each
    principal has its own caches, as separate guard processes would."""

    def __init__(self, seed: int = 0, store=None, clock: Optional[ManualClock] = None,
                 use_secondary: bool = True, limits: Optional[Limits] = None,
                 throttle_delay: float = 1.0, default_ttl: float = 86_400.0):
        self.seed = seed
        self.rng = random.Random(seed)
        self.clock = clock or ManualClock()
        self.store = store if store is not None else SafeStore(clock=self.clock)
        self.use_secondary = use_secondary
        self.limits = limits
        self.throttle_delay = throttle_delay
        self.default_ttl = default_ttl
        self.principals: Dict[str, Principal] = {}

    def guid(self) -> uuid.UUID:
        return uuid.UUID(int=self.rng.getrandbits(128), version=4)

    def principal(self, name: str) -> Principal:
        p = self.principals.get(name)
        if p is None:
            key = KeyPair.from_seed(f"{self.seed}:{name}".encode())
            sets = SetCache(self.store, clock=self.clock)
            cc = ContextCache(sets, throttle_delay=self.throttle_delay,
                              rng=random.Random(f"{self.seed}:{name}:throttle"),
                              clock=self.clock)
            env = Env(key, {}, self.store, cc, self.clock, self.guid, self.limits,
                      self.default_ttl, self.use_secondary)
            p = self.principals[name] = Principal(name, key, env)
        return p

    def set_index_mode(self, use_secondary: bool):
        self.use_secondary = use_secondary
        for p in self.principals.values():
            p.env.use_secondary = use_secondary
