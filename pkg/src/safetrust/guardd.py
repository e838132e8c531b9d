"""Guard service: holds one principal's key and loaded scripts and exposes
their entry points over HTTP.

``POST /api/{entry}`` takes a flat JSON object of strings keyed by the
entry's parameter names (without the ``?``); ``BearerRef`` sets
``$BearerRef``.  Guards answer ``{"allowed": bool, "diagnostics": {...},
"error": code-or-null}``.  Any failure while evaluating a guard is a deny.
"""
from __future__ import annotations

import hashlib
import hmac
import json
import logging
import os
import random
import stat
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from .cache import ContextCache, ContextError, SetCache
from .certset import KeyPair
from .logic import LimitExceeded, Limits
from .slang import (Env, ScriptModule, SlangError, invoke_defcon, invoke_defguard,
                    load_script)
from .store import ClosureLimits, StoreError
from .store.http import RemoteStore

__all__ = ["ServiceConfig", "GuardService", "LoadedScripts", "create_guard_app",
           "merge_modules", "load_key_file", "SECRET_HEADER"]

log = logging.getLogger("safetrust.guardd")

SECRET_HEADER = "x-safe-guard-secret"


@dataclass
class ServiceConfig:
    key_file: str
    scripts: List[str]
    store_url: Optional[str] = None
    listen: str = "127.0.0.1:8700"
    secret: Optional[str] = None
    timeout: float = 5.0
    max_steps: int = 1_000_000
    set_cache_size: int = 4096
    context_cache_size: int = 1024
    throttle_delay: float = 1.0
    closure: ClosureLimits = field(default_factory=ClosureLimits)
    vars: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_env(cls, **overrides) -> "ServiceConfig":
        """Fill unset fields from SAFE_GUARD_* environment variables."""
        env = os.environ
        base = dict(
            key_file=env.get("SAFE_GUARD_KEY"),
            scripts=[s for s in env.get("SAFE_GUARD_SCRIPTS", "").split(os.pathsep) if s],
            store_url=env.get("SAFE_GUARD_STORE"),
            listen=env.get("SAFE_GUARD_LISTEN", "127.0.0.1:8700"),
            secret=env.get("SAFE_GUARD_SECRET"),
        )
        if "SAFE_GUARD_TIMEOUT" in env:
            base["timeout"] = float(env["SAFE_GUARD_TIMEOUT"])
        base.update({k: v for k, v in overrides.items() if v not in (None, [], ())})
        if not base.get("key_file") or not base.get("scripts"):
            raise ValueError("a key file and at least one script are required")
        return cls(**base)


def load_key_file(path: str) -> KeyPair:
    mode = os.stat(path).st_mode
    if mode & (stat.S_IRWXG | stat.S_IRWXO):
        log.warning("key file %s is readable by other users", path)
    return KeyPair.from_pem(Path(path).read_bytes())


def merge_modules(mods: Sequence[ScriptModule]) -> ScriptModule:
    defcons, defguards, envs = {}, {}, {}
    for m in mods:
        for name in list(m.defcons) + list(m.defguards):
            if name in defcons or name in defguards:
                raise SlangError(f"entry {name} is defined by more than one script")
        defcons.update(m.defcons)
        defguards.update(m.defguards)
        for k, v in m.env_defaults.items():
            if k in envs and envs[k] is not None and v is not None and envs[k] != v:
                raise SlangError(f"conflicting defaults for ${k}")
            if envs.get(k) is None:
                envs[k] = v
    return ScriptModule(defcons, defguards, envs)


@dataclass(frozen=True)
class LoadedScripts:
    module: ScriptModule
    digest: str

    @classmethod
    def from_sources(cls, sources: Sequence[str]) -> "LoadedScripts":
        h = hashlib.sha256()
        for s in sources:
            h.update(s.encode())
            h.update(b"\x00")
        return cls(merge_modules([load_script(s) for s in sources]), h.hexdigest()[:16])

    @classmethod
    def from_files(cls, paths: Sequence[str]) -> "LoadedScripts":
        return cls.from_sources([Path(p).read_text() for p in paths])


class GuardService:
    """Evaluation core behind the HTTP app.  Only the caches hold state; a
    new instance over the same key, scripts and store decides identically."""

    def __init__(self, key: KeyPair, scripts: LoadedScripts, store,
                 config: Optional[ServiceConfig] = None,
                 clock: Callable[[], float] = time.time,
                 script_loader: Optional[Callable[[], LoadedScripts]] = None,
                 rng: Optional[random.Random] = None):
        self.key = key
        self.config = config or ServiceConfig(key_file="", scripts=[])
        self.store = store
        self.clock = clock
        self._scripts = scripts
        self._loader = script_loader
        self._reload_lock = threading.Lock()
        cfg = self.config
        self.sets = SetCache(store, cfg.set_cache_size, clock)
        self.contexts = ContextCache(self.sets, cfg.context_cache_size, cfg.throttle_delay,
                                     cfg.closure, rng, clock)
        self.stats = {"requests": 0, "allowed": 0, "denied": 0, "errors": 0, "reloads": 0}
        self.sink: Optional[Callable[[dict], None]] = None

    @classmethod
    def from_config(cls, cfg: ServiceConfig, store=None, **kw) -> "GuardService":
        key = load_key_file(cfg.key_file)
        scripts = LoadedScripts.from_files(cfg.scripts)
        if store is None:
            if not cfg.store_url:
                raise ValueError("no store configured")
            store = RemoteStore(cfg.store_url)
        return cls(key, scripts, store, cfg,
                   script_loader=lambda: LoadedScripts.from_files(cfg.scripts), **kw)

    @property
    def scripts(self) -> LoadedScripts:
        return self._scripts

    @property
    def self_id(self) -> str:
        return self.key.principal_id.text

    def reload(self, loaded: Optional[LoadedScripts] = None) -> LoadedScripts:
        """Swap in freshly loaded scripts; on any load error the old ones stay."""
        with self._reload_lock:
            if loaded is None:
                if self._loader is None:
                    raise RuntimeError("no script source to reload from")
                loaded = self._loader()
            self._scripts = loaded   # single reference swap
            self.stats["reloads"] += 1
        log.info("scripts reloaded", extra={"digest": loaded.digest})
        return loaded

    def _env(self, bearer: Optional[str]) -> Env:
        vars = dict(self.config.vars)
        if bearer is not None:
            vars["BearerRef"] = bearer
        limits = Limits.with_timeout(self.config.timeout, max_steps=self.config.max_steps)
        return Env(self.key, vars, self.store, self.contexts, self.clock, None, limits)

    def call(self, entry: str, params: Dict[str, str]) -> "tuple[int, dict]":
        """Returns (http status, body)."""
        t0 = time.monotonic()
        scripts = self._scripts   # one module for the whole request
        mod = scripts.module
        defn = mod.defguards.get(entry) or mod.defcons.get(entry)
        if defn is None:
            return 404, {"error": "unknown-entry", "detail": f"no entry point {entry}"}
        if not isinstance(params, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in params.items()):
            return 400, {"error": "bad-request", "detail": "body must be a flat object of strings"}
        params = dict(params)
        bearer = params.pop("BearerRef", None)
        missing = [p for p in defn.params if p not in params]
        extra = sorted(set(params) - set(defn.params))
        if missing or extra:
            return 400, {"error": "bad-request",
                         "detail": f"missing {missing} unexpected {extra}"}
        args = [params[p] for p in defn.params]
        env = self._env(bearer)
        self.stats["requests"] += 1
        if entry in mod.defguards:
            status, body = 200, self._guard(mod, entry, args, env)
            body["diagnostics"]["scripts"] = scripts.digest
        else:
            status, body = self._defcon(mod, entry, args, env)
        self._record(entry, params, bearer, body, time.monotonic() - t0)
        return status, body

    def _guard(self, mod, entry, args, env) -> dict:
        try:
            res = invoke_defguard(mod, entry, args, env)
        except LimitExceeded as exc:
            return self._deny(exc.reason, str(exc), steps=exc.steps)
        except ContextError as exc:
            return self._deny(exc.code, str(exc))
        except StoreError as exc:
            return self._deny(exc.code, str(exc))
        except SlangError as exc:
            return self._deny("script-error", str(exc))
        except Exception as exc:   # fail closed on anything else
            log.exception("guard %s failed", entry)
            return self._deny("internal-error", type(exc).__name__)
        self.stats["allowed" if res.allowed else "denied"] += 1
        return {"allowed": res.allowed, "bindings": res.bindings,
                "diagnostics": res.diagnostics, "error": None}

    def _deny(self, code, detail, **diag) -> dict:
        self.stats["errors"] += 1
        self.stats["denied"] += 1
        return {"allowed": False, "bindings": [],
                "diagnostics": dict(detail=detail, **diag), "error": code}

    def _defcon(self, mod, entry, args, env):
        try:
            r = invoke_defcon(mod, entry, args, env)
        except StoreError as exc:
            return 422, {"error": exc.code, "detail": str(exc)}
        except (SlangError, ValueError) as exc:
            return 422, {"error": "script-error", "detail": str(exc)}
        return 200, {"token": r.token.text, "label": r.set.label, "posted": r.posted,
                     "statements": len(r.set.statements)}

    def _record(self, entry, params, bearer, body, latency):
        digest = hashlib.sha256(json.dumps([params, bearer], sort_keys=True).encode()).hexdigest()[:16]
        rec = {"entry": entry, "params": digest, "allowed": body.get("allowed"),
               "error": body.get("error"), "latency": round(latency, 6),
               "steps": body.get("diagnostics", {}).get("steps")}
        log.info(json.dumps(rec))
        if self.sink is not None:
            self.sink(rec)


def create_guard_app(service: GuardService, secret: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="guardd")
    secret = secret if secret is not None else service.config.secret

    def authorized(request: Request) -> bool:
        if not secret:
            return True
        got = request.headers.get(SECRET_HEADER, "")
        return hmac.compare_digest(got.encode(), secret.encode())

    def forbidden():
        return JSONResponse({"error": "unauthorized"}, status_code=401)

    @app.get("/health")
    def health():
        return {"status": "ok", "self": service.self_id,
                "scripts": service.scripts.digest,
                "entries": service.scripts.module.entries()}

    @app.post("/api/{entry}")
    async def api(entry: str, request: Request):
        if not authorized(request):
            return forbidden()
        raw = await request.body()
        try:
            params = json.loads(raw) if raw.strip() else {}
        except ValueError:
            return JSONResponse({"error": "bad-request", "detail": "invalid JSON"}, 400)
        # evaluation blocks; keep it off the event loop
        status, body = await run_in_threadpool(service.call, entry, params)
        return JSONResponse(body, status_code=status)

    @app.post("/admin/reload")
    def reload(request: Request):
        if not authorized(request):
            return forbidden()
        try:
            loaded = service.reload()
        except Exception as exc:
            return JSONResponse({"reloaded": False, "error": str(exc),
                                 "scripts": service.scripts.digest}, status_code=422)
        return {"reloaded": True, "scripts": loaded.digest}

    return app
