"""Command-line entry points: ``safe``, ``safestore`` and ``safe-bench``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
from pathlib import Path
from typing import Dict, List, Optional

from .certset import DEFAULT_SCHEME, KeyPair

log = logging.getLogger("safetrust.cli")


def _hostport(text: str):
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def _pairs(items: Optional[List[str]]) -> Dict[str, str]:
    out = {}
    for item in items or []:
        k, sep, v = item.partition("=")
        if not sep:
            raise SystemExit(f"expected KEY=VALUE, got {item!r}")
        out[k] = v
    return out


def _store(url: Optional[str], data_dir: Optional[str]):
    from .store import AppendLogBackend, SafeStore
    from .store.http import RemoteStore
    if url:
        return RemoteStore(url)
    if data_dir:
        Path(data_dir).mkdir(parents=True, exist_ok=True)
        return SafeStore(AppendLogBackend(Path(data_dir) / "sets.log"))
    return SafeStore()


# --- safe ----------------------------------------------------------------------

def _keygen(args) -> int:
    key = KeyPair.generate(args.scheme)
    out = Path(args.out)
    if out.exists() and not args.force:
        print(f"{out} exists (use --force to overwrite)", file=sys.stderr)
        return 1
    fd = os.open(out, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "wb") as fh:
        fh.write(key.to_pem())
    os.chmod(out, 0o600)
    print(key.principal_id.text)
    return 0


def _run(args) -> int:
    from .cache import ContextCache, SetCache
    from .guardd import load_key_file
    from .slang import Env, invoke_defcon, invoke_defguard, load_script
    mod = load_script(Path(args.script).read_text())
    key = load_key_file(args.key) if args.key else KeyPair.generate()
    store = _store(args.store, args.data_dir)
    vars = _pairs(args.var)
    if args.bearer:
        vars["BearerRef"] = args.bearer
    env = Env(key, vars, store, ContextCache(SetCache(store)))
    if args.entry in mod.defguards:
        res = invoke_defguard(mod, args.entry, args.args, env)
        print(json.dumps({"allowed": res.allowed, "bindings": res.bindings,
                          "diagnostics": res.diagnostics}, indent=2))
        return 0 if res.allowed else 3
    if args.entry in mod.defcons:
        r = invoke_defcon(mod, args.entry, args.args, env)
        print(json.dumps({"token": r.token.text, "label": r.set.label, "posted": r.posted,
                          "statements": len(r.set.statements)}, indent=2))
        return 0
    print(f"no entry point {args.entry}; have {mod.entries()}", file=sys.stderr)
    return 2


def _serve_guard(args) -> int:
    import uvicorn
    from .guardd import GuardService, ServiceConfig, create_guard_app
    cfg = ServiceConfig.from_env(key_file=args.key, scripts=args.script, store_url=args.store,
                                 listen=args.listen, secret=args.secret, timeout=args.timeout)
    cfg.vars.update(_pairs(args.var))
    store = None if cfg.store_url else _store(None, args.data_dir)
    service = GuardService.from_config(cfg, store=store)
    app = create_guard_app(service)

    def on_hup(signum, frame):
        try:
            service.reload()
        except Exception as exc:
            log.error("reload failed, keeping current scripts: %s", exc)

    if hasattr(signal, "SIGHUP"):
        signal.signal(signal.SIGHUP, on_hup)
    host, port = _hostport(cfg.listen)
    print(f"guard {service.self_id} on {host}:{port} scripts {service.scripts.digest}",
          flush=True)
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def safe_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="safe", description="trust scripts and guards")
    sub = p.add_subparsers(dest="cmd", required=True)

    k = sub.add_parser("keygen", help="create a signing key")
    k.add_argument("--out", required=True)
    k.add_argument("--scheme", default=DEFAULT_SCHEME,
                   choices=["ed25519", "rsa-pkcs1-sha256"])
    k.add_argument("--force", action="store_true")
    k.set_defaults(fn=_keygen)

    r = sub.add_parser("run", help="invoke one script entry point")
    r.add_argument("script")
    r.add_argument("entry")
    r.add_argument("args", nargs="*", help="positional string arguments")
    r.add_argument("--key")
    r.add_argument("--store", help="store URL")
    r.add_argument("--data-dir", help="use a local store directory instead of a URL")
    r.add_argument("--bearer", help="value for $BearerRef")
    r.add_argument("--var", action="append", help="extra environment binding NAME=VALUE")
    r.set_defaults(fn=_run)

    g = sub.add_parser("serve-guard", help="run the guard service")
    g.add_argument("--key")
    g.add_argument("--script", action="append")
    g.add_argument("--store")
    g.add_argument("--data-dir")
    g.add_argument("--listen")
    g.add_argument("--secret")
    g.add_argument("--timeout", type=float)
    g.add_argument("--var", action="append")
    g.set_defaults(fn=_serve_guard)

    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.cmd == "serve-guard" else logging.WARNING)
    logging.getLogger("httpx").setLevel(logging.WARNING)
    return args.fn(args)


# --- safestore -----------------------------------------------------------------

def store_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="safestore", description="certificate store")
    sub = p.add_subparsers(dest="cmd", required=True)
    s = sub.add_parser("serve")
    s.add_argument("--listen", default="127.0.0.1:8600", type=_hostport)
    s.add_argument("--data-dir", help="directory for the append-only log (memory if unset)")
    s.add_argument("--max-payload", type=int, default=1 << 20)
    s.add_argument("--sweep-interval", type=float, default=60.0)
    args = p.parse_args(argv)
    import uvicorn
    from .store import AppendLogBackend, MemoryBackend, SafeStore
    from .store.http import create_store_app
    if args.data_dir:
        Path(args.data_dir).mkdir(parents=True, exist_ok=True)
        backend = AppendLogBackend(Path(args.data_dir) / "sets.log")
    else:
        backend = MemoryBackend()
    store = SafeStore(backend, max_payload=args.max_payload)
    store.start_sweeper(args.sweep_interval)
    host, port = args.listen
    print(f"safestore on {host}:{port} ({len(store)} sets)", flush=True)
    uvicorn.run(create_store_app(store), host=host, port=port, log_level="warning")
    return 0


# --- safe-bench ----------------------------------------------------------------

def bench_main(argv=None) -> int:
    from .bench import DEFAULTS, SCENARIOS, percentile, run_scenario, write_csv
    p = argparse.ArgumentParser(prog="safe-bench", description="run a bench scenario")
    p.add_argument("scenario", choices=sorted(SCENARIOS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV output path ('-' for stdout)")
    p.add_argument("--quick", action="store_true", help="small preset")
    p.add_argument("--index", choices=["on", "off"],
                   help="force the secondary index for every request")
    p.add_argument("--param", action="append", metavar="NAME=JSON",
                   help=f"override a scenario parameter; defaults: {json.dumps(DEFAULTS)}")
    args = p.parse_args(argv)
    params = {k: json.loads(v) for k, v in _pairs(args.param).items()}
    index = None if args.index is None else args.index == "on"
    rows = run_scenario(args.scenario, seed=args.seed, index=index, quick=args.quick, **params)
    write_csv(rows, sys.stdout if args.out == "-" else args.out)
    by_variant: Dict[str, list] = {}
    for r in rows:
        by_variant.setdefault(r.variant, []).append(r)
    for v, rs in by_variant.items():
        steps = [r.steps for r in rs]
        lat = [r.latency_ms for r in rs]
        print(f"{v:>20}: n={len(rs)} allowed={sum(r.allowed for r in rs)} "
              f"steps p50={percentile(steps, 50)} p95={percentile(steps, 95)} "
              f"latency p50={percentile(lat, 50):.2f}ms p95={percentile(lat, 95):.2f}ms "
              f"censored={sum(r.censored for r in rs)}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(safe_main())
