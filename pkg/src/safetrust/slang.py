"""A small trust-scripting layer: set constructors (defcon) and guards
(defguard) over logic templates.

Script grammar (full EBNF in docs/grammar.md)::

    script   := "slang" INT "." { defenv | defcon | defguard }
    defenv   := "defenv" ENV [ ":-" expr ] "."
    defcon   := "defcon" NAME "(" [params] ")" ":-" [binds ","] body "."
    body     := template | "post" "(" template ")"
    defguard := "defguard" NAME "(" [params] ")" ":-" [binds ","] template "."
    binds    := VAR ":=" expr { "," VAR ":=" expr }
    template := "{" { item } "}"
    item     := ("label" | "link" | "ttl") "(" expr ")" "."
              | logic-statement "."          (defcon and defguard)
              | logic-conjunction "?"        (defguard only: the query)
    expr     := primary { "+" primary }
    primary  := STRING | INT | VAR | ENV | NAME "(" [expr {"," expr}] ")"

Inside logic items a ``?Var`` bound by the script (a parameter or ``:=``
binding) and every ``$Env`` are replaced by JSON-quoted string constants;
other ``?Vars`` stay logic variables.  The rendered text is re-parsed and
must yield exactly one statement per item.
"""
from __future__ import annotations

import json
import re
import time
import uuid
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .cache import AssembledContext, ContextCache, ContextError
from .certset import (Certificate, KeyPair, LogicSet, Token, build_and_sign, make_token,
                      new_scid, parse_scid, root_id)
from .logic import (Atom, LimitExceeded, Limits, LogicSyntaxError, Statement,
                    parse_program, parse_query, prove, resolve_self)

__all__ = ["SlangError", "ScriptModule", "Env", "DefconResult", "GuardResult",
           "load_script", "invoke_defcon", "invoke_defguard", "instantiate_guard",
           "GuardPlan", "split_head",
           "split_tail", "SCRIPT_VERSION"]

SCRIPT_VERSION = 1
DEFAULT_TTL = 3600.0
DIRECTIVES = ("label", "link", "ttl")
FUNCTIONS = {"scid": (0, 0), "principalID": (0, 0), "rootID": (1, 1),
             "splitHead": (1, 1), "splitTail": (1, 1), "tokenFromLabel": (1, 2)}
HOST_ENV = ("Self", "BearerRef")


class SlangError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line, self.col = line, col
        where = f" at line {line}, column {col}" if line else ""
        super().__init__(f"{message}{where}")


# --- tokens --------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+|%[^\n]*|//[^\n]*)
  | (?P<typed>(?:ipv4|path|pid|scid)"(?:[^"\\]|\\.)*")
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<var>\?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<env>\$[A-Za-z_][A-Za-z0-9_]*)
  | (?P<builtin>@[A-Za-z_][A-Za-z0-9_]*)
  | (?P<int>-?[0-9]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:-|:=)
  | (?P<punct>[(){},.:?+])
  | (?P<other>\\\+|!|~)
""", re.VERBOSE)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> List[_Tok]:
    out, pos, line, start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise SlangError(f"unexpected character {text[pos]!r}", line, pos - start + 1)
        tok = m.group()
        if m.lastgroup != "ws":
            out.append(_Tok(m.lastgroup, tok, line, pos - start + 1))
        if "\n" in tok:
            line += tok.count("\n")
            start = pos + tok.rindex("\n") + 1
        pos = m.end()
    out.append(_Tok("eof", "", line, pos - start + 1))
    return out


# --- AST -----------------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    """Concatenation of primaries; each is ("lit", s) | ("var", n) |
    ("env", n) | ("call", name, (Expr, ...))."""

    parts: tuple
    line: int = 0


@dataclass(frozen=True)
class LogicItem:
    tokens: Tuple[_Tok, ...]
    query: bool = False

    @property
    def line(self):
        return self.tokens[0].line


@dataclass(frozen=True)
class Template:
    labels: Tuple[Expr, ...] = ()
    links: Tuple[Expr, ...] = ()
    ttl: Optional[Expr] = None
    logic: Tuple[LogicItem, ...] = ()

    @property
    def statements(self):
        return tuple(i for i in self.logic if not i.query)

    @property
    def queries(self):
        return tuple(i for i in self.logic if i.query)


@dataclass(frozen=True)
class Defcon:
    name: str
    params: Tuple[str, ...]
    bindings: Tuple[Tuple[str, Expr], ...]
    template: Template
    post: bool


@dataclass(frozen=True)
class Defguard:
    name: str
    params: Tuple[str, ...]
    bindings: Tuple[Tuple[str, Expr], ...]
    template: Template


@dataclass(frozen=True)
class ScriptModule:
    defcons: Mapping[str, Defcon]
    defguards: Mapping[str, Defguard]
    env_defaults: Mapping[str, Optional[Expr]]
    version: int = SCRIPT_VERSION

    def entries(self) -> List[str]:
        return sorted(set(self.defcons) | set(self.defguards))


# --- parser --------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, k=0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def err(self, msg, tok=None):
        tok = tok or self.peek()
        return SlangError(msg, tok.line, tok.col)

    def expect(self, text, kind=None):
        t = self.next()
        if t.text != text or (kind and t.kind != kind):
            raise SlangError(f"expected {text!r}, found {t.text or 'end of input'!r}",
                             t.line, t.col)
        return t

    def at(self, text):
        t = self.peek()
        return t.text == text and t.kind in ("punct", "op")

    def module(self) -> ScriptModule:
        self.expect("slang", "ident")
        v = self.next()
        if v.kind != "int" or int(v.text) != SCRIPT_VERSION:
            raise SlangError(f"unsupported script version {v.text!r}", v.line, v.col)
        self.expect(".")
        defcons: Dict[str, Defcon] = {}
        defguards: Dict[str, Defguard] = {}
        env: Dict[str, Optional[Expr]] = {}
        while self.peek().kind != "eof":
            t = self.next()
            if t.text == "defenv":
                name = self.next()
                if name.kind != "env":
                    raise self.err("expected $Name after defenv", name)
                default = None
                if self.at(":-"):
                    self.next()
                    default = self.expr()
                self.expect(".")
                env[name.text[1:]] = default
            elif t.text in ("defcon", "defguard"):
                d = self.definition(t.text)
                if d.name in defcons or d.name in defguards:
                    raise SlangError(f"duplicate definition {d.name}", t.line, t.col)
                (defcons if t.text == "defcon" else defguards)[d.name] = d
            else:
                raise SlangError(f"expected defenv, defcon or defguard, found {t.text!r}",
                                 t.line, t.col)
        mod = ScriptModule(MappingProxyType(defcons), MappingProxyType(defguards),
                           MappingProxyType(env))
        _check_module(mod)
        return mod

    def definition(self, kind):
        name = self.next()
        if name.kind != "ident":
            raise self.err(f"expected a {kind} name", name)
        self.expect("(")
        params = []
        if not self.at(")"):
            params.append(self.param())
            while self.at(","):
                self.next()
                params.append(self.param())
        self.expect(")")
        if len(set(params)) != len(params):
            raise SlangError(f"repeated parameter in {name.text}", name.line, name.col)
        self.expect(":-")
        binds = []
        while self.peek().kind == "var":
            v = self.next()
            self.expect(":=")
            binds.append((v.text[1:], self.expr()))
            self.expect(",")
        post = False
        if kind == "defcon" and self.peek().text == "post" and self.peek().kind == "ident":
            self.next()
            self.expect("(")
            post = True
        tmpl = self.template(allow_query=(kind == "defguard"))
        if post:
            self.expect(")")
        self.expect(".")
        if kind == "defcon":
            return Defcon(name.text, tuple(params), tuple(binds), tmpl, post)
        return Defguard(name.text, tuple(params), tuple(binds), tmpl)

    def param(self):
        t = self.next()
        if t.kind != "var":
            raise self.err("parameters are ?Variables", t)
        return t.text[1:]

    def template(self, allow_query: bool) -> Template:
        self.expect("{")
        labels, links, ttl, logic = [], [], None, []
        while not self.at("}"):
            t = self.peek()
            if t.kind == "eof":
                raise self.err("unterminated template")
            if t.kind == "ident" and t.text in DIRECTIVES and self.peek(1).text == "(":
                self.next()
                self.expect("(")
                e = self.expr()
                self.expect(")")
                self.expect(".")
                if t.text == "label":
                    labels.append(e)
                elif t.text == "link":
                    links.append(e)
                else:
                    if ttl is not None:
                        raise SlangError("ttl given twice", t.line, t.col)
                    ttl = e
                continue
            logic.append(self.logic_item(allow_query))
        self.expect("}")
        if len(labels) > 1:
            raise SlangError("a template has at most one label", labels[1].line)
        return Template(tuple(labels), tuple(links), ttl, tuple(logic))

    def logic_item(self, allow_query) -> LogicItem:
        toks, depth = [], 0
        while True:
            t = self.next()
            if t.kind == "eof" or (t.text == "}" and depth == 0):
                raise SlangError("logic item must end with '.' or '?'", t.line, t.col)
            if t.text == "(" and t.kind == "punct":
                depth += 1
            elif t.text == ")" and t.kind == "punct":
                depth -= 1
            elif depth == 0 and t.kind == "punct" and t.text in ".?":
                if t.text == "?" and not allow_query:
                    raise SlangError("queries are only allowed in defguard", t.line, t.col)
                if not toks:
                    raise SlangError("empty logic item", t.line, t.col)
                return LogicItem(tuple(toks), query=(t.text == "?"))
            toks.append(t)

    def expr(self) -> Expr:
        first = self.peek()
        parts = [self.primary()]
        while self.at("+"):
            self.next()
            parts.append(self.primary())
        return Expr(tuple(parts), first.line)

    def primary(self):
        t = self.next()
        if t.kind == "string":
            return ("lit", json.loads(t.text))
        if t.kind == "int":
            return ("lit", t.text)
        if t.kind == "var":
            return ("var", t.text[1:], t.line, t.col)
        if t.kind == "env":
            return ("env", t.text[1:], t.line, t.col)
        if t.kind == "ident" and self.at("("):
            if t.text not in FUNCTIONS:
                raise SlangError(f"unknown builtin {t.text}", t.line, t.col)
            self.next()
            args = []
            if not self.at(")"):
                args.append(self.expr())
                while self.at(","):
                    self.next()
                    args.append(self.expr())
            self.expect(")")
            lo, hi = FUNCTIONS[t.text]
            if not lo <= len(args) <= hi:
                raise SlangError(f"{t.text} takes {lo}..{hi} arguments", t.line, t.col)
            return ("call", t.text, tuple(args))
        raise SlangError(f"expected an expression, found {t.text or 'end of input'!r}",
                         t.line, t.col)


def _expr_refs(e: Expr):
    for p in e.parts:
        if p[0] in ("var", "env"):
            yield p
        elif p[0] == "call":
            for a in p[2]:
                yield from _expr_refs(a)


def _check_module(mod: ScriptModule):
    known_env = set(HOST_ENV) | set(mod.env_defaults)
    for name, default in mod.env_defaults.items():
        if default is not None:
            for ref in _expr_refs(default):
                if ref[0] == "var":
                    raise SlangError("defenv defaults cannot use ?Variables", ref[2], ref[3])
    for d in list(mod.defcons.values()) + list(mod.defguards.values()):
        scope = set(d.params)
        exprs = []
        for var, e in d.bindings:
            _check_refs(e, scope, known_env)
            scope.add(var)
        tm = d.template
        for e in tm.labels + tm.links + ((tm.ttl,) if tm.ttl else ()):
            _check_refs(e, scope, known_env)
        for item in tm.logic:
            for t in item.tokens:
                if t.kind == "env" and t.text[1:] not in known_env:
                    raise SlangError(f"unbound environment variable {t.text}", t.line, t.col)
            # parse with placeholder values to catch template syntax errors early
            text = _render(item, {v: "x" for v in scope}, lambda n: "x")
            try:
                if item.query:
                    parse_query(text)
                else:
                    if len(parse_program(text + ".")) != 1:
                        raise SlangError("logic item must be one statement", item.line)
            except LogicSyntaxError as exc:
                raise SlangError(f"in {d.name}: {exc.message}", item.line) from None
        if isinstance(d, Defguard) and len(tm.queries) != 1:
            raise SlangError(f"defguard {d.name} needs exactly one query")


def _check_refs(e: Expr, scope, known_env):
    for ref in _expr_refs(e):
        if ref[0] == "var" and ref[1] not in scope:
            raise SlangError(f"unbound variable ?{ref[1]}", ref[2], ref[3])
        if ref[0] == "env" and ref[1] not in known_env:
            raise SlangError(f"unbound environment variable ${ref[1]}", ref[2], ref[3])


def load_script(source: str) -> ScriptModule:
    """Parse and check a script; errors carry line/column."""
    return _Parser(source).module()


# --- runtime -------------------------------------------------------------

@dataclass
class Env:
    """Per-invocation environment: the signing key for ``$Self``, variable
    bindings, and the services a script may use."""

    key: KeyPair
    vars: Dict[str, str] = field(default_factory=dict)
    store: object = None
    contexts: Optional[ContextCache] = None
    clock: Callable[[], float] = time.time
    guid_source: Optional[Callable[[], uuid.UUID]] = None
    limits: Optional[Limits] = None
    default_ttl: float = DEFAULT_TTL
    use_secondary: bool = True

    @property
    def self_id(self) -> str:
        return self.key.principal_id.text

    def child(self, **vars) -> "Env":
        merged = dict(self.vars)
        merged.update(vars)
        return Env(self.key, merged, self.store, self.contexts, self.clock,
                   self.guid_source, self.limits, self.default_ttl, self.use_secondary)


@dataclass
class DefconResult:
    set: LogicSet
    certificate: Certificate
    token: Token
    posted: bool


@dataclass
class GuardResult:
    allowed: bool
    bindings: List[dict] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __bool__(self):
        return self.allowed


def split_head(path: str) -> str:
    """``bob:a/b/c`` -> ``bob:a``; a path without a root gives its first component."""
    _check_path(path)
    return path.split("/", 1)[0]


def split_tail(path: str) -> str:
    """``bob:a/b/c`` -> ``b/c``; a single-component path gives ``""``."""
    _check_path(path)
    parts = path.split("/", 1)
    return parts[1] if len(parts) > 1 else ""


_PATHNAME = re.compile(r"^(?:[^:/\s]+:)?[^:/\s]+(?:/[^:/\s]+)*$")


def _check_path(path: str):
    if not isinstance(path, str) or not _PATHNAME.match(path):
        raise SlangError(f"malformed pathname {path!r}")


class _Scope:
    def __init__(self, mod: ScriptModule, env: Env, values: Dict[str, str]):
        self.mod, self.env, self.values = mod, env, values
        self._env_cache: Dict[str, str] = {}

    def env_value(self, name: str) -> str:
        if name == "Self":
            return self.env.self_id
        if name in self.env.vars:
            return self.env.vars[name]
        if name in self._env_cache:
            return self._env_cache[name]
        default = self.mod.env_defaults.get(name)
        if default is None:
            raise SlangError(f"environment variable ${name} is not set")
        v = self.eval(default)
        self._env_cache[name] = v
        return v

    def eval(self, e: Expr) -> str:
        return "".join(self._primary(p) for p in e.parts)

    def _primary(self, p) -> str:
        kind = p[0]
        if kind == "lit":
            return p[1]
        if kind == "var":
            return self.values[p[1]]
        if kind == "env":
            return self.env_value(p[1])
        name, args = p[1], [self.eval(a) for a in p[2]]
        try:
            if name == "scid":
                return new_scid(self.env.key.principal_id, self.env.guid_source).text
            if name == "principalID":
                return self.env.self_id
            if name == "rootID":
                return root_id(args[0]).text
            if name == "splitHead":
                return split_head(args[0])
            if name == "splitTail":
                return split_tail(args[0])
            if name == "tokenFromLabel":
                issuer = Token.from_text(args[1]) if len(args) > 1 else self.env.key.principal_id
                return make_token(issuer, args[0]).text
        except SlangError:
            raise
        except ValueError as exc:
            raise SlangError(f"{name}: {exc}") from None
        raise SlangError(f"unknown builtin {name}")


def _render(item: LogicItem, values: Mapping[str, str], env_value) -> str:
    out = []
    for t in item.tokens:
        if t.kind == "var" and t.text[1:] in values:
            out.append(json.dumps(values[t.text[1:]]))
        elif t.kind == "env":
            out.append(json.dumps(env_value(t.text[1:])))
        else:
            out.append(t.text)
    return " ".join(out)


def _bind(defn, mod, env, args) -> _Scope:
    if len(args) != len(defn.params):
        raise SlangError(f"{defn.name} expects {len(defn.params)} arguments, got {len(args)}")
    for a in args:
        if not isinstance(a, str):
            raise SlangError(f"arguments are strings, got {a!r}")
    scope = _Scope(mod, env, dict(zip(defn.params, args)))
    for var, e in defn.bindings:
        scope.values[var] = scope.eval(e)
    return scope


def _statements(items, scope: _Scope) -> List[Statement]:
    out = []
    for item in items:
        text = _render(item, scope.values, scope.env_value) + " ."
        try:
            parsed = parse_program(text)
        except LogicSyntaxError as exc:
            raise SlangError(f"interpolation produced ill-formed logic: {exc.message}",
                             item.line) from None
        if len(parsed) != 1:
            raise SlangError("interpolation changed the statement count", item.line)
        out.extend(parsed)
    return out


def _tokens(exprs, scope) -> List[Token]:
    # a link value may hold several whitespace-separated tokens, or none
    out = []
    for e in exprs:
        for v in scope.eval(e).split():
            try:
                out.append(Token.from_text(v))
            except ValueError:
                raise SlangError(f"link target {v!r} is not a token", e.line) from None
    return out


def invoke_defcon(mod: ScriptModule, name: str, args: Sequence[str], env: Env) -> DefconResult:
    """Instantiate a set template, sign it as ``$Self`` and post it if the
    definition says so."""
    defn = mod.defcons.get(name)
    if defn is None:
        raise KeyError(f"no defcon named {name}")
    scope = _bind(defn, mod, env, list(args))
    tm = defn.template
    stmts = _statements(tm.statements, scope)
    label = scope.eval(tm.labels[0]) if tm.labels else ""
    links = _tokens(tm.links, scope)
    ttl = float(scope.eval(tm.ttl)) if tm.ttl is not None else env.default_ttl
    cert = build_and_sign(label, stmts, links, ttl, env.key, now=env.clock())
    posted = False
    if defn.post:
        if env.store is None:
            raise SlangError(f"{name} posts but no store is configured")
        env.store.post(cert)
        posted = True
    return DefconResult(cert.logic_set, cert, cert.token, posted)


@dataclass
class GuardPlan:
    """A guard instantiated for one request: what to fetch, the local
    statements to add, and the query to prove."""

    links: List[Token]
    local: List[Statement]
    query: List[Atom]


def instantiate_guard(mod: ScriptModule, name: str, args: Sequence[str],
                      env: Env) -> GuardPlan:
    defn = mod.defguards.get(name)
    if defn is None:
        raise KeyError(f"no defguard named {name}")
    scope = _bind(defn, mod, env, list(args))
    tm = defn.template
    me = env.self_id
    local = resolve_self(_statements(tm.statements, scope), me)
    [qitem] = tm.queries
    try:
        atoms = parse_query(_render(qitem, scope.values, scope.env_value))
    except LogicSyntaxError as exc:
        raise SlangError(f"interpolation produced an ill-formed query: {exc.message}",
                         qitem.line) from None
    return GuardPlan(_tokens(tm.links, scope), local, _resolve_query(atoms, me))


def invoke_defguard(mod: ScriptModule, name: str, args: Sequence[str], env: Env,
                    retry: bool = True) -> GuardResult:
    """Assemble the guard's context and prove its query; on a false result
    refresh the context once (subject to throttling) and retry once."""
    if env.contexts is None:
        raise SlangError("guards need a context cache")
    plan = instantiate_guard(mod, name, args, env)
    now = env.clock()
    entry = env.contexts.assemble_context(plan.links, now, plan.local)
    limits = env.limits or Limits()
    res = prove(entry.context, plan.query, limits, env.use_secondary)
    steps = res.trace.steps
    refreshes = 0
    if not res.holds and retry:
        out = env.contexts.refresh_on_failure(entry.key, now)
        if out.refreshed:
            refreshes = 1
            entry = out.context
            res = prove(entry.context, plan.query, limits, env.use_secondary)
            steps += res.trace.steps
    diag = {"context_tokens": [t.text for t in entry.tokens],
            "statements": len(entry.context), "steps": steps,
            "refreshes": refreshes,
            "skipped": [(t.text, why) for t, why in entry.closure.skipped]}
    return GuardResult(res.holds, [res.bindings] if res.holds else [], diag)


def _resolve_query(atoms: List[Atom], me: str) -> List[Atom]:
    out = []
    for a in atoms:
        if a.builtin:
            out.append(a)
        else:
            out.append(resolve_self([Statement(a)], me)[0].head)
    return out
