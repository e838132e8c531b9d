"""Text syntax for statements and queries (grammar in docs/grammar.md)."""
from __future__ import annotations

import json
import re
from typing import List

from . import builtins as _builtins
from .terms import SELF, Atom, Statement, Var, parse_ipv4_prefix, term_kind

__all__ = ["LogicSyntaxError", "RangeRestrictionError", "parse_program",
           "parse_query", "parse_statement", "check_statement"]


class LogicSyntaxError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        self.message = message
        where = f" at line {line}, column {col}" if line else ""
        super().__init__(f"{message}{where}")


class RangeRestrictionError(LogicSyntaxError):
    pass


_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+|%[^\n]*|//[^\n]*)
  | (?P<typed>(?:ipv4|path|pid|scid)"(?:[^"\\]|\\.)*")
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<var>\?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<env>\$[A-Za-z_][A-Za-z0-9_]*)
  | (?P<builtin>@[A-Za-z_][A-Za-z0-9_]*)
  | (?P<int>-?[0-9]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<neck>:-)
  | (?P<punct>[(),.:?])
  | (?P<neg>\\\+|!|~)
""", re.VERBOSE)


class _Tok:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind, text, line, col):
        self.kind, self.text, self.line, self.col = kind, text, line, col

    def __repr__(self):
        return f"{self.kind}:{self.text!r}@{self.line}:{self.col}"


def _tokenize(text: str) -> List[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if m is None:
            raise LogicSyntaxError(f"unexpected character {text[pos]!r}",
                                   line, pos - line_start + 1)
        kind = m.lastgroup
        tok_text = m.group()
        if kind != "ws":
            toks.append(_Tok(kind, tok_text, line, pos - line_start + 1))
        nl = tok_text.count("\n")
        if nl:
            line += nl
            line_start = pos + tok_text.rindex("\n") + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, k=0) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        return LogicSyntaxError(msg, tok.line, tok.col)

    def expect(self, text):
        t = self.next()
        if t.text != text:
            raise LogicSyntaxError(f"expected {text!r}, found {t.text or 'end of input'!r}",
                                   t.line, t.col)
        return t

    def at(self, text) -> bool:
        return self.peek().text == text and self.peek().kind in ("punct", "neck")

    # terms ---------------------------------------------------------------

    def term(self):
        t = self.next()
        k = t.kind
        if k == "var":
            return Var(t.text[1:])
        if k == "int":
            return int(t.text)
        if k == "string":
            return _decode_string(t)
        if k == "typed":
            prefix, _, rest = t.text.partition('"')
            value = _decode_string(_Tok("string", '"' + rest, t.line, t.col))
            _check_typed(prefix, value, t)
            return value
        if k == "env":
            if t.text == "$Self":
                return SELF
            raise LogicSyntaxError(f"uninterpolated environment variable {t.text}",
                                   t.line, t.col)
        if k == "ident":
            if self.at("("):
                raise LogicSyntaxError(
                    f"function symbol {t.text}(...) is not allowed in pure Datalog",
                    t.line, t.col)
            return t.text
        raise LogicSyntaxError(f"expected a term, found {t.text or 'end of input'!r}",
                               t.line, t.col)

    def args(self):
        out = []
        if self.at("("):
            self.next()
            if not self.at(")"):
                out.append(self.term())
                while self.at(","):
                    self.next()
                    out.append(self.term())
            self.expect(")")
        return out

    # atoms ---------------------------------------------------------------

    def atom(self) -> Atom:
        t = self.peek()
        if t.kind == "neg" or (t.kind == "ident" and t.text == "not"):
            raise self.error("negation is not supported", t)
        if t.kind == "builtin":
            self.next()
            name = t.text[1:]
            args = self.args()
            try:
                _builtins.lookup(name, len(args))
            except _builtins.UnknownBuiltinError as exc:
                raise LogicSyntaxError(exc.args[0], t.line, t.col) from None
            return Atom(name, ("",) + tuple(args), builtin=True)
        speaker = SELF
        nxt = self.peek(1)
        if nxt.kind == "punct" and nxt.text == ":":
            speaker = self.term()
            self.expect(":")
            t = self.peek()
            if t.kind == "builtin":
                raise self.error("builtins take no speaker", t)
        name = self.next()
        if name.kind != "ident":
            raise LogicSyntaxError(
                f"expected a predicate name, found {name.text or 'end of input'!r}",
                name.line, name.col)
        if name.text == "not":
            raise LogicSyntaxError("negation is not supported", name.line, name.col)
        return Atom(name.text, (speaker,) + tuple(self.args()))

    def statement(self) -> Statement:
        start = self.peek()
        head = self.atom()
        if head.builtin:
            raise LogicSyntaxError("a builtin cannot be a rule head",
                                   start.line, start.col)
        body = []
        if self.peek().kind == "neck":
            self.next()
            body.append(self.atom())
            while self.at(","):
                self.next()
                body.append(self.atom())
        self.expect(".")
        st = Statement(head, tuple(body))
        check_statement(st, start.line, start.col)
        return st

    def program(self) -> List[Statement]:
        out = []
        while self.peek().kind != "eof":
            out.append(self.statement())
        return out

    def query(self) -> List[Atom]:
        atoms = [self.atom()]
        while self.at(","):
            self.next()
            atoms.append(self.atom())
        if self.at(".") or self.at("?"):
            self.next()
        if self.peek().kind != "eof":
            raise self.error(f"unexpected {self.peek().text!r} after query")
        return atoms


def _decode_string(tok: _Tok) -> str:
    try:
        value = json.loads(tok.text)
    except json.JSONDecodeError as exc:
        raise LogicSyntaxError(f"bad string literal: {exc.msg}", tok.line, tok.col) from None
    return value


def _check_typed(prefix, value, tok):
    if prefix == "ipv4":
        try:
            parse_ipv4_prefix(value)
        except ValueError as exc:
            raise LogicSyntaxError(str(exc), tok.line, tok.col) from None
        return
    want = {"pid": "principalID", "scid": "scid", "path": "pathname"}[prefix]
    kind = term_kind(value)
    # single-component pathnames are plain strings by text; accept them
    if kind != want and not (prefix == "path" and kind == "string" and value):
        raise LogicSyntaxError(f"{value!r} is not a valid {want}", tok.line, tok.col)


def check_statement(st: Statement, line: int = 0, col: int = 0) -> None:
    """Range restriction and builtin mode checks."""
    bound = set()
    for b in st.body:
        if b.builtin:
            try:
                spec = _builtins.lookup(b.predicate, b.arity)
            except _builtins.UnknownBuiltinError as exc:
                raise LogicSyntaxError(exc.args[0], line, col) from None
            args = b.args[1:]
            if not _builtins.required_bound(spec, args, bound):
                raise RangeRestrictionError(
                    f"@{b.predicate} needs its inputs bound by earlier body atoms",
                    line, col)
            bound.update(a for a in args if isinstance(a, Var))
        else:
            bound.update(a for a in b.args if isinstance(a, Var))
    for a in st.head.args:
        if isinstance(a, Var) and a not in bound:
            if not st.body:
                raise RangeRestrictionError(
                    f"fact contains variable ?{a.name}", line, col)
            raise RangeRestrictionError(
                f"head variable ?{a.name} unbound in body", line, col)


def parse_program(text: str) -> List[Statement]:
    """Parse statements.  Omitted speakers become the ``$Self`` placeholder."""
    return _Parser(text).program()


def parse_statement(text: str) -> Statement:
    sts = parse_program(text)
    if len(sts) != 1:
        raise LogicSyntaxError(f"expected one statement, found {len(sts)}")
    return sts[0]


def parse_query(text: str) -> List[Atom]:
    """Parse a conjunctive query such as ``cap(?S, obj, read, ?D)?``."""
    return _Parser(text).query()
