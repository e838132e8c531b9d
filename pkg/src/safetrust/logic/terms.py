"""Terms, atoms and statements for Datalog-with-says.

Constants are plain Python values: ``str`` for every textual constant and
``int`` for numbers.  The finer kind of a textual constant (principal ID,
scid, IPv4 prefix, pathname or plain string) is a pure function of its text,
so two constants unify exactly when they are equal Python values.

The speaker of an atom is stored as argument 0 of ``Atom.args``; the
explicit arguments follow it.
"""
from __future__ import annotations

import base64
import ipaddress
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Union

__all__ = [
    "Var", "SELF", "SelfRef", "Term", "Atom", "Statement",
    "term_kind", "is_ground", "parse_ipv4_prefix", "format_term",
    "format_atom", "format_statement", "atom_vars", "resolve_self",
]


class Var:
    """A logic variable, written ``?Name``."""

    __slots__ = ("name", "_hash")

    def __init__(self, name: str):
        self.name = name
        self._hash = hash(("?var", name))

    def __eq__(self, other):
        return isinstance(other, Var) and other.name == self.name

    def __hash__(self):
        return self._hash

    def __getstate__(self):
        return self.name

    def __setstate__(self, name):
        self.__init__(name)

    def __repr__(self):
        return "?" + self.name


class SelfRef:
    """Placeholder for the issuing principal, bound when a set is built."""

    __slots__ = ()
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "$Self"

    def __reduce__(self):
        return (SelfRef, ())


SELF = SelfRef()

Term = Union[str, int, Var, SelfRef]

_B64URL = re.compile(r"^[A-Za-z0-9_-]{43}$")
_GUID = r"[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}"
_SCID = re.compile(r"^([A-Za-z0-9_-]{43}):(" + _GUID + r")$")
_IPV4 = re.compile(r"^(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})/(\d{1,2})$")
_PATH = re.compile(r"^(?:[^:/\s]+:)?[^:/\s]+(?:/[^:/\s]+)*$")


def _is_b64_32(text: str) -> bool:
    if not _B64URL.match(text):
        return False
    try:
        return len(base64.urlsafe_b64decode(text + "=")) == 32
    except ValueError:
        return False


def parse_ipv4_prefix(text: str) -> ipaddress.IPv4Network:
    """Parse ``a.b.c.d/len`` strictly; host bits must be zero."""
    if not isinstance(text, str) or not _IPV4.match(text):
        raise ValueError(f"malformed IPv4 prefix: {text!r}")
    try:
        net = ipaddress.IPv4Network(text, strict=True)
    except ValueError as exc:
        raise ValueError(f"malformed IPv4 prefix: {text!r}: {exc}") from None
    # ipaddress tolerates leading zeros in some versions; keep text canonical
    if str(net) != text:
        raise ValueError(f"non-canonical IPv4 prefix: {text!r}")
    return net


def term_kind(term: Term) -> str:
    """Classify a term: variable, number, principalID, scid, ipv4-prefix,
    pathname, string, or self."""
    if isinstance(term, Var):
        return "variable"
    if term is SELF:
        return "self"
    if isinstance(term, int):
        return "number"
    if _is_b64_32(term):
        return "principalID"
    m = _SCID.match(term)
    if m and _is_b64_32(m.group(1)):
        return "scid"
    if _IPV4.match(term):
        try:
            parse_ipv4_prefix(term)
            return "ipv4-prefix"
        except ValueError:
            pass
    if "/" in term and _PATH.match(term):
        return "pathname"
    return "string"


def is_ground(term: Term) -> bool:
    return not isinstance(term, Var) and term is not SELF


@dataclass(frozen=True)
class Atom:
    """``speaker: predicate(args...)``; ``args[0]`` is the speaker."""

    predicate: str
    args: tuple
    builtin: bool = False

    @property
    def speaker(self) -> Term:
        return self.args[0]

    @property
    def arity(self) -> int:
        """Number of explicit arguments (speaker excluded)."""
        return len(self.args) - 1

    @property
    def key(self) -> tuple:
        return (self.predicate, len(self.args) - 1)

    def is_ground(self) -> bool:
        return all(is_ground(a) for a in self.args)

    def __str__(self):
        return format_atom(self)


@dataclass(frozen=True)
class Statement:
    """A fact (empty body) or rule.  ``origin`` is the token of the set the
    statement came from, or ``None`` for local statements."""

    head: Atom
    body: tuple = ()
    origin: Optional[bytes] = field(default=None, compare=False)

    @property
    def is_fact(self) -> bool:
        return not self.body

    def with_origin(self, origin: Optional[bytes]) -> "Statement":
        return Statement(self.head, self.body, origin)

    def __str__(self):
        return format_statement(self)


def atom_vars(atom: Atom) -> Iterator[Var]:
    for a in atom.args:
        if isinstance(a, Var):
            yield a


def _subst_self(term: Term, value: str) -> Term:
    return value if term is SELF else term


def resolve_self(statements: Iterable[Statement], principal: str) -> list:
    """Replace every ``$Self`` placeholder with ``principal``."""
    out = []
    for st in statements:
        head = Atom(st.head.predicate,
                    tuple(_subst_self(a, principal) for a in st.head.args),
                    st.head.builtin)
        body = tuple(Atom(b.predicate,
                          tuple(_subst_self(a, principal) for a in b.args),
                          b.builtin) for b in st.body)
        out.append(Statement(head, body, st.origin))
    return out


_IDENT = re.compile(r"^[a-z][A-Za-z0-9_]*$")
RESERVED_WORDS = frozenset({"not"})


def format_term(term: Term) -> str:
    """Canonical text for a term; parses back to an equal term."""
    if isinstance(term, Var):
        return "?" + term.name
    if term is SELF:
        return "$Self"
    if isinstance(term, bool):
        raise TypeError("booleans are not logic terms")
    if isinstance(term, int):
        return str(term)
    if _IDENT.match(term) and term not in RESERVED_WORDS:
        return term
    return json.dumps(term, ensure_ascii=False)


def format_atom(atom: Atom) -> str:
    args = ", ".join(format_term(a) for a in atom.args[1:])
    if atom.builtin:
        return f"@{atom.predicate}({args})"
    return f"{format_term(atom.speaker)}: {atom.predicate}({args})"


def format_statement(st: Statement) -> str:
    if not st.body:
        return format_atom(st.head) + "."
    body = ", ".join(format_atom(b) for b in st.body)
    return f"{format_atom(st.head)} :- {body}."
