"""The closed set of logic builtins.

Builtins are written with an ``@`` prefix (``@ipv4_contains(?Q, ?P)``) and
carry no speaker.  Each builtin receives its argument tuple with ground
constants and unbound ``Var`` objects and yields fully ground argument
tuples that satisfy it.
"""
from __future__ import annotations

import ipaddress
from typing import Callable, Iterator, NamedTuple

from .terms import Var, parse_ipv4_prefix, term_kind

__all__ = ["BUILTINS", "Builtin", "UnknownBuiltinError", "ipv4_contains",
           "lookup", "required_bound"]


class UnknownBuiltinError(KeyError):
    pass


class Builtin(NamedTuple):
    arity: int
    # indices that must be ground on entry; None means "at least one of all"
    needs: tuple | None
    fn: Callable[[tuple], Iterator[tuple]]


def ipv4_contains(outer: str, inner: str) -> bool:
    """True iff the address range of ``inner`` lies within ``outer``."""
    o = parse_ipv4_prefix(outer)
    i = parse_ipv4_prefix(inner)
    return i.prefixlen >= o.prefixlen and i.subnet_of(o)


def _prefix_or_none(t):
    if isinstance(t, str) and term_kind(t) == "ipv4-prefix":
        return parse_ipv4_prefix(t)
    return None


def _b_ipv4_contains(args):
    o, i = _prefix_or_none(args[0]), _prefix_or_none(args[1])
    if o is not None and i is not None and i.subnet_of(o):
        yield args


def _addr_or_none(t):
    if not isinstance(t, str):
        return None
    try:
        return ipaddress.IPv4Address(t)
    except ValueError:
        return None


def _b_ipv4_in_range(args):
    # @ipv4_in_range(Prefix, LowAddr, HighAddr)
    p = _prefix_or_none(args[0])
    lo, hi = _addr_or_none(args[1]), _addr_or_none(args[2])
    if p is None or lo is None or hi is None:
        return
    if lo <= p.network_address and p.broadcast_address <= hi:
        yield args


def _b_eq(args):
    x, y = args
    if isinstance(x, Var) and isinstance(y, Var):
        return
    if isinstance(x, Var):
        yield (y, y)
    elif isinstance(y, Var):
        yield (x, x)
    elif _same(x, y):
        yield args


def _same(x, y):
    return type(x) is type(y) and x == y


def _b_neq(args):
    if not _same(args[0], args[1]):
        yield args


def _cmp(op):
    def f(args):
        x, y = args
        if type(x) is type(y) and op(x, y):
            yield args
    return f


def _b_rootid(args):
    scid, pid = args
    if not isinstance(scid, str) or term_kind(scid) != "scid":
        return
    root = scid.split(":", 1)[0]
    if isinstance(pid, Var):
        yield (scid, root)
    elif pid == root:
        yield args


BUILTINS: dict[str, Builtin] = {
    "ipv4_contains": Builtin(2, (0, 1), _b_ipv4_contains),
    "ipv4_in_range": Builtin(3, (0, 1, 2), _b_ipv4_in_range),
    "eq": Builtin(2, None, _b_eq),
    "neq": Builtin(2, (0, 1), _b_neq),
    "lt": Builtin(2, (0, 1), _cmp(lambda a, b: a < b)),
    "le": Builtin(2, (0, 1), _cmp(lambda a, b: a <= b)),
    "gt": Builtin(2, (0, 1), _cmp(lambda a, b: a > b)),
    "ge": Builtin(2, (0, 1), _cmp(lambda a, b: a >= b)),
    "rootid": Builtin(2, (0,), _b_rootid),
}


def lookup(name: str, arity: int) -> Builtin:
    b = BUILTINS.get(name)
    if b is None:
        raise UnknownBuiltinError(f"unknown builtin @{name}")
    if b.arity != arity:
        raise UnknownBuiltinError(
            f"builtin @{name} takes {b.arity} arguments, got {arity}")
    return b


def required_bound(b: Builtin, args: tuple, bound: set) -> bool:
    """Whether the builtin's input mode is satisfied given ``bound`` vars."""
    def ok(t):
        return not isinstance(t, Var) or t in bound
    if b.needs is None:
        return any(ok(t) for t in args)
    return all(ok(args[i]) for i in b.needs)
