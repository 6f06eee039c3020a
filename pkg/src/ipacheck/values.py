"""Immutable value domain shared by every evaluator.

Booleans, integers and enum symbols map onto ``bool``, ``int`` and ``str``.
Sets are ``frozenset``, sequences are ``tuple``. Records and total finite
maps get their own classes so they never compare equal to each other.
"""

from __future__ import annotations

from typing import Any, Iterable, Iterator

Value = Any


class _Frozen:
    __slots__ = ("_d", "_h")

    def __init__(self, items: Iterable[tuple[Any, Value]]):
        self._d = dict(items)
        self._h = None

    def __getitem__(self, key):
        return self._d[key]

    def __contains__(self, key) -> bool:
        return key in self._d

    def __iter__(self) -> Iterator:
        return iter(self._d)

    def __len__(self) -> int:
        return len(self._d)

    def get(self, key, default=None):
        return self._d.get(key, default)

    def keys(self):
        return self._d.keys()

    def items(self):
        return self._d.items()

    def values(self):
        return self._d.values()

    def __eq__(self, other) -> bool:
        return type(other) is type(self) and self._d == other._d

    def __ne__(self, other) -> bool:
        return not self.__eq__(other)

    def __hash__(self) -> int:
        h = self._h
        if h is None:
            h = hash((type(self).__name__, frozenset(self._d.items())))
            self._h = h
        return h

    def __getstate__(self):
        return tuple(self._d.items())

    def __setstate__(self, state):
        self._d = dict(state)
        self._h = None

    def replace(self, key, value):
        d = dict(self._d)
        d[key] = value
        out = object.__new__(type(self))
        out._d = d
        out._h = None
        return out


class Record(_Frozen):
    """Record with a fixed set of string field names."""

    __slots__ = ()

    def __repr__(self) -> str:
        return format_value(self)


class FMap(_Frozen):
    """Total map over a finite domain."""

    __slots__ = ()

    def __repr__(self) -> str:
        return format_value(self)


def value_key(v: Value) -> tuple:
    """Total order on values, used wherever a canonical order is needed."""
    if v is True or v is False:
        return (0, int(v))
    t = type(v)
    if t is int:
        return (1, v)
    if t is str:
        return (2, v)
    if t is frozenset:
        return (3, tuple(sorted(value_key(x) for x in v)))
    if t is tuple:
        return (4, tuple(value_key(x) for x in v))
    if t is Record:
        return (5, tuple(sorted((k, value_key(x)) for k, x in v.items())))
    if t is FMap:
        return (6, tuple(sorted((value_key(k), value_key(x)) for k, x in v.items())))
    raise TypeError(f"not a value: {v!r}")


def sorted_values(vs: Iterable[Value]) -> list[Value]:
    return sorted(vs, key=value_key)


def format_value(v: Value) -> str:
    """Human-readable rendering in the surface syntax."""
    if v is True:
        return "TRUE"
    if v is False:
        return "FALSE"
    t = type(v)
    if t is int or t is str:
        return str(v)
    if t is frozenset:
        return "{" + ", ".join(format_value(x) for x in sorted_values(v)) + "}"
    if t is tuple:
        return "<<" + ", ".join(format_value(x) for x in v) + ">>"
    if t is Record:
        return "[" + ", ".join(f"{k} |-> {format_value(x)}" for k, x in sorted(v.items())) + "]"
    if t is FMap:
        keys = sorted_values(v.keys())
        return "(" + ", ".join(f"{format_value(k)} :> {format_value(v[k])}" for k in keys) + ")"
    raise TypeError(f"not a value: {v!r}")


def to_json(v: Value):
    """Tagged, type-free JSON encoding (sets and collections sorted canonically)."""
    if v is True or v is False:
        return v
    t = type(v)
    if t is int or t is str:
        return v
    if t is frozenset:
        return {"set": [to_json(x) for x in sorted_values(v)]}
    if t is tuple:
        return {"seq": [to_json(x) for x in v]}
    if t is Record:
        return {"record": {k: to_json(v[k]) for k in sorted(v.keys())}}
    if t is FMap:
        return {"map": [[to_json(k), to_json(v[k])] for k in sorted_values(v.keys())]}
    raise TypeError(f"not a value: {v!r}")


def from_json(j) -> Value:
    if isinstance(j, (bool, int, str)):
        return j
    if isinstance(j, dict) and len(j) == 1:
        (tag, body), = j.items()
        if tag == "set":
            return frozenset(from_json(x) for x in body)
        if tag == "seq":
            return tuple(from_json(x) for x in body)
        if tag == "record":
            return Record((k, from_json(x)) for k, x in body.items())
        if tag == "map":
            return FMap((from_json(k), from_json(x)) for k, x in body)
    raise ValueError(f"malformed value encoding: {j!r}")
