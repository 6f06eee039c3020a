"""Abstract syntax for specifications, plus generic tree utilities.

Every node carries an optional :class:`SourceSpan` that is excluded from
equality, so structural comparison ignores source positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Callable, Iterator, Optional, Union


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int
    length: int = 0

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


def _span():
    return field(default=None, compare=False, repr=False)


# --- expressions -----------------------------------------------------------


@dataclass(frozen=True)
class Lit:
    value: Union[bool, int]
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Name:
    """Unresolved identifier; replaced by the resolver."""

    name: str
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class VarRef:
    name: str
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class ParamRef:
    """Reference to a bound name: action parameter, quantifier or def argument."""

    name: str
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class ConstRef:
    name: str
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class SortRef:
    name: str
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class SymRef:
    name: str
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class If:
    cond: "Expr"
    then: "Expr"
    orelse: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Quant:
    kind: str  # "A" or "E"
    var: str
    domain: "Expr"
    body: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class SetLit:
    elems: tuple
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class SetFilter:
    var: str
    domain: "Expr"
    pred: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class SetMap:
    expr: "Expr"
    var: str
    domain: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class SeqLit:
    elems: tuple
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class RecordLit:
    fields: tuple  # ((name, Expr), ...)
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class MapComp:
    var: str
    domain: "Expr"
    body: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Except:
    """Functional update; each entry is (path, value) with path items
    ``("idx", Expr)`` or ``("fld", name)``."""

    base: "Expr"
    updates: tuple
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Index:
    base: "Expr"
    key: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Field:
    base: "Expr"
    name: str
    span: Optional[SourceSpan] = _span()


BUILTINS = {"Cardinality": 1, "Len": 1, "Append": 2, "SubSeq": 3, "Head": 1, "Tail": 1}


@dataclass(frozen=True)
class Builtin:
    name: str
    args: tuple
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Call:
    """Call of a user definition (zero-argument definitions included)."""

    name: str
    args: tuple
    span: Optional[SourceSpan] = _span()


Expr = Union[
    Lit, Name, VarRef, ParamRef, ConstRef, SortRef, SymRef, Unary, Binary, If, Quant,
    SetLit, SetFilter, SetMap, SeqLit, RecordLit, MapComp, Except, Index, Field, Builtin, Call,
]

# --- types -----------------------------------------------------------------


@dataclass(frozen=True)
class BoolT:
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class RangeT:
    lo: Expr
    hi: Expr
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class SortT:
    name: str
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class SetT:
    elem: "TypeExpr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class SeqT:
    elem: "TypeExpr"
    maxlen: Expr
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class RecordT:
    fields: tuple  # ((name, TypeExpr), ...)
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class MapT:
    key: "TypeExpr"
    value: "TypeExpr"
    span: Optional[SourceSpan] = _span()


TypeExpr = Union[BoolT, RangeT, SortT, SetT, SeqT, RecordT, MapT]

# --- declarations ----------------------------------------------------------


@dataclass(frozen=True)
class Param:
    name: str
    domain: Expr
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Update:
    var: str
    expr: Expr
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Action:
    name: str
    module: str
    params: tuple = ()
    guards: tuple = ()
    updates: tuple = ()
    span: Optional[SourceSpan] = _span()

    def updated(self) -> dict:
        return {u.var: u.expr for u in self.updates}


@dataclass(frozen=True)
class Module:
    name: str
    actions: tuple
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Def:
    name: str
    params: tuple
    body: Expr
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Decl:
    """Named item: const, sort (value = tuple of symbols), var (value =
    TypeExpr), init entry or invariant (value = Expr)."""

    name: str
    value: object
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Spec:
    name: str
    consts: tuple = ()
    sorts: tuple = ()
    defs: tuple = ()
    variables: tuple = ()
    init: tuple = ()
    modules: tuple = ()
    invariants: tuple = ()
    origin: str = field(default="<memory>", compare=False, repr=False)

    @property
    def actions(self) -> tuple:
        return tuple(a for m in self.modules for a in m.actions)

    @property
    def var_names(self) -> tuple:
        return tuple(d.name for d in self.variables)

    def action(self, name: str) -> Action:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)

    def module(self, name: str) -> Module:
        for m in self.modules:
            if m.name == name:
                return m
        raise KeyError(name)

    def module_of(self, action_name: str) -> str:
        return self.action(action_name).module

    def var_type(self, name: str):
        for d in self.variables:
            if d.name == name:
                return d.value
        raise KeyError(name)

    def def_table(self) -> dict:
        return {d.name: d for d in self.defs}


# --- generic traversal -----------------------------------------------------

_EXPR_TYPES = tuple(t for t in Expr.__args__)  # type: ignore[attr-defined]


def children(e) -> Iterator:
    """Direct sub-expressions (and sub-types) of a node, in field order."""
    for f in fields(e):
        if f.name == "span":
            continue
        v = getattr(e, f.name)
        yield from _nodes_in(v)


def _nodes_in(v) -> Iterator:
    if is_dataclass(v):
        yield v
    elif isinstance(v, tuple):
        for x in v:
            yield from _nodes_in(x)


def walk(e) -> Iterator:
    yield e
    for c in children(e):
        yield from walk(c)


def transform(e, fn: Callable):
    """Bottom-up rebuild: ``fn`` sees each node after its children were rebuilt."""
    if not is_dataclass(e):
        return e
    changes = {}
    for f in fields(e):
        if f.name == "span":
            continue
        v = getattr(e, f.name)
        nv = _transform_value(v, fn)
        if nv is not v:
            changes[f.name] = nv
    node = replace(e, **changes) if changes else e
    return fn(node)


def _transform_value(v, fn):
    if is_dataclass(v):
        return transform(v, fn)
    if isinstance(v, tuple):
        items = [_transform_value(x, fn) for x in v]
        if all(a is b for a, b in zip(items, v)):
            return v
        return tuple(items)
    return v


def strip_spans(e):
    return transform(e, lambda n: replace(n, span=None) if getattr(n, "span", None) is not None else n)


def state_reads(e, defs: Optional[dict] = None) -> frozenset:
    """State variables syntactically read by ``e`` (looking through definitions)."""
    out: set[str] = set()
    _collect_reads(e, defs or {}, out, set())
    return frozenset(out)


def _collect_reads(e, defs, out, seen_defs):
    if isinstance(e, VarRef):
        out.add(e.name)
        return
    if isinstance(e, Call) and e.name in defs and e.name not in seen_defs:
        seen_defs.add(e.name)
        _collect_reads(defs[e.name].body, defs, out, seen_defs)
    for c in children(e):
        _collect_reads(c, defs, out, seen_defs)


def substitute(e, mapping: dict):
    """Replace ``ParamRef(name)`` for names in ``mapping`` (capture-free: the
    binder-introduced names shadow the mapping inside their scope)."""
    if not mapping:
        return e
    if isinstance(e, ParamRef):
        return mapping.get(e.name, e)
    if isinstance(e, (Quant, SetFilter, MapComp)):
        inner = {k: v for k, v in mapping.items() if k != e.var}
        dom = substitute(e.domain, mapping)
        if isinstance(e, Quant):
            return replace(e, domain=dom, body=substitute(e.body, inner))
        if isinstance(e, SetFilter):
            return replace(e, domain=dom, pred=substitute(e.pred, inner))
        return replace(e, domain=dom, body=substitute(e.body, inner))
    if isinstance(e, SetMap):
        inner = {k: v for k, v in mapping.items() if k != e.var}
        return replace(e, domain=substitute(e.domain, mapping), expr=substitute(e.expr, inner))
    if not is_dataclass(e):
        return e
    changes = {}
    for f in fields(e):
        if f.name == "span":
            continue
        v = getattr(e, f.name)
        nv = _subst_value(v, mapping)
        if nv is not v:
            changes[f.name] = nv
    return replace(e, **changes) if changes else e


def _subst_value(v, mapping):
    if is_dataclass(v):
        return substitute(v, mapping)
    if isinstance(v, tuple):
        items = [_subst_value(x, mapping) for x in v]
        if all(a is b for a, b in zip(items, v)):
            return v
        return tuple(items)
    return v


def rename_binders(e, prefix: str):
    """Prefix every name bound inside ``e`` so inlined bodies cannot capture."""
    bound: set[str] = set()

    def collect(n):
        if isinstance(n, (Quant, SetFilter, MapComp, SetMap)):
            bound.add(n.var)
        return n

    transform(e, collect)
    if not bound:
        return e
    ren = {b: f"{prefix}.{b}" for b in bound}

    def fn(n):
        if isinstance(n, ParamRef) and n.name in ren:
            return replace(n, name=ren[n.name])
        if isinstance(n, (Quant, SetFilter, MapComp, SetMap)) and n.var in ren:
            return replace(n, var=ren[n.var])
        return n

    return transform(e, fn)


def expand_defs(e, defs: dict):
    """Inline every definition call (definitions are non-recursive)."""

    def fn(n):
        if isinstance(n, Call) and n.name in defs:
            d = defs[n.name]
            body = rename_binders(expand_defs(d.body, defs), d.name)
            return substitute(body, dict(zip(d.params, n.args)))
        return n

    return transform(e, fn)
