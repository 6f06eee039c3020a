"""Transition-system semantics: evaluation, enabled bindings, successors.

Expressions are compiled once per spec into Python closures taking
``(st, env)``: ``st`` is the state as a tuple of values in variable
declaration order and ``env`` a per-evaluation list of bound-name slots.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Optional

from . import syntax as S
from .values import FMap, Record, format_value, sorted_values, value_key


class EvalError(Exception):
    """Evaluation failure, located at the offending expression when known."""

    def __init__(self, message: str, span: Optional[S.SourceSpan] = None):
        self.message = message
        self.span = span
        super().__init__(f"{span}: {message}" if span else message)


class BoundError(EvalError):
    """A value would leave its variable's declared domain."""


class ValidationError(Exception):
    pass


@dataclass(frozen=True)
class ActionInstance:
    action: str
    binding: tuple = ()  # ((param, value), ...) in parameter order

    def binding_dict(self) -> dict:
        return dict(self.binding)

    def __str__(self) -> str:
        if not self.binding:
            return self.action
        args = ", ".join(f"{k}={format_value(v)}" for k, v in self.binding)
        return f"{self.action}({args})"


class State(Mapping):
    """Total assignment from variable names to values."""

    __slots__ = ("names", "values")

    def __init__(self, names: tuple, values: tuple):
        self.names = names
        self.values = values

    @classmethod
    def from_dict(cls, d: dict) -> "State":
        names = tuple(d)
        return cls(names, tuple(d[n] for n in names))

    def __getitem__(self, key):
        try:
            return self.values[self.names.index(key)]
        except ValueError:
            raise KeyError(key) from None

    def __iter__(self):
        return iter(self.names)

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        if isinstance(other, State):
            if other.names == self.names:
                return other.values == self.values
            return dict(self) == dict(other)
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(zip(self.names, self.values)))

    def __repr__(self):
        inner = ", ".join(f"{n}={format_value(v)}" for n, v in zip(self.names, self.values))
        return f"State({inner})"


# --- compilation -----------------------------------------------------------


class _Unit:
    """Slot allocator for one compilation unit (action, invariant, ...)."""

    def __init__(self):
        self.size = 0

    def alloc(self) -> int:
        self.size += 1
        return self.size - 1


def _ordered(dom) -> list:
    if type(dom) is frozenset:
        return sorted(dom, key=value_key)
    raise EvalError(f"expected a set, got {format_value(dom)}")


class Compiler:
    def __init__(self, spec: S.Spec, var_index: dict, consts: dict, sorts: dict):
        self.spec = spec
        self.var_index = var_index
        self.consts = consts
        self.sorts = sorts
        self.defs = spec.def_table()

    def compile(self, e, slots: dict, unit: _Unit) -> Callable:
        meth = getattr(self, "_c_" + type(e).__name__)
        return meth(e, slots, unit)

    def _c_Lit(self, e, slots, unit):
        v = e.value
        return lambda st, env: v

    def _c_VarRef(self, e, slots, unit):
        try:
            i = self.var_index[e.name]
        except KeyError:
            raise ValidationError(f"{e.span}: variable {e.name} is not in scope") from None
        return lambda st, env: st[i]

    def _c_ParamRef(self, e, slots, unit):
        k = slots[e.name]
        return lambda st, env: env[k]

    def _c_ConstRef(self, e, slots, unit):
        v = self.consts[e.name]
        return lambda st, env: v

    def _c_SortRef(self, e, slots, unit):
        v = frozenset(self.sorts[e.name])
        return lambda st, env: v

    def _c_SymRef(self, e, slots, unit):
        v = e.name
        return lambda st, env: v

    def _c_Name(self, e, slots, unit):
        raise ValidationError(f"{e.span}: unresolved name {e.name}")

    def _c_Unary(self, e, slots, unit):
        f = self.compile(e.arg, slots, unit)
        if e.op == "~":
            return lambda st, env: not f(st, env)
        return lambda st, env: -f(st, env)

    def _c_Binary(self, e, slots, unit):
        a = self.compile(e.left, slots, unit)
        b = self.compile(e.right, slots, unit)
        op = e.op
        span = e.span
        if op == "/\\":
            return lambda st, env: a(st, env) and b(st, env)
        if op == "\\/":
            return lambda st, env: a(st, env) or b(st, env)
        if op == "=>":
            return lambda st, env: (not a(st, env)) or b(st, env)
        if op == "=":
            return lambda st, env: a(st, env) == b(st, env)
        if op == "/=":
            return lambda st, env: a(st, env) != b(st, env)
        if op == "<":
            return lambda st, env: a(st, env) < b(st, env)
        if op == "<=":
            return lambda st, env: a(st, env) <= b(st, env)
        if op == ">":
            return lambda st, env: a(st, env) > b(st, env)
        if op == ">=":
            return lambda st, env: a(st, env) >= b(st, env)
        if op == "\\in":
            return lambda st, env: a(st, env) in b(st, env)
        if op == "\\notin":
            return lambda st, env: a(st, env) not in b(st, env)
        if op == "\\subseteq":
            return lambda st, env: a(st, env) <= b(st, env)
        if op == "\\union":
            return lambda st, env: a(st, env) | b(st, env)
        if op == "\\intersect":
            return lambda st, env: a(st, env) & b(st, env)
        if op == "\\setminus":
            return lambda st, env: a(st, env) - b(st, env)
        if op == "..":
            return lambda st, env: frozenset(range(a(st, env), b(st, env) + 1))
        if op == "+":
            return lambda st, env: a(st, env) + b(st, env)
        if op == "-":
            return lambda st, env: a(st, env) - b(st, env)
        if op == "*":
            return lambda st, env: a(st, env) * b(st, env)
        if op in ("\\div", "%"):
            def divmod_(st, env):
                x, y = a(st, env), b(st, env)
                if y == 0:
                    raise EvalError("division by zero", span)
                return x // y if op == "\\div" else x % y
            return divmod_
        raise ValidationError(f"{span}: unknown operator {op}")

    def _c_If(self, e, slots, unit):
        c = self.compile(e.cond, slots, unit)
        t = self.compile(e.then, slots, unit)
        f = self.compile(e.orelse, slots, unit)
        return lambda st, env: t(st, env) if c(st, env) else f(st, env)

    def _bind(self, var, slots, unit):
        k = unit.alloc()
        inner = dict(slots)
        inner[var] = k
        return k, inner

    def _c_Quant(self, e, slots, unit):
        d = self.compile(e.domain, slots, unit)
        k, inner = self._bind(e.var, slots, unit)
        body = self.compile(e.body, inner, unit)
        if e.kind == "A":
            def forall(st, env):
                for v in d(st, env):
                    env[k] = v
                    if not body(st, env):
                        return False
                return True
            return forall

        def exists(st, env):
            for v in d(st, env):
                env[k] = v
                if body(st, env):
                    return True
            return False
        return exists

    def _c_SetLit(self, e, slots, unit):
        fs = [self.compile(x, slots, unit) for x in e.elems]
        return lambda st, env: frozenset([f(st, env) for f in fs])

    def _c_SetFilter(self, e, slots, unit):
        d = self.compile(e.domain, slots, unit)
        k, inner = self._bind(e.var, slots, unit)
        p = self.compile(e.pred, inner, unit)

        def filt(st, env):
            out = []
            for v in d(st, env):
                env[k] = v
                if p(st, env):
                    out.append(v)
            return frozenset(out)
        return filt

    def _c_SetMap(self, e, slots, unit):
        d = self.compile(e.domain, slots, unit)
        k, inner = self._bind(e.var, slots, unit)
        f = self.compile(e.expr, inner, unit)

        def smap(st, env):
            out = []
            for v in d(st, env):
                env[k] = v
                out.append(f(st, env))
            return frozenset(out)
        return smap

    def _c_SeqLit(self, e, slots, unit):
        fs = [self.compile(x, slots, unit) for x in e.elems]
        return lambda st, env: tuple([f(st, env) for f in fs])

    def _c_RecordLit(self, e, slots, unit):
        names = [n for n, _ in e.fields]
        fs = [self.compile(x, slots, unit) for _, x in e.fields]
        return lambda st, env: Record(zip(names, [f(st, env) for f in fs]))

    def _c_MapComp(self, e, slots, unit):
        d = self.compile(e.domain, slots, unit)
        k, inner = self._bind(e.var, slots, unit)
        f = self.compile(e.body, inner, unit)

        def comp(st, env):
            items = []
            for v in d(st, env):
                env[k] = v
                items.append((v, f(st, env)))
            return FMap(items)
        return comp

    def _c_Except(self, e, slots, unit):
        base = self.compile(e.base, slots, unit)
        ups = []
        for path, value in e.updates:
            steps = [(kind, self.compile(x, slots, unit) if kind == "idx" else x) for kind, x in path]
            ups.append((steps, self.compile(value, slots, unit)))
        span = e.span

        def put(container, steps, i, new):
            kind, key = steps[i]
            last = i == len(steps) - 1
            if kind == "fld":
                if type(container) is not Record or key not in container:
                    raise EvalError(f"no field {key} in {format_value(container)}", span)
                inner = container[key]
                return container.replace(key, new if last else put(inner, steps, i + 1, new))
            if type(container) is FMap:
                if key not in container:
                    raise EvalError(f"{format_value(key)} is outside the map domain", span)
                inner = container[key]
                return container.replace(key, new if last else put(inner, steps, i + 1, new))
            if type(container) is tuple:
                if type(key) is not int or not 1 <= key <= len(container):
                    raise EvalError(f"sequence index {format_value(key)} out of range", span)
                inner = container[key - 1]
                lst = list(container)
                lst[key - 1] = new if last else put(inner, steps, i + 1, new)
                return tuple(lst)
            raise EvalError(f"cannot update {format_value(container)}", span)

        def exc(st, env):
            out = base(st, env)
            for steps, vf in ups:
                concrete = [(kind, f(st, env) if kind == "idx" else f) for kind, f in steps]
                out = put(out, concrete, 0, vf(st, env))
            return out
        return exc

    def _c_Index(self, e, slots, unit):
        b = self.compile(e.base, slots, unit)
        k = self.compile(e.key, slots, unit)
        span = e.span

        def index(st, env):
            c = b(st, env)
            key = k(st, env)
            if type(c) is FMap:
                try:
                    return c._d[key]
                except KeyError:
                    raise EvalError(f"{format_value(key)} is outside the map domain", span) from None
            if type(c) is tuple:
                if type(key) is int and 1 <= key <= len(c):
                    return c[key - 1]
                raise EvalError(f"sequence index {format_value(key)} out of range (length {len(c)})", span)
            raise EvalError(f"cannot index {format_value(c)}", span)
        return index

    def _c_Field(self, e, slots, unit):
        b = self.compile(e.base, slots, unit)
        name = e.name
        span = e.span

        def field(st, env):
            r = b(st, env)
            if type(r) is Record:
                try:
                    return r._d[name]
                except KeyError:
                    pass
            raise EvalError(f"no field {name} in {format_value(r)}", span)
        return field

    def _c_Builtin(self, e, slots, unit):
        fs = [self.compile(x, slots, unit) for x in e.args]
        span = e.span
        n = e.name
        if n == "Cardinality":
            f = fs[0]
            return lambda st, env: len(f(st, env))
        if n == "Len":
            f = fs[0]
            return lambda st, env: len(f(st, env))
        if n == "Append":
            f, g = fs
            return lambda st, env: f(st, env) + (g(st, env),)
        if n == "SubSeq":
            f, lo, hi = fs
            return lambda st, env: f(st, env)[lo(st, env) - 1:hi(st, env)]
        if n in ("Head", "Tail"):
            f = fs[0]

            def ht(st, env):
                s = f(st, env)
                if not s:
                    raise EvalError(f"{n} of empty sequence", span)
                return s[0] if n == "Head" else s[1:]
            return ht
        raise ValidationError(f"{span}: unknown builtin {n}")

    def _c_Call(self, e, slots, unit):
        d = self.defs[e.name]
        args = [self.compile(x, slots, unit) for x in e.args]
        ks = [unit.alloc() for _ in d.params]
        body = self.compile(d.body, dict(zip(d.params, ks)), unit)
        if not ks:
            return body

        def call(st, env):
            vals = [a(st, env) for a in args]
            for k, v in zip(ks, vals):
                env[k] = v
            return body(st, env)
        return call


# --- domains ---------------------------------------------------------------


def _domain_checker(t, consts_eval: Callable, sorts: dict) -> Callable:
    if isinstance(t, S.BoolT):
        return lambda v: v is True or v is False
    if isinstance(t, S.RangeT):
        lo, hi = consts_eval(t.lo), consts_eval(t.hi)
        return lambda v: type(v) is int and lo <= v <= hi
    if isinstance(t, S.SortT):
        members = frozenset(sorts[t.name])
        return lambda v: type(v) is str and v in members
    if isinstance(t, S.SetT):
        el = _domain_checker(t.elem, consts_eval, sorts)
        return lambda v: type(v) is frozenset and all(el(x) for x in v)
    if isinstance(t, S.SeqT):
        el = _domain_checker(t.elem, consts_eval, sorts)
        n = consts_eval(t.maxlen)
        return lambda v: type(v) is tuple and len(v) <= n and all(el(x) for x in v)
    if isinstance(t, S.RecordT):
        checks = {n: _domain_checker(ft, consts_eval, sorts) for n, ft in t.fields}
        keys = set(checks)
        return lambda v: type(v) is Record and set(v.keys()) == keys and all(
            checks[k](v[k]) for k in keys)
    if isinstance(t, S.MapT):
        dom = frozenset(domain_values(t.key, consts_eval, sorts))
        val = _domain_checker(t.value, consts_eval, sorts)
        return lambda v: type(v) is FMap and frozenset(v.keys()) == dom and all(
            val(x) for x in v.values())
    raise ValidationError(f"unknown type {t!r}")


def domain_values(t, consts_eval: Callable, sorts: dict) -> list:
    """Enumerate a finite scalar domain (used for map keys)."""
    if isinstance(t, S.SortT):
        return list(sorts[t.name])
    if isinstance(t, S.RangeT):
        return list(range(consts_eval(t.lo), consts_eval(t.hi) + 1))
    if isinstance(t, S.BoolT):
        return [False, True]
    raise ValidationError("map keys must range over a sort, an integer range or Bool")


# --- compiled model --------------------------------------------------------


class CompiledAction:
    __slots__ = ("action", "name", "module", "params", "domains", "dom_orders",
                 "level_guards", "updates", "env_size")

    def __init__(self, action: S.Action, compiler: Compiler):
        self.action = action
        self.name = action.name
        self.module = action.module
        self.params = tuple(p.name for p in action.params)
        unit = _Unit()
        slots: dict = {}
        self.domains = []
        self.dom_orders = []
        for p in action.params:
            self.domains.append(compiler.compile(p.domain, slots, unit))
            if isinstance(p.domain, S.SortRef):
                self.dom_orders.append(tuple(compiler.sorts[p.domain.name]))
            else:
                self.dom_orders.append(None)
            slots = dict(slots)
            slots[p.name] = unit.alloc()
        param_pos = {n: i for i, n in enumerate(self.params)}
        levels: list[list] = [[] for _ in range(len(self.params) + 1)]
        for g in action.guards:
            used = [param_pos[n.name] + 1 for n in S.walk(g)
                    if isinstance(n, S.ParamRef) and n.name in param_pos]
            levels[max(used, default=0)].append(compiler.compile(g, slots, unit))
        self.level_guards = levels
        self.updates = [(compiler.var_index[u.var], u.var, compiler.compile(u.expr, slots, unit))
                        for u in action.updates]
        self.env_size = unit.size

    def bindings(self, st: tuple) -> Iterator[tuple]:
        """Yield env lists (first len(params) slots = binding) whose guards hold."""
        env = [None] * self.env_size
        for g in self.level_guards[0]:
            if not g(st, env):
                return
        if not self.params:
            yield env
            return
        yield from self._enum(st, env, 0)

    def _enum(self, st, env, i):
        order = self.dom_orders[i]
        if order is None:
            order = _ordered(self.domains[i](st, env))
        guards = self.level_guards[i + 1]
        last = i + 1 == len(self.params)
        for v in order:
            env[i] = v
            ok = True
            for g in guards:
                if not g(st, env):
                    ok = False
                    break
            if not ok:
                continue
            if last:
                yield env
            else:
                yield from self._enum(st, env, i + 1)

    def apply(self, st: tuple, env: list, check: Callable) -> tuple:
        out = list(st)
        for i, name, f in self.updates:
            v = f(st, env)
            out[i] = v
            check(i, v, self, env)
        return tuple(out)


class Model:
    """A spec compiled for execution."""

    def __init__(self, spec: S.Spec):
        self.spec = spec
        self.var_names = spec.var_names
        self.var_index = {n: i for i, n in enumerate(self.var_names)}
        self.sorts = {d.name: tuple(d.value) for d in spec.sorts}
        self.consts: dict = {}
        self.compiler = Compiler(spec, self.var_index, self.consts, self.sorts)
        for d in spec.consts:
            self.consts[d.name] = self.eval_const(d.value)
        self.checkers = [
            _domain_checker(d.value, self.eval_const, self.sorts) for d in spec.variables
        ]
        self.actions = [CompiledAction(a, self.compiler) for a in spec.actions]
        self.action_by_name = {ca.name: ca for ca in self.actions}
        self.invariants = [(d.name, self.compile_closed(d.value)) for d in spec.invariants]
        self._init = None

    def eval_const(self, e):
        unit = _Unit()
        f = self.compiler.compile(e, {}, unit)
        return f((), [None] * unit.size)

    def compile_closed(self, e) -> Callable:
        """Compile an expression over state variables only; returns f(st)."""
        unit = _Unit()
        f = self.compiler.compile(e, {}, unit)
        size = unit.size
        return lambda st: f(st, [None] * size)

    def compile_with_params(self, e, params: tuple) -> Callable:
        """Returns f(st, values) with ``values`` bound positionally to ``params``."""
        unit = _Unit()
        slots = {p: unit.alloc() for p in params}
        f = self.compiler.compile(e, slots, unit)
        size = unit.size
        n = len(params)

        def run(st, values):
            env = [None] * size
            env[:n] = values
            return f(st, env)
        return run

    def check_domain(self, i: int, v, ca: CompiledAction, env: list):
        if not self.checkers[i](v):
            inst = self.instance(ca, env)
            raise BoundError(
                f"action {inst} assigns {format_value(v)} to {self.var_names[i]}, "
                f"outside its declared domain", ca.action.span)

    @staticmethod
    def instance(ca: CompiledAction, env: list) -> ActionInstance:
        return ActionInstance(ca.name, tuple(zip(ca.params, env[:len(ca.params)])))

    def initial(self) -> tuple:
        if self._init is None:
            init = dict((d.name, d.value) for d in self.spec.init)
            vals = []
            for i, n in enumerate(self.var_names):
                v = self.eval_const(init[n])
                if not self.checkers[i](v):
                    raise BoundError(f"initial value {format_value(v)} of {n} is outside its domain")
                vals.append(v)
            self._init = tuple(vals)
        return self._init

    def successors(self, st: tuple) -> list:
        """All (ActionInstance, successor tuple) pairs in deterministic order."""
        out = []
        check = self.check_domain
        for ca in self.actions:
            try:
                for env in ca.bindings(st):
                    out.append((self.instance(ca, env), ca.apply(st, env, check)))
            except BoundError:
                raise
            except EvalError as exc:
                raise EvalError(f"in action {ca.name} at state {self.format_state(st)}: "
                                f"{exc.message}", exc.span) from None
            except (TypeError, KeyError, AttributeError) as exc:
                raise EvalError(f"in action {ca.name} at state {self.format_state(st)}: "
                                f"ill-typed evaluation ({exc})", ca.action.span) from None
        return out

    def step(self, st: tuple, inst: ActionInstance) -> Optional[tuple]:
        """Successor of ``st`` under ``inst`` or None when it is not enabled."""
        ca = self.action_by_name.get(inst.action)
        if ca is None or len(inst.binding) != len(ca.params):
            return None
        if tuple(k for k, _ in inst.binding) != ca.params:
            return None
        env = [None] * ca.env_size
        for g in ca.level_guards[0]:
            if not g(st, env):
                return None
        for i, (_, v) in enumerate(inst.binding):
            if v not in ca.domains[i](st, env):
                return None
            env[i] = v
            for g in ca.level_guards[i + 1]:
                if not g(st, env):
                    return None
        return ca.apply(st, env, self.check_domain)

    def state(self, st: tuple) -> State:
        return State(self.var_names, st)

    def format_state(self, st: tuple) -> str:
        return ", ".join(f"{n}={format_value(v)}" for n, v in zip(self.var_names, st))

    def state_in_domain(self, st: tuple) -> bool:
        return len(st) == len(self.checkers) and all(c(v) for c, v in zip(self.checkers, st))


def model_of(spec: S.Spec) -> Model:
    m = spec.__dict__.get("_model")
    if m is None:
        m = Model(spec)
        object.__setattr__(spec, "_model", m)
    return m


def _tuple_of(spec: S.Spec, s: Mapping) -> tuple:
    return tuple(s[n] for n in spec.var_names)


# --- public operations ------------------------------------------------------


def eval_expr(e, s: Mapping, b: Optional[Mapping] = None, spec: Optional[S.Spec] = None):
    """Value of ``e`` in state ``s`` under parameter binding ``b``."""
    b = dict(b or {})
    if spec is None:
        spec = S.Spec(name="_", variables=tuple(S.Decl(n, S.BoolT()) for n in s))
    m = model_of(spec)
    st = tuple(s[n] for n in spec.var_names) if spec.variables else ()
    f = m.compile_with_params(e, tuple(b))
    return f(st, list(b.values()))


def enabled_bindings(a: S.Action, s: Mapping, spec: S.Spec) -> list:
    m = model_of(spec)
    ca = m.action_by_name[a.name]
    st = _tuple_of(spec, s)
    return [m.instance(ca, env) for env in ca.bindings(st)]


def apply_action(a: S.Action, inst: ActionInstance, s: Mapping, spec: S.Spec) -> State:
    m = model_of(spec)
    st = _tuple_of(spec, s)
    t = m.step(st, inst)
    if t is None:
        raise EvalError(f"{inst} is not enabled in the given state")
    return m.state(t)


def initial_state(spec: S.Spec) -> State:
    m = model_of(spec)
    return m.state(m.initial())


def successors(spec: S.Spec, s: Mapping) -> list:
    m = model_of(spec)
    return [(inst, m.state(t)) for inst, t in m.successors(_tuple_of(spec, s))]


def sorted_domain(values) -> list:
    return sorted_values(values)
