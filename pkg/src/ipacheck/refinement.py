"""Strong refinement B => A under a state mapping and an action mapping.

VOID-mapped actions are stuttering steps of A: the projected state must not
change. The simulation check is per transition over B's reachable states,
which suffices because the state mapping is a function.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

from . import syntax as S
from .explorer import Bounds, Engine, Trace
from .kernel import ActionInstance, EvalError, State, model_of
from .parser import MapEntry

ORACLE_STATE_LIMIT = 5000


@dataclass(frozen=True)
class StateMapping:
    """abstract variable -> expression over B's variables."""

    exprs: tuple  # ((name, Expr), ...) in A's variable order

    @classmethod
    def identity(cls, a: S.Spec, b: S.Spec, refine: Optional[dict] = None) -> "StateMapping":
        refine = refine or {}
        b_vars = set(b.var_names)
        out = []
        for v in a.var_names:
            if v in refine:
                out.append((v, refine[v]))
            elif v in b_vars:
                out.append((v, S.VarRef(v)))
            else:
                raise ValueError(f"no mapping for abstract variable {v}")
        return cls(tuple(out))

    def as_dict(self) -> dict:
        return dict(self.exprs)


def identity_actions(spec: S.Spec) -> dict:
    return {a.name: MapEntry(a.name, a.name, a.module) for a in spec.actions}


class _Projector:
    def __init__(self, b: S.Spec, a: S.Spec, sm: StateMapping):
        mb = model_of(b)
        names = dict(sm.exprs)
        missing = [v for v in a.var_names if v not in names]
        if missing:
            raise ValueError(f"state mapping is not total: {', '.join(missing)} unmapped")
        self.fns = [(v, mb.compile_closed(names[v])) for v in a.var_names]
        self.cache: dict = {}

    def __call__(self, st: tuple) -> tuple:
        r = self.cache.get(st)
        if r is None:
            out = []
            for v, f in self.fns:
                try:
                    out.append(f(st))
                except EvalError as exc:
                    raise EvalError(f"projecting {v}: {exc.message}", exc.span) from None
            r = tuple(out)
            self.cache[st] = r
        return r


class _ActionTranslator:
    """Maps a B action instance to an A action instance (or None for VOID)."""

    def __init__(self, b: S.Spec, a: S.Spec, am: dict):
        mb, ma = model_of(b), model_of(a)
        self.table = {}
        for act in b.actions:
            entry = am.get(act.name)
            if entry is None:
                raise ValueError(f"action mapping is not total: {act.name} unmapped")
            if entry.target is None:
                self.table[act.name] = None
                continue
            target = ma.action_by_name[entry.target]
            bparams = tuple(p.name for p in act.params)
            if entry.bindings is None:
                if len(target.params) != len(bparams):
                    raise ValueError(f"{act.name} -> {entry.target}: arity mismatch")
                self.table[act.name] = (entry.target, target.params, None)
            else:
                fns = [mb.compile_with_params(e, bparams) for e in entry.bindings]
                self.table[act.name] = (entry.target, target.params, fns)

    def __call__(self, st: tuple, inst: ActionInstance) -> Optional[ActionInstance]:
        t = self.table[inst.action]
        if t is None:
            return None
        name, params, fns = t
        vals = [v for _, v in inst.binding]
        if fns is None:
            return ActionInstance(name, tuple(zip(params, vals)))
        return ActionInstance(name, tuple(zip(params, (f(st, vals) for f in fns))))


def project_state(s, b: S.Spec, a: S.Spec, sm: StateMapping) -> State:
    """The A-state induced by B-state ``s``."""
    mb, ma = model_of(b), model_of(a)
    st = tuple(s[n] for n in mb.var_names)
    return ma.state(_Projector(b, a, sm)(st))


@dataclass
class RefinementVerdict:
    verdict: str  # holds | fails | inconclusive
    distinct_states: int = 0
    transitions: int = 0
    depth: int = 0
    elapsed: float = 0.0
    trace: Optional[Trace] = None
    step: Optional[int] = None
    reason: str = ""
    abstract_action: Optional[ActionInstance] = None
    projected_pre: Optional[State] = None
    projected_post: Optional[State] = None
    note: str = ""

    @property
    def holds(self) -> bool:
        return self.verdict == "holds"

    def to_json(self, durations: bool = True) -> dict:
        from .explorer import _state_json

        out = {"verdict": self.verdict, "distinct_states": self.distinct_states,
               "transitions": self.transitions, "depth": self.depth}
        if durations:
            out["elapsed_ms"] = round(self.elapsed * 1000)
        if self.verdict == "fails":
            ev = self.trace.to_json() if self.trace is not None else {}
            ev["failing_step"] = self.step
            ev["reason"] = self.reason
            if self.abstract_action is not None:
                ev["abstract_action"] = str(self.abstract_action)
            if self.projected_pre is not None:
                ev["projected_pre"] = _state_json(self.projected_pre)
            if self.projected_post is not None:
                ev["projected_post"] = _state_json(self.projected_post)
            out["evidence"] = ev
        if self.note:
            out["note"] = self.note
        return out


@dataclass(frozen=True)
class _StepFailure:
    reason: str
    pre: tuple
    post: tuple
    abstract: Optional[ActionInstance] = None


class _StepChecker:
    def __init__(self, b: S.Spec, a: S.Spec, sm: StateMapping, am: dict):
        self.ma = model_of(a)
        self.project = _Projector(b, a, sm)
        self.translate = _ActionTranslator(b, a, am)
        self.memo: dict = {}

    def __call__(self, st: tuple, inst: ActionInstance, t: tuple) -> Optional[_StepFailure]:
        pre = self.project(st)
        post = self.project(t)
        ainst = self.translate(st, inst)
        if ainst is None:
            if pre != post:
                return _StepFailure("VOID step changed projection", pre, post)
            return None
        key = (pre, ainst)
        if key in self.memo:
            got = self.memo[key]
        else:
            try:
                got = self.ma.step(pre, ainst)
            except EvalError as exc:
                got = exc
            self.memo[key] = got
        if isinstance(got, EvalError):
            return _StepFailure(f"mapped action {ainst} failed: {got.message}", pre, post, ainst)
        if got is None:
            return _StepFailure("mapped action disabled", pre, post, ainst)
        if got != post:
            return _StepFailure("wrong post-state", pre, post, ainst)
        return None


def check_strong_refinement(b: S.Spec, a: S.Spec, sm: StateMapping, am: dict,
                            bounds: Bounds = Bounds(), depth: Optional[int] = None
                            ) -> RefinementVerdict:
    """BFS over B; every reachable transition must map onto a step of A.

    With ``depth`` the check is restricted to transitions leaving states at
    distance below ``depth`` (the verdict is then relative to that horizon).
    """
    start = time.perf_counter()
    mb, ma = model_of(b), model_of(a)
    checker = _StepChecker(b, a, sm, am)
    init_b = mb.initial()
    pre = checker.project(init_b)
    if pre != ma.initial():
        return RefinementVerdict("fails", 1, 0, 0, time.perf_counter() - start,
                                 Trace(mb.state(init_b)), 0, "initial-state mismatch", None,
                                 ma.state(pre), ma.state(ma.initial()))
    if depth is not None:
        limit = depth if bounds.max_depth is None else min(depth, bounds.max_depth)
        bounds = Bounds(bounds.max_states, limit, False, bounds.workers)
    else:
        bounds = Bounds(bounds.max_states, bounds.max_depth, False, bounds.workers)
    out = Engine(mb, bounds).run([], checker)
    elapsed = time.perf_counter() - start
    if out.verdict == "transition-failed":
        _, fail, trace = out.failure
        return RefinementVerdict("fails", out.distinct, out.transitions, out.depth, elapsed,
                                 trace, len(trace), fail.reason, fail.abstract,
                                 ma.state(fail.pre), ma.state(fail.post))
    if out.verdict == "bound-exceeded" and not (depth is not None and out.limit == "depth"
                                                 and (bounds.max_depth == depth)):
        return RefinementVerdict("inconclusive", out.distinct, out.transitions, out.depth, elapsed,
                                 note=f"{out.limit} bound reached")
    note = f"checked to depth {depth}" if depth is not None and out.limit == "depth" else ""
    return RefinementVerdict("holds", out.distinct, out.transitions, out.depth, elapsed, note=note)


def failure_replays(b: S.Spec, a: S.Spec, sm: StateMapping, am: dict,
                    v: RefinementVerdict) -> bool:
    """Failure evidence is a legal B trace whose last step breaks the A step."""
    from .explorer import trace_replay

    if v.verdict != "fails" or v.trace is None:
        return False
    if not trace_replay(b, v.trace).valid:
        return False
    mb = model_of(b)
    checker = _StepChecker(b, a, sm, am)
    if v.step == 0:
        return checker.project(mb.initial()) != model_of(a).initial()
    states = [tuple(s[n] for n in mb.var_names) for s in v.trace.states]
    inst = v.trace.steps[-1][0]
    fail = checker(states[-2], inst, states[-1])
    return fail is not None and fail.reason == v.reason


# --- independent oracle -------------------------------------------------------


@dataclass
class OracleVerdict:
    verdict: str  # holds | fails
    traces_checked: int = 0
    failing_trace: Optional[list] = None  # [(ActionInstance, State), ...] of B


def trace_inclusion_oracle(b: S.Spec, a: S.Spec, sm: StateMapping, am: dict,
                           depth: int = 8) -> OracleVerdict:
    """Direct restatement of strong refinement over all B traces up to ``depth``.

    Each trace is mapped (VOID steps compressed away) and the mapped trace
    is replayed in A step by step through the public kernel operations.
    Suffix results are memoized on (B state, remaining depth).
    """
    from .explorer import enumeration_oracle
    from .kernel import apply_action, enabled_bindings, eval_expr, initial_state, successors

    enumeration_oracle(b, [], limit=ORACLE_STATE_LIMIT)  # raises when B is too large
    smap = sm.as_dict()
    a_actions = {x.name: x for x in a.actions}

    def proj(s):
        return State.from_dict({v: eval_expr(smap[v], s, spec=b) for v in a.var_names})

    def mapped(s, inst):
        entry = am[inst.action]
        if entry.target is None:
            return None
        target = a_actions[entry.target]
        if entry.bindings is None:
            vals = [v for _, v in inst.binding]
        else:
            bind = dict(inst.binding)
            vals = [eval_expr(e, s, bind, spec=b) for e in entry.bindings]
        return ActionInstance(target.name, tuple(zip((p.name for p in target.params), vals)))

    def a_step(s_abs, ainst):
        target = a_actions[ainst.action]
        if ainst not in enabled_bindings(target, s_abs, a):
            return None
        return apply_action(target, ainst, s_abs, a)

    init_b = initial_state(b)
    if proj(init_b) != initial_state(a):
        return OracleVerdict("fails", 1, [])
    count = 0
    memo: dict = {}

    def suffix_ok(s, s_abs, remaining, path):
        nonlocal count
        if remaining == 0:
            count += 1
            return True
        key = (s, remaining)
        if key in memo:
            return memo[key]
        ok = True
        for inst, t in successors(b, s):
            ainst = mapped(s, inst)
            t_abs = proj(t)
            if ainst is None:
                good = t_abs == s_abs
            else:
                nxt = a_step(s_abs, ainst)
                good = nxt is not None and nxt == t_abs
            if not good:
                failing.append(path + [(inst, t)])
                ok = False
                break
            if not suffix_ok(t, t_abs, remaining - 1, path + [(inst, t)]):
                ok = False
                break
        else:
            count += 1
        memo[key] = ok
        return ok

    failing: list = []
    ok = suffix_ok(init_b, proj(init_b), depth, [])
    return OracleVerdict("holds" if ok else "fails", count, failing[0] if failing else None)


# --- mapping composition ----------------------------------------------------------


def _subst_vars(e, mapping: dict):
    def fn(n):
        if isinstance(n, S.VarRef) and n.name in mapping:
            return mapping[n.name]
        return n

    return S.transform(e, fn)


def compose_state_mappings(xy: StateMapping, yz: StateMapping) -> StateMapping:
    """X -> Z mapping from X -> Y and Y -> Z (expressions substituted)."""
    inner = xy.as_dict()
    return StateMapping(tuple((v, _subst_vars(e, inner)) for v, e in yz.exprs))


def compose_action_mappings(x: S.Spec, y: S.Spec, xy: dict, yz: dict,
                            sm_xy: StateMapping) -> dict:
    out = {}
    inner = sm_xy.as_dict()
    for act in x.actions:
        e1 = xy[act.name]
        if e1.target is None:
            out[act.name] = e1
            continue
        e2 = yz[e1.target]
        if e2.target is None:
            out[act.name] = MapEntry(act.name, None)
            continue
        y_act = y.action(e1.target)
        if e1.bindings is None:
            y_bind = {p.name: S.ParamRef(q.name) for p, q in zip(y_act.params, act.params)}
        else:
            y_bind = {p.name: b for p, b in zip(y_act.params, e1.bindings)}
        if e2.bindings is None:
            z_exprs = tuple(y_bind[p.name] for p in y_act.params)
        else:
            z_exprs = tuple(S.substitute(_subst_vars(b, inner), y_bind) for b in e2.bindings)
        bindings = None if e1.bindings is None and e2.bindings is None else z_exprs
        out[act.name] = MapEntry(act.name, e2.target, e2.target_module, bindings)
    return out


__all__ = [
    "StateMapping", "RefinementVerdict", "OracleVerdict", "project_state",
    "check_strong_refinement", "trace_inclusion_oracle", "identity_actions",
    "compose_state_mappings", "compose_action_mappings", "failure_replays",
]
