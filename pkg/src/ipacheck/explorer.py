"""Breadth-first exploration, invariant checking and counterexample traces."""

from __future__ import annotations

import multiprocessing as mp
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import syntax as S
from .kernel import ActionInstance, Model, State, model_of
from .values import from_json, to_json

DEFAULT_MAX_STATES = 10_000_000
PARALLEL_THRESHOLD = 64


@dataclass(frozen=True)
class Bounds:
    max_states: int = DEFAULT_MAX_STATES
    max_depth: Optional[int] = None
    deadlock_is_error: bool = False
    workers: int = 1


@dataclass(frozen=True)
class Trace:
    initial: State
    steps: tuple = ()  # ((ActionInstance, State), ...)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def states(self) -> list:
        return [self.initial] + [s for _, s in self.steps]

    def to_json(self) -> dict:
        return {
            "initial": _state_json(self.initial),
            "steps": [
                {"action": inst.action,
                 "binding": {k: to_json(v) for k, v in inst.binding},
                 "state": _state_json(st)}
                for inst, st in self.steps
            ],
        }

    @classmethod
    def from_json(cls, j: dict) -> "Trace":
        steps = []
        for step in j.get("steps", []):
            inst = ActionInstance(step["action"], tuple(
                (k, from_json(v)) for k, v in step.get("binding", {}).items()))
            steps.append((inst, _state_from_json(step["state"])))
        return cls(_state_from_json(j["initial"]), tuple(steps))

    def format(self) -> str:
        lines = [f"  0: initial  {_fmt(self.initial)}"]
        for k, (inst, st) in enumerate(self.steps, 1):
            lines.append(f"  {k}: {inst}  {_fmt(st)}")
        return "\n".join(lines)


def _state_json(s: State) -> dict:
    return {n: to_json(v) for n, v in zip(s.names, s.values)}


def _state_from_json(j: dict) -> State:
    return State.from_dict({k: from_json(v) for k, v in j.items()})


def _fmt(s: State) -> str:
    from .values import format_value

    return ", ".join(f"{n}={format_value(v)}" for n, v in zip(s.names, s.values))


@dataclass(frozen=True)
class InvariantViolation:
    invariant: str
    trace: Trace


@dataclass
class ExplorationReport:
    verdict: str  # pass | invariant-violated | deadlock-found | bound-exceeded
    distinct_states: int
    transitions: int
    depth: int
    elapsed: float = 0.0
    violation: Optional[InvariantViolation] = None
    deadlock: Optional[Trace] = None
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_json(self, durations: bool = True) -> dict:
        out = {
            "verdict": self.verdict,
            "distinct_states": self.distinct_states,
            "transitions": self.transitions,
            "depth": self.depth,
        }
        if durations:
            out["elapsed_ms"] = round(self.elapsed * 1000)
        if self.violation is not None:
            out["violation"] = {"invariant": self.violation.invariant,
                                "trace": self.violation.trace.to_json()}
        if self.deadlock is not None:
            out["deadlock"] = self.deadlock.to_json()
        if self.note:
            out["note"] = self.note
        return out

    @classmethod
    def from_json(cls, j: dict) -> "ExplorationReport":
        v = j.get("violation")
        d = j.get("deadlock")
        return cls(j["verdict"], j["distinct_states"], j["transitions"], j["depth"],
                   j.get("elapsed_ms", 0) / 1000,
                   InvariantViolation(v["invariant"], Trace.from_json(v["trace"])) if v else None,
                   Trace.from_json(d) if d else None, j.get("note", ""))


# --- parallel successor computation ------------------------------------------

_WORKER_MODEL: Optional[Model] = None


def _expand(states: list) -> list:
    m = _WORKER_MODEL
    return [m.successors(st) for st in states]


class _Expander:
    """Computes successors for a frontier, optionally across forked workers.

    The frontier is partitioned by state hash; results are put back in
    frontier order so everything downstream is independent of the worker count.
    """

    def __init__(self, model: Model, workers: int):
        self.model = model
        self.workers = max(1, workers)
        self.pool = None

    def __enter__(self):
        if self.workers > 1 and "fork" in mp.get_all_start_methods():
            global _WORKER_MODEL
            _WORKER_MODEL = self.model
            self.pool = mp.get_context("fork").Pool(self.workers)
        return self

    def __exit__(self, *exc):
        if self.pool is not None:
            self.pool.terminate()
            self.pool.join()
            self.pool = None

    def expand(self, frontier: list) -> list:
        if self.pool is None or len(frontier) < PARALLEL_THRESHOLD:
            succ = self.model.successors
            return [succ(st) for st in frontier]
        buckets: list[list] = [[] for _ in range(self.workers)]
        where = []
        for st in frontier:
            b = hash(st) % self.workers
            where.append((b, len(buckets[b])))
            buckets[b].append(st)
        results = self.pool.map(_expand, buckets)
        return [results[b][k] for b, k in where]


# --- the engine --------------------------------------------------------------

TransitionCheck = Callable[[tuple, ActionInstance, tuple], Optional[object]]


@dataclass
class _Outcome:
    verdict: str
    distinct: int
    transitions: int
    depth: int
    failure: Optional[tuple] = None  # (kind, payload, trace)
    deadlock: Optional[Trace] = None
    parents: dict = field(default_factory=dict, repr=False)
    limit: str = ""  # which bound was hit: "states" or "depth"


class Engine:
    """Level-synchronous BFS over the compiled model of a spec."""

    def __init__(self, model: Model, bounds: Bounds):
        self.m = model
        self.bounds = bounds

    def trace_to(self, parents: dict, st: tuple) -> Trace:
        chain = []
        cur = st
        while True:
            p = parents[cur]
            if p is None:
                break
            prev, inst = p
            chain.append((inst, self.m.state(cur)))
            cur = prev
        chain.reverse()
        return Trace(self.m.state(cur), tuple(chain))

    def run(self, invariants: list, check: Optional[TransitionCheck] = None) -> _Outcome:
        """``invariants``: [(name, f(st) -> bool)]. ``check`` may veto transitions."""
        m, b = self.m, self.bounds
        init = m.initial()
        parents: dict = {init: None}
        for name, f in invariants:
            if not f(init):
                return _Outcome("invariant-violated", 1, 0, 0,
                                ("invariant", name, self.trace_to(parents, init)), parents=parents)
        frontier = [init]
        level = 0
        transitions = 0
        deadlock = None
        with _Expander(m, b.workers) as ex:
            while frontier:
                if b.max_depth is not None and level >= b.max_depth:
                    if self._has_new(ex, frontier, parents):
                        return _Outcome("bound-exceeded", len(parents), transitions, level,
                                        deadlock=deadlock, parents=parents, limit="depth")
                    break
                nxt = []
                for st, succs in zip(frontier, ex.expand(frontier)):
                    if not succs and deadlock is None:
                        deadlock = self.trace_to(parents, st)
                        if b.deadlock_is_error:
                            return _Outcome("deadlock-found", len(parents), transitions, level,
                                            deadlock=deadlock, parents=parents)
                    for inst, t in succs:
                        transitions += 1
                        if check is not None:
                            bad = check(st, inst, t)
                            if bad is not None:
                                tr = self.trace_to(parents, st)
                                tr = Trace(tr.initial, tr.steps + ((inst, m.state(t)),))
                                if t not in parents:
                                    parents[t] = (st, inst)
                                return _Outcome("transition-failed", len(parents), transitions,
                                                level + 1, ("transition", bad, tr), deadlock, parents)
                        if t in parents:
                            continue
                        parents[t] = (st, inst)
                        for name, f in invariants:
                            if not f(t):
                                return _Outcome("invariant-violated", len(parents), transitions,
                                                level + 1,
                                                ("invariant", name, self.trace_to(parents, t)),
                                                deadlock, parents)
                        if len(parents) > b.max_states:
                            return _Outcome("bound-exceeded", len(parents), transitions, level + 1,
                                            deadlock=deadlock, parents=parents, limit="states")
                        nxt.append(t)
                if nxt:
                    level += 1
                frontier = nxt
        return _Outcome("pass", len(parents), transitions, level, deadlock=deadlock, parents=parents)

    @staticmethod
    def _has_new(ex: _Expander, frontier: list, parents: dict) -> bool:
        for succs in ex.expand(frontier):
            for _, t in succs:
                if t not in parents:
                    return True
        return False


def _named_invariants(spec: S.Spec, invariants) -> list:
    m = model_of(spec)
    if invariants is None:
        return list(m.invariants)
    out = []
    for inv in invariants:
        if isinstance(inv, tuple) and callable(inv[1]):
            out.append(inv)
        else:
            out.append((inv.name, m.compile_closed(inv.value)))
    return out


def explore(spec: S.Spec, invariants=None, bounds: Bounds = Bounds()) -> ExplorationReport:
    """BFS from the initial state, checking each invariant on every new state.

    ``invariants`` is a list of Decl (name, Expr); None means the spec's own.
    """
    start = time.perf_counter()
    m = model_of(spec)
    out = Engine(m, bounds).run(_named_invariants(spec, invariants))
    elapsed = time.perf_counter() - start
    violation = None
    if out.failure is not None:
        _, name, trace = out.failure
        violation = InvariantViolation(name, trace)
        assert trace_replay(spec, trace).valid, "emitted counterexample does not replay"
    note = f"{out.limit} bound reached" if out.limit else ""
    if out.deadlock is not None and out.verdict != "deadlock-found":
        note = (note + "; " if note else "") + "deadlock reachable (warning)"
    return ExplorationReport(out.verdict, out.distinct, out.transitions, out.depth, elapsed,
                             violation, out.deadlock, note)


# --- replay --------------------------------------------------------------------


@dataclass(frozen=True)
class ReplayResult:
    valid: bool
    step: Optional[int] = None  # 0 = initial state, k = k-th transition
    reason: str = ""

    def __str__(self) -> str:
        return "valid" if self.valid else f"invalid at step {self.step}: {self.reason}"


def trace_replay(spec: S.Spec, trace: Trace) -> ReplayResult:
    """Checks that every step of ``trace`` is a legal transition of ``spec``."""
    m = model_of(spec)
    names = m.var_names
    try:
        cur = tuple(trace.initial[n] for n in names)
    except KeyError as exc:
        return ReplayResult(False, 0, f"initial state lacks variable {exc.args[0]}")
    if set(trace.initial.names) != set(names):
        return ReplayResult(False, 0, "initial state has variables outside the spec")
    if cur != m.initial():
        return ReplayResult(False, 0, "not the initial state")
    for k, (inst, st) in enumerate(trace.steps, 1):
        if set(st.names) != set(names):
            return ReplayResult(False, k, "state does not assign exactly the spec's variables")
        want = tuple(st[n] for n in names)
        try:
            got = m.step(cur, inst)
        except Exception as exc:  # evaluation errors make the step illegal
            return ReplayResult(False, k, f"{inst} failed: {exc}")
        if got is None:
            return ReplayResult(False, k, f"{inst} is not enabled")
        if got != want:
            diff = [n for n, a, b2 in zip(names, got, want) if a != b2]
            return ReplayResult(False, k, f"{inst} does not produce the recorded state "
                                          f"(differs in {', '.join(diff)})")
        cur = want
    return ReplayResult(True)


# --- independent oracle -----------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    distinct_states: int
    depths: dict  # State -> shortest distance from the initial state
    first_violation_depth: Optional[int]


def enumeration_oracle(spec: S.Spec, invariants=None, limit: int = 50_000) -> OracleResult:
    """Naive reachable-set enumeration through the public kernel operations.

    Depth-first with a visited map; a state reached again by a shorter path is
    re-expanded, so the recorded depths end as shortest distances.
    """
    from .kernel import eval_expr, initial_state, successors

    invs = list(spec.invariants) if invariants is None else list(invariants)
    init = initial_state(spec)
    depth = {init: 0}
    stack = [(init, 0)]
    while stack:
        s, d = stack.pop()
        if depth[s] < d:
            continue
        for _, t in successors(spec, s):
            if t not in depth or depth[t] > d + 1:
                depth[t] = d + 1
                if len(depth) > limit:
                    raise RuntimeError(f"oracle refuses specs with more than {limit} states")
                stack.append((t, d + 1))
    bad = None
    for s, d in depth.items():
        for inv in invs:
            if eval_expr(inv.value, s, spec=spec) is not True:
                bad = d if bad is None else min(bad, d)
                break
    return OracleResult(len(depth), depth, bad)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("IPA_CHECK_WORKERS", "1")))
    except ValueError:
        return 1
