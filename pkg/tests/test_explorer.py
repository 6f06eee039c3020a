import random

import pytest
from hypothesis import given, settings, strategies as st

from ipacheck import syntax as S
from ipacheck.composer import build_abstract_spec, build_compositional_spec
from ipacheck.corpus import load_fixture
from ipacheck.explorer import (Bounds, ExplorationReport, Trace, enumeration_oracle, explore,
                               trace_replay)
from ipacheck.generator import instances
from ipacheck.kernel import State, initial_state, successors
from ipacheck.parser import parse_spec


def inv(text, spec):
    """Parse ``text`` as an invariant of ``spec``."""
    from ipacheck.parser import render_spec

    return parse_spec(render_spec(spec) + f"\ninvariant probe = {text}\n", spec.origin).invariants[-1]


def test_counter_pass(counter):
    r = explore(counter, [inv("x <= 3", counter)])
    assert (r.verdict, r.distinct_states, r.transitions, r.depth) == ("pass", 4, 3, 3)
    assert r.violation is None


def test_counter_violation(counter):
    r = explore(counter, [inv("x < 3", counter)])
    assert r.verdict == "invariant-violated"
    assert r.violation.invariant == "probe"
    t = r.violation.trace
    assert [i.action for i, _ in t.steps] == ["Inc", "Inc", "Inc"]
    assert trace_replay(counter, t).valid


def test_altered_trace_is_invalid(counter):
    t = explore(counter, [inv("x < 3", counter)]).violation.trace
    last_inst, _ = t.steps[-1]
    bad = Trace(t.initial, t.steps[:-1] + ((last_inst, State.from_dict({"x": 5})),))
    res = trace_replay(counter, bad)
    assert not res.valid and res.step == 3


def test_replay_rejects_wrong_initial(counter):
    t = Trace(State.from_dict({"x": 1}))
    assert trace_replay(counter, t).step == 0


def test_deadlock_is_warning_by_default(counter):
    r = explore(counter, [])
    assert r.verdict == "pass" and "deadlock" in r.note
    r = explore(counter, [], Bounds(deadlock_is_error=True))
    assert r.verdict == "deadlock-found"
    assert len(r.deadlock) == 3 and trace_replay(counter, r.deadlock).valid


def test_bounds(counter_updown):
    r = explore(counter_updown, [], Bounds(max_states=2))
    assert r.verdict == "bound-exceeded"
    r = explore(counter_updown, [], Bounds(max_depth=1))
    assert r.verdict == "bound-exceeded" and r.distinct_states == 2
    r = explore(counter_updown, [])
    assert r.verdict == "pass" and r.distinct_states == 4 and r.transitions == 6


def test_report_json_round_trip(counter):
    r = explore(counter, [inv("x < 2", counter)])
    again = ExplorationReport.from_json(r.to_json())
    assert again.to_json(False) == r.to_json(False)
    assert Trace.from_json(r.violation.trace.to_json()) == r.violation.trace


def test_report_shape(counter_updown):
    r = explore(counter_updown, [])
    assert r.distinct_states >= 1 and r.depth <= r.distinct_states


def test_random_walks_on_vote_are_valid(raft3):
    spec = build_compositional_spec(raft3.root, raft3, "Vote").spec
    rng = random.Random(3)
    for _ in range(10):
        s = initial_state(spec)
        steps = []
        for _ in range(20):
            succ = successors(spec, s)
            if not succ:
                break
            inst, s = rng.choice(succ)
            steps.append((inst, s))
        assert trace_replay(spec, Trace(initial_state(spec), tuple(steps))).valid


# --- oracle agreement -----------------------------------------------------------------


def small_specs(raft3):
    yield "counter", load_fixture("counter").spec()
    yield "counter-tick", load_fixture("counter-tick").spec()
    yield "coordinator-toy", load_fixture("coordinator-toy").spec()
    yield "raft3 A", build_abstract_spec(raft3.root, raft3).spec
    for m in ("Vote", "Replication"):
        yield f"raft3 C_{m}", build_compositional_spec(raft3.root, raft3, m).spec
    for inst in instances(10, base_seed=900):
        yield f"gen{inst.seed}", inst.load().root


def test_counts_match_oracle(raft3):
    for name, spec in small_specs(raft3):
        r = explore(spec, [])
        o = enumeration_oracle(spec, [])
        assert r.distinct_states == o.distinct_states, name
        assert r.depth == max(o.depths.values()), name


def test_frozen_counts():
    fx = load_fixture("coordinator-toy")
    assert explore(fx.spec(), []).distinct_states == fx.expected["states"]["S"]


def test_oracle_limit(raft3):
    with pytest.raises(RuntimeError):
        enumeration_oracle(raft3.root, [], limit=100)


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.integers(0, 3))
def test_trace_length_is_first_violation_level(seed, value):
    spec = instances(1, base_seed=seed, mutate_every=0)[0].load().root
    var = spec.var_names[seed % len(spec.var_names)]
    probe = S.Decl("probe", S.Binary("/=", S.VarRef(var), S.Lit(value)))
    r = explore(spec, [probe])
    o = enumeration_oracle(spec, [probe])
    if o.first_violation_depth is None:
        assert r.verdict == "pass"
    else:
        assert r.verdict == "invariant-violated"
        assert len(r.violation.trace) == o.first_violation_depth
        assert trace_replay(spec, r.violation.trace).valid


# --- determinism ----------------------------------------------------------------------


@pytest.mark.parametrize("workers", [2, 8])
def test_workers_do_not_change_results(workers):
    spec = load_fixture("coordinator-toy").spec()
    probe = inv("phase < 2", spec)
    one = explore(spec, [probe], Bounds(workers=1)).to_json(False)
    many = explore(spec, [probe], Bounds(workers=workers)).to_json(False)
    assert one == many
    assert one["verdict"] == "invariant-violated"


def test_repeated_runs_identical():
    spec = load_fixture("coordinator-toy").spec()
    runs = [explore(spec, []).to_json(False) for _ in range(3)]
    assert runs[0] == runs[1] == runs[2]
