import pytest

from ipacheck import syntax as S
from ipacheck.composer import (build_abstract_spec, build_compositional_spec, compose_mappings,
                               refinement_mapping)
from ipacheck.corpus import load_fixture
from ipacheck.explorer import Bounds, trace_replay
from ipacheck.kernel import State, initial_state
from ipacheck.parser import MapEntry, parse_spec
from ipacheck.refinement import (StateMapping, check_strong_refinement, failure_replays,
                                 identity_actions, project_state, trace_inclusion_oracle)
from ipacheck.values import FMap, Record


def fixture_pair(name):
    man = load_fixture(name).manifest()
    (a,) = man.abstractions.values()
    return man.root, a, refinement_mapping(man.root, a, man), man.action_map


def test_identity_projection_drops_hidden():
    b = parse_spec("""
spec B
vars
  x : 0..3
  hidden : 0..9
init
  x = 0
  hidden = 0
module Main
  action Inc
    when x < 3
    then x' = x + 1
""", "b.ipa")
    a = load_fixture("counter").spec()
    s = State.from_dict({"x": 1, "hidden": 7})
    assert dict(project_state(s, b, a, StateMapping.identity(a, b))) == {"x": 1}


PV_CONCRETE = """
spec PV
const MaxTerm = 2
sort Server = {s1, s2}
sort PvKind = {PvReq, PvGrant}
def History = [s \\in Server |-> [t \\in 1..MaxTerm |->
    {d \\in Server : \\E m \\in pvNet : m.term = t /\\ ((m.kind = PvReq /\\ m.src = s /\\ m.dst = d) \\/ (m.kind = PvGrant /\\ m.src = d /\\ m.dst = s))}]]
vars
  pvNet : Set([kind: PvKind, src: Server, dst: Server, term: 1..MaxTerm])
init
  pvNet = {}
module M
  action Idle
    when FALSE
    then pvNet' = pvNet
"""

PV_ABSTRACT = """
spec PVA
const MaxTerm = 2
sort Server = {s1, s2}
vars
  preVoteSet : [Server -> [1..MaxTerm -> Set(Server)]]
init
  preVoteSet = [s \\in Server |-> [t \\in 1..MaxTerm |-> {}]]
module M
  action Idle
    when FALSE
    then preVoteSet' = preVoteSet
"""


def test_history_variable_two_servers():
    b = parse_spec(PV_CONCRETE, "pv.ipa")
    a = parse_spec(PV_ABSTRACT, "pva.ipa")
    sm = StateMapping((("preVoteSet", S.Call("History", ())),))
    msg = lambda kind, src, dst, term: Record({"kind": kind, "src": src, "dst": dst, "term": term})
    s = State.from_dict({"pvNet": frozenset({msg("PvReq", "s1", "s2", 1),
                                             msg("PvGrant", "s2", "s1", 2)})})
    got = project_state(s, b, a, sm)["preVoteSet"]
    # s1 asked s2 in term 1 and was granted by s2 in term 2; s2 did nothing
    want = FMap({"s1": FMap({1: frozenset({"s2"}), 2: frozenset({"s2"})}),
                 "s2": FMap({1: frozenset(), 2: frozenset()})})
    assert got == want
    empty = project_state(initial_state(b), b, a, sm)
    assert empty == initial_state(a)


def test_initial_projection_matches_on_corpus():
    for name in ["counter", "counter-tick", "counter-mutant", "raft3", "coordinator-toy"]:
        man = load_fixture(name).manifest()
        for i in [m.name for m in man.root.modules]:
            c = build_compositional_spec(man.root, man, i).spec
            a = build_abstract_spec(man.root, man).spec
            assert project_state(initial_state(c), c, a, refinement_mapping(c, a, man)) \
                == initial_state(a), (name, i)


@pytest.mark.parametrize("name", ["counter", "coordinator-toy", "micro-interaction"])
def test_reflexive(name):
    spec = load_fixture(name).spec()
    v = check_strong_refinement(spec, spec, StateMapping.identity(spec, spec),
                                identity_actions(spec))
    assert v.holds


def test_tick_stutters():
    b, a, sm, am = fixture_pair("counter-tick")
    assert check_strong_refinement(b, a, sm, am).holds
    assert trace_inclusion_oracle(b, a, sm, am, depth=8).verdict == "holds"


def test_mutant_fails_with_minimal_trace():
    b, a, sm, am = fixture_pair("counter-mutant")
    v = check_strong_refinement(b, a, sm, am)
    assert v.verdict == "fails" and v.reason == "wrong post-state"
    assert len(v.trace) == 1 and v.step == 1
    assert failure_replays(b, a, sm, am, v)
    assert trace_inclusion_oracle(b, a, sm, am, depth=8).verdict == "fails"


def test_oracle_counter_self():
    spec = load_fixture("counter").spec()
    sm, am = StateMapping.identity(spec, spec), identity_actions(spec)
    assert trace_inclusion_oracle(spec, spec, sm, am, depth=4).verdict == "holds"


def test_oracle_refuses_large_specs(raft3):
    sm = StateMapping.identity(raft3.root, raft3.root)
    with pytest.raises(RuntimeError):
        trace_inclusion_oracle(raft3.root, raft3.root, sm, identity_actions(raft3.root))


def test_void_step_that_changes_projection():
    b, a, sm, am = fixture_pair("counter-tick")
    am = dict(am)
    am["Inc"] = MapEntry("Inc", None)
    v = check_strong_refinement(b, a, sm, am)
    assert v.reason == "VOID step changed projection"
    assert failure_replays(b, a, sm, am, v)


def test_initial_state_mismatch():
    b, a, _, am = fixture_pair("counter")
    sm = StateMapping((("x", S.Lit(1)),))
    v = check_strong_refinement(b, a, sm, am)
    assert v.reason == "initial-state mismatch" and v.step == 0
    assert trace_inclusion_oracle(b, a, sm, am).verdict == "fails"


def test_disabled_mapped_action(quorum_bug):
    man = quorum_bug
    c = build_compositional_spec(man.root, man, "Vote").spec
    a = build_abstract_spec(man.root, man).spec
    _, gbar, _ = compose_mappings(man.root, man, "Vote")
    sm = refinement_mapping(c, a, man)
    v = check_strong_refinement(c, a, sm, gbar)
    assert v.reason == "mapped action disabled"
    assert trace_replay(c, v.trace).valid
    assert failure_replays(c, a, sm, gbar, v)
    ev = v.to_json()["evidence"]
    assert {"projected_pre", "projected_post", "reason", "steps"} <= set(ev)


def test_inconclusive_on_bound():
    b, a, sm, am = fixture_pair("counter-tick")
    v = check_strong_refinement(b, a, sm, am, Bounds(max_states=3))
    assert v.verdict == "inconclusive"


def test_depth_limited_check_holds():
    b, a, sm, am = fixture_pair("counter-tick")
    v = check_strong_refinement(b, a, sm, am, depth=2)
    assert v.holds and "depth 2" in v.note


def test_transitive_chain():
    """S => C_i and C_i => A give S => A under the composed mapping."""
    for name in ["coordinator-toy", "counter-tick"]:
        man = load_fixture(name).manifest()
        a = build_abstract_spec(man.root, man).spec
        for i in [m.name for m in man.root.modules]:
            c = build_compositional_spec(man.root, man, i).spec
            g_i, gbar, g = compose_mappings(man.root, man, i)
            first = check_strong_refinement(man.root, c, refinement_mapping(man.root, c, man), g_i)
            second = check_strong_refinement(c, a, refinement_mapping(c, a, man), gbar)
            assert first.holds and second.holds
            assert check_strong_refinement(man.root, a, refinement_mapping(man.root, a, man),
                                           g).holds


def test_oracle_agreement_on_generated_pairs():
    from ipacheck.generator import instances
    from pairs import compare_with_oracle, refinement_pairs, small_enough

    seen = set()
    for inst in instances(16, base_seed=300):
        for label, b, a, sm, am in refinement_pairs(inst.load(), f"gen{inst.seed}"):
            if small_enough(b):
                sim, orc = compare_with_oracle(b, a, sm, am)
                assert sim == orc, label
                seen.add(sim)
    assert seen == {"holds", "fails"}
