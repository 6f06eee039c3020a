import os
import shutil

import pytest

from ipacheck import syntax as S
from ipacheck.analysis import analyze
from ipacheck.composer import (build_abstract_spec, build_compositional_spec, compose_mappings,
                               compositional_check, cost_comparison, direct_check)
from ipacheck.corpus import CORPUS_DIR, expected_results, load_fixture
from ipacheck.explorer import Bounds
from ipacheck.parser import SpecError, load_manifest, parse_manifest, render_spec


def test_abstract_spec_actions(raft3):
    a = build_abstract_spec(raft3.root, raft3)
    assert sorted(x.name for x in a.spec.actions) == [
        "AbsBecomeCandidate", "AbsBecomeLeader", "AbsPreVote", "AbsReplicate"]
    assert "preVoteSet" in a.variable_scope
    assert sorted(a.variable_scope) == expected_results("raft3")["abstract_scope"]
    assert set(a.provenance.values()) == {"abstract(AbsPreVote)", "abstract(AbsVote)",
                                          "abstract(AbsReplication)"}


def test_c_vote(raft3):
    c = build_compositional_spec(raft3.root, raft3, "Vote")
    names = {x.name for x in c.spec.actions}
    assert names == {"RequestVote", "MakeVote", "MakeVoteFailLowTerm", "MakeVoteFailOldLog",
                     "BecomeLeader", "AbsPreVote", "AbsBecomeCandidate", "AbsReplicate"}
    assert c.provenance["MakeVote"] == "concrete(Vote)"
    assert c.provenance["AbsReplicate"] == "abstract(AbsReplication)"


def test_scopes(raft3):
    an = analyze(raft3.root)
    a = build_abstract_spec(raft3.root, raft3, an)
    v = set(raft3.root.var_names)
    for m in raft3.root.modules:
        c = build_compositional_spec(raft3.root, raft3, m.name, an)
        assert set(c.spec.var_names) == c.variable_scope
        assert an.interaction | an.module_deps[m.name] <= c.variable_scope
        # abstract-only variables appear in C_i only when their module is abstract
        assert a.variable_scope & v <= c.variable_scope
        assert ("preVoteSet" in c.variable_scope) == (m.name != "PreVote")
        assert c.variable_scope - {"preVoteSet"} <= v
        for act in c.spec.actions:
            for e in list(act.guards) + [u.expr for u in act.updates]:
                assert S.state_reads(e, c.spec.def_table()) <= c.variable_scope
            assert {u.var for u in act.updates} <= c.variable_scope
    assert {d.name for d in a.spec.init} == a.variable_scope


def test_mapping_composition_exhaustive(raft3):
    for m in raft3.root.modules:
        g_i, gbar, g = compose_mappings(raft3.root, raft3, m.name)
        for a in raft3.root.actions:
            first = g_i[a.name]
            if a.module == m.name:
                assert first.target == a.name
                assert gbar[a.name].target == g[a.name].target
            else:
                assert first.target == g[a.name].target
                if first.target is not None:
                    assert gbar[first.target].target == first.target
            got = None if first.target is None else gbar[first.target].target
            assert got == g[a.name].target


def test_single_module_identity():
    man = load_fixture("counter").manifest()
    a = build_abstract_spec(man.root, man).spec
    c = build_compositional_spec(man.root, man, "Main").spec
    assert c.variables == man.root.variables == a.variables
    assert [x.name for x in c.actions] == [x.name for x in man.root.actions]
    rep = compositional_check(man.root, man)
    assert rep.concluded
    d = direct_check(man.root, man)
    assert d.holds
    assert d.refinement.distinct_states == rep.modules[0].verdict.distinct_states


def test_build_is_deterministic(raft3):
    one = render_spec(build_compositional_spec(raft3.root, raft3, "Replication").spec)
    two = render_spec(build_compositional_spec(raft3.root, raft3, "Replication").spec)
    assert one == two


def test_domain_clash_names_both_sites(tmp_path):
    src = os.path.join(CORPUS_DIR, "raft3")
    for f in os.listdir(src):
        shutil.copy(os.path.join(src, f), tmp_path)
    path = tmp_path / "abs_vote.ipa"
    path.write_text(path.read_text().replace("term : [Server -> 1..MaxTerm]",
                                             "term : [Server -> 0..MaxTerm]"))
    # the manifest's invariants are resolved in the merged scope, so the
    # clash surfaces as soon as the manifest is loaded
    with pytest.raises(SpecError) as info:
        load_manifest(str(tmp_path / "manifest.ipam"))
    d = info.value.diagnostics[0]
    assert d.code == "E-clash"
    assert "spec.ipa" in d.message and "abs_vote.ipa" in d.message


def test_raft_compositional(raft3_comp):
    want = expected_results("raft3")
    assert raft3_comp.conclusion == want["conclusion"] == "S => A"
    assert raft3_comp.abstract.verdict == want["abstract"]
    for m in raft3_comp.modules:
        assert m.verdict.verdict == want["modules"][m.module]
        assert m.verdict.distinct_states == want["states"][f"C_{m.module}"]
    assert raft3_comp.abstract.distinct_states == want["states"]["A"]
    assert raft3_comp.transfer == {"singleLeader": "holds for S",
                                   "leaderCompleteness": "holds for S"}


def test_raft_direct(raft3_comp, raft3_direct):
    assert raft3_direct.holds and raft3_direct.exploration.verdict == "pass"
    assert raft3_direct.refinement.distinct_states == expected_results("raft3")["states"]["S"]
    assert all(raft3_direct.refinement.distinct_states > m.verdict.distinct_states
               for m in raft3_comp.modules)


def test_cost_comparison(raft3_comp, raft3_direct):
    cc = cost_comparison(raft3_comp, raft3_direct)
    assert [r[0] for r in cc.rows] == ["A", "C_PreVote", "C_Vote", "C_Replication"]
    assert cc.t_comp == pytest.approx(sum(r[2] for r in cc.rows))
    assert cc.state_ratio == raft3_direct.refinement.distinct_states / max(r[1] for r in cc.rows)
    assert cc.ratio == pytest.approx(cc.t_direct / cc.t_comp)
    assert "ratio" not in cc.to_json(durations=False)


def test_quorum_bug_blocks(quorum_bug):
    rep = compositional_check(quorum_bug.root, quorum_bug)
    assert rep.conclusion == "blocked: C_Vote => A fails"
    v = rep.module_check("Vote").verdict
    assert v.reason == "mapped action disabled"
    assert str(v.abstract_action).startswith("AbsBecomeLeader")
    assert rep.transfer["singleLeader"] == "not established"


def test_quorum_bug_direct(quorum_bug):
    d = direct_check(quorum_bug.root, quorum_bug, Bounds(max_states=200_000))
    assert d.refinement.verdict == "fails"


def test_constraint_failure_blocks_before_exploration():
    man = load_fixture("raft3-bug-abs-scope").manifest()
    rep = compositional_check(man.root, man)
    assert rep.conclusion == "blocked: constraint 1 fails for Vote"
    assert rep.abstract is None and rep.modules == []
    assert cost_comparison(rep, direct_check(load_fixture("counter").manifest().root,
                                             load_fixture("counter").manifest())) is None


def test_inconclusive_never_concludes():
    man = load_fixture("coordinator-toy").manifest()
    rep = compositional_check(man.root, man, Bounds(max_states=20))
    assert rep.conclusion.startswith("blocked: inconclusive")


def test_invariant_outside_abstract_scope_not_transferable():
    man = load_fixture("coordinator-toy").manifest()
    text = open(man.origin).read() + "invariant wipBound = \\A n \\in Node : wip[n] => phase > 0\n"
    man2 = parse_manifest(text, man.origin)
    rep = compositional_check(man2.root, man2)
    assert rep.transfer["wipBound"] == "not transferable"
    assert rep.transfer["phaseBound"] == "holds for S"

