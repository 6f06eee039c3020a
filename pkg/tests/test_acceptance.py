"""The eight acceptance criteria, one test each.

Every test records a one-line result in ``RESULTS``; conftest prints them at
the end of the run, so a plain ``pytest tests/test_acceptance.py`` ends with a
pass/fail line per criterion.
"""

import random
import time
from contextlib import contextmanager

from ipacheck import syntax as S
from ipacheck.analysis import analyze, interaction_vars, internal_vars, permuted, update_reads
from ipacheck.cli import crossval
from ipacheck.composer import (BuildError, build_abstract_spec, build_compositional_spec,
                               compositional_check, cost_comparison, direct_check,
                               refinement_mapping)
from ipacheck.corpus import CORPUS_DIR, all_fixtures, expected_results, load_fixture
from ipacheck.explorer import Bounds, enumeration_oracle, explore, trace_replay
from ipacheck.generator import instances
from ipacheck.parser import load_spec, parse_manifest, parse_spec, render_manifest, render_spec
from ipacheck.refinement import failure_replays

from pairs import compare_with_oracle, refinement_pairs, small_enough
from strategies import SKELETON, specs

RESULTS = {}


@contextmanager
def criterion(n: int, title: str):
    """Collects detail strings; the criterion passes if the block finishes."""
    detail = []
    start = time.perf_counter()
    try:
        yield detail
    except BaseException as exc:
        detail.append(f"{type(exc).__name__}: {exc}".splitlines()[0][:160])
        RESULTS[n] = ("FAIL", title, detail, time.perf_counter() - start)
        print(_line(n))
        raise
    RESULTS[n] = ("PASS", title, detail, time.perf_counter() - start)
    print(_line(n))


def _line(n: int) -> str:
    status, title, detail, secs = RESULTS[n]
    return f"criterion {n}: {status} {title} ({'; '.join(detail)}; {secs:.1f}s)"


def manifest_fixtures():
    return [fx for fx in all_fixtures() if fx.manifest_path is not None]


def composed_specs(man):
    yield "A", build_abstract_spec(man.root, man).spec
    for m in man.root.modules:
        try:
            yield f"C_{m.name}", build_compositional_spec(man.root, man, m.name).spec
        except BuildError:  # a constraint-violating abstraction has no C_i
            continue


# --- 1 --------------------------------------------------------------------------------


def test_criterion_1_cross_validation(raft3, raft3_comp, raft3_direct):
    with criterion(1, "compositional conclusion agrees with direct check") as d:
        cases = [("raft3", raft3_comp, raft3_direct)]
        coord = load_fixture("coordinator-toy").manifest()
        cases.append(("coordinator-toy", compositional_check(coord.root, coord),
                      direct_check(coord.root, coord)))
        for name, comp, direct in cases:
            assert comp.concluded and direct.holds, name
        rows = crossval(0, 100)
        bad = [r["seed"] for r in rows if not r["agree"]]
        assert not bad, f"disagreement on seeds {bad}"
        # a blocked run never claims S => A, and a concluded one is never refuted
        blocked = sum(1 for r in rows if not r["conclusion"].startswith("S => A"))
        d.append(f"{len(cases) + len(rows)} cases, {blocked} generated blocked, 0 disagreements")


# --- 2 --------------------------------------------------------------------------------


def test_criterion_2_cost_reduction(raft3_comp, raft3_direct):
    with criterion(2, "raft3 direct cost exceeds compositional cost") as d:
        cost = cost_comparison(raft3_comp, raft3_direct)
        assert cost is not None
        d.append(f"states {cost.direct_states} vs max {cost.max_comp_states} "
                 f"(x{cost.state_ratio:.2f})")
        d.append(f"time ratio {cost.ratio:.2f}")
        assert cost.state_ratio >= 2
        assert cost.ratio >= 1.5


# --- 3 --------------------------------------------------------------------------------


def test_criterion_3_bug_detection(quorum_bug, raft3_comp, raft3_direct):
    with criterion(3, "quorum bug caught at C_Vote => A and directly") as d:
        man = quorum_bug
        comp = compositional_check(man.root, man)
        vote = comp.module_check("Vote").verdict
        assert vote.verdict == "fails"
        c_vote = build_compositional_spec(man.root, man, "Vote").spec
        a = build_abstract_spec(man.root, man).spec
        assert trace_replay(c_vote, vote.trace).valid
        assert failure_replays(c_vote, a, refinement_mapping(c_vote, a, man),
                               _gbar(man, "Vote"), vote)
        direct = direct_check(man.root, man)
        assert direct.refinement.verdict == "fails"
        assert not comp.concluded
        d.append(f"C_Vote trace of {len(vote.trace)} steps replays; "
                 f"direct {direct.refinement.verdict}")
        assert raft3_comp.concluded and raft3_direct.holds and raft3_direct.passed
        d.append("raft3 passes both")


def _gbar(man, module):
    from ipacheck.composer import compose_mappings
    return compose_mappings(man.root, man, module)[1]


# --- 4 --------------------------------------------------------------------------------


def test_criterion_4_refinement_oracle():
    with criterion(4, "simulation check agrees with trace-inclusion oracle") as d:
        checked, skipped, verdicts = 0, 0, set()
        sources = [(fx.id, fx.manifest()) for fx in manifest_fixtures()]
        sources += [(f"gen{i.seed}", i.load()) for i in instances(24, base_seed=4000)]
        for label, man in sources:
            for name, b, a, sm, am in refinement_pairs(man, label):
                if not small_enough(b):
                    skipped += 1
                    continue
                sim, orc = compare_with_oracle(b, a, sm, am)
                assert sim == orc, f"{name}: {sim} vs {orc}"
                checked += 1
                verdicts.add(sim)
        assert verdicts == {"holds", "fails"}
        d.append(f"{checked} pairs agree, {skipped} beyond the oracle bound")


# --- 5 --------------------------------------------------------------------------------


def _closed(spec, an) -> bool:
    """One more application of every rule adds nothing."""
    defs = spec.def_table()
    for m in spec.modules:
        deps = an.module_deps[m.name]
        for act in m.actions:
            for v, r in update_reads(act, defs).items():
                if v in deps and not r <= deps:
                    return False
    return (interaction_vars(spec, an.module_deps) == an.interaction
            and internal_vars(an.module_deps, an.interaction) == an.internal)


def _disjoint(an) -> bool:
    return all(not (li & an.module_deps[j])
               for i, li in an.internal.items() for j in an.module_deps if i != j)


def test_criterion_5_analysis_goldens():
    with criterion(5, "analysis goldens, disjointness, idempotence, order invariance") as d:
        for fid in ("micro-fixpoint-1", "micro-fixpoint-2", "micro-fixpoint-3"):
            got = analyze(load_fixture(fid).spec()).to_json()
            want = expected_results(fid)["analysis"]
            assert got["modules"] == want["modules"], fid
            assert got["interaction"] == want["interaction"], fid
        pool = [(fx.id, fx.spec()) for fx in all_fixtures()]
        for fx in manifest_fixtures():
            pool += [(f"{fx.id} {n}", s) for n, s in composed_specs(fx.manifest())]
        pool += [(f"gen{i.seed}", i.load().root) for i in instances(20, base_seed=5000)]
        rng = random.Random(2024)
        for name, spec in pool:
            an = analyze(spec)
            assert _disjoint(an), name
            assert _closed(spec, an), name
            base = an.to_json()
            assert analyze(spec).to_json() == base, name
            for _ in range(50):
                order = list(range(len(spec.actions)))
                rng.shuffle(order)
                assert analyze(permuted(spec, order)).to_json() == base, name
        d.append(f"3 goldens; {len(pool)} specs disjoint, idempotent, stable under 50 permutations")


# --- 6 --------------------------------------------------------------------------------


def test_criterion_6_determinism(raft3, raft3_direct, quorum_bug):
    with criterion(6, "results identical across workers and repeated runs") as d:
        coord = load_fixture("coordinator-toy").manifest()
        runs = 0
        for name, man in (("raft3", raft3), ("raft3-bug-quorum", quorum_bug),
                          ("coordinator-toy", coord)):
            base = None
            for w in (1, 2, 8):
                for _ in range(3):
                    got = [compositional_check(man.root, man, Bounds(workers=w)).to_json(False)]
                    if man is not raft3:
                        direct = direct_check(man.root, man, Bounds(workers=w))
                        got += [direct.refinement.to_json(False), direct.exploration.to_json(False)]
                    base = base or got
                    assert got == base, f"{name} workers={w}"
                    runs += 1
        # the largest state space, once per worker count
        want = (raft3_direct.refinement.to_json(False), raft3_direct.exploration.to_json(False))
        for w in (2, 8):
            again = direct_check(raft3.root, raft3, Bounds(workers=w))
            assert (again.refinement.to_json(False), again.exploration.to_json(False)) == want
            runs += 1
        d.append(f"{runs} runs match")


# --- 7 --------------------------------------------------------------------------------


def _probe(spec, seed):
    var = sorted(spec.var_names)[seed % len(spec.var_names)]
    return S.Decl("probe", S.Binary("/=", S.VarRef(var), S.Lit(seed % 3)))


def test_criterion_7_explorer_exactness(raft3):
    with criterion(7, "state counts and violation depths match the enumeration oracle") as d:
        pool = [(fx.id, fx.spec()) for fx in all_fixtures()]
        for fx in manifest_fixtures():
            pool += [(f"{fx.id} {n}", s) for n, s in composed_specs(fx.manifest())]
        pool += [(f"gen{i.seed}", i.load().root) for i in instances(30, base_seed=7000)]
        counted, probes, skipped = 0, 0, 0
        for name, spec in pool:
            try:
                o = enumeration_oracle(spec, [])
            except RuntimeError:
                skipped += 1
                continue
            r = explore(spec, [])
            assert r.distinct_states == o.distinct_states, name
            counted += 1
        for name, spec in pool[:]:
            if not small_enough(spec):
                continue
            for seed in range(3):
                probe = _probe(spec, seed)
                o = enumeration_oracle(spec, [probe])
                r = explore(spec, [probe])
                if o.first_violation_depth is None:
                    assert r.verdict == "pass", name
                else:
                    assert len(r.violation.trace) == o.first_violation_depth, name
                probes += 1
        d.append(f"{counted} counts match, {skipped} beyond 50,000 states, {probes} probes")


# --- 8 --------------------------------------------------------------------------------


def test_criterion_8_round_trip():
    import glob
    import os

    from hypothesis import given, settings

    with criterion(8, "parse and render are inverse") as d:
        files = 0
        for path in sorted(glob.glob(os.path.join(CORPUS_DIR, "*", "*.ipa"))):
            spec = load_spec(path)
            assert parse_spec(render_spec(spec), path) == spec, path
            files += 1
        for fx in manifest_fixtures():
            man = fx.manifest()
            again = parse_manifest(render_manifest(man), man.origin, man.root, man.abstractions)
            assert (again.action_map, again.refine, again.invariants) == \
                (man.action_map, man.refine, man.invariants), fx.id
            files += 1
        count = [0]

        @settings(max_examples=500, database=None)
        @given(specs(parse_spec(SKELETON, "skeleton.ipa")))
        def random_asts(spec):
            assert parse_spec(render_spec(spec), "r.ipa") == spec
            count[0] += 1

        random_asts()
        assert count[0] >= 500
        d.append(f"{files} corpus files, {count[0]} random ASTs")
