from hypothesis import given, settings, strategies as st

from ipacheck.analysis import analyze, check_abstraction_constraints
from ipacheck.generator import GenConfig, generate, instances


def test_same_seed_same_instance():
    assert generate(11) == generate(11)
    assert generate(11).root_text != generate(12).root_text


def test_mutation_schedule():
    got = [i.mutated for i in instances(8)]
    assert got == [False, False, False, True] * 2


def test_write_and_reload(tmp_path):
    inst = generate(5, GenConfig(mutate=True))
    path = inst.write(str(tmp_path))
    from ipacheck.parser import load_manifest

    man = load_manifest(path)
    assert [a.name for a in man.root.actions] == [a.name for a in inst.load().root.actions]
    assert inst.notes and inst.notes[0].startswith("mutated")


@settings(max_examples=60)
@given(st.integers(0, 100_000), st.booleans())
def test_constraints_hold_by_construction(seed, mutate):
    man = generate(seed, GenConfig(mutate=mutate)).load()
    rep = check_abstraction_constraints(man.root, man, analyze(man.root))
    for r in rep.results:
        if r.constraint in (1, 2, 3):
            assert r.ok, (seed, r)


@settings(max_examples=60)
@given(st.integers(0, 100_000))
def test_config_ranges(seed):
    man = generate(seed).load()
    assert 2 <= len(man.root.modules) <= 3
    for m in man.root.modules:
        assert 1 <= len(m.actions) <= 3
