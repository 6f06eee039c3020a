"""Spec pairs (B, A, state mapping, action mapping) drawn from one manifest."""

from ipacheck.composer import (BuildError, build_abstract_spec, build_compositional_spec,
                               compose_mappings, refinement_mapping)
from ipacheck.explorer import enumeration_oracle
from ipacheck.refinement import check_strong_refinement, trace_inclusion_oracle

ORACLE_LIMIT = 5000


def refinement_pairs(man, label=""):
    """S => A, S => C_i and C_i => A for every module i."""
    a = build_abstract_spec(man.root, man).spec
    yield f"{label} S=>A", man.root, a, refinement_mapping(man.root, a, man), man.action_map
    for m in man.root.modules:
        try:
            c = build_compositional_spec(man.root, man, m.name).spec
        except BuildError:  # the abstraction breaks a constraint, so C_i is undefined
            continue
        g_i, gbar, _ = compose_mappings(man.root, man, m.name)
        yield f"{label} S=>C_{m.name}", man.root, c, refinement_mapping(man.root, c, man), g_i
        yield f"{label} C_{m.name}=>A", c, a, refinement_mapping(c, a, man), gbar


def small_enough(spec) -> bool:
    try:
        enumeration_oracle(spec, [], limit=ORACLE_LIMIT)
    except RuntimeError:
        return False
    return True


def compare_with_oracle(b, a, sm, am, depth=8):
    """(simulation verdict, oracle verdict) at the same depth horizon."""
    sim = check_strong_refinement(b, a, sm, am, depth=depth).verdict
    return sim, trace_inclusion_oracle(b, a, sm, am, depth=depth).verdict
