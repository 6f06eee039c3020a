"""Record reachable-state counts in every fixture's expected.json.

A count is written only when the independent enumeration oracle and the BFS
engine agree on it; a disagreement aborts the run.

    python scripts/freeze_corpus.py [fixture-id ...]
"""

import argparse
import json
import sys

from ipacheck.analysis import analyze, check_abstraction_constraints
from ipacheck.composer import build_abstract_spec, build_compositional_spec
from ipacheck.corpus import expected_results, fixture_ids, load_fixture
from ipacheck.explorer import Bounds, enumeration_oracle, explore


def agreed_count(spec):
    try:
        oracle = enumeration_oracle(spec, [], limit=50_000).distinct_states
    except RuntimeError:
        return None  # beyond the oracle's reach; nothing is frozen

    engine = explore(spec, [], Bounds()).distinct_states
    if oracle != engine:
        sys.exit(f"{spec.name}: oracle counted {oracle} states, engine {engine}")
    return oracle


def freeze(fid: str) -> dict:
    fx = load_fixture(fid)
    if fx.manifest_path is None:
        return {"S": agreed_count(fx.spec())}
    man = fx.manifest()
    root = man.root
    analysis = analyze(root)
    counts = {"S": agreed_count(root)}
    if counts["S"] is None:
        del counts["S"]
    if not check_abstraction_constraints(root, man, analysis).passed:
        return counts
    counts["A"] = agreed_count(build_abstract_spec(root, man, analysis).spec)
    for m in root.modules:
        counts[f"C_{m.name}"] = agreed_count(build_compositional_spec(root, man, m.name, analysis).spec)
    return counts


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("ids", nargs="*")
    args = ap.parse_args()
    for fid in args.ids or fixture_ids():
        counts = freeze(fid)
        exp = expected_results(fid)
        exp["states"] = counts
        path = load_fixture(fid).directory / "expected.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(exp, fh, indent=2)
            fh.write("\n")
        print(fid, counts)


if __name__ == "__main__":
    main()
