"""Compositional conclusion versus direct verdict on generated specs.

Also runs the two multi-module corpus fixtures. Instances are grouped by the
generator knobs that were active (leaked internal guard, mutated abstraction).

    python scripts/crossval.py [--seed 0] [--count 100]
"""

import argparse
import time
from collections import Counter

from ipacheck.cli import crossval
from ipacheck.composer import compositional_check, direct_check
from ipacheck.corpus import load_fixture


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--count", type=int, default=100)
    args = ap.parse_args()

    start = time.perf_counter()
    disagreements = 0
    for fid in ("raft3", "coordinator-toy"):
        man = load_fixture(fid).manifest()
        comp = compositional_check(man.root, man)
        direct = direct_check(man.root, man)
        agree = comp.concluded == direct.holds
        disagreements += not agree
        print(f"{fid}: {comp.conclusion}; direct {direct.refinement.verdict}; agree {agree}")

    rows = crossval(args.seed, args.count)
    groups = Counter()
    for r in rows:
        kind = ("leaked " if r["leaked"] else "") + ("mutated" if r["mutated"] else "")
        outcome = "concluded" if r["conclusion"] == "S => A" else "blocked"
        groups[(kind.strip() or "clean", outcome, r["direct"])] += 1
        disagreements += not r["agree"]
    print()
    for (kind, outcome, direct), n in sorted(groups.items()):
        print(f"{kind:16} {outcome:10} direct {direct:13} {n}")
    print(f"\n{len(rows) + 2} cases, {disagreements} disagreements, "
          f"{time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()
