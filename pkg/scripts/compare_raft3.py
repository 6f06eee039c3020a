"""Compositional versus direct checking on a manifest fixture, repeated.

Prints the comparison table of the last run and the median time ratio over
all runs, since single timings at this scale are noisy.

    python scripts/compare_raft3.py [--fixture raft3] [--runs 3] [--workers 1]
"""

import argparse
import statistics

from ipacheck.cli import render_compositional
from ipacheck.composer import compositional_check, cost_comparison, direct_check
from ipacheck.corpus import load_fixture
from ipacheck.explorer import Bounds


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fixture", default="raft3")
    ap.add_argument("--runs", type=int, default=3)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    man = load_fixture(args.fixture).manifest()
    bounds = Bounds(workers=args.workers)
    ratios = []
    for i in range(args.runs):
        comp = compositional_check(man.root, man, bounds)
        direct = direct_check(man.root, man, bounds)
        cost = cost_comparison(comp, direct)
        if cost is None:
            print("no comparison: a check did not run to completion")
            print(render_compositional(comp, direct))
            return
        ratios.append(cost.ratio)
        print(f"run {i + 1}: T_comp {comp.t_comp:.2f}s  T_direct {direct.t_direct:.2f}s  "
              f"ratio {cost.ratio:.2f}")
    print()
    print(render_compositional(comp, direct))
    print(f"state ratio {cost.state_ratio:.2f}, median time ratio {statistics.median(ratios):.2f}")


if __name__ == "__main__":
    main()
