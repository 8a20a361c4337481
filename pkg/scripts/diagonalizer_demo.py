"""Build partial oracles for the diagonalizer registry and show how the
machines' output probabilities are pinned down level by level."""
import argparse

from grainoftruth.config import load_registry
from grainoftruth.oracle import completed_bounds, truncated
from grainoftruth.search import search

from run_experiments import CONFIGS


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--max-level", type=int, default=6)
    args = parser.parse_args()
    registry = load_registry(CONFIGS / "diagonalizer.registry")
    trace = search(registry, args.max_level)
    print(f"search {trace.status}: backtracks per level {dict(trace.backtracks)}")
    for po in trace.chain:
        cells = []
        for m in range(1, len(registry) + 1):
            d = truncated(po, registry, m, "")
            iv = completed_bounds(po, registry, m, "")
            cells.append(f"m{m} p1={d.p1} p0={d.p0} [{iv.lo}, {iv.hi}]")
        print(f"level {po.level}: " + "; ".join(cells))


if __name__ == "__main__":
    main()
