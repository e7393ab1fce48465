"""Print mean filtered test MRR per model against ratio, one block per dataset and surface.

    python scripts/trend_table.py build/paper_small/results.csv
"""
import argparse
from collections import defaultdict

from kgattack import runner


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    ap.add_argument("--split", default="test")
    ap.add_argument("--mode", default="filtered")
    args = ap.parse_args()
    agg = runner.aggregate(args.csv)
    blocks = defaultdict(dict)
    for r in agg.rows:
        if r.split == args.split and r.mode == args.mode:
            blocks[(r.dataset, r.surface)][(r.model, r.ratio)] = r
    for (dataset, surface), cells in sorted(blocks.items()):
        ratios = sorted({k for _, k in cells})
        models = sorted({m for m, _ in cells})
        print(f"\n{dataset} / {surface}")
        print(f"{'model':10s}" + "".join(f"{runner.format_ratio(k):>14s}" for k in ratios))
        for m in models:
            line = f"{m:10s}"
            for k in ratios:
                r = cells.get((m, k))
                line += f"{r.mean['mrr']:>8.3f}±{r.std['mrr']:.3f}" if r else f"{'-':>14s}"
            print(line)


if __name__ == "__main__":
    main()
