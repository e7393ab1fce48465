"""Run a sweep from a TOML config, then write the aggregate CSV and SVG figures.

    python scripts/run_sweep.py scripts/configs/paper_small.toml --parallelism 4

Interrupted sweeps resume from the results CSV.
"""
import argparse
import logging
from pathlib import Path

from kgattack import runner
from kgattack.plotting import plot


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--parallelism", type=int)
    ap.add_argument("--max-large-parallel", type=int)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")

    spec, opts = runner.spec_from_config(runner.load_config(args.config))
    out = Path(opts.get("out", "results.csv"))
    summary = runner.run_sweep(spec, out, args.parallelism or opts.get("parallelism"),
                               args.max_large_parallel or opts.get("max_large_parallel"))
    print(f"executed {summary.executed}, skipped {summary.skipped}, failed {len(summary.failed)}")

    agg = runner.aggregate(out, seeds=spec.seeds)
    for w in agg.warnings:
        logging.warning(w)
    with open(out.with_name("aggregate.csv"), "w", encoding="utf-8", newline="") as fh:
        runner.write_aggregate_csv(agg, fh)
    for path in plot(agg, out.parent / "figures"):
        print(path)
    return 0 if summary.ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
