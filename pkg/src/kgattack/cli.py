"""Command line entry point: ``kgattack {train,sweep,aggregate,plot,stats}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import runner
from .attacks import PP_MODES, SURFACES
from .kg_core import degree_stats, load_dataset, write_stats_csv
from .models import AlgebraKind
from .plotting import plot
from .training import checkpoint

log = logging.getLogger("kgattack")


def _add_train_options(p: argparse.ArgumentParser, defaults: bool) -> None:
    d = runner.TrainDefaults()

    def dflt(v):
        return v if defaults else None

    p.add_argument("--epochs", type=int, default=dflt(d.epochs))
    p.add_argument("--lr", type=float, default=dflt(d.lr))
    p.add_argument("--batch-size", type=int, default=dflt(d.batch_size))
    p.add_argument("--dim", type=int, default=dflt(d.dim))
    p.add_argument("--optimizer", choices=("adam", "sgd"), default=dflt(d.optimizer))
    p.add_argument("--pp-mode", choices=PP_MODES, default=dflt("persistent"))
    p.add_argument("--noise-low", type=float, default=dflt(-0.1))
    p.add_argument("--noise-high", type=float, default=dflt(0.1))
    p.add_argument("--reciprocal", action=argparse.BooleanOptionalAction, default=dflt(False),
                   help="add inverse relations and evaluate both directions")
    p.add_argument("--timing", dest="record_timing", action=argparse.BooleanOptionalAction,
                   default=dflt(True), help="record wall_seconds (--no-timing writes 0)")
    p.add_argument("--splits", nargs="+", choices=("train", "valid", "test"),
                   default=dflt(["valid", "test"]))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgattack", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and evaluate a single cell")
    p.add_argument("--dataset", required=True, help="dataset directory with train/valid/test.txt")
    p.add_argument("--model", default="DistMult", help="DistMult, ComplEx, QMult, MuRE, Keci or Keci(p,q)")
    p.add_argument("--attack", choices=SURFACES, default="none")
    p.add_argument("--ratio", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="CSV file to append result rows to")
    p.add_argument("--checkpoint", help="write trained parameters here")
    p.add_argument("--rank-dump", help="write per-triple filtered test ranks (TSV)")
    _add_train_options(p, defaults=True)

    p = sub.add_parser("sweep", help="run a grid of cells")
    p.add_argument("--config", help="TOML file with [sweep], [train] and [attack] sections")
    p.add_argument("--preset", choices=sorted(runner.PRESETS))
    p.add_argument("--datasets", nargs="+")
    p.add_argument("--models", nargs="+")
    p.add_argument("--surfaces", nargs="+", choices=SURFACES)
    p.add_argument("--ratios", nargs="+", type=float)
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--data-dir")
    p.add_argument("--out")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--max-large-parallel", type=int)
    p.add_argument("--share-baseline", action=argparse.BooleanOptionalAction, default=None)
    _add_train_options(p, defaults=False)

    p = sub.add_parser("aggregate", help="mean and std over seeds")
    p.add_argument("csv")
    p.add_argument("--out", help="write aggregate CSV here (default stdout)")
    p.add_argument("--seeds", nargs="+", type=int, help="expected seed set")

    p = sub.add_parser("plot", help="one SVG per dataset and surface")
    p.add_argument("csv")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--mode", default="filtered", choices=("raw", "filtered"))
    p.add_argument("--metric", default="mrr", choices=runner.METRICS)

    p = sub.add_parser("stats", help="dataset statistics as CSV")
    p.add_argument("datasets", nargs="+", help="dataset directories")
    p.add_argument("--out", help="CSV file (default stdout)")
    return parser


def _spec_overrides(args) -> dict:
    keys = ("datasets", "models", "surfaces", "ratios", "seeds", "splits")
    sweep = {k: getattr(args, k) for k in keys if getattr(args, k) is not None}
    for k in ("data_dir", "share_baseline", "reciprocal", "record_timing", "out", "parallelism",
              "max_large_parallel", "preset"):
        if getattr(args, k) is not None:
            sweep[k] = getattr(args, k)
    train = {k: getattr(args, k) for k in ("lr", "epochs", "batch_size", "dim", "optimizer")
             if getattr(args, k) is not None}
    attack = {k: getattr(args, k) for k in ("pp_mode", "noise_low", "noise_high")
              if getattr(args, k) is not None}
    return {"sweep": sweep, "train": train, "attack": attack}


def cmd_train(args) -> int:
    directory = Path(args.dataset)
    kind = AlgebraKind.parse(args.model)
    spec = runner.SweepSpec(
        datasets=(directory.name,), models=(kind.label,), surfaces=(args.attack,), ratios=(args.ratio,),
        seeds=(args.seed,), data_dir=str(directory.parent), splits=tuple(args.splits),
        train=runner.TrainDefaults(args.lr, args.epochs, args.batch_size, args.dim, args.optimizer),
        pp_mode=args.pp_mode, noise_low=args.noise_low, noise_high=args.noise_high,
        reciprocal=args.reciprocal, record_timing=args.record_timing,
    )
    (cell,) = spec.cells()
    try:
        params, rows = runner.execute_cell(cell, spec, rank_dump=args.rank_dump)
    except Exception as exc:
        log.error("training failed: %s", exc)
        if args.out:
            runner.CsvAppender(args.out).append([runner.error_row(cell, spec, exc, 0.0)])
        return 1
    if args.checkpoint:
        graph = load_dataset(directory)
        checkpoint(params, args.checkpoint, graph.vocab.digest())
    if args.out:
        runner.CsvAppender(args.out).append(rows)
    for r in rows:
        print(f"{r.split:5s} {r.mode:8s} mrr={r.mrr:.4f} hits@1={r.hits1:.4f} "
              f"hits@3={r.hits3:.4f} hits@10={r.hits10:.4f}")
    return 0


def cmd_sweep(args) -> int:
    config = runner.load_config(args.config) if args.config else {"sweep": {}, "train": {}, "attack": {}}
    for section, values in _spec_overrides(args).items():
        config.setdefault(section, {}).update(values)
    spec, opts = runner.spec_from_config(config)
    out = opts.get("out", "results.csv")
    summary = runner.run_sweep(spec, out, opts.get("parallelism"), opts.get("max_large_parallel"))
    print(f"executed {summary.executed}, skipped {summary.skipped}, failed {len(summary.failed)} -> {out}")
    return 0 if summary.ok else 1


def cmd_aggregate(args) -> int:
    agg = runner.aggregate(args.csv, seeds=args.seeds)
    for w in agg.warnings:
        log.warning(w)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            runner.write_aggregate_csv(agg, fh)
    else:
        runner.write_aggregate_csv(agg, sys.stdout)
    return 0


def cmd_plot(args) -> int:
    for path in plot(args.csv, args.out_dir, args.split, args.mode, args.metric):
        print(path)
    return 0


def cmd_stats(args) -> int:
    stats = [degree_stats(load_dataset(d)) for d in args.datasets]
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_stats_csv(stats, fh)
    else:
        write_stats_csv(stats, sys.stdout)
    return 0


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "aggregate": cmd_aggregate,
            "plot": cmd_plot, "stats": cmd_stats}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
