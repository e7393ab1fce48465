"""Sweep orchestration: cell grid, per-cell seeds, resumable CSV output, aggregation."""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
import statistics
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import tomli

from .attacks import PAPER_RATIOS, PP_MODES, SURFACES, AttackConfig, NoiseSpec
from .evaluation import FilterIndex, evaluate_all
from .kg_core import KnowledgeGraph, add_reciprocals, load_dataset
from .models import MODEL_NAMES, AlgebraKind
from .training import TrainConfig, train

log = logging.getLogger(__name__)

CSV_HEADER = ("dataset", "model", "surface", "ratio", "seed", "split", "mode",
              "mrr", "hits1", "hits3", "hits10", "epochs", "wall_seconds")
METRICS = ("mrr", "hits1", "hits3", "hits10")
ERROR_SPLIT = "error"

PAPER_DATASETS = ("UMLS", "KINSHIP", "WN18RR", "NELL-995-h100", "FB15k-237")
SMALL_DATASETS = ("UMLS", "KINSHIP")
ATTACK_SURFACES = ("gp", "lp", "pp")
LARGE_TRAIN_TRIPLES = 50_000


def format_ratio(k: float) -> str:
    return format(float(k), "g")


@dataclass(frozen=True)
class TrainDefaults:
    lr: float = 0.1
    epochs: int = 100
    batch_size: int = 1024
    dim: int = 32
    optimizer: str = "adam"


@dataclass(frozen=True)
class SweepSpec:
    datasets: tuple[str, ...]
    models: tuple[str, ...] = MODEL_NAMES
    surfaces: tuple[str, ...] = ATTACK_SURFACES
    ratios: tuple[float, ...] = PAPER_RATIOS
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    data_dir: str = "data"
    splits: tuple[str, ...] = ("valid", "test")
    train: TrainDefaults = field(default_factory=TrainDefaults)
    pp_mode: str = "persistent"
    noise_low: float = -0.1
    noise_high: float = 0.1
    share_baseline: bool = False
    reciprocal: bool = False
    record_timing: bool = True

    def __post_init__(self):
        for name in ("datasets", "models", "surfaces", "ratios", "seeds", "splits"):
            if not getattr(self, name):
                raise ValueError(f"sweep {name} must be non-empty")
        for s in self.surfaces:
            if s not in SURFACES:
                raise ValueError(f"unknown surface {s!r}")
        for m in self.models:
            AlgebraKind.parse(m)
        if self.pp_mode not in PP_MODES:
            raise ValueError(f"unknown pp_mode {self.pp_mode!r}")
        NoiseSpec(low=self.noise_low, high=self.noise_high)

    def cells(self) -> list["Cell"]:
        return [Cell(d, AlgebraKind.parse(m).label, s, float(k), int(seed))
                for d in self.datasets for m in self.models for s in self.surfaces
                for k in self.ratios for seed in self.seeds]


PRESETS = {
    "paper": dict(datasets=PAPER_DATASETS),
    "paper-small": dict(datasets=SMALL_DATASETS),
    # LP additionally probes the 0.1% rate discussed for large graphs
    "lp": dict(datasets=PAPER_DATASETS, surfaces=("lp",), ratios=(0.0, 0.001) + PAPER_RATIOS[1:]),
}


def preset(name: str, **overrides) -> SweepSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return SweepSpec(**{**PRESETS[name], **overrides})


_SECTION_KEYS = {
    "sweep": ("datasets", "models", "surfaces", "ratios", "seeds", "data_dir", "splits",
              "share_baseline", "reciprocal", "record_timing", "out", "parallelism",
              "max_large_parallel", "preset"),
    "train": tuple(f.name for f in fields(TrainDefaults)),
    "attack": ("pp_mode", "noise_low", "noise_high"),
}


def load_config(path: str | Path) -> dict[str, dict]:
    """Parse a TOML sweep config with ``[sweep]``, ``[train]`` and ``[attack]`` sections."""
    with open(path, "rb") as fh:
        raw = tomli.load(fh)
    for section, values in raw.items():
        if section not in _SECTION_KEYS:
            raise ValueError(f"{path}: unknown section [{section}]")
        unknown = set(values) - set(_SECTION_KEYS[section])
        if unknown:
            raise ValueError(f"{path}: unknown keys in [{section}]: {sorted(unknown)}")
    return {s: dict(raw.get(s, {})) for s in _SECTION_KEYS}


def spec_from_config(config: dict[str, dict]) -> tuple[SweepSpec, dict]:
    """Build a SweepSpec; returns it with the run options (out, parallelism, ...)."""
    sweep = dict(config.get("sweep", {}))
    run_opts = {k: sweep.pop(k) for k in ("out", "parallelism", "max_large_parallel") if k in sweep}
    base = dict(PRESETS[sweep.pop("preset")]) if "preset" in sweep else {}
    for key in ("datasets", "models", "surfaces", "ratios", "seeds", "splits"):
        if key in sweep:
            sweep[key] = tuple(sweep[key])
    if "ratios" in sweep:
        sweep["ratios"] = tuple(float(k) for k in sweep["ratios"])
    base.update(sweep)
    base.update(config.get("attack", {}))
    base["train"] = TrainDefaults(**config.get("train", {}))
    if "datasets" not in base:
        raise ValueError("config must name datasets (or a preset)")
    return SweepSpec(**base), run_opts


def stable_hash64(*parts) -> int:
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass(frozen=True, order=True)
class Cell:
    dataset: str
    model: str
    surface: str
    ratio: float
    seed: int

    @property
    def key(self) -> tuple:
        return (self.dataset, self.model, self.surface, format_ratio(self.ratio), str(self.seed))

    @property
    def attack_seed(self) -> int:
        """Seed for attack draws; unique per cell tuple."""
        return stable_hash64(self.dataset, self.model, self.surface, format_ratio(self.ratio), self.seed)

    @property
    def train_seed(self) -> int:
        """Seed for initialisation and shuffling.

        Surface and ratio are left out so every ratio of a (dataset, model,
        seed) shares its starting point and batch order, and k=0 is the same
        run on every surface.
        """
        return stable_hash64(self.dataset, self.model, self.seed)


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    model: str
    surface: str
    ratio: float
    seed: int
    split: str
    mode: str
    mrr: float | None
    hits1: float | None
    hits3: float | None
    hits10: float | None
    epochs: int
    wall_seconds: float

    def csv_fields(self) -> list[str]:
        def metric(x):
            return "" if x is None else f"{x:.6f}"

        return [self.dataset, self.model, self.surface, format_ratio(self.ratio), str(self.seed),
                self.split, self.mode, metric(self.mrr), metric(self.hits1), metric(self.hits3),
                metric(self.hits10), str(self.epochs), f"{self.wall_seconds:.3f}"]

    @classmethod
    def from_csv(cls, rec: dict) -> "ResultRow":
        def metric(x):
            return None if x == "" else float(x)

        return cls(rec["dataset"], rec["model"], rec["surface"], float(rec["ratio"]), int(rec["seed"]),
                   rec["split"], rec["mode"], metric(rec["mrr"]), metric(rec["hits1"]),
                   metric(rec["hits3"]), metric(rec["hits10"]), int(rec["epochs"]),
                   float(rec["wall_seconds"]))

    @property
    def key(self) -> tuple:
        return (self.dataset, self.model, self.surface, format_ratio(self.ratio), str(self.seed))


class CsvAppender:
    """Single writer that appends whole rows and flushes them to disk."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if self.path.parent and not self.path.parent.exists():
            self.path.parent.mkdir(parents=True)
        if not self.path.exists() or self.path.stat().st_size == 0:
            with self.path.open("w", encoding="utf-8", newline="") as fh:
                fh.write(",".join(CSV_HEADER) + "\n")
        else:
            with self.path.open(encoding="utf-8") as fh:
                header = fh.readline().strip()
            if header != ",".join(CSV_HEADER):
                raise ValueError(f"{self.path}: unexpected CSV header {header!r}")

    def append(self, rows: Sequence[ResultRow]) -> None:
        lines = []
        for row in rows:
            buf = io.StringIO()
            csv.writer(buf, lineterminator="\n").writerow(row.csv_fields())
            lines.append(buf.getvalue())
        with self.path.open("a", encoding="utf-8", newline="") as fh:
            fh.write("".join(lines))
            fh.flush()
            os.fsync(fh.fileno())


def read_rows(path: str | Path) -> list[ResultRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected CSV header {reader.fieldnames}")
        return [ResultRow.from_csv(rec) for rec in reader]


@lru_cache(maxsize=8)
def _load_graph(directory: str, reciprocal: bool) -> tuple[KnowledgeGraph, FilterIndex]:
    graph = load_dataset(directory)
    if reciprocal:
        graph = add_reciprocals(graph)
    return graph, FilterIndex.from_graph(graph)


def train_config_for(cell: Cell, spec: SweepSpec) -> TrainConfig:
    t = spec.train
    attack = AttackConfig(cell.surface, cell.ratio, NoiseSpec(low=spec.noise_low, high=spec.noise_high),
                          spec.pp_mode, cell.attack_seed)
    return TrainConfig(model=AlgebraKind.parse(cell.model), lr=t.lr, epochs=t.epochs,
                       batch_size=t.batch_size, dim=t.dim, optimizer=t.optimizer,
                       attack=attack, seed=cell.train_seed)


def execute_cell(cell: Cell, spec: SweepSpec, rank_dump: str | Path | None = None):
    """Train and evaluate one cell; returns ``(params, rows)`` and raises on failure."""
    start = time.perf_counter()
    graph, filt = _load_graph(str(Path(spec.data_dir) / cell.dataset), spec.reciprocal)
    params, _ = train(graph, train_config_for(cell, spec))
    reports = []
    for split in spec.splits:
        dump = rank_dump if split == "test" else None
        reports += evaluate_all(params, graph.split(split), filt, split=split, dump_path=dump)
    wall = time.perf_counter() - start if spec.record_timing else 0.0
    rows = [ResultRow(cell.dataset, cell.model, cell.surface, cell.ratio, cell.seed, rep.split, rep.mode,
                      rep.mrr, rep.hits1, rep.hits3, rep.hits10, spec.train.epochs, wall)
            for rep in reports]
    return params, rows


def error_row(cell: Cell, spec: SweepSpec, exc: BaseException, wall: float) -> ResultRow:
    return ResultRow(cell.dataset, cell.model, cell.surface, cell.ratio, cell.seed, ERROR_SPLIT,
                     type(exc).__name__, None, None, None, None, spec.train.epochs,
                     wall if spec.record_timing else 0.0)


def run_cell(cell: Cell, spec: SweepSpec) -> list[ResultRow]:
    """Like ``execute_cell`` but a failure comes back as a single error row."""
    start = time.perf_counter()
    try:
        return execute_cell(cell, spec)[1]
    except Exception as exc:  # noqa: BLE001 - recorded as an error row, sweep continues
        log.error("cell %s failed: %s", cell, exc)
        return [error_row(cell, spec, exc, time.perf_counter() - start)]


@dataclass
class SweepSummary:
    executed: int = 0
    skipped: int = 0
    failed: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed


def _expected_rows(spec: SweepSpec) -> int:
    return 2 * len(spec.splits)


def _is_large(spec: SweepSpec, dataset: str) -> bool:
    path = Path(spec.data_dir) / dataset / "train.txt"
    if not path.exists():
        return False
    with path.open("rb") as fh:
        return sum(1 for _ in fh) > LARGE_TRAIN_TRIPLES


def plan_jobs(spec: SweepSpec, done: set[tuple]) -> list[tuple[Cell, tuple[str, ...]]]:
    """Cells still to run, each with the surfaces its rows are written under.

    With ``share_baseline`` the k=0 cell of every (dataset, model, seed) runs
    once under surface ``none`` and its rows are copied to each surface.
    """
    jobs = []
    shared = set()
    for cell in spec.cells():
        if spec.share_baseline and cell.ratio == 0.0:
            base = replace(cell, surface="none")
            if base in shared:
                continue
            shared.add(base)
            targets = tuple(s for s in spec.surfaces if replace(cell, surface=s).key not in done)
            if targets:
                jobs.append((base, targets))
        elif cell.key not in done:
            jobs.append((cell, (cell.surface,)))
    return jobs


def _completed_keys(path: Path, spec: SweepSpec) -> set[tuple]:
    if not path.exists() or path.stat().st_size == 0:
        return set()
    counts: dict[tuple, int] = defaultdict(int)
    for row in read_rows(path):
        if row.split != ERROR_SPLIT:
            counts[row.key] += 1
    return {k for k, n in counts.items() if n >= _expected_rows(spec)}


def run_sweep(spec: SweepSpec, out: str | Path, parallelism: int | None = None,
              max_large_parallel: int | None = None) -> SweepSummary:
    """Run every missing cell of ``spec`` and append its rows to ``out``.

    Cells whose rows are already present are skipped, so an interrupted
    sweep can be resumed by running it again.
    """
    out = Path(out)
    writer = CsvAppender(out)
    jobs = plan_jobs(spec, _completed_keys(out, spec))
    summary = SweepSummary(skipped=len(spec.cells()) - sum(len(t) for _, t in jobs))
    parallelism = parallelism or os.cpu_count() or 1
    large = {d for d in spec.datasets if _is_large(spec, d)}
    small_jobs = [j for j in jobs if j[0].dataset not in large]
    large_jobs = [j for j in jobs if j[0].dataset in large]
    large_par = min(parallelism, max_large_parallel or parallelism)

    def record(cell: Cell, targets: tuple[str, ...], rows: list[ResultRow]) -> None:
        out_rows = [replace(r, surface=s) for s in targets for r in rows]
        writer.append(out_rows)
        if any(r.split == ERROR_SPLIT for r in rows):
            summary.failed.append(cell)
        summary.executed += len(targets)

    for group, workers in ((small_jobs, parallelism), (large_jobs, large_par)):
        if not group:
            continue
        if workers <= 1:
            for cell, targets in group:
                record(cell, targets, run_cell(cell, spec))
            continue
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_cell, cell, spec): (cell, targets) for cell, targets in group}
            for fut in as_completed(futures):
                cell, targets = futures[fut]
                record(cell, targets, fut.result())
    return summary


@dataclass(frozen=True)
class AggregateRow:
    dataset: str
    model: str
    surface: str
    ratio: float
    split: str
    mode: str
    n_seeds: int
    mean: dict
    std: dict
    missing_seeds: tuple[int, ...] = ()

    COLUMNS = ("dataset", "model", "surface", "ratio", "split", "mode", "n_seeds",
               "mrr_mean", "mrr_std", "hits1_mean", "hits1_std", "hits3_mean", "hits3_std",
               "hits10_mean", "hits10_std", "missing_seeds")

    def csv_fields(self) -> list[str]:
        out = [self.dataset, self.model, self.surface, format_ratio(self.ratio), self.split,
               self.mode, str(self.n_seeds)]
        for m in METRICS:
            out += [f"{self.mean[m]:.6f}", f"{self.std[m]:.6f}"]
        out.append(" ".join(str(s) for s in self.missing_seeds))
        return out


@dataclass
class Aggregation:
    rows: list[AggregateRow]
    warnings: list[str]

    def lookup(self, dataset, model, surface, ratio, split="test", mode="filtered") -> AggregateRow:
        for r in self.rows:
            if (r.dataset, r.model, r.surface, r.split, r.mode) == (dataset, model, surface, split, mode) \
                    and math.isclose(r.ratio, ratio):
                return r
        raise KeyError((dataset, model, surface, ratio, split, mode))


def aggregate(rows: Iterable[ResultRow] | str | Path, seeds: Sequence[int] | None = None) -> Aggregation:
    """Mean and sample standard deviation (n-1) of each metric over seeds.

    The expected seed set is ``seeds`` or, if omitted, every seed in the
    input. Groups lacking some of them are reported in ``missing_seeds``.
    A single seed has standard deviation 0.
    """
    if isinstance(rows, (str, Path)):
        rows = read_rows(rows)
    rows = list(rows)
    warnings = []
    errors = [r for r in rows if r.split == ERROR_SPLIT]
    for r in errors:
        warnings.append(f"error row for {r.key}: {r.mode}")
    rows = [r for r in rows if r.split != ERROR_SPLIT]
    expected = sorted(set(seeds) if seeds is not None else {r.seed for r in rows})

    groups: dict[tuple, dict[int, ResultRow]] = defaultdict(dict)
    for r in rows:
        key = (r.dataset, r.model, r.surface, format_ratio(r.ratio), r.split, r.mode)
        if r.seed in groups[key]:
            warnings.append(f"duplicate seed {r.seed} for {key}")
        groups[key][r.seed] = r

    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], float(k[3]), k[4], k[5])):
        by_seed = groups[key]
        used = [by_seed[s] for s in sorted(by_seed)]
        missing = tuple(s for s in expected if s not in by_seed)
        if missing:
            warnings.append(f"missing seeds {list(missing)} for {key}")
        mean, std = {}, {}
        for m in METRICS:
            vals = [getattr(r, m) for r in used]
            mean[m] = statistics.fmean(vals)
            std[m] = statistics.stdev(vals) if len(vals) > 1 else 0.0
        out.append(AggregateRow(key[0], key[1], key[2], float(key[3]), key[4], key[5],
                                len(used), mean, std, missing))

    # every (dataset, model, surface) should cover the same ratios
    grid: dict[tuple, set] = defaultdict(set)
    for r in out:
        grid[(r.dataset, r.surface, r.split, r.mode)].add((r.model, format_ratio(r.ratio)))
    for (dataset, surface, split, mode), cells in grid.items():
        models = {m for m, _ in cells}
        ratios = {k for _, k in cells}
        if len(cells) != len(models) * len(ratios):
            warnings.append(f"inconsistent grid for {dataset}/{surface}/{split}/{mode}")
    return Aggregation(out, warnings)


def write_aggregate_csv(agg: Aggregation, out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(AggregateRow.COLUMNS)
    for r in agg.rows:
        writer.writerow(r.csv_fields())
