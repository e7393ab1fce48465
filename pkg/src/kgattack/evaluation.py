"""Tail-prediction ranking metrics: MRR and Hits@{1,3,10}, raw and filtered."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .models import ModelParams, score_batch

MODES = ("raw", "filtered")
TIE_MODES = ("mean", "optimistic", "pessimistic")
HITS_AT = (1, 3, 10)


class FilterIndex:
    """Known true tails for every ``(head, relation)`` across the given splits."""

    def __init__(self, *splits: np.ndarray):
        tails: dict[tuple[int, int], set[int]] = defaultdict(set)
        for split in splits:
            for h, r, t in np.asarray(split, dtype=np.int64).reshape(-1, 3):
                tails[(int(h), int(r))].add(int(t))
        self._tails = {k: np.array(sorted(v), dtype=np.int64) for k, v in tails.items()}

    def tails(self, h: int, r: int) -> np.ndarray:
        return self._tails.get((int(h), int(r)), np.zeros(0, dtype=np.int64))

    def __contains__(self, triple) -> bool:
        h, r, t = triple
        return int(t) in set(self.tails(h, r).tolist())

    @classmethod
    def from_graph(cls, graph) -> "FilterIndex":
        return cls(graph.train, graph.valid, graph.test)


@dataclass(frozen=True)
class EvalReport:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    mode: str
    split: str
    n_evaluated: int

    def metrics(self) -> dict[str, float]:
        return {"mrr": self.mrr, "hits1": self.hits1, "hits3": self.hits3, "hits10": self.hits10}


def _tie_credit(ties, tie_mode: str):
    if tie_mode == "mean":
        return ties / 2.0
    if tie_mode == "optimistic":
        return 0.0 * ties
    if tie_mode == "pessimistic":
        return ties * 1.0
    raise ValueError(f"unknown tie mode {tie_mode!r}")


def rank_of_tail(scores: np.ndarray, true_tail: int, filter_tails: Iterable[int] = (),
                 mode: str = "filtered", tie_mode: str = "mean") -> float:
    """Rank of ``true_tail`` (1 = best) among all entities.

    Ties count half under ``tie_mode="mean"``, so a constant scorer lands in the middle.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    s = np.array(scores, dtype=np.float64)
    target = s[true_tail]
    if mode == "filtered":
        others = [e for e in filter_tails if e != true_tail]
        s[others] = -np.inf
    higher = np.count_nonzero(s > target)
    ties = np.count_nonzero(s == target) - 1
    return float(1 + higher + _tie_credit(ties, tie_mode))


def rank_batch(scores: np.ndarray, tails: np.ndarray, filter_masks: np.ndarray | None,
               tie_mode: str = "mean") -> np.ndarray:
    """Vectorised ``rank_of_tail`` for ``scores`` of shape ``(n, |E|)``.

    ``filter_masks`` marks other known tails to drop (True = remove); the true
    tail itself must not be masked.
    """
    n = len(tails)
    target = scores[np.arange(n), tails][:, None]
    if filter_masks is not None:
        scores = np.where(filter_masks, -np.inf, scores)
    higher = np.count_nonzero(scores > target, axis=1)
    ties = np.count_nonzero(scores == target, axis=1) - 1
    return 1.0 + higher + _tie_credit(ties, tie_mode)


def report_from_ranks(ranks: np.ndarray, mode: str, split: str) -> EvalReport:
    ranks = np.asarray(ranks, dtype=np.float64)
    if len(ranks) == 0:
        return EvalReport(0.0, 0.0, 0.0, 0.0, mode, split, 0)
    return EvalReport(
        mrr=float(np.mean(1.0 / ranks)),
        hits1=float(np.mean(ranks <= 1)),
        hits3=float(np.mean(ranks <= 3)),
        hits10=float(np.mean(ranks <= 10)),
        mode=mode,
        split=split,
        n_evaluated=len(ranks),
    )


def compute_ranks(params: ModelParams, triples: np.ndarray, filter_index: FilterIndex | None,
                  modes: Iterable[str] = MODES, tie_mode: str = "mean",
                  chunk: int = 512) -> dict[str, np.ndarray]:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    modes = tuple(modes)
    if "filtered" in modes and filter_index is None:
        raise ValueError("filtered evaluation needs a FilterIndex")
    out = {m: np.empty(len(triples)) for m in modes}
    for start in range(0, len(triples), chunk):
        part = triples[start:start + chunk]
        scores = score_batch(params, part[:, 0], part[:, 1])
        for mode in modes:
            masks = None
            if mode == "filtered":
                masks = np.zeros(scores.shape, dtype=bool)
                for i, (h, r, t) in enumerate(part):
                    masks[i, filter_index.tails(h, r)] = True
                    masks[i, t] = False
            out[mode][start:start + len(part)] = rank_batch(scores, part[:, 2], masks, tie_mode)
    return out


def evaluate(params: ModelParams, triples: np.ndarray, filter_index: FilterIndex | None = None,
             mode: str = "filtered", split: str = "test", tie_mode: str = "mean") -> EvalReport:
    ranks = compute_ranks(params, triples, filter_index, (mode,), tie_mode)[mode]
    return report_from_ranks(ranks, mode, split)


def evaluate_all(params: ModelParams, triples: np.ndarray, filter_index: FilterIndex,
                 split: str = "test", tie_mode: str = "mean",
                 dump_path: str | Path | None = None) -> list[EvalReport]:
    """Raw and filtered reports from a single scoring pass.

    ``dump_path`` writes a TSV of ``h, r, t, rank`` (filtered ranks).
    """
    ranks = compute_ranks(params, triples, filter_index, MODES, tie_mode)
    if dump_path is not None:
        dump_ranks(triples, ranks["filtered"], dump_path)
    return [report_from_ranks(ranks[m], m, split) for m in MODES]


def dump_ranks(triples: np.ndarray, ranks: np.ndarray, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("h\tr\tt\trank\n")
        for (h, r, t), rank in zip(np.asarray(triples).reshape(-1, 3), ranks):
            fh.write(f"{h}\t{r}\t{t}\t{rank:g}\n")
