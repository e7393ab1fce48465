"""Triple ingestion, vocabularies and the KvsAll training dataset."""
from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
INVERSE_SUFFIX = "_inverse"

StringTriple = tuple[str, str, str]


class DatasetFormatError(ValueError):
    pass


def load_split(path: str | Path) -> list[StringTriple]:
    """Read a tab-separated triple file, one ``head<TAB>relation<TAB>tail`` per line."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"triple file not found: {path}")
    triples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            triples.append((fields[0], fields[1], fields[2]))
    return triples


@dataclass(frozen=True)
class Vocab:
    entities: tuple[str, ...]
    relations: tuple[str, ...]
    entity_to_id: dict[str, int] = field(init=False, repr=False, compare=False)
    relation_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entity_to_id", {e: i for i, e in enumerate(self.entities)})
        object.__setattr__(self, "relation_to_id", {r: i for i, r in enumerate(self.relations)})
        if len(self.entity_to_id) != len(self.entities) or len(self.relation_to_id) != len(self.relations):
            raise ValueError("vocabulary contains duplicate names")

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def encode(self, triple: StringTriple) -> tuple[int, int, int]:
        h, r, t = triple
        return self.entity_to_id[h], self.relation_to_id[r], self.entity_to_id[t]

    def decode(self, triple) -> StringTriple:
        h, r, t = (int(x) for x in triple)
        return self.entities[h], self.relations[r], self.entities[t]

    def digest(self) -> str:
        """Stable hash of the ordered entity and relation names."""
        m = hashlib.sha256()
        for name in self.entities:
            m.update(name.encode("utf-8") + b"\x00")
        m.update(b"\x01")
        for name in self.relations:
            m.update(name.encode("utf-8") + b"\x00")
        return m.hexdigest()[:16]

    @classmethod
    def from_triples(cls, *splits: Sequence[StringTriple]) -> "Vocab":
        # dicts keep first-appearance order
        ents: dict[str, None] = {}
        rels: dict[str, None] = {}
        for split in splits:
            for h, r, t in split:
                ents.setdefault(h)
                rels.setdefault(r)
                ents.setdefault(t)
        return cls(tuple(ents), tuple(rels))


@dataclass(frozen=True)
class KnowledgeGraph:
    """Integer-encoded train/valid/test splits over a shared vocabulary.

    Each split is an ``(n, 3)`` int64 array of ``(head, relation, tail)`` rows.
    """

    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    vocab: Vocab
    name: str = ""
    duplicates_dropped: dict[str, int] = field(default_factory=dict)

    @property
    def num_entities(self) -> int:
        return self.vocab.num_entities

    @property
    def num_relations(self) -> int:
        return self.vocab.num_relations

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)


def _encode_unique(triples: Sequence[StringTriple], vocab: Vocab, split: str) -> tuple[np.ndarray, int]:
    seen: dict[tuple[int, int, int], None] = {}
    for tr in triples:
        seen.setdefault(vocab.encode(tr))
    dropped = len(triples) - len(seen)
    if dropped:
        log.warning("%s: dropped %d duplicate triples", split, dropped)
    arr = np.array(list(seen), dtype=np.int64).reshape(-1, 3)
    return arr, dropped


def build_graph(
    train: Sequence[StringTriple],
    valid: Sequence[StringTriple] = (),
    test: Sequence[StringTriple] = (),
    name: str = "",
) -> KnowledgeGraph:
    vocab = Vocab.from_triples(train, valid, test)
    arrays = {}
    dropped = {}
    for split, triples in zip(SPLITS, (train, valid, test)):
        arrays[split], dropped[split] = _encode_unique(triples, vocab, split)
    return KnowledgeGraph(vocab=vocab, name=name, duplicates_dropped=dropped, **arrays)


def load_dataset(directory: str | Path) -> KnowledgeGraph:
    """Load ``train.txt``, ``valid.txt`` and ``test.txt`` from a dataset directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    splits = [load_split(directory / f"{s}.txt") for s in SPLITS]
    return build_graph(*splits, name=directory.name)


def add_reciprocals(graph: KnowledgeGraph) -> KnowledgeGraph:
    """Append an inverse relation per relation and the inverse of every triple.

    Relation ``r`` gets inverse id ``r + |R|``.
    """
    nrel = graph.num_relations
    relations = graph.vocab.relations + tuple(r + INVERSE_SUFFIX for r in graph.vocab.relations)
    vocab = Vocab(graph.vocab.entities, relations)

    def augment(arr):
        inv = np.stack([arr[:, 2], arr[:, 1] + nrel, arr[:, 0]], axis=1)
        return np.concatenate([arr, inv]).astype(np.int64)

    return KnowledgeGraph(
        train=augment(graph.train),
        valid=augment(graph.valid),
        test=augment(graph.test),
        vocab=vocab,
        name=graph.name,
        duplicates_dropped=dict(graph.duplicates_dropped),
    )


@dataclass(frozen=True)
class KvsAllExample:
    x: tuple[int, int]
    y: np.ndarray  # bool, length |E|


class KvsAllDataset:
    """Unique ``(head, relation)`` pairs with their sets of true tails.

    Tail sets are stored CSR-style (``indptr``/``tails``) so that large graphs
    never materialise the full ``|D| x |E|`` label matrix; dense label rows are
    built per batch.
    """

    def __init__(self, pairs: np.ndarray, indptr: np.ndarray, tails: np.ndarray, num_entities: int):
        self.pairs = pairs
        self.indptr = indptr
        self.tails = tails
        self.num_entities = num_entities
        for arr in (pairs, indptr, tails):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, i: int) -> KvsAllExample:
        h, r = self.pairs[i]
        return KvsAllExample((int(h), int(r)), self.labels(np.array([i]))[0])

    def tails_of(self, i: int) -> np.ndarray:
        return self.tails[self.indptr[i]:self.indptr[i + 1]]

    def labels(self, idx: np.ndarray) -> np.ndarray:
        """Dense boolean label rows for the examples ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        y = np.zeros((len(idx), self.num_entities), dtype=bool)
        counts = self.indptr[idx + 1] - self.indptr[idx]
        rows = np.repeat(np.arange(len(idx)), counts)
        starts = np.repeat(self.indptr[idx], counts)
        offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        y[rows, self.tails[starts + offsets]] = True
        return y

    def num_positive_labels(self) -> int:
        return int(len(self.tails))


def build_kvsall(train: np.ndarray, num_entities: int) -> KvsAllDataset:
    """Group training triples by ``(head, relation)``; pairs are sorted."""
    train = np.unique(np.asarray(train, dtype=np.int64).reshape(-1, 3), axis=0)
    if len(train) == 0:
        empty = np.zeros((0, 2), dtype=np.int64)
        return KvsAllDataset(empty, np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64), num_entities)
    # np.unique sorts lexicographically, so equal (h, r) rows are contiguous
    hr = train[:, :2]
    new_pair = np.ones(len(train), dtype=bool)
    new_pair[1:] = np.any(hr[1:] != hr[:-1], axis=1)
    starts = np.flatnonzero(new_pair)
    indptr = np.append(starts, len(train)).astype(np.int64)
    return KvsAllDataset(hr[starts].copy(), indptr, train[:, 2].copy(), num_entities)


@dataclass
class MiniBatch:
    """A KvsAll mini-batch, possibly carrying transient embedding offsets.

    ``head_offset`` / ``rel_offset`` are added to the gathered embedding rows
    during the forward pass only; they are set by transient parameter
    perturbation and are ``None`` otherwise.
    """

    heads: np.ndarray
    relations: np.ndarray
    labels: np.ndarray
    epoch: int = 0
    index: int = 0
    example_ids: np.ndarray | None = None
    head_offset: np.ndarray | None = None
    rel_offset: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.heads)

    def copy(self) -> "MiniBatch":
        def c(a):
            return None if a is None else a.copy()

        return MiniBatch(
            self.heads.copy(), self.relations.copy(), self.labels.copy(), self.epoch, self.index,
            c(self.example_ids), c(self.head_offset), c(self.rel_offset),
        )

    @property
    def examples(self) -> list[KvsAllExample]:
        return [KvsAllExample((int(h), int(r)), y) for h, r, y in zip(self.heads, self.relations, self.labels)]


def batches(dataset: KvsAllDataset, batch_size: int, rng: np.random.Generator, epoch: int = 0) -> Iterator[MiniBatch]:
    """Yield one epoch of shuffled mini-batches; the last one may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(dataset))
    for b, start in enumerate(range(0, len(order), batch_size)):
        idx = order[start:start + batch_size]
        yield MiniBatch(
            heads=dataset.pairs[idx, 0].copy(),
            relations=dataset.pairs[idx, 1].copy(),
            labels=dataset.labels(idx),
            epoch=epoch,
            index=b,
            example_ids=idx,
        )


def num_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


@dataclass(frozen=True)
class DatasetStats:
    dataset: str
    num_entities: int
    num_relations: int
    train: int
    valid: int
    test: int
    train_degree: float
    kvsall_examples: int

    CSV_COLUMNS = ("dataset", "num_entities", "num_relations", "train", "valid", "test", "train_degree")

    def csv_row(self) -> list:
        return [self.dataset, self.num_entities, self.num_relations, self.train, self.valid,
                self.test, f"{self.train_degree:.4f}"]


def degree_stats(graph: KnowledgeGraph) -> DatasetStats:
    """Split sizes and training edges per entity."""
    return DatasetStats(
        dataset=graph.name,
        num_entities=graph.num_entities,
        num_relations=graph.num_relations,
        train=len(graph.train),
        valid=len(graph.valid),
        test=len(graph.test),
        train_degree=len(graph.train) / graph.num_entities,
        kvsall_examples=len(build_kvsall(graph.train, graph.num_entities)),
    )


def write_stats_csv(stats: Sequence[DatasetStats], out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(DatasetStats.CSV_COLUMNS)
    for s in stats:
        writer.writerow(s.csv_row())
