"""KvsAll training loop with attack hooks, sparse Adam and checkpoints."""
from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, apply_attack
from .kg_core import KnowledgeGraph, batches, build_kvsall
from .models import AlgebraKind, GradientBuffer, ModelParams, init_params, loss_and_grad

log = logging.getLogger(__name__)

# purpose codes for derived random streams
INIT, SHUFFLE, ATTACK = 0, 1, 2
_SEED_MASK = (1 << 64) - 1


def stream(seed: int, *counters: int) -> np.random.Generator:
    """Independent generator for ``(seed, purpose, epoch, batch, ...)``."""
    return np.random.default_rng(np.random.SeedSequence([seed & _SEED_MASK, *counters]))


@dataclass(frozen=True)
class TrainConfig:
    model: AlgebraKind = field(default_factory=lambda: AlgebraKind("DistMult"))
    lr: float = 0.1
    epochs: int = 100
    batch_size: int = 1024
    dim: int = 32
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    attack: AttackConfig = field(default_factory=AttackConfig)
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1 or self.dim < 1:
            raise ValueError("lr, epochs, batch_size and dim must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    losses: list[float]
    wall_seconds: float
    params: ModelParams


class TrainingDivergence(RuntimeError):
    pass


class SGD:
    def __init__(self, params: ModelParams, lr: float):
        self.lr = lr

    def step(self, params: ModelParams, grads: GradientBuffer) -> None:
        tables = params.tables()
        for name, rows in grads.rows.items():
            tables[name][rows] -= self.lr * grads.values[name]


class SparseAdam:
    """Adam whose moments and bias-correction step counts are kept per row.

    Only rows present in the gradient buffer are updated, so rows that are
    not touched by a batch keep both their values and their optimizer state.
    """

    def __init__(self, params: ModelParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.tables().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tables().items()}
        self.steps = {k: np.zeros(v.shape[0], dtype=np.int64) for k, v in params.tables().items()}

    def step(self, params: ModelParams, grads: GradientBuffer) -> None:
        tables = params.tables()
        for name, rows in grads.rows.items():
            g = grads.values[name]
            self.steps[name][rows] += 1
            t = self.steps[name][rows].astype(np.float64).reshape((-1,) + (1,) * (g.ndim - 1))
            m = self.beta1 * self.m[name][rows] + (1 - self.beta1) * g
            v = self.beta2 * self.v[name][rows] + (1 - self.beta2) * g * g
            self.m[name][rows] = m
            self.v[name][rows] = v
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            tables[name][rows] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: TrainConfig, params: ModelParams):
    if config.optimizer == "sgd":
        return SGD(params, config.lr)
    return SparseAdam(params, config.lr, config.beta1, config.beta2, config.eps)


def train(graph: KnowledgeGraph, config: TrainConfig, params: ModelParams | None = None,
          ) -> tuple[ModelParams, TrainReport]:
    """Train ``config.model`` on the graph's training split.

    Shuffling and initialisation draw from streams keyed on ``config.seed``;
    attack draws use ``config.attack.seed``. Changing the attack therefore
    never changes the batch order.
    """
    start = time.perf_counter()
    dataset = build_kvsall(graph.train, graph.num_entities)
    if len(dataset) == 0:
        raise ValueError("training split is empty")
    if params is None:
        params = init_params(config.model, graph.num_entities, graph.num_relations,
                             stream(config.seed, INIT), config.dim)
    optimizer = make_optimizer(config, params)
    losses = []
    for epoch in range(config.epochs):
        total = 0.0
        for batch in batches(dataset, config.batch_size, stream(config.seed, SHUFFLE, epoch), epoch):
            rng = stream(config.attack.seed, ATTACK, epoch, batch.index)
            batch, params = apply_attack(config.attack, batch, params, rng)
            loss, grads = loss_and_grad(params, batch)
            if not np.isfinite(loss):
                raise TrainingDivergence(
                    f"non-finite loss at epoch {epoch}, batch {batch.index}, model {config.model.label}"
                )
            optimizer.step(params, grads)
            total += loss * len(batch)
        losses.append(total / len(dataset))
        log.debug("epoch %d loss %.6f", epoch, losses[-1])
    return params, TrainReport(losses, time.perf_counter() - start, params)


_MAGIC = b"KGECKPT1"


class CheckpointError(ValueError):
    pass


def checkpoint(params: ModelParams, path: str | Path, vocab_hash: str = "") -> None:
    """Write a JSON header followed by little-endian float64 tables, row-major."""
    tables = params.tables()
    header = {
        "format": "kgattack-checkpoint",
        "version": 1,
        "kind": {"name": params.kind.name, "p": params.kind.p, "q": params.kind.q,
                 "normalize_relations": params.kind.normalize_relations},
        "dim": params.dim,
        "num_entities": params.num_entities,
        "num_relations": params.num_relations,
        "vocab_hash": vocab_hash,
        "tables": [{"name": k, "shape": list(v.shape)} for k, v in tables.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in tables.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_header(path: str | Path) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        head = fh.read(len(_MAGIC) + 8)
        if len(head) < len(_MAGIC) + 8 or head[:len(_MAGIC)] != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<Q", head[len(_MAGIC):])
        blob = fh.read(n)
    if len(blob) != n:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    return header, len(_MAGIC) + 8 + n


def restore(path: str | Path, vocab_hash: str | None = None) -> ModelParams:
    header, offset = read_header(path)
    if vocab_hash is not None and header.get("vocab_hash") != vocab_hash:
        raise CheckpointError(
            f"{path}: vocabulary hash {header.get('vocab_hash')!r} does not match {vocab_hash!r}"
        )
    try:
        k = header["kind"]
        kind = AlgebraKind(k["name"], k["p"], k["q"], k["normalize_relations"])
        specs = header["tables"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    raw = Path(path).read_bytes()[offset:]
    expected = sum(8 * int(np.prod(s["shape"])) for s in specs)
    if len(raw) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes of tables, found {len(raw)}")
    tables = {}
    pos = 0
    for s in specs:
        size = 8 * int(np.prod(s["shape"]))
        tables[s["name"]] = np.frombuffer(raw[pos:pos + size], dtype="<f8").reshape(s["shape"]).astype(np.float64)
        pos += size
    return ModelParams(kind, tables["entity"], tables["relation"], tables.get("bias"))
