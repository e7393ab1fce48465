"""Non-adversarial perturbations of mini-batches and embedding tables.

Three surfaces are supported. ``gp`` replaces the head or the relation of
selected examples with a random in-vocabulary one. ``lp`` inverts the whole
label vector of selected examples. ``pp`` adds uniform noise to the head or
relation embedding row of selected examples. In every case a fraction ``k``
of the batch is selected and a fair coin decides head versus relation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kg_core import MiniBatch
from .models import ModelParams

SURFACES = ("none", "gp", "lp", "pp")
PP_MODES = ("persistent", "transient")
PAPER_RATIOS = (0.0, 0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64)


@dataclass(frozen=True)
class NoiseSpec:
    distribution: str = "uniform"
    low: float = -0.1
    high: float = 0.1

    def __post_init__(self):
        if self.distribution != "uniform":
            raise ValueError(f"unsupported noise distribution {self.distribution!r}")
        if not self.low < self.high:
            raise ValueError("noise low must be < high")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=size)


@dataclass(frozen=True)
class AttackConfig:
    surface: str = "none"
    ratio: float = 0.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    pp_mode: str = "persistent"
    seed: int = 0

    def __post_init__(self):
        if self.surface not in SURFACES:
            raise ValueError(f"unknown attack surface {self.surface!r}; expected one of {SURFACES}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"ratio must lie in [0, 1], got {self.ratio}")
        if self.pp_mode not in PP_MODES:
            raise ValueError(f"unknown pp_mode {self.pp_mode!r}")


def num_selected(n: int, k: float) -> int:
    # half-up rounding of k * n
    return min(n, int(math.floor(k * n + 0.5)))


def select_subset(n: int, k: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices of ``round(k * n)`` examples drawn without replacement."""
    if not 0.0 <= k <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {k}")
    count = num_selected(n, k)
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    return np.sort(rng.choice(n, size=count, replace=False)).astype(np.int64)


def _coin(rng: np.random.Generator, size: int) -> np.ndarray:
    """xi: True means the relation is attacked, False the head."""
    return rng.random(size) < 0.5


def perturb_graph(batch: MiniBatch, k: float, num_entities: int, num_relations: int,
                  rng: np.random.Generator) -> MiniBatch:
    out = batch.copy()
    sel = select_subset(len(batch), k, rng)
    if len(sel) == 0:
        return out
    on_rel = _coin(rng, len(sel))
    new_heads = rng.integers(0, num_entities, size=len(sel))
    new_rels = rng.integers(0, num_relations, size=len(sel))
    out.heads[sel[~on_rel]] = new_heads[~on_rel]
    out.relations[sel[on_rel]] = new_rels[on_rel]
    return out


def perturb_labels(batch: MiniBatch, k: float, rng: np.random.Generator,
                   selection: np.ndarray | None = None) -> MiniBatch:
    """Invert every label bit of the selected examples.

    ``selection`` overrides the random draw, which makes the transform an
    involution for a fixed selection.
    """
    out = batch.copy()
    sel = select_subset(len(batch), k, rng) if selection is None else selection
    out.labels[sel] = ~out.labels[sel]
    return out


@dataclass
class ParamPerturbation:
    """Record of one parameter perturbation: which rows received which noise."""

    selected: np.ndarray
    on_relation: np.ndarray
    noise: list[np.ndarray]


def perturb_params(params: ModelParams, batch: MiniBatch, k: float, noise: NoiseSpec,
                   pp_mode: str, rng: np.random.Generator,
                   record: list | None = None) -> tuple[ModelParams, MiniBatch]:
    """Add noise vectors to the head or relation rows of selected examples.

    In persistent mode the noise is written into ``params`` in place. In
    transient mode ``params`` is untouched and the noise rides on the returned
    batch as forward-pass offsets.
    """
    if pp_mode not in PP_MODES:
        raise ValueError(f"unknown pp_mode {pp_mode!r}")
    out = batch.copy()
    sel = select_subset(len(batch), k, rng)
    if len(sel) == 0:
        return params, out
    on_rel = _coin(rng, len(sel))
    draws = [noise.sample(rng, params.relation.shape[1] if rel else params.dim) for rel in on_rel]
    if record is not None:
        record.append(ParamPerturbation(sel, on_rel, draws))

    if pp_mode == "persistent":
        for i, rel, q in zip(sel, on_rel, draws):
            if rel:
                params.relation[batch.relations[i]] += q
            else:
                params.entity[batch.heads[i]] += q
        return params, out

    head_off = np.zeros((len(batch), params.dim)) if out.head_offset is None else out.head_offset
    rel_off = np.zeros((len(batch), params.relation.shape[1])) if out.rel_offset is None else out.rel_offset
    for i, rel, q in zip(sel, on_rel, draws):
        if rel:
            rel_off[i] += q
        else:
            head_off[i] += q
    out.head_offset, out.rel_offset = head_off, rel_off
    return params, out


def apply_attack(config: AttackConfig, batch: MiniBatch, params: ModelParams,
                 rng: np.random.Generator) -> tuple[MiniBatch, ModelParams]:
    """Apply the configured surface to one batch.

    ``rng`` must be a fresh stream for this (epoch, batch) so that selections
    are redrawn every epoch.
    """
    if config.surface not in SURFACES:
        raise ValueError(f"unknown attack surface {config.surface!r}")
    if config.surface == "none" or config.ratio == 0.0:
        return batch, params
    if config.surface == "gp":
        return perturb_graph(batch, config.ratio, params.num_entities, params.num_relations, rng), params
    if config.surface == "lp":
        return perturb_labels(batch, config.ratio, rng), params
    if config.surface == "pp":
        params, batch = perturb_params(params, batch, config.ratio, config.noise, config.pp_mode, rng)
        return batch, params
    raise ValueError(f"unknown attack surface {config.surface!r}")


def lp_faulty_triples(num_examples: int, num_entities: int, rate: float) -> float:
    """Expected label flips (mostly false positives) when ``rate`` of examples are inverted."""
    return rate * num_examples * num_entities
