"""Scoring functions, BCE objective and analytic gradients for the five KGE models.

DistMult, ComplEx, QMult and Keci all share one shape: the head and relation
embeddings are multiplied in some algebra to give a query vector ``q``, and
the score of tail ``t`` is the plain dot product ``<q, t>``. The algebra is
described by a structure tensor ``S`` with ``q_k = sum_ij S[i,j,k] h_i r_j``
over components, so forward and backward passes are single einsums.
Embedding rows are stored component-major: a 32-real ComplEx row is 16 real
parts followed by 16 imaginary parts.

MuRE is a distance model and gets its own path.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .kg_core import MiniBatch

MODEL_NAMES = ("DistMult", "ComplEx", "QMult", "MuRE", "Keci")
INIT_SCALE = 0.1
_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class AlgebraKind:
    name: str
    p: int = 0
    q: int = 1
    normalize_relations: bool = True  # QMult only

    def __post_init__(self):
        if self.name not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.name!r}; expected one of {MODEL_NAMES}")
        if self.name == "Keci" and (self.p < 0 or self.q < 0 or self.p + self.q > 2):
            raise ValueError("Keci supports only p + q <= 2")

    @classmethod
    def parse(cls, text: str) -> "AlgebraKind":
        """Accepts ``distmult``, ``QMult``, ``keci``, ``keci(0,1)`` or ``keci:1:1``."""
        m = re.fullmatch(r"\s*([A-Za-z]+)\s*(?:[(:]\s*(\d+)\s*[,:]\s*(\d+)\s*\)?)?\s*", text)
        if not m:
            raise ValueError(f"cannot parse model {text!r}")
        lookup = {n.lower(): n for n in MODEL_NAMES}
        name = lookup.get(m.group(1).lower())
        if name is None:
            raise ValueError(f"unknown model {text!r}; expected one of {MODEL_NAMES}")
        if m.group(2) is not None:
            if name != "Keci":
                raise ValueError(f"{name} takes no (p, q) parameters")
            return cls(name, int(m.group(2)), int(m.group(3)))
        return cls(name)

    @property
    def label(self) -> str:
        if self.name == "Keci" and (self.p, self.q) != (0, 1):
            return f"Keci({self.p},{self.q})"
        return self.name

    @property
    def components(self) -> int:
        """Number of real components per algebra element."""
        return {"DistMult": 1, "ComplEx": 2, "QMult": 4, "MuRE": 1}.get(self.name) or 2 ** (self.p + self.q)

    def relation_width(self, dim: int) -> int:
        return 2 * dim if self.name == "MuRE" else dim


def _blade_product(a: int, b: int, p: int) -> tuple[int, int]:
    """Product of two basis blades given as generator bitmasks.

    Generators with index < p square to +1, the rest to -1.
    """
    swaps = 0
    x = a >> 1
    while x:
        swaps += bin(x & b).count("1")
        x >>= 1
    sign = -1 if swaps % 2 else 1
    common = a & b
    i = 0
    while common:
        if common & 1 and i >= p:
            sign = -sign
        common >>= 1
        i += 1
    return sign, a ^ b


@lru_cache(maxsize=None)
def clifford_structure(p: int, q: int) -> np.ndarray:
    """Structure tensor of Cl(p, q) over blades in bitmask order (1, e1, e2, e12, ...)."""
    n = 2 ** (p + q)
    s = np.zeros((n, n, n))
    for i in range(n):
        for j in range(n):
            sign, k = _blade_product(i, j, p)
            s[i, j, k] = sign
    s.setflags(write=False)
    return s


def structure_tensor(kind: AlgebraKind) -> np.ndarray:
    if kind.name == "DistMult":
        return clifford_structure(0, 0)
    if kind.name == "ComplEx":
        return clifford_structure(0, 1)
    if kind.name == "QMult":
        # Cl(0,2) with (1, e1, e2, e12) is the quaternions with (1, i, j, k)
        return clifford_structure(0, 2)
    if kind.name == "Keci":
        return clifford_structure(kind.p, kind.q)
    raise ValueError(f"{kind.name} has no multiplicative structure")


@dataclass
class ModelParams:
    kind: AlgebraKind
    entity: np.ndarray
    relation: np.ndarray
    bias: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.entity.shape[1]

    @property
    def num_entities(self) -> int:
        return self.entity.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relation.shape[0]

    def tables(self) -> dict[str, np.ndarray]:
        out = {"entity": self.entity, "relation": self.relation}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(self.kind, self.entity.copy(), self.relation.copy(),
                           None if self.bias is None else self.bias.copy())

    def equals(self, other: "ModelParams") -> bool:
        a, b = self.tables(), other.tables()
        return self.kind == other.kind and a.keys() == b.keys() and all(
            np.array_equal(a[k], b[k]) for k in a
        )


def init_params(kind: AlgebraKind, num_entities: int, num_relations: int,
                rng: np.random.Generator, dim: int = 32) -> ModelParams:
    if num_entities < 1 or num_relations < 1 or dim < 1:
        raise ValueError("sizes must be positive")
    if dim % kind.components:
        raise ValueError(f"{kind.label} needs dim divisible by {kind.components}, got {dim}")
    entity = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(num_entities, dim))
    relation = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(num_relations, kind.relation_width(dim)))
    bias = np.zeros(num_entities) if kind.name == "MuRE" else None
    return ModelParams(kind, entity, relation, bias)


@dataclass
class GradientBuffer:
    """Row-sparse gradients: for each table, the touched row ids and their gradients."""

    rows: dict[str, np.ndarray] = field(default_factory=dict)
    values: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, rows: np.ndarray, values: np.ndarray) -> None:
        self.rows[name] = rows
        self.values[name] = values

    def dense(self, name: str, shape) -> np.ndarray:
        out = np.zeros(shape)
        if name in self.rows:
            out[self.rows[name]] = self.values[name]
        return out


def _scatter_rows(index: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rows, inverse = np.unique(index, return_inverse=True)
    acc = np.zeros((len(rows),) + values.shape[1:])
    np.add.at(acc, inverse, values)
    return rows, acc


def _gather(params: ModelParams, heads, relations, head_offset=None, rel_offset=None):
    h = params.entity[heads]
    r = params.relation[relations]
    if head_offset is not None:
        h = h + head_offset
    if rel_offset is not None:
        r = r + rel_offset
    return h, r


def _normalize_quaternions(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # r: (m, 4, k); norm over the 4 quaternion components
    norm = np.maximum(np.sqrt(np.sum(r * r, axis=1, keepdims=True)), _NORM_FLOOR)
    return r / norm, norm


def _query_forward(kind: AlgebraKind, h: np.ndarray, r: np.ndarray):
    m, d = h.shape
    c = kind.components
    hc = h.reshape(m, c, d // c)
    rc = r.reshape(m, c, d // c)
    norm = None
    if kind.name == "QMult" and kind.normalize_relations:
        rc, norm = _normalize_quaternions(rc)
    s = structure_tensor(kind)
    q = np.einsum("ijk,mia,mja->mka", s, hc, rc).reshape(m, d)
    return q, (hc, rc, norm)


def _query_backward(kind: AlgebraKind, cache, dq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hc, rc, norm = cache
    m, c, k = hc.shape
    s = structure_tensor(kind)
    g = dq.reshape(m, c, k)
    dh = np.einsum("ijk,mja,mka->mia", s, rc, g)
    dr = np.einsum("ijk,mia,mka->mja", s, hc, g)
    if norm is not None:
        # rc holds the unit quaternions here
        dr = (dr - rc * np.sum(rc * dr, axis=1, keepdims=True)) / norm
    return dh.reshape(m, c * k), dr.reshape(m, c * k)


def _mure_split(params: ModelParams, r: np.ndarray):
    d = params.dim
    return r[:, :d], r[:, d:]


def score_batch(params: ModelParams, heads, relations, head_offset=None, rel_offset=None) -> np.ndarray:
    """Scores of every entity as tail for each ``(head, relation)``: shape ``(m, |E|)``."""
    heads = np.atleast_1d(np.asarray(heads, dtype=np.int64))
    relations = np.atleast_1d(np.asarray(relations, dtype=np.int64))
    h, r = _gather(params, heads, relations, head_offset, rel_offset)
    if params.kind.name == "MuRE":
        rho, tau = _mure_split(params, r)
        u = rho * h - tau
        ent = params.entity
        return (2.0 * u @ ent.T - np.sum(u * u, axis=1)[:, None] - np.sum(ent * ent, axis=1)[None, :]
                + params.bias[heads][:, None] + params.bias[None, :])
    q, _ = _query_forward(params.kind, h, r)
    return q @ params.entity.T


def score_all_tails(params: ModelParams, h: int, r: int) -> np.ndarray:
    return score_batch(params, [h], [r])[0]


def bce_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy over all ``m * |E|`` logits, in the stable softplus form."""
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: logits {x.shape} vs labels {y.shape}")
    return float(np.mean(np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def loss_and_grad(params: ModelParams, batch: MiniBatch) -> tuple[float, GradientBuffer]:
    """BCE loss of the batch and its gradient w.r.t. every touched parameter row.

    Every entity is a candidate tail, so the whole entity table (and MuRE bias)
    is always touched; relation rows are limited to those in the batch.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    kind = params.kind
    heads, rels = batch.heads, batch.relations
    h, r = _gather(params, heads, rels, batch.head_offset, batch.rel_offset)
    ent = params.entity
    m, n_ent = len(heads), params.num_entities
    grads = GradientBuffer()

    if kind.name == "MuRE":
        rho, tau = _mure_split(params, r)
        u = rho * h - tau
        logits = (2.0 * u @ ent.T - np.sum(u * u, axis=1)[:, None] - np.sum(ent * ent, axis=1)[None, :]
                  + params.bias[heads][:, None] + params.bias[None, :])
        loss = bce_loss(logits, batch.labels)
        g = (sigmoid(logits) - batch.labels) / (m * n_ent)
        g_row = g.sum(axis=1)
        g_col = g.sum(axis=0)
        du = 2.0 * (g @ ent) - 2.0 * g_row[:, None] * u
        d_ent = 2.0 * (g.T @ u) - 2.0 * g_col[:, None] * ent
        np.add.at(d_ent, heads, du * rho)
        d_rel = np.concatenate([du * h, -du], axis=1)
        d_bias = g_col.copy()
        np.add.at(d_bias, heads, g_row)
        grads.add("bias", np.arange(n_ent), d_bias)
    else:
        q, cache = _query_forward(kind, h, r)
        logits = q @ ent.T
        loss = bce_loss(logits, batch.labels)
        g = (sigmoid(logits) - batch.labels) / (m * n_ent)
        dq = g @ ent
        d_ent = g.T @ q
        dh, d_rel = _query_backward(kind, cache, dq)
        np.add.at(d_ent, heads, dh)

    grads.add("entity", np.arange(n_ent), d_ent)
    rel_rows, rel_vals = _scatter_rows(rels, d_rel)
    grads.add("relation", rel_rows, rel_vals)
    return loss, grads
