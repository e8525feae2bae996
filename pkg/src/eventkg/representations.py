"""Latent vectors for generalized entities.

An entity class either owns a directly learned :class:`EmbeddingTable` or an
:class:`MMapMatrix` that projects the entity's flattened tensor slice onto
its latent vector.  M-maps make embeddings computable online, for new
subjects and for time steps that were never seen in training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor_store import EventTensor, SliceVector, slice_subject_time

SUBJECT = "subject"
PREDICATE = "predicate"
OBJECT = "object"
TIME = "time"
SUBJECT_TIME = "subject_time"

DEFAULT_MAX_COLUMNS = 5_000_000


def init_matrix(rng, shape, fan_in):
    return rng.normal(0.0, 1.0 / np.sqrt(max(fan_in, 1)), size=shape)


@dataclass
class EmbeddingTable:
    cls: str
    vectors: np.ndarray
    trainable: bool = True

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim != 2:
            raise ShapeError("embedding table must be 2-D (count x rank)")

    @property
    def rank(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, index: int) -> np.ndarray:
        if not 0 <= index < len(self.vectors):
            raise IndexError(f"{self.cls} index {index} out of range [0, {len(self.vectors)})")
        return self.vectors[index]

    @classmethod
    def random(cls, kind, count, rank, rng):
        return cls(kind, init_matrix(rng, (count, rank), rank))


@dataclass
class MMapMatrix:
    cls: str
    weights: np.ndarray
    max_columns: int = field(default=DEFAULT_MAX_COLUMNS, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise ShapeError("M-map must be 2-D (rank x columns)")
        if self.weights.shape[1] > self.max_columns:
            raise ConfigError(
                f"M-map with {self.weights.shape[1]} columns exceeds the limit of "
                f"{self.max_columns}; use a trainable table instead"
            )

    @property
    def rank(self) -> int:
        return self.weights.shape[0]

    @property
    def columns(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def random(cls, kind, rank, columns, rng, max_columns=DEFAULT_MAX_COLUMNS):
        if columns > max_columns:
            raise ConfigError(
                f"M-map with {columns} columns exceeds the limit of {max_columns}"
            )
        return cls(kind, init_matrix(rng, (rank, columns), columns), max_columns)


def mmap_embed(M: MMapMatrix, x) -> np.ndarray:
    """Latent vector ``M x``; unobserved cells contribute nothing."""
    values = x.values * x.mask if isinstance(x, SliceVector) else np.asarray(x, dtype=float)
    if values.shape != (M.columns,):
        raise ShapeError(f"slice length {values.shape} != M-map columns {M.columns}")
    return M.weights @ values


def window_embeddings(ev: EventTensor, M: MMapMatrix, s: int, t: int, T: int) -> list[np.ndarray]:
    """Embeddings of ``z_{s,:,:,t-k}`` for ``k = 0..T``; zero vectors before time 0."""
    if T < 0:
        raise ValueError("window length must be non-negative")
    if not 0 <= s < ev.vocab.S:
        raise IndexError(f"subject index {s} out of range [0, {ev.vocab.S})")
    if not 0 <= t < ev.horizon:
        raise IndexError(f"time {t} out of range [0, {ev.horizon})")
    out = []
    for k in range(T + 1):
        if t - k < 0:
            out.append(np.zeros(M.rank))
        else:
            out.append(mmap_embed(M, slice_subject_time(ev, s, t - k)))
    return out


def network_slice(ev: EventTensor, t: int) -> np.ndarray:
    """Flattened all-subject slice ``z_{:,:,:,t}`` of length ``S*P*O``."""
    if not 0 <= t < ev.horizon:
        raise IndexError(f"time {t} out of range [0, {ev.horizon})")
    PO, O = ev.vocab.slice_size, ev.vocab.O
    x = np.zeros(ev.vocab.S * PO)
    for rec in ev.at_time(t):
        x[rec.s * PO + rec.p * O + rec.o] = rec.value
    return x


def time_embedding(ev: EventTensor, M_time, t: int) -> np.ndarray:
    """Embedding of time step ``t``.

    ``M_time`` is either an M-map over the all-subject slice or a trainable
    :class:`EmbeddingTable` indexed by ``t``.
    """
    if isinstance(M_time, EmbeddingTable):
        if not 0 <= t < ev.horizon:
            raise IndexError(f"time {t} out of range [0, {ev.horizon})")
        return M_time.lookup(t)
    x = network_slice(ev, t)
    if x.shape[0] != M_time.columns:
        raise ShapeError(f"network slice length {x.shape[0]} != M-map columns {M_time.columns}")
    return M_time.weights @ x
