"""Sparse storage for the knowledge-graph tensor X and the event tensor Z.

Both tensors keep only observed cells.  Slices are flattened in row-major
``(p, o)`` order, i.e. cell ``(p, o)`` lives at flat index ``p * O + o``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .errors import SchemaError

BINARY = "binary"
REAL = "real"


class Labels:
    """Ordered label <-> dense index bijection."""

    def __init__(self, labels: Iterable[str] = ()):
        self._labels: list[str] = []
        self._index: dict[str, int] = {}
        for label in labels:
            self.add(label)

    def add(self, label: str) -> int:
        if label in self._index:
            return self._index[label]
        self._index[label] = len(self._labels)
        self._labels.append(label)
        return self._index[label]

    def lookup(self, label: str) -> int:
        return self._index[label]

    def label(self, index: int) -> str:
        if not 0 <= index < len(self._labels):
            raise IndexError(f"index {index} out of range [0, {len(self._labels)})")
        return self._labels[index]

    def __contains__(self, label) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self._labels)

    def __iter__(self):
        return iter(self._labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, Labels) and self._labels == other._labels

    def tolist(self) -> list[str]:
        return list(self._labels)


@dataclass
class PredicateInfo:
    kind: str = BINARY
    kg_bearing: bool = True


class Vocab:
    """Subject, predicate and object vocabularies plus per-predicate schema.

    Each predicate declares a value kind (``"binary"`` or ``"real"``) and
    whether its events are absorbed into the KG (``kg_bearing``).
    """

    def __init__(self, subjects=(), predicates=(), objects=(), info=None):
        self.subjects = Labels(subjects)
        self.predicates = Labels(predicates)
        self.objects = Labels(objects)
        self.info: dict[int, PredicateInfo] = {}
        info = info or {}
        for p, label in enumerate(self.predicates):
            self.info[p] = info.get(label, PredicateInfo())

    @property
    def S(self) -> int:
        return len(self.subjects)

    @property
    def P(self) -> int:
        return len(self.predicates)

    @property
    def O(self) -> int:  # noqa: E743
        return len(self.objects)

    @property
    def slice_size(self) -> int:
        return self.P * self.O

    def add_predicate(self, label: str, kind: str = BINARY, kg_bearing: bool = True) -> int:
        if kind not in (BINARY, REAL):
            raise SchemaError(f"unknown value kind {kind!r}")
        known = label in self.predicates
        p = self.predicates.add(label)
        if not known:
            self.info[p] = PredicateInfo(kind, kg_bearing)
        return p

    def kind(self, p: int) -> str:
        return self.info[p].kind

    def flat(self, p: int, o: int) -> int:
        return p * self.O + o

    def unflat(self, j: int) -> tuple[int, int]:
        return divmod(int(j), self.O)

    def check(self, s: int, p: int, o: int, value) -> None:
        for name, idx, n in (("subject", s, self.S), ("predicate", p, self.P), ("object", o, self.O)):
            if not 0 <= idx < n:
                raise IndexError(f"{name} index {idx} out of range [0, {n})")
        kind = self.info[p].kind
        if kind == BINARY and value not in (0, 1):
            raise SchemaError(
                f"predicate {self.predicates.label(p)!r} is binary, got value {value!r}"
            )
        if not np.isfinite(float(value)):
            raise SchemaError(f"non-finite value {value!r}")

    def to_dict(self) -> dict:
        return {
            "subjects": self.subjects.tolist(),
            "objects": self.objects.tolist(),
            "predicates": [
                {"label": lab, "kind": self.info[p].kind, "kg_bearing": self.info[p].kg_bearing}
                for p, lab in enumerate(self.predicates)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        v = cls(d["subjects"], (), d["objects"])
        for rec in d["predicates"]:
            v.add_predicate(rec["label"], rec["kind"], rec["kg_bearing"])
        return v

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.to_dict() == other.to_dict()


@dataclass(frozen=True)
class TripleRecord:
    s: int
    p: int
    o: int
    value: float = 1


@dataclass(frozen=True)
class EventRecord:
    s: int
    p: int
    o: int
    t: int
    value: float = 1


@dataclass
class SliceVector:
    """Flattened ``(p, o)`` slice; unobserved cells are 0 with mask 0."""

    values: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def _dense_slice(cells: dict, vocab: Vocab) -> SliceVector:
    values = np.zeros(vocab.slice_size)
    mask = np.zeros(vocab.slice_size)
    for (p, o), v in cells.items():
        j = p * vocab.O + o
        values[j] = v
        mask[j] = 1.0
    return SliceVector(values, mask)


class KGTensor:
    """Sparse three-way tensor of observed ``(s, p, o) -> value`` facts."""

    def __init__(self, vocab: Vocab):
        self.vocab = vocab
        self.facts: dict[tuple[int, int, int], float] = {}
        self._by_subject: dict[int, dict[tuple[int, int], float]] = {}

    def __len__(self) -> int:
        return len(self.facts)

    def __eq__(self, other) -> bool:
        return isinstance(other, KGTensor) and self.facts == other.facts

    def copy(self) -> "KGTensor":
        out = KGTensor(self.vocab)
        out.facts = dict(self.facts)
        out._by_subject = {s: dict(c) for s, c in self._by_subject.items()}
        return out

    def records(self) -> list[TripleRecord]:
        return [TripleRecord(s, p, o, v) for (s, p, o), v in sorted(self.facts.items())]

    def _set(self, s, p, o, value):
        self.facts[(s, p, o)] = value
        self._by_subject.setdefault(s, {})[(p, o)] = value

    def subject_cells(self, s: int) -> dict[tuple[int, int], float]:
        return self._by_subject.get(s, {})

    def as_csr(self) -> sp.csr_matrix:
        """All subject slices as an ``S x (P*O)`` sparse matrix."""
        rows, cols, vals = [], [], []
        O = self.vocab.O
        for (s, p, o), v in self.facts.items():
            rows.append(s)
            cols.append(p * O + o)
            vals.append(float(v))
        return sp.csr_matrix(
            (vals, (rows, cols)), shape=(self.vocab.S, self.vocab.slice_size)
        )


class EventTensor:
    """Sparse four-way tensor of ``(s, p, o, t) -> value`` events."""

    def __init__(self, vocab: Vocab, horizon: int):
        if horizon < 0:
            raise ValueError("horizon must be non-negative")
        self.vocab = vocab
        self.horizon = int(horizon)
        self.events: dict[tuple[int, int, int, int], float] = {}
        self._by_st: dict[tuple[int, int], dict[tuple[int, int], float]] = {}
        self._by_t: dict[int, list[tuple[int, int, int]]] = {}

    def __len__(self) -> int:
        return len(self.events)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EventTensor)
            and self.horizon == other.horizon
            and self.events == other.events
        )

    def copy(self) -> "EventTensor":
        out = EventTensor(self.vocab, self.horizon)
        for (s, p, o, t), v in self.events.items():
            out._set(s, p, o, t, v)
        return out

    def _set(self, s, p, o, t, value):
        key = (s, p, o, t)
        if key not in self.events:
            self._by_t.setdefault(t, []).append((s, p, o))
        self.events[key] = value
        self._by_st.setdefault((s, t), {})[(p, o)] = value

    def add(self, rec: EventRecord) -> "EventTensor":
        self.vocab.check(rec.s, rec.p, rec.o, rec.value)
        if not 0 <= rec.t < self.horizon:
            raise IndexError(f"time {rec.t} out of range [0, {self.horizon})")
        self._set(rec.s, rec.p, rec.o, rec.t, rec.value)
        return self

    def records(self) -> list[EventRecord]:
        return [EventRecord(s, p, o, t, v) for (s, p, o, t), v in sorted(self.events.items())]

    def at_time(self, t: int) -> list[EventRecord]:
        return [
            EventRecord(s, p, o, t, self.events[(s, p, o, t)])
            for (s, p, o) in self._by_t.get(t, [])
        ]

    def cells(self, s: int, t: int) -> dict[tuple[int, int], float]:
        return self._by_st.get((s, t), {})

    def active(self, s: int, t: int) -> bool:
        return bool(self._by_st.get((s, t)))

    def subjects_at(self, t: int) -> set[int]:
        return {s for (s, _, _) in self._by_t.get(t, [])}

    def as_csr(self) -> sp.csr_matrix:
        """All ``z_{s,:,:,t}`` slices stacked as rows ``s * horizon + t``."""
        rows, cols, vals = [], [], []
        O, H = self.vocab.O, self.horizon
        for (s, p, o, t), v in self.events.items():
            rows.append(s * H + t)
            cols.append(p * O + o)
            vals.append(float(v))
        return sp.csr_matrix(
            (vals, (rows, cols)), shape=(self.vocab.S * H, self.vocab.slice_size)
        )

    def network_csr(self) -> sp.csr_matrix:
        """Per-time all-subject slices ``z_{:,:,:,t}`` as a ``horizon x (S*P*O)`` matrix."""
        rows, cols, vals = [], [], []
        PO = self.vocab.slice_size
        for (s, p, o, t), v in self.events.items():
            rows.append(t)
            cols.append(s * PO + p * self.vocab.O + o)
            vals.append(float(v))
        return sp.csr_matrix(
            (vals, (rows, cols)), shape=(self.horizon, self.vocab.S * PO)
        )


def upsert_triple(kg: KGTensor, rec: TripleRecord) -> KGTensor:
    """Insert or overwrite the value at ``(s, p, o)``; mutates and returns ``kg``."""
    kg.vocab.check(rec.s, rec.p, rec.o, rec.value)
    kg._set(rec.s, rec.p, rec.o, rec.value)
    return kg


def slice_subject(kg: KGTensor, s: int) -> SliceVector:
    if not 0 <= s < kg.vocab.S:
        raise IndexError(f"subject index {s} out of range [0, {kg.vocab.S})")
    return _dense_slice(kg.subject_cells(s), kg.vocab)


def slice_subject_time(ev: EventTensor, s: int, t: int) -> SliceVector:
    if not 0 <= s < ev.vocab.S:
        raise IndexError(f"subject index {s} out of range [0, {ev.vocab.S})")
    if not 0 <= t < ev.horizon:
        raise IndexError(f"time {t} out of range [0, {ev.horizon})")
    return _dense_slice(ev.cells(s, t), ev.vocab)


def apply_events(kg: KGTensor, ev: EventTensor, t: int) -> KGTensor:
    """Transfer the events at time ``t`` of KG-bearing predicates into ``kg``."""
    if not 0 <= t < ev.horizon:
        raise IndexError(f"time {t} out of range [0, {ev.horizon})")
    for rec in ev.at_time(t):
        if kg.vocab.info[rec.p].kg_bearing:
            upsert_triple(kg, TripleRecord(rec.s, rec.p, rec.o, rec.value))
    return kg


def restrict(ev: EventTensor, keep) -> EventTensor:
    """New tensor holding the events for which ``keep(record)`` is true."""
    out = EventTensor(ev.vocab, ev.horizon)
    for (s, p, o, t), v in ev.events.items():
        if keep(EventRecord(s, p, o, t, v)):
            out._set(s, p, o, t, v)
    return out


def merge(*tensors: EventTensor) -> EventTensor:
    out = EventTensor(tensors[0].vocab, max(t.horizon for t in tensors))
    for ev in tensors:
        for (s, p, o, t), v in ev.events.items():
            out._set(s, p, o, t, v)
    return out

