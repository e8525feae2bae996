"""Event-log ingestion and preprocessing.

Event logs are JSON-lines files, one record per line::

    {"subject": "p1", "predicate": "prescribed", "object": "med_3", "time": 4, "value": true}

``time`` is a non-negative integer or an ISO-8601 timestamp (discretized by
``time_unit``).  ``value`` is a boolean (binary predicate) or a number (real
predicate).  Records with ``"static": true`` populate the KG and may omit
``time``.  An optional schema line ``{"schema": {"<predicate>": {"kind":
"binary"|"real", "kg_bearing": bool}}}`` declares predicates explicitly;
otherwise the kind follows the JSON value type and a predicate is KG-bearing
when it appears in a static record.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .errors import ConfigError, DomainError, SchemaError
from .tensor_store import (
    BINARY,
    REAL,
    EventRecord,
    EventTensor,
    KGTensor,
    TripleRecord,
    Vocab,
    restrict,
    upsert_triple,
)

log = logging.getLogger(__name__)

TIME_UNITS = {"minute": 60, "hour": 3600, "day": 86400, "week": 7 * 86400}


class LoadedLog(tuple):
    """``(vocab, events, kg)`` with the list of rejected lines in ``malformed``."""

    malformed: list

    def __new__(cls, vocab, events, kg, malformed):
        obj = super().__new__(cls, (vocab, events, kg))
        obj.malformed = malformed
        return obj


def _kind_of(value):
    if isinstance(value, bool):
        return BINARY
    if isinstance(value, (int, float)) and math.isfinite(value):
        return REAL
    return None


def _parse_time(raw, unit):
    if isinstance(raw, bool):
        raise ValueError("time must be an integer or a timestamp")
    if isinstance(raw, int):
        if raw < 0:
            raise ValueError("time must be non-negative")
        return raw, False
    if isinstance(raw, str):
        if unit not in TIME_UNITS:
            raise ConfigError(f"unknown time unit {unit!r}")
        return datetime.fromisoformat(raw).timestamp(), True
    raise ValueError(f"unsupported time {raw!r}")


def load_event_log(path, time_unit: str = "day") -> LoadedLog:
    """Read a JSON-lines event log into a vocabulary, event tensor and KG.

    Predicates declared in a schema line keep their declared order; all
    other labels are indexed in order of first appearance.  Malformed lines are
    skipped and reported (``LoadedLog.malformed`` holds ``(line, reason)``);
    a predicate whose value type changes raises :class:`SchemaError`.
    """
    schema: dict = {}
    parsed = []
    malformed = []
    kinds: dict[str, tuple[str, int]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not an object")
                if "schema" in rec and len(rec) == 1:
                    schema.update(rec["schema"])
                    continue
                static = bool(rec.get("static", False))
                fields = ("subject", "predicate", "object", "value") + (() if static else ("time",))
                missing = [f for f in fields if f not in rec]
                if missing:
                    raise ValueError(f"missing fields {missing}")
                kind = _kind_of(rec["value"])
                if kind is None:
                    raise ValueError(f"unsupported value {rec['value']!r}")
                time = None if static else _parse_time(rec["time"], time_unit)
            except (ValueError, TypeError) as exc:
                malformed.append((lineno, str(exc)))
                log.warning("%s:%d: skipped malformed record (%s)", path, lineno, exc)
                continue
            pred = str(rec["predicate"])
            declared = schema.get(pred, {}).get("kind")
            if declared is not None:
                if declared == BINARY and kind == REAL and rec["value"] in (0, 1):
                    kind = BINARY
                if declared != kind:
                    raise SchemaError(
                        f"line {lineno}: predicate {pred!r} declared {declared}, got {kind} value"
                    )
            elif pred in kinds and kinds[pred][0] != kind:
                raise SchemaError(
                    f"line {lineno}: predicate {pred!r} has {kind} value but was "
                    f"{kinds[pred][0]} on line {kinds[pred][1]}"
                )
            kinds.setdefault(pred, (kind, lineno))
            parsed.append((lineno, rec, static, time))

    vocab = Vocab()
    static_preds = {str(r["predicate"]) for _, r, st, _ in parsed if st}
    for pred, decl in schema.items():
        vocab.add_predicate(pred, decl.get("kind", BINARY), decl.get("kg_bearing", True))
    for _, rec, _, _ in parsed:
        vocab.subjects.add(str(rec["subject"]))
        pred = str(rec["predicate"])
        if pred not in vocab.predicates:
            decl = schema.get(pred, {})
            vocab.add_predicate(
                pred,
                decl.get("kind", kinds[pred][0]),
                decl.get("kg_bearing", pred in static_preds),
            )
        vocab.objects.add(str(rec["object"]))
    stamps = [t[0] for _, _, st, t in parsed if not st and t[1]]
    t0 = min(stamps) if stamps else 0.0
    times = []
    for _, _, st, t in parsed:
        if st:
            times.append(None)
        elif t[1]:
            times.append(int((t[0] - t0) // TIME_UNITS[time_unit]))
        else:
            times.append(t[0])
    horizon = max([t for t in times if t is not None], default=-1) + 1
    ev = EventTensor(vocab, horizon)
    kg = KGTensor(vocab)
    for (lineno, rec, static, _), t in zip(parsed, times):
        s = vocab.subjects.lookup(str(rec["subject"]))
        p = vocab.predicates.lookup(str(rec["predicate"]))
        o = vocab.objects.lookup(str(rec["object"]))
        value = rec["value"]
        value = int(value) if vocab.kind(p) == BINARY else float(value)
        try:
            if static:
                upsert_triple(kg, TripleRecord(s, p, o, value))
            else:
                ev.add(EventRecord(s, p, o, t, value))
        except SchemaError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from exc
    return LoadedLog(vocab, ev, kg, malformed)


def write_event_log(path, vocab: Vocab, ev: EventTensor, kg: KGTensor | None = None) -> None:
    """Write tensors as a JSON-lines log readable by :func:`load_event_log`."""
    with open(path, "w") as fh:
        schema = {
            vocab.predicates.label(p): {"kind": vocab.info[p].kind, "kg_bearing": vocab.info[p].kg_bearing}
            for p in range(vocab.P)
        }
        fh.write(json.dumps({"schema": schema}) + "\n")
        recs = []
        if kg is not None:
            for r in kg.records():
                recs.append({"subject": vocab.subjects.label(r.s), "predicate": vocab.predicates.label(r.p),
                             "object": vocab.objects.label(r.o), "value": _out_value(vocab, r.p, r.value),
                             "static": True})
        for r in sorted(ev.records(), key=lambda r: (r.t, r.s, r.p, r.o)):
            recs.append({"subject": vocab.subjects.label(r.s), "predicate": vocab.predicates.label(r.p),
                         "object": vocab.objects.label(r.o), "time": int(r.t),
                         "value": _out_value(vocab, r.p, r.value)})
        for rec in recs:
            fh.write(json.dumps(rec) + "\n")


def _out_value(vocab, p, v):
    return bool(v) if vocab.kind(p) == BINARY else float(v)


def load_movielens(path, train_weeks: int = 24):
    """MovieLens ``u.data`` (user, item, rating, unix time; tab separated).

    Each rating row yields a ``watches`` event (value 1) and a ``rates``
    event (rating centered by the user's training-period mean) in the
    calendar week of the rating.  The KG holds the centered ratings of the
    first ``train_weeks`` weeks.
    """
    rows = np.loadtxt(path, dtype=np.int64, ndmin=2)
    rows = rows[np.argsort(rows[:, 3], kind="stable")]
    week = (rows[:, 3] - rows[:, 3].min()) // TIME_UNITS["week"]
    vocab = Vocab()
    vocab.add_predicate("watches", BINARY, kg_bearing=False)
    vocab.add_predicate("rates", REAL, kg_bearing=True)
    for u in np.unique(rows[:, 0]):
        vocab.subjects.add(f"user_{u}")
    for m in np.unique(rows[:, 1]):
        vocab.objects.add(f"movie_{m}")
    train = week < train_weeks
    means = {}
    for u in np.unique(rows[:, 0]):
        sel = rows[:, 0] == u
        ref = sel & train if np.any(sel & train) else sel
        means[u] = rows[ref, 2].mean()
    ev = EventTensor(vocab, int(week.max()) + 1)
    kg = KGTensor(vocab)
    for (u, m, r, _), w in zip(rows, week):
        s = vocab.subjects.lookup(f"user_{u}")
        o = vocab.objects.lookup(f"movie_{m}")
        centered = float(r - means[u])
        ev.add(EventRecord(s, 0, o, int(w), 1))
        ev.add(EventRecord(s, 1, o, int(w), centered))
        if w < train_weeks:
            upsert_triple(kg, TripleRecord(s, 1, o, centered))
    return vocab, ev, kg, means


def encode_lab_bands(measurements, ranges, predicate="lab_result"):
    """Expand ``(subject, lab, time, value)`` measurements into low/normal/high events.

    A value inside the closed interval ``[low, high]`` is normal.  Returns
    event-log dictionaries, three per measurement with exactly one value true.
    """
    out = []
    for subject, lab, time, value in measurements:
        if lab not in ranges:
            raise ConfigError(f"no reference range for lab {lab!r}")
        low, high = ranges[lab]
        band = "low" if value < low else "high" if value > high else "normal"
        for name in ("low", "normal", "high"):
            out.append({"subject": subject, "predicate": predicate, "object": f"{lab}_{name}",
                        "time": time, "value": name == band})
    return out


def hann_weights(window: int) -> np.ndarray:
    if window < 1 or window % 2 == 0:
        raise DomainError("Hanning window must be an odd positive integer")
    if window == 1:
        return np.ones(1)
    k = np.arange(window)
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * k / (window - 1)))
    return w / w.sum()


def hanning_smooth(series, window: int = 21) -> np.ndarray:
    """Centered Hann-weighted moving average; edges use the truncated window renormalized."""
    w = hann_weights(window)
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or len(x) == 0:
        raise DomainError("series must be a non-empty 1-D sequence")
    num = np.convolve(x, w, mode="same")
    den = np.convolve(np.ones_like(x), w, mode="same")
    return num / den


@dataclass
class SplitSpec:
    """``temporal``: times ``< boundary`` train, the rest test; validation is the
    last ``validation`` fraction of training time steps.  ``subject-holdout``:
    ``fraction`` of subjects (seeded) go to test and ``validation`` of the
    remaining subjects to validation."""

    mode: str = "temporal"
    boundary: int | None = None
    fraction: float = 0.2
    seed: int = 0
    validation: float = 0.0

    def __post_init__(self):
        if self.mode not in ("temporal", "subject-holdout"):
            raise ConfigError(f"unknown split mode {self.mode!r}")
        if self.mode == "temporal" and self.boundary is None:
            raise ConfigError("temporal split needs a boundary")
        if self.mode == "subject-holdout" and not 0 < self.fraction < 1:
            raise ConfigError("holdout fraction must be in (0, 1)")
        if not 0 <= self.validation < 1:
            raise ConfigError("validation fraction must be in [0, 1)")


def split_subjects(S: int, spec: SplitSpec):
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(S)
    n_test = int(round(spec.fraction * S))
    test = np.sort(perm[:n_test])
    rest = perm[n_test:]
    n_val = int(round(spec.validation * len(rest)))
    val = np.sort(rest[:n_val])
    train = np.sort(rest[n_val:])
    return train, val, test


def temporal_split(ev: EventTensor, spec: SplitSpec):
    """Partition events into ``(train, validation, test)`` tensors."""
    if spec.mode == "temporal":
        b = spec.boundary
        if not 0 <= b <= ev.horizon:
            raise ConfigError(f"boundary {b} outside [0, {ev.horizon}]")
        n_val = int(math.ceil(spec.validation * b)) if spec.validation else 0
        v0 = b - n_val
        train = restrict(ev, lambda r: r.t < v0)
        val = restrict(ev, lambda r: v0 <= r.t < b)
        test = restrict(ev, lambda r: r.t >= b)
    else:
        tr, va, te = (set(a.tolist()) for a in split_subjects(ev.vocab.S, spec))
        train = restrict(ev, lambda r: r.s in tr)
        val = restrict(ev, lambda r: r.s in va)
        test = restrict(ev, lambda r: r.s in te)
    for name, part in (("train", train), ("test", test)):
        if len(part) == 0:
            log.warning("%s split is empty", name)
    return train, val, test


def standardize(ev: EventTensor, reference: EventTensor | None = None):
    """Z-score each ``(p, o)`` series of real predicates using ``reference`` statistics.

    Returns the transformed tensor and ``{(p, o): (mean, std)}``.
    """
    reference = ev if reference is None else reference
    vals: dict[tuple[int, int], list[float]] = {}
    for (s, p, o, t), v in reference.events.items():
        if ev.vocab.kind(p) == REAL:
            vals.setdefault((p, o), []).append(v)
    stats = {}
    for key, xs in vals.items():
        xs = np.asarray(xs)
        sd = xs.std()
        stats[key] = (float(xs.mean()), float(sd) if sd > 0 else 1.0)
    out = EventTensor(ev.vocab, ev.horizon)
    for (s, p, o, t), v in ev.events.items():
        if (p, o) in stats:
            m, sd = stats[(p, o)]
            v = (v - m) / sd
        out._set(s, p, o, t, v)
    return out, stats
