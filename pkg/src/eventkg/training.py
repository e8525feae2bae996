"""Costs, gradients and the stochastic-gradient training loop.

All three costs are sums of per-record negative log-likelihoods plus the
squared Frobenius penalties ``lambda_A |A|^2 + lambda_M |M|^2 + lambda_W |W|^2``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, SchemaError, ShapeError, TrainingDiverged
from .model import (
    LatentModel,
    ParameterSet,
    Regularization,
    TensorCache,
    add_penalty_grad,
    penalty,
    record_nll,
)
from .scoring import nll_and_grad
from .tensor_store import BINARY, EventRecord, EventTensor, KGTensor, TripleRecord, Vocab

log = logging.getLogger(__name__)

COSTS = ("kg", "event", "predict")


# ---------------------------------------------------------------------------
# negative sampling


class NegativeSample(list):
    """Corrupted records; ``shortfall`` counts negatives that could not be drawn."""

    shortfall: int = 0


def _positive_arrays(positives):
    """``(keys, has_time)`` from records, a KGTensor or an EventTensor."""
    if isinstance(positives, KGTensor):
        positives = positives.records()
    elif isinstance(positives, EventTensor):
        positives = positives.records()
    positives = list(positives)
    has_time = bool(positives) and isinstance(positives[0], EventRecord)
    return positives, has_time


def sample_negatives(positives, vocab: Vocab, ratio: int, seed, exclude=None) -> NegativeSample:
    """Corrupt the object of every positive record ``ratio`` times.

    Corrupted keys never coincide with a key in ``positives`` (or in
    ``exclude``).  When a ``(s, p[, t])`` group leaves too few free objects,
    fewer negatives are emitted and the deficit is stored in ``shortfall``.
    Only records with value 1 of binary predicates are corrupted.
    """
    if ratio < 0:
        raise ValueError("ratio must be non-negative")
    out = NegativeSample()
    records, has_time = _positive_arrays(positives)
    if ratio == 0 or not records:
        return out
    O = vocab.O
    taken: dict[tuple, set[int]] = {}
    for rec in records:
        key = (rec.s, rec.p, rec.t) if has_time else (rec.s, rec.p)
        taken.setdefault(key, set()).add(rec.o)
    for rec in exclude or ():
        key = (rec.s, rec.p, rec.t) if has_time else (rec.s, rec.p)
        taken.setdefault(key, set()).add(rec.o)
    rng = np.random.default_rng(seed)
    emitted: set[tuple] = set()
    shortfall = 0
    for rec in records:
        if vocab.kind(rec.p) != BINARY or rec.value != 1:
            continue
        key = (rec.s, rec.p, rec.t) if has_time else (rec.s, rec.p)
        used = taken[key]
        chosen: list[int] = []
        if O - len(used) <= 2 * ratio:
            free = np.array([o for o in range(O) if o not in used], dtype=int)
            if len(free) < ratio:
                shortfall += ratio - len(free)
                chosen = free.tolist()
            else:
                chosen = rng.choice(free, size=ratio, replace=False).tolist()
        else:
            picked: set[int] = set()
            while len(picked) < ratio:
                o = int(rng.integers(O))
                if o not in used and o not in picked:
                    picked.add(o)
                    chosen.append(o)
        for o in chosen:
            nkey = (*key, o)
            if nkey in emitted:
                continue
            emitted.add(nkey)
            if has_time:
                out.append(EventRecord(rec.s, rec.p, o, rec.t, 0))
            else:
                out.append(TripleRecord(rec.s, rec.p, o, 0))
    out.shortfall = shortfall
    if shortfall:
        log.warning("negative sampling fell %d records short", shortfall)
    return out


# ---------------------------------------------------------------------------
# record arrays


def kg_arrays(kg: KGTensor, negatives=()) -> dict:
    recs = list(kg.records()) + list(negatives)
    return {
        "s": np.array([r.s for r in recs], dtype=int),
        "p": np.array([r.p for r in recs], dtype=int),
        "o": np.array([r.o for r in recs], dtype=int),
        "x": np.array([float(r.value) for r in recs]),
    }


def event_arrays(ev: EventTensor, negatives=()) -> dict:
    recs = list(ev.records()) + list(negatives)
    return {
        "s": np.array([r.s for r in recs], dtype=int),
        "p": np.array([r.p for r in recs], dtype=int),
        "o": np.array([r.o for r in recs], dtype=int),
        "t": np.array([r.t for r in recs], dtype=int),
        "x": np.array([float(r.value) for r in recs]),
    }


def designated_pairs(ev: EventTensor, lead: int = 1, active_only: bool = True,
                     subjects=None, origins=None) -> np.ndarray:
    """``(s, origin)`` pairs whose target ``origin + lead`` lies in the horizon.

    With ``active_only`` a pair is kept only when the subject has at least one
    event at the target time (e.g. a visit actually happened).
    """
    subjects = range(ev.vocab.S) if subjects is None else subjects
    origins = range(-1, ev.horizon - lead) if origins is None else origins
    pairs = []
    for s in subjects:
        for t in origins:
            tgt = t + lead
            if 0 <= tgt < ev.horizon and (not active_only or ev.active(s, tgt)):
                pairs.append((s, t))
    return np.array(pairs, dtype=int).reshape(-1, 2)


def _take(arrs: dict, idx) -> dict:
    return {k: v[idx] for k, v in arrs.items()}


# ---------------------------------------------------------------------------
# data bundle and per-cost terms


@dataclass
class TrainData:
    """Everything a cost needs: tensors plus designated records/pairs."""

    kg: KGTensor | None = None
    events: EventTensor | None = None
    pairs: np.ndarray | None = None
    kg_negatives: list = field(default_factory=list)
    event_negatives: list = field(default_factory=list)
    _cache: TensorCache | None = field(default=None, repr=False)

    def cache(self) -> TensorCache:
        if self._cache is None:
            ev = self.events
            if ev is None:
                vocab = self.kg.vocab
                ev = EventTensor(vocab, 0)
            self._cache = TensorCache(self.kg, ev)
        return self._cache


def _kg_term(model, data: TrainData, arrs: dict, grads: dict | None, scale=1.0) -> float:
    if len(arrs["s"]) == 0:
        return 0.0
    cache = data.cache()
    theta, ctx = model.kg_forward(cache, arrs["s"], arrs["p"], arrs["o"], need_cache=True)
    nll, d = record_nll(model, arrs["p"], arrs["x"], theta)
    if grads is not None:
        model.kg_backward(grads, ctx, scale * d)
    return float(nll.sum())


def _event_term(model, data: TrainData, arrs: dict, grads: dict | None, scale=1.0) -> float:
    if len(arrs["s"]) == 0:
        return 0.0
    cache = data.cache()
    theta, ctx = model.event_forward(
        cache, arrs["s"], arrs["p"], arrs["o"], arrs["t"], need_cache=True
    )
    nll, d = record_nll(model, arrs["p"], arrs["x"], theta)
    if grads is not None:
        model.event_backward(grads, cache, ctx, scale * d)
    return float(nll.sum())


def _predict_term(model, data: TrainData, pairs: np.ndarray, grads: dict | None, scale=1.0) -> float:
    if len(pairs) == 0:
        return 0.0
    cache = data.cache()
    theta, ctx = model.predict_forward(cache, pairs[:, 0], pairs[:, 1], need_cache=True)
    Y, mask = model.predict_targets(cache, pairs[:, 0], pairs[:, 1])
    nll, d = nll_and_grad(model.config.predict.likelihood, Y, theta)
    if grads is not None:
        model.predict_backward(grads, cache, ctx, scale * d * mask)
    return float((nll * mask).sum())


def _term_inputs(model, data: TrainData, which: str):
    if which == "kg":
        if data.kg is None:
            raise ConfigError("KG cost needs a KG tensor")
        if model.config.kg_scoring is None and len(data.kg):
            raise SchemaError("KG triples present but no KG scorer is configured")
        return kg_arrays(data.kg, data.kg_negatives)
    if which == "event":
        if data.events is None:
            raise ConfigError("event cost needs an event tensor")
        return event_arrays(data.events, data.event_negatives)
    if which == "predict":
        if data.events is None:
            raise ConfigError("prediction cost needs an event tensor")
        if data.pairs is None:
            pred = model.config.predict
            if pred is None:
                raise ConfigError("model has no prediction scorer")
            data.pairs = designated_pairs(data.events, pred.lead)
        return np.asarray(data.pairs, dtype=int).reshape(-1, 2)
    raise ConfigError(f"unknown cost {which!r}")


_TERMS = {"kg": _kg_term, "event": _event_term, "predict": _predict_term}


def nll_sum(model: LatentModel, which: str, data: TrainData) -> float:
    return _TERMS[which](model, data, _term_inputs(model, data, which), None)


def cost_kg(model: LatentModel, kg: KGTensor, reg: Regularization, negatives=()) -> float:
    """Negative log-likelihood of observed (and negative) triples plus penalties."""
    data = TrainData(kg=kg, kg_negatives=list(negatives))
    return nll_sum(model, "kg", data) + penalty(model.params, reg)


def cost_event(model: LatentModel, ev: EventTensor, reg: Regularization, negatives=(),
               kg: KGTensor | None = None) -> float:
    data = TrainData(kg=kg, events=ev, event_negatives=list(negatives))
    return nll_sum(model, "event", data) + penalty(model.params, reg)


def cost_predict(model: LatentModel, ev: EventTensor, reg: Regularization, pairs=None,
                 kg: KGTensor | None = None) -> float:
    """Prediction NLL over designated ``(s, origin)`` pairs plus penalties."""
    data = TrainData(kg=kg, events=ev, pairs=pairs)
    return nll_sum(model, "predict", data) + penalty(model.params, reg)


def _normalize_selector(selector) -> dict:
    if isinstance(selector, str):
        if selector == "joint":
            return {c: 1.0 for c in COSTS}
        return {selector: 1.0}
    weights = {k: float(v) for k, v in dict(selector).items()}
    unknown = set(weights) - set(COSTS)
    if unknown:
        raise ConfigError(f"unknown cost names {sorted(unknown)}")
    if any(w < 0 for w in weights.values()) or sum(weights.values()) <= 0:
        raise ConfigError("cost weights must be non-negative with a positive sum")
    return {k: w for k, w in weights.items() if w > 0}


def objective(model: LatentModel, selector, data: TrainData, reg: Regularization) -> float:
    """Weighted NLL sum of the selected costs plus one penalty term."""
    total = 0.0
    for which, w in _normalize_selector(selector).items():
        total += w * nll_sum(model, which, data)
    return total + penalty(model.params, reg)


def gradient(model: LatentModel, selector, data: TrainData, reg: Regularization):
    """Exact gradient of :func:`objective`, one array per parameter.

    Parameters the selected costs do not touch get zero blocks.
    """
    grads: dict[str, np.ndarray] = {}
    value = 0.0
    for which, w in _normalize_selector(selector).items():
        value += w * _TERMS[which](model, data, _term_inputs(model, data, which), grads, w)
    add_penalty_grad(grads, model.params, reg)
    value += penalty(model.params, reg)
    full = {}
    for name, a in model.params.arrays.items():
        g = grads.get(name)
        g = np.zeros_like(a) if g is None else np.asarray(g, dtype=float)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {name!r}", path=name)
        full[name] = g
    return value, full


@dataclass
class GradcheckReport:
    ok: bool
    worst: float
    per_param: dict
    checked: int

    def __str__(self):
        lines = [f"{'OK' if self.ok else 'FAIL'} worst relative error {self.worst:.3e} "
                 f"over {self.checked} coordinates"]
        for name, err in self.per_param.items():
            lines.append(f"  {name:28s} {err:.3e}")
        return "\n".join(lines)


def relative_error(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradcheck(model: LatentModel, selector, data: TrainData, reg: Regularization,
              eps=1e-5, tol=1e-4, max_coords=None, seed=0) -> GradcheckReport:
    """Compare analytic gradients with central finite differences.

    The relative error per coordinate is ``|g - n| / max(|g|, |n|, floor)``
    with ``floor = 1e-6 * max(1, |f|)``: a central difference of an objective
    ``f`` cannot resolve gradients much below ``1e-16 * |f| / eps``, so the
    floor grows with the objective.  ``max_coords`` limits the coordinates
    checked per parameter (random subset).
    """
    value, grads = gradient(model, selector, data, reg)
    floor = 1e-6 * max(1.0, abs(value))
    rng = np.random.default_rng(seed)
    per_param, worst, checked = {}, 0.0, 0
    for name, arr in model.params.arrays.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, max_coords, replace=False))
        num = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            fp = objective(model, selector, data, reg)
            flat[i] = old - eps
            fm = objective(model, selector, data, reg)
            flat[i] = old
            num[k] = (fp - fm) / (2 * eps)
        err = relative_error(grads[name].reshape(-1)[idx], num, floor)
        per_param[name] = float(err.max()) if len(err) else 0.0
        worst = max(worst, per_param[name])
        checked += len(idx)
    return GradcheckReport(worst <= tol, worst, per_param, checked)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    lr: float = 0.05
    decay: float = 1.0
    momentum: float = 0.0
    batch_size: int = 64
    epochs: int = 20
    negatives: int = 1
    seed: int = 0
    costs: dict | str = "predict"
    reg: Regularization = field(default_factory=Regularization)
    patience: int | None = None
    keep_best: bool = False

    def __post_init__(self):
        if isinstance(self.reg, dict):
            self.reg = Regularization(**self.reg)
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.negatives < 0:
            raise ConfigError("negative ratio must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        self.weights = _normalize_selector(self.costs)


@dataclass
class TrainResult:
    model: LatentModel
    trace: list
    best_epoch: int | None = None


def _epoch_inputs(model, data: TrainData, cfg: TrainConfig, epoch: int):
    seed = (cfg.seed, epoch)
    data.kg_negatives, data.event_negatives = [], []
    if "kg" in cfg.weights and cfg.negatives:
        data.kg_negatives = sample_negatives(data.kg, data.kg.vocab, cfg.negatives, seed + (0,))
    if "event" in cfg.weights and cfg.negatives:
        data.event_negatives = sample_negatives(
            data.events, data.events.vocab, cfg.negatives, seed + (1,)
        )
    return {which: _term_inputs(model, data, which) for which in cfg.weights}


def _n(inp):
    return len(inp) if isinstance(inp, np.ndarray) and inp.ndim == 2 else len(inp["s"])


def train(model: LatentModel, data: TrainData, cfg: TrainConfig,
          validation: TrainData | None = None, metric=None, trace_path=None) -> TrainResult:
    """Mini-batch SGD (optionally with momentum) on the selected costs.

    Each epoch draws fresh negatives, splits every cost's records into the
    same number of batches and steps on the weighted batch estimate of the
    full objective, normalized by the weighted record count.  Reported
    losses are full-data objective values at the end of each epoch.
    ``metric(model)`` is evaluated per epoch when given.
    """
    trace = []
    velocity = {n: np.zeros_like(a) for n, a in model.params.arrays.items()}
    last_good = model.params.copy()
    best = (math.inf, None, None)
    stale = 0
    out = open(trace_path, "w") if trace_path else None
    try:
        for epoch in range(cfg.epochs):
            rng = np.random.default_rng((cfg.seed, epoch, 7))
            inputs = _epoch_inputs(model, data, cfg, epoch)
            sizes = {w: _n(inp) for w, inp in inputs.items()}
            n_ref = sum(cfg.weights[w] * max(sizes[w], 1) for w in inputs)
            n_batches = max(1, max(math.ceil(n / cfg.batch_size) for n in sizes.values()))
            chunks = {
                w: np.array_split(rng.permutation(sizes[w]), n_batches) for w in inputs
            }
            lr = cfg.lr * cfg.decay**epoch
            for b in range(n_batches):
                grads: dict = {}
                for w, inp in inputs.items():
                    idx = chunks[w][b]
                    if len(idx) == 0:
                        continue
                    scale = cfg.weights[w] * sizes[w] / len(idx) / n_ref
                    sub = inp[idx] if isinstance(inp, np.ndarray) else _take(inp, idx)
                    _TERMS[w](model, data, sub, grads, scale)
                add_penalty_grad(grads, model.params, cfg.reg, 1.0 / n_ref)
                for name, g in grads.items():
                    v = velocity[name]
                    v *= cfg.momentum
                    v -= lr * g
                    model.params.arrays[name] += v
            components = {w: _TERMS[w](model, data, inp, None) for w, inp in inputs.items()}
            value = sum(cfg.weights[w] * c for w, c in components.items()) + penalty(
                model.params, cfg.reg
            )
            if not np.isfinite(value) or not model.params.all_finite():
                model.params = last_good
                raise TrainingDiverged(
                    f"objective became non-finite at epoch {epoch}", params=last_good, trace=trace
                )
            last_good = model.params.copy()
            rec = {"epoch": epoch, "train": value, "components": components}
            if validation is not None:
                rec["validation"] = nll_sum(model, "predict", validation)
            if metric is not None:
                rec["metric"] = float(metric(model))
            trace.append(rec)
            if out:
                out.write(json.dumps(rec) + "\n")
            log.debug("epoch %d %s", epoch, rec)
            score = rec.get("validation", value)
            if score < best[0]:
                best = (score, epoch, model.params.copy() if cfg.keep_best else None)
                stale = 0
            else:
                stale += 1
                if cfg.patience is not None and stale > cfg.patience:
                    break
    finally:
        if out:
            out.close()
    if cfg.keep_best and best[2] is not None:
        model.params = best[2]
    return TrainResult(model, trace, best[1])


def init_from_kg(kg_model: LatentModel, model: LatentModel, seed: int = 0) -> LatentModel:
    """Warm-start ``model``'s embeddings and M-maps from a trained KG model.

    Arrays are matched by name, with decoupled copies (``predict.x``,
    ``event.x``) taking the values of their shared counterpart ``x``.
    The prediction network is re-initialized.
    """
    for name in model.params.names():
        if model.params.groups[name] == "W":
            continue
        base = name.split(".", 1)[1] if name.startswith(("predict.", "event.")) else name
        if base not in kg_model.params:
            continue
        src = kg_model.params[base]
        dst = model.params[name]
        if src.shape != dst.shape:
            raise ShapeError(
                f"cannot initialize {name}: KG model has shape {src.shape}, target {dst.shape}"
            )
        dst[...] = src
    if model.config.predict is not None:
        model.reinit_network("predict_net", seed)
    return model
