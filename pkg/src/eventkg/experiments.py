"""End-to-end protocols on synthetic (or user-supplied) data.

Each runner trains the relevant prediction models with fixed seeds and
returns :class:`~eventkg.evaluation.MetricReport` rows for the model and
its baselines.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import synth
from .evaluation import (
    LogisticBaseline,
    MetricReport,
    RidgeBaseline,
    ScoredSet,
    auprc,
    auroc,
    history_features,
    occurrence_rates,
    regression_error,
)
from .ingest import SplitSpec, split_subjects, standardize, temporal_split
from .model import LatentModel, ModelConfig, Regularization, TensorCache
from .prediction import clinical_spec, rating_spec, recommendation_spec, sensor_spec
from .model import PredictionSpec
from .scoring import GAUSSIAN, LikelihoodSpec, sigmoid
from .tensor_store import EventTensor, KGTensor, TripleRecord, merge, restrict, upsert_triple
from .training import TrainConfig, TrainData, designated_pairs, gradcheck, sample_negatives, train

log = logging.getLogger(__name__)


@dataclass
class BinaryEval:
    theta: np.ndarray
    labels: np.ndarray

    def scored(self) -> ScoredSet:
        return ScoredSet(sigmoid(self.theta.ravel()), self.labels.ravel())


def evaluate_binary(model: LatentModel, kg, ev: EventTensor, pairs) -> BinaryEval:
    cache = TensorCache(kg, ev)
    theta = model.predict_forward(cache, pairs[:, 0], pairs[:, 1])
    labels, _ = model.predict_targets(cache, pairs[:, 0], pairs[:, 1])
    return BinaryEval(theta, labels)


# ---------------------------------------------------------------------------
# gradient gate


def gradcheck_cases(rank, horizon, vocab):
    """Named ``(cost selector, ModelConfig)`` pairs covering every scorer form."""
    full = ("subject", "time", "current", "history", "network_history")
    real_cells = tuple(range(vocab.O, 2 * vocab.O))
    return [
        ("kg", "rescal+mmap", ModelConfig(rank=rank, kg_scoring="rescal", subject_repr="mmap")),
        ("kg", "multiway", ModelConfig(rank=rank, kg_scoring="multiway", hidden=(4,))),
        ("event", "global", ModelConfig(rank=rank, kg_scoring=None, event_form="global",
                                        subject_repr="mmap", hidden=(4,))),
        ("event", "personalized", ModelConfig(rank=rank, kg_scoring=None, event_form="personalized",
                                              time_repr="table", hidden=(4,))),
        ("predict", "bernoulli", ModelConfig(rank=rank, kg_scoring=None, subject_repr="mmap", hidden=(4,),
                                             predict=PredictionSpec(full, min(2, horizon - 1)))),
        ("predict", "gaussian", ModelConfig(
            rank=rank, kg_scoring=None, time_repr="table", hidden=(4,),
            predict=PredictionSpec(full, 1, real_cells, LikelihoodSpec(GAUSSIAN, 0.7), lead=1))),
        ("joint", "shared", ModelConfig(rank=rank, kg_scoring="rescal", event_form="personalized",
                                        hidden=(4,), predict=PredictionSpec(("subject", "current")))),
    ]


def gradcheck_suite(seed=0, instances=1, tol=1e-4, max_coords=None):
    """Finite-difference checks of all costs on random small instances.

    Returns ``(cost, case, report)`` triples.
    """
    out = []
    for k in range(instances):
        rng = np.random.default_rng((seed, k))
        vocab, kg, ev = synth.random_instance(seed=(seed, k))
        rank = int(rng.integers(2, 6))
        lam = rng.uniform(0.01, 0.5, size=3)
        reg = Regularization(*lam)
        for cost, name, cfg in gradcheck_cases(rank, ev.horizon, vocab):
            model = LatentModel(vocab, ev.horizon, cfg, seed=int(rng.integers(1 << 30)))
            data = TrainData(kg=kg, events=ev)
            if cost in ("kg", "joint"):
                data.kg_negatives = sample_negatives(kg, vocab, 1, (seed, k, 0))
            if cost in ("event", "joint"):
                data.event_negatives = sample_negatives(ev, vocab, 1, (seed, k, 1))
            report = gradcheck(model, cost, data, reg, tol=tol, max_coords=max_coords, seed=seed)
            out.append((cost, name, report))
    return out


# ---------------------------------------------------------------------------
# clinical


CLINICAL_VARIANTS = {
    "ET+KG": dict(with_kg=True, with_events=True),
    "ET": dict(with_kg=False, with_events=True),
    "KG": dict(with_kg=True, with_events=False),
}


def clinical_model(data: synth.SynthData, variant="ET+KG", window=6, rank=10, hidden=(64,),
                   seed=0) -> LatentModel:
    spec = clinical_spec(window, data.outputs, **CLINICAL_VARIANTS[variant])
    cfg = ModelConfig(rank=rank, kg_scoring=None, subject_repr="mmap", time_repr="table",
                      hidden=hidden, predict=spec)
    return LatentModel(data.vocab, data.events.horizon, cfg, seed=seed)


CLINICAL_TRAIN = dict(lr=0.01, momentum=0.9, batch_size=32, epochs=30,
                      reg=Regularization(1e-4, 1e-4, 1e-4))


def run_clinical(data: synth.SynthData, variant="ET+KG", seed=0, split_seed=0, window=6,
                 train_kwargs=None, baselines=True, validation=0.0):
    """Train on a random 80% of subjects and score next-visit events of the rest.

    With ``validation > 0`` the metrics are computed on a validation subset of
    the training subjects instead of the test subjects.
    """
    ev, kg = data.events, data.kg
    tr, va, te = split_subjects(ev.vocab.S, SplitSpec("subject-holdout", fraction=0.2,
                                                        seed=split_seed, validation=validation))
    eval_subjects = va if validation else te
    train_set = set(tr.tolist())
    train_ev = restrict(ev, lambda r: r.s in train_set)
    model = clinical_model(data, variant, window, seed=seed)
    cfg = TrainConfig(**{**CLINICAL_TRAIN, **(train_kwargs or {}), "seed": seed, "costs": "predict"})
    t0 = time.perf_counter()
    train(model, TrainData(kg=kg, events=train_ev, pairs=designated_pairs(train_ev)), cfg)
    seconds = time.perf_counter() - t0
    pairs = designated_pairs(ev, subjects=eval_subjects)
    res = evaluate_binary(model, kg, ev, pairs)
    sc = res.scored()
    name = variant
    reports = [
        MetricReport("AUPRC", auprc(sc), model=name, seconds=seconds),
        MetricReport("AUROC", auroc(sc), model=name, seconds=seconds),
    ]
    if baselines:
        reports += clinical_baselines(data, train_ev, ev, tr, pairs, res.labels, window, seed)
    return reports


def clinical_baselines(data, train_ev, ev, train_subjects, pairs, labels, window, seed):
    outputs = list(data.outputs)
    rates = occurrence_rates(train_ev)[outputs]
    const = ScoredSet(np.broadcast_to(rates, labels.shape), labels)
    rng = np.random.default_rng(seed)
    rand = ScoredSet(rng.random(labels.size), labels.ravel())
    t0 = time.perf_counter()
    tr_pairs = designated_pairs(train_ev)
    X = history_features(train_ev, tr_pairs, window + 1)
    cache = TensorCache(None, train_ev, need_network=False)
    Y = cache.event_rows(tr_pairs[:, 0], tr_pairs[:, 1] + 1)[:, outputs]
    lr = LogisticBaseline(lam=1.0).fit(X, Y)
    seconds = time.perf_counter() - t0
    lr_scores = ScoredSet(lr.predict_proba(history_features(ev, pairs, window + 1)), labels)
    out = []
    for name, sc, sec in (("Logistic Regression", lr_scores, seconds),
                          ("Constant predictions", const, 0.0), ("Random", rand, None)):
        out.append(MetricReport("AUPRC", auprc(sc), model=name, seconds=sec))
        out.append(MetricReport("AUROC", auroc(sc), model=name, seconds=sec))
    return out


# ---------------------------------------------------------------------------
# recommendation


def ratings_model(data: synth.SynthData, window=2, rank=8, hidden=(32,), seed=0,
                  time_repr="mmap") -> LatentModel:
    spec = recommendation_spec(window, data.outputs)
    cfg = ModelConfig(rank=rank, kg_scoring="rescal", subject_repr="table", time_repr=time_repr,
                      event_form="personalized", hidden=hidden, sigma=1.0, predict=spec)
    return LatentModel(data.vocab, data.events.horizon, cfg, seed=seed)


RATINGS_TRAIN = dict(lr=0.01, momentum=0.9, batch_size=32, epochs=25, negatives=1,
                     reg=Regularization(1e-3, 1e-3, 1e-3))


def ratings_kg(ev: EventTensor, boundary: int) -> KGTensor:
    """KG of ``rates`` triples observed before ``boundary``."""
    vocab = ev.vocab
    p_rate = vocab.predicates.lookup("rates")
    kg = KGTensor(vocab)
    for rec in sorted(ev.records(), key=lambda r: r.t):
        if rec.p == p_rate and rec.t < boundary:
            upsert_triple(kg, TripleRecord(rec.s, rec.p, rec.o, rec.value))
    return kg


def run_watch_prediction(data: synth.SynthData, costs="predict", seed=0, boundary=None,
                         train_kwargs=None):
    """Train on weeks before ``boundary``; AUROC of next-week watches afterwards."""
    ev = data.events
    boundary = boundary if boundary is not None else (2 * ev.horizon) // 3
    train_ev, _, _ = temporal_split(ev, SplitSpec("temporal", boundary=boundary))
    kg = ratings_kg(ev, boundary)
    model = ratings_model(data, seed=seed)
    cfg = TrainConfig(**{**RATINGS_TRAIN, **(train_kwargs or {}), "seed": seed, "costs": costs})
    pairs = designated_pairs(train_ev)
    train(model, TrainData(kg=kg, events=train_ev, pairs=pairs), cfg)
    test_pairs = designated_pairs(ev, origins=range(boundary - 1, ev.horizon - 1))
    res = evaluate_binary(model, kg, ev, test_pairs)
    return auroc(res.scored()), model


def run_rating_prediction(vocab, ev: EventTensor, kg: KGTensor, boundary: int, seed=0,
                          rank=10, hidden=(32,), epochs=30, outputs=None):
    """Future-rating RMSE of the KG-only Gaussian model (ratings are centered)."""
    p_rate = vocab.predicates.lookup("rates")
    outputs = outputs or tuple(vocab.flat(p_rate, o) for o in range(vocab.O))
    spec = rating_spec(outputs)
    cfg = ModelConfig(rank=rank, kg_scoring=None, subject_repr="mmap", hidden=hidden, predict=spec)
    model = LatentModel(vocab, ev.horizon, cfg, seed=seed)
    train_ev = restrict(ev, lambda r: r.t < boundary)
    pairs = designated_pairs(train_ev)
    train(model, TrainData(kg=kg, events=train_ev, pairs=pairs),
          TrainConfig(lr=0.1, momentum=0.9, batch_size=32, epochs=epochs, seed=seed,
                      reg=Regularization(1e-3, 1e-3, 1e-3)))
    test_pairs = designated_pairs(ev, origins=range(boundary - 1, ev.horizon - 1))
    cache = TensorCache(kg, ev)
    theta = model.predict_forward(cache, test_pairs[:, 0], test_pairs[:, 1])
    Y, mask = model.predict_targets(cache, test_pairs[:, 0], test_pairs[:, 1])
    sel = mask > 0
    return regression_error(ScoredSet(theta[sel], Y[sel]), "RMSE")


# ---------------------------------------------------------------------------
# sensors


SENSOR_TRAIN = dict(lr=0.01, momentum=0.9, decay=0.9, batch_size=64, epochs=30,
                    reg=Regularization(1e-4, 1e-4, 1e-4))


def sensor_split(ev: EventTensor):
    """First 80% of steps train (last 5% of those validate), rest test."""
    boundary = int(0.8 * ev.horizon)
    return boundary, temporal_split(ev, SplitSpec("temporal", boundary=boundary, validation=0.05))


def sensor_model(vocab, horizon, variant="Pred1", T=10, lead=20, rank=20, hidden=(32,), seed=0,
                 activation="tanh"):
    spec = sensor_spec(variant, T, lead)
    cfg = ModelConfig(rank=rank, kg_scoring=None, subject_repr="table", time_repr="mmap",
                      hidden=hidden, activation=activation, predict=spec)
    return LatentModel(vocab, horizon, cfg, seed=seed)


def run_sensor(data: synth.SynthData, variants=("Pred1",), seed=0, T=10, lead=20,
               train_kwargs=None, stride=3, model_kwargs=None):
    """20-step-ahead MSE of the prediction models and the two baselines."""
    raw_ev = data.events
    boundary, (tr, va, te) = sensor_split(raw_ev)
    ev, _ = standardize(raw_ev, merge(tr, va))
    H = ev.horizon
    v0 = min(r.t for r in va.records()) if len(va) else boundary
    train_origins = range(T - 1, v0 - lead, stride)
    test_origins = range(boundary - 1, H - lead)
    S = ev.vocab.S
    train_pairs = np.array([(s, t) for s in range(S) for t in train_origins])
    test_pairs = np.array([(s, t) for s in range(S) for t in test_origins])
    val_pairs = np.array([(s, t) for s in range(S) for t in range(v0 - 1, boundary - lead)])
    train_ev = restrict(ev, lambda r: r.t < v0 + 0)
    cache = TensorCache(None, ev)
    Y_test = cache.event_rows(test_pairs[:, 0], test_pairs[:, 1] + lead)
    reports = []
    for variant in variants:
        model = sensor_model(ev.vocab, H, variant, T, lead, seed=seed, **(model_kwargs or {}))
        cfg = TrainConfig(**{**SENSOR_TRAIN, **(train_kwargs or {}), "seed": seed,
                             "costs": "predict", "keep_best": True})
        val = TrainData(events=restrict(ev, lambda r: r.t < boundary), pairs=val_pairs)
        train(model, TrainData(events=train_ev, pairs=train_pairs), cfg, validation=val)
        pred = model.predict_forward(cache, test_pairs[:, 0], test_pairs[:, 1])
        reports.append(MetricReport("MSE", regression_error(ScoredSet(pred, Y_test)), model=variant))
    # baselines on the same targets
    last = cache.event_rows(test_pairs[:, 0], test_pairs[:, 1])
    reports.append(MetricReport("MSE", regression_error(ScoredSet(last, Y_test)),
                                model="Last Observed Value"))
    X_tr = history_features(ev, train_pairs, T)
    Y_tr = cache.event_rows(train_pairs[:, 0], train_pairs[:, 1] + lead)
    lin = RidgeBaseline(lam=1e-3).fit(X_tr, Y_tr)
    pred = lin.predict(history_features(ev, test_pairs, T))
    reports.append(MetricReport("MSE", regression_error(ScoredSet(pred, Y_test)),
                                model="Linear Regression"))
    return reports


def aggregate(runs) -> list[MetricReport]:
    """Mean/std over repeated runs of the same ``(model, metric)`` rows."""
    groups: dict = {}
    for rows in runs:
        for r in rows:
            groups.setdefault((r.model, r.metric), []).append(r)
    out = []
    for (model, metric), rs in groups.items():
        secs = [r.seconds for r in rs if r.seconds is not None]
        out.append(MetricReport.from_values(metric, [r.value for r in rs],
                                            seconds=secs[0] if secs else None, model=model))
    return out
