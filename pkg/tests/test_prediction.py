import json

import numpy as np
import pytest

from conftest import random_events, small_vocab
from eventkg.errors import ConfigError
from eventkg.model import LatentModel, ModelConfig, PredictionSpec
from eventkg.prediction import (
    CoevolutionState,
    clinical_spec,
    coevolve,
    predict_sensor,
    predict_step,
    rating_spec,
    sensor_spec,
    write_predictions,
)
from eventkg.scoring import GAUSSIAN, sigmoid
from eventkg.tensor_store import (
    BINARY,
    REAL,
    EventRecord,
    EventTensor,
    KGTensor,
    TripleRecord,
    restrict,
    upsert_triple,
)
from eventkg.training import TrainConfig, TrainData, designated_pairs, train


def make_model(vocab, horizon, spec, hidden=(4,), seed=0, **kw):
    cfg = ModelConfig(rank=3, kg_scoring=None, subject_repr="mmap", time_repr="table",
                      hidden=hidden, predict=spec, **kw)
    return LatentModel(vocab, horizon, cfg, seed=seed)


def zero_net(model):
    for n in model.params.names("W"):
        model.params[n][...] = 0.0


def test_zero_network_gives_zero_theta(vocab, rng):
    ev = random_events(vocab, 5, 20, rng)
    spec = clinical_spec(2)
    m = make_model(vocab, 5, spec)
    zero_net(m)
    st = CoevolutionState(KGTensor(vocab), ev, m, clock=3)
    assert np.array_equal(predict_step(st, spec, np.arange(vocab.S)), np.zeros((vocab.S, vocab.slice_size)))


def test_kg_only_roster_is_time_invariant(vocab, rng):
    ev = random_events(vocab, 6, 30, rng)
    kg = upsert_triple(KGTensor(vocab), TripleRecord(1, 0, 1, 1))
    spec = clinical_spec(with_events=False)
    assert spec.roster == ("subject",)
    m = make_model(vocab, 6, spec)
    outs = [predict_step(CoevolutionState(kg, ev, m, clock=c), spec, 1) for c in range(1, 6)]
    for o in outs[1:]:
        assert np.array_equal(o, outs[0])


def test_specs():
    assert clinical_spec(6, with_kg=False).roster == ("current", "history")
    assert rating_spec().likelihood.kind == GAUSSIAN
    with pytest.raises(ConfigError):
        clinical_spec(with_kg=False, with_events=False)
    with pytest.raises(ConfigError):
        sensor_spec("Pred4")


@pytest.mark.parametrize("T", [1, 2, 10])
def test_sensor_input_widths(T):
    r = 5
    p1, p2, p3 = (sensor_spec(v, T) for v in ("Pred1", "Pred2", "Pred3"))
    assert p1.input_width(r) == r * (1 + T)
    assert p2.input_width(r) == r * (2 * T)
    assert p3.input_width(r) == r * (1 + 2 * T)
    assert p3.input_width(r) == p1.input_width(r) + p2.input_width(r) - r * T


def test_rule_based_generator_learned():
    # subject s emits object (s + t) mod 2 at every step: the next object is
    # the one not seen now
    v = small_vocab(S=6, preds=(("e", BINARY, False),))
    ev = EventTensor(v, 12)
    for s in range(6):
        for t in range(12):
            ev.add(EventRecord(s, 0, (s + t) % 2, t, 1))
    spec = PredictionSpec(("current",), 0)
    m = make_model(v, 12, spec, hidden=(8,))
    train(m, TrainData(events=ev, pairs=designated_pairs(ev, active_only=False)[6:]),
          TrainConfig(lr=0.1, momentum=0.9, epochs=60, batch_size=8, seed=0))
    for s in range(6):
        for c in range(1, 12):
            theta = predict_step(CoevolutionState(KGTensor(v), ev, m, clock=c), spec, s)
            assert int(np.argmax(theta)) == (s + c) % 2


def test_pred1_constant_series_within_two_sigma():
    v = small_vocab(S=3, objects=("x",), preds=(("m", REAL, False),))
    rng = np.random.default_rng(0)
    sigma, level = 0.1, 0.7
    ev = EventTensor(v, 60)
    for s in range(3):
        for t in range(60):
            ev.add(EventRecord(s, 0, 0, t, level + sigma * float(rng.normal())))
    spec = sensor_spec("Pred1", T=3)
    m = make_model(v, 60, spec, hidden=(8,))
    train(m, TrainData(events=ev, pairs=designated_pairs(ev, origins=range(2, 59))),
          TrainConfig(lr=0.01, momentum=0.9, epochs=40, batch_size=16))
    st = CoevolutionState(KGTensor(v), ev, m, clock=60)
    for s in range(3):
        pred = predict_sensor(st, "Pred1", s, 55, 1)
        assert abs(pred[0] - level) < 2 * sigma


def coevolution_case(seed=0):
    rng = np.random.default_rng(seed)
    v = small_vocab(S=4, objects=("a", "b", "c"), preds=(("has", BINARY, True), ("lab", BINARY, False)))
    truth = random_events(v, 6, 40, rng)
    spec = PredictionSpec(("subject", "current", "history"), 2)
    m = make_model(v, 6, spec, seed=seed)
    kg = KGTensor(v)
    upsert_triple(kg, TripleRecord(0, 0, 2, 1))
    return v, truth, spec, m, kg


def test_coevolve_zero_steps():
    v, truth, spec, m, kg = coevolution_case()
    before = kg.copy()
    st, preds = coevolve(CoevolutionState(kg, EventTensor(v, 6), m), spec, 0, truth=truth)
    assert preds == [] and st.clock == 0 and st.kg == before


def oneshot_oracle(v, truth, m, kg0, spec, t):
    """Prediction at ``t`` computed from scratch: events before ``t`` and the KG they imply."""
    past = restrict(truth, lambda r: r.t < t)
    kg = kg0.copy()
    for r in sorted(past.records(), key=lambda r: r.t):
        if v.info[r.p].kg_bearing:
            upsert_triple(kg, TripleRecord(r.s, r.p, r.o, r.value))
    return predict_step(CoevolutionState(kg, past, m, clock=t), spec, np.arange(v.S))


def test_coevolve_observe_equals_oneshot():
    v, truth, spec, m, kg = coevolution_case()
    kg0 = kg.copy()
    _, preds = coevolve(CoevolutionState(kg, EventTensor(v, 6), m), spec, 6, truth=truth)
    for t, theta in preds:
        assert np.allclose(theta, oneshot_oracle(v, truth, m, kg0, spec, t), rtol=0, atol=1e-12)


def test_coevolve_causal():
    v, truth, spec, m, kg = coevolution_case()
    _, a = coevolve(CoevolutionState(kg.copy(), EventTensor(v, 6), m), spec, 6, truth=truth)
    changed = truth.copy()
    for s in range(v.S):
        changed.add(EventRecord(s, 0, 1, 4, 1))
        changed.add(EventRecord(s, 1, 0, 5, 0))
    _, b = coevolve(CoevolutionState(kg.copy(), EventTensor(v, 6), m), spec, 6, truth=changed)
    for (t, x), (_, y) in zip(a, b):
        if t <= 4:
            assert np.array_equal(x, y)


def test_self_feed_zero_net_adds_nothing():
    v, truth, spec, m, kg = coevolution_case()
    zero_net(m)
    before = kg.copy()
    st, preds = coevolve(CoevolutionState(kg, EventTensor(v, 6), m), spec, 4, mode="self-feed")
    assert len(preds) == 4 and st.clock == 4
    assert len(st.ev) == 0 and st.kg == before
    # any threshold below one half turns every output into an event
    st2, _ = coevolve(CoevolutionState(KGTensor(v), EventTensor(v, 6), m), spec, 1,
                      mode="self-feed", threshold=0.4)
    assert len(st2.ev) == v.S * v.slice_size


def test_self_feed_gaussian_needs_rule():
    v = small_vocab(S=2, objects=("x",), preds=(("m", REAL, True),))
    spec = sensor_spec("Pred1", T=2)
    m = make_model(v, 5, spec)
    st = CoevolutionState(KGTensor(v), EventTensor(v, 5), m, clock=1)
    with pytest.raises(ConfigError):
        coevolve(st, spec, 2, mode="self-feed")
    st, preds = coevolve(st, spec, 2, mode="self-feed", gaussian_rule="mean")
    assert st.clock == 3 and len(st.ev) == 2 * 2


def test_layout_mismatch_rejected():
    v, truth, spec, m, kg = coevolution_case()
    other = PredictionSpec(("subject", "current", "history"), 3)
    with pytest.raises(ConfigError):
        predict_step(CoevolutionState(kg, truth, m, clock=3), other, 0)


def test_coevolve_argument_errors():
    v, truth, spec, m, kg = coevolution_case()
    st = CoevolutionState(kg, EventTensor(v, 6), m)
    with pytest.raises(ConfigError):
        coevolve(st, spec, 1)  # observe mode without truth
    with pytest.raises(ValueError):
        coevolve(st, spec, 7, truth=truth)
    with pytest.raises(ConfigError):
        coevolve(st, spec, 1, mode="dream")
    with pytest.raises(ConfigError):
        CoevolutionState(kg, EventTensor(v, 6), m, clock=7)


def test_write_predictions(tmp_path):
    v, truth, spec, m, kg = coevolution_case()
    _, preds = coevolve(CoevolutionState(kg, EventTensor(v, 6), m), spec, 2, truth=truth)
    path = tmp_path / "p.jsonl"
    n = write_predictions(path, m, preds)
    rows = [json.loads(l) for l in path.read_text().splitlines()]
    assert n == len(rows) == 2 * v.S * v.slice_size
    assert abs(rows[0]["value"] - float(sigmoid(np.array(rows[0]["theta"])))) < 1e-15
