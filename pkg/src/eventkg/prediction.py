"""Windowed event prediction and the KG/event co-evolution loop."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import LatentModel, PredictionSpec, TensorCache
from .scoring import BERNOULLI, GAUSSIAN, LikelihoodSpec, sigmoid
from .tensor_store import EventRecord, EventTensor, KGTensor, apply_events

__all__ = [
    "PredictionSpec",
    "CoevolutionState",
    "clinical_spec",
    "recommendation_spec",
    "rating_spec",
    "sensor_spec",
    "predict_step",
    "predict_sensor",
    "coevolve",
    "write_predictions",
]

SENSOR_VARIANTS = ("Pred1", "Pred2", "Pred3")


def clinical_spec(window: int = 6, outputs=None, with_kg=True, with_events=True) -> PredictionSpec:
    """Next-visit model over the last ``window + 1`` visits.

    ``with_kg`` adds the patient's KG profile (and, together with events,
    the visit embedding); without events only the KG profile remains.
    """
    if not (with_kg or with_events):
        raise ConfigError("clinical model needs KG or event inputs")
    if not with_events:
        return PredictionSpec(("subject",), 0, outputs)
    roster = (["subject", "time"] if with_kg else []) + ["current", "history"]
    return PredictionSpec(tuple(roster), window, outputs)


def recommendation_spec(window: int = 2, outputs=None) -> PredictionSpec:
    return PredictionSpec(("subject", "time", "current", "history"), window, outputs)


def rating_spec(outputs=None, sigma: float = 1.0) -> PredictionSpec:
    """Ratings from the KG profile alone, Gaussian outputs."""
    return PredictionSpec(("subject",), 0, outputs, LikelihoodSpec(GAUSSIAN, sigma))


def sensor_spec(variant: str, T: int = 10, lead: int = 1, outputs=None,
                sigma: float = 1.0) -> PredictionSpec:
    """Sensor models consuming the ``T`` most recent steps before the target window.

    Pred1 uses the station vector and its own last ``T`` measurements, Pred2
    replaces the station vector with the last ``T`` network embeddings and
    Pred3 uses both.  The origin time is the last observed step, so the
    ``T`` lags are ``current`` plus ``T - 1`` history steps.
    """
    if variant not in SENSOR_VARIANTS:
        raise ConfigError(f"unknown sensor variant {variant!r}; expected one of {SENSOR_VARIANTS}")
    if T < 1:
        raise ConfigError("sensor window must be at least 1")
    own = ["current"] + (["history"] if T > 1 else [])
    net = ["time"] + (["network_history"] if T > 1 else [])
    roster = {
        "Pred1": ["subject", *own],
        "Pred2": [*own, *net],
        "Pred3": ["subject", *own, *net],
    }[variant]
    return PredictionSpec(tuple(roster), T - 1, outputs, LikelihoodSpec(GAUSSIAN, sigma), lead)


@dataclass
class CoevolutionState:
    """KG, observed events, model and clock.

    Events with time ``< clock`` have been absorbed into the KG; the next
    prediction targets time ``clock``.
    """

    kg: KGTensor
    ev: EventTensor
    model: LatentModel
    clock: int = 0

    def __post_init__(self):
        if not 0 <= self.clock <= self.ev.horizon:
            raise ConfigError(f"clock {self.clock} outside [0, {self.ev.horizon}]")

    def cache(self) -> TensorCache:
        return TensorCache(self.kg, self.ev)


def _check_layout(model: LatentModel, spec: PredictionSpec):
    if model.config.predict is None:
        raise ConfigError("model has no prediction scorer")
    if spec.checksum() != model.layout_checksum():
        raise ConfigError(
            "prediction spec layout does not match the model's trained layout "
            f"({spec.checksum()} != {model.layout_checksum()})"
        )


def predict_step(state: CoevolutionState, spec: PredictionSpec, s, cache=None) -> np.ndarray:
    """Natural parameters over the output ``(p, o)`` pairs for target time ``clock``.

    ``s`` may be a single subject or an array of subjects.  The origin of the
    window is ``clock - lead``.
    """
    _check_layout(state.model, spec)
    cache = cache or state.cache()
    subjects = np.atleast_1d(np.asarray(s, dtype=int))
    for si in subjects:
        if not 0 <= si < state.ev.vocab.S:
            raise IndexError(f"subject index {si} out of range")
    origin = np.full(len(subjects), state.clock - spec.lead)
    theta = state.model.predict_forward(cache, subjects, origin)
    return theta[0] if np.ndim(s) == 0 else theta


def predict_sensor(state: CoevolutionState, variant: str, s: int, t: int, lead: int) -> np.ndarray:
    """Standardized predictions for time ``t + lead - 1`` from steps ``t-1 .. t-T``."""
    if variant not in SENSOR_VARIANTS:
        raise ConfigError(f"unknown sensor variant {variant!r}")
    model_spec = state.model.config.predict
    if model_spec is None:
        raise ConfigError("model has no prediction scorer")
    spec = sensor_spec(variant, model_spec.window + 1, lead, model_spec.outputs,
                       model_spec.likelihood.sigma)
    _check_layout(state.model, spec)
    cache = state.cache()
    return state.model.predict_forward(cache, np.array([s]), np.array([t - 1]))[0]


def coevolve(state: CoevolutionState, spec: PredictionSpec, steps: int, mode: str = "observe",
             truth: EventTensor | None = None, threshold: float = 0.5,
             gaussian_rule: str | None = None, reestimate_every: int | None = None,
             refit=None):
    """Advance the clock ``steps`` times, absorbing events into the KG.

    Each step predicts every subject at time ``clock``; in ``observe`` mode
    the true events at ``clock`` are copied from ``truth`` into the event
    tensor, in ``self-feed`` mode Bernoulli outputs with probability strictly
    above ``threshold`` become events of value 1 (Gaussian outputs need
    ``gaussian_rule="mean"``).  KG-bearing events are then applied to the KG.
    ``refit(state)`` runs every ``reestimate_every`` steps when both are given.

    Returns ``(state, predictions)`` where ``predictions`` holds one
    ``(time, theta[S, n_outputs])`` entry per step.
    """
    if mode not in ("observe", "self-feed"):
        raise ConfigError(f"unknown mode {mode!r}")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    horizon = state.ev.horizon
    if mode == "observe":
        if truth is None:
            raise ConfigError("observe mode needs the true event tensor")
        if steps > horizon - state.clock:
            raise ValueError(f"steps {steps} exceed remaining horizon {horizon - state.clock}")
    elif spec.likelihood.kind == GAUSSIAN and gaussian_rule != "mean":
        raise ConfigError("self-feed with Gaussian outputs needs gaussian_rule='mean'")
    elif steps > horizon - state.clock:
        raise ValueError(f"steps {steps} exceed remaining horizon {horizon - state.clock}")
    _check_layout(state.model, spec)
    cells = state.model.output_cells()
    subjects = np.arange(state.ev.vocab.S)
    predictions = []
    for step in range(steps):
        t = state.clock
        theta = predict_step(state, spec, subjects)
        predictions.append((t, theta))
        if mode == "observe":
            for rec in truth.at_time(t):
                state.ev.add(rec)
        else:
            if spec.likelihood.kind == BERNOULLI:
                hit = sigmoid(theta) > threshold
                for si, j in zip(*np.nonzero(hit)):
                    p, o = cells[j]
                    state.ev.add(EventRecord(int(si), p, o, t, 1))
            else:
                for si in subjects:
                    for j, (p, o) in enumerate(cells):
                        state.ev.add(EventRecord(int(si), p, o, t, float(theta[si, j])))
        apply_events(state.kg, state.ev, t)
        state.clock = t + 1
        if reestimate_every and refit is not None and (step + 1) % reestimate_every == 0:
            refit(state)
    return state, predictions


def write_predictions(path, model: LatentModel, predictions, subjects=None) -> int:
    """Write ``(subject, predicate, object, time, theta, value)`` lines; returns the count."""
    vocab = model.vocab
    cells = model.output_cells()
    lik = model.config.predict.likelihood
    n = 0
    with open(path, "w") as fh:
        for t, theta in predictions:
            theta = np.atleast_2d(theta)
            rows = range(theta.shape[0]) if subjects is None else subjects
            for i, si in enumerate(rows):
                for j, (p, o) in enumerate(cells):
                    th = float(theta[i, j])
                    value = float(sigmoid(np.array(th))) if lik.kind == BERNOULLI else th
                    fh.write(json.dumps({
                        "subject": vocab.subjects.label(int(si)),
                        "predicate": vocab.predicates.label(p),
                        "object": vocab.objects.label(o),
                        "time": int(t),
                        "theta": th,
                        "value": value,
                    }) + "\n")
                    n += 1
    return n
