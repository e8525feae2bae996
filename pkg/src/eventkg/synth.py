"""Seeded synthetic datasets shaped like the clinical, ratings and sensor tasks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_store import (
    BINARY,
    REAL,
    EventRecord,
    EventTensor,
    KGTensor,
    TripleRecord,
    Vocab,
    upsert_triple,
)

TASKS = ("clinical", "ratings", "sensor")


@dataclass
class SynthData:
    vocab: Vocab
    events: EventTensor
    kg: KGTensor
    outputs: tuple
    info: dict = field(default_factory=dict)


def _output_cells(vocab, predicates):
    return tuple(
        vocab.flat(vocab.predicates.lookup(p), o) for p in predicates for o in range(vocab.O)
    )


def clinical(n_subjects=300, seed=0, horizon=16, n_meds=40, n_labs=15, n_regimes=4,
             stay=0.85, min_visits=6):
    """Patients with hidden Markov regimes driving prescriptions and lab bands.

    Static attributes (gender, blood type, donor type) set the initial regime
    distribution and switch on attribute-specific medications; one
    medication fades with the visit index.  Each visit measures every lab
    with a small probability (at least one lab per visit) and encodes it as
    low/normal/high.
    """
    rng = np.random.default_rng(seed)
    genders = ["male", "female"]
    bloods = ["A", "B", "AB", "O"]
    donors = ["living", "deceased"]
    meds = [f"med_{i}" for i in range(n_meds)]
    bands = [f"lab_{j}_{b}" for j in range(n_labs) for b in ("low", "normal", "high")]
    vocab = Vocab([f"patient_{i}" for i in range(n_subjects)], (),
                  meds + bands + [f"gender_{g}" for g in genders]
                  + [f"blood_{b}" for b in bloods] + [f"donor_{d}" for d in donors])
    vocab.add_predicate("has_gender", BINARY, kg_bearing=True)
    vocab.add_predicate("has_blood_type", BINARY, kg_bearing=True)
    vocab.add_predicate("has_donor", BINARY, kg_bearing=True)
    p_rx = vocab.add_predicate("prescribed", BINARY, kg_bearing=True)
    p_lab = vocab.add_predicate("lab_result", BINARY, kg_bearing=False)

    # regime profiles
    med_p = np.full((n_regimes, n_meds), 0.01)
    for k in range(n_regimes):
        sig = rng.choice(n_meds - 4, size=3, replace=False)
        med_p[k, sig] = 0.5
    band_p = np.empty((n_regimes, n_labs, 3))
    for k in range(n_regimes):
        for j in range(n_labs):
            band_p[k, j] = (0.1, 0.8, 0.1)
        for j in rng.choice(n_labs, size=3, replace=False):
            band_p[k, j] = (0.05, 0.15, 0.8) if rng.random() < 0.5 else (0.8, 0.15, 0.05)
    lab_rate = 0.12
    # attributes -> initial regime logits
    attr_logits = rng.normal(0.0, 1.5, size=(len(genders) + len(bloods) + len(donors), n_regimes))
    attr_med = {  # attribute-specific medications (last four meds)
        ("gender", "female"): n_meds - 4,
        ("donor", "deceased"): n_meds - 3,
        ("blood", "AB"): n_meds - 2,
    }
    fading_med = n_meds - 1

    kg = KGTensor(vocab)
    ev = EventTensor(vocab, horizon)
    regimes = np.zeros((n_subjects, horizon), dtype=int)
    for i in range(n_subjects):
        g, b, d = rng.integers(2), rng.integers(4), rng.integers(2)
        for pred, obj in (("has_gender", f"gender_{genders[g]}"), ("has_blood_type", f"blood_{bloods[b]}"),
                          ("has_donor", f"donor_{donors[d]}")):
            upsert_triple(kg, TripleRecord(i, vocab.predicates.lookup(pred), vocab.objects.lookup(obj), 1))
        logits = attr_logits[g] + attr_logits[2 + b] + attr_logits[6 + d]
        prob = np.exp(logits - logits.max())
        k = rng.choice(n_regimes, p=prob / prob.sum())
        extra = []
        if genders[g] == "female":
            extra.append(attr_med[("gender", "female")])
        if donors[d] == "deceased":
            extra.append(attr_med[("donor", "deceased")])
        if bloods[b] == "AB":
            extra.append(attr_med[("blood", "AB")])
        n_visits = int(rng.integers(min_visits, horizon + 1))
        for t in range(n_visits):
            if t > 0 and rng.random() > stay:
                k = rng.choice([c for c in range(n_regimes) if c != k])
            regimes[i, t] = k
            p = med_p[k].copy()
            p[extra] = 0.45
            p[fading_med] = 0.6 * np.exp(-t / 3.0)
            for m in np.flatnonzero(rng.random(n_meds) < p):
                ev.add(EventRecord(i, p_rx, int(m), t, 1))
            measured = np.flatnonzero(rng.random(n_labs) < lab_rate)
            if len(measured) == 0:
                measured = [int(rng.integers(n_labs))]
            for j in measured:
                band = rng.choice(3, p=band_p[k, j])
                for c in range(3):
                    ev.add(EventRecord(i, p_lab, n_meds + 3 * j + c, t, int(c == band)))
    outputs = _output_cells(vocab, ["prescribed", "lab_result"])
    return SynthData(vocab, ev, kg, outputs, {"regimes": regimes})


def ratings(n_users=200, n_movies=80, seed=0, horizon=12, n_genres=4, switch=0.1,
            active=0.7, per_week=3, rewatch=True, focus=20.0):
    """Users with drifting genre tastes who watch and rate movies weekly.

    Each active week a user watches ``per_week`` movies, mostly from the
    current favourite genre (``focus`` times more likely), and rates them by
    genre affinity plus noise.
    With ``rewatch=False`` a movie is watched at most once per user.  The
    favourite genre occasionally switches.  Ratings are 1..5, centered per
    user.
    """
    rng = np.random.default_rng(seed)
    vocab = Vocab([f"user_{u}" for u in range(n_users)], (), [f"movie_{m}" for m in range(n_movies)])
    p_watch = vocab.add_predicate("watches", BINARY, kg_bearing=False)
    p_rate = vocab.add_predicate("rates", REAL, kg_bearing=True)
    genre = rng.integers(n_genres, size=n_movies)
    quality = rng.normal(0.0, 0.5, size=n_movies)
    affinity = rng.normal(0.0, 1.0, size=(n_users, n_genres))
    popularity = np.exp(rng.normal(0.0, 0.7, size=n_movies))
    ev = EventTensor(vocab, horizon)
    raw = []
    for u in range(n_users):
        fav = int(np.argmax(affinity[u] + rng.gumbel(size=n_genres)))
        seen = set()
        for t in range(horizon):
            if rng.random() < switch:
                fav = int(rng.integers(n_genres))
            if rng.random() > active:
                continue
            w = popularity * np.where(genre == fav, focus, 1.0)
            if not rewatch:
                w[list(seen)] = 0.0
            if w.sum() == 0:
                continue
            k = min(per_week, int(np.count_nonzero(w)))
            picks = rng.choice(n_movies, size=k, replace=False, p=w / w.sum())
            for m in picks:
                seen.add(int(m))
                score = 3.0 + affinity[u, genre[m]] + quality[m] + rng.normal(0.0, 0.5)
                raw.append((u, int(m), t, float(np.clip(np.round(score), 1, 5))))
    means = {}
    for u in range(n_users):
        rs = [r for (uu, _, _, r) in raw if uu == u]
        means[u] = float(np.mean(rs)) if rs else 0.0
    for u, m, t, r in raw:
        ev.add(EventRecord(u, p_watch, m, t, 1))
        ev.add(EventRecord(u, p_rate, m, t, r - means[u]))
    kg = KGTensor(vocab)
    outputs = _output_cells(vocab, ["watches"])
    return SynthData(vocab, ev, kg, outputs, {"genre": genre, "user_means": means})


def sensor_series(n_stations=6, n_steps=12000, seed=0, period=400.0, max_rate=0.1):
    """Raw ``(station, series, time)`` array for temperature, wind and pressure.

    A shared smooth network factor ``g`` drives every station.  Wind follows
    a station-specific AR(1) process; temperature relaxes towards an
    equilibrium ``mu + b * g`` at a rate that grows with wind (up to
    ``max_rate`` per step), so multi-step temperature forecasts depend on a
    product of observed series.  Pressure is ``mu + b * g`` plus AR(1) noise.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_steps)
    g = np.sin(2 * np.pi * t / period) + 0.5 * np.sin(2 * np.pi * t / (period / 3.1) + 1.0)
    walk = np.zeros(n_steps)
    for i in range(1, n_steps):
        walk[i] = 0.995 * walk[i - 1] + rng.normal(0.0, 0.05)
    g = g + walk
    out = np.empty((n_stations, 3, n_steps))
    for s in range(n_stations):
        mu = rng.normal(0.0, 1.5, size=3)
        b = rng.uniform(0.5, 1.5, size=3)
        wind = np.zeros(n_steps)
        eps = rng.normal(0.0, 0.2, size=n_steps)
        for i in range(1, n_steps):
            wind[i] = 0.98 * wind[i - 1] + eps[i]
        rate = max_rate / (1.0 + np.exp(-2.0 * wind))
        target = mu[0] + b[0] * g
        temp = np.empty(n_steps)
        temp[0] = target[0]
        shock = rng.normal(0.0, 0.15, size=n_steps)
        for i in range(1, n_steps):
            temp[i] = temp[i - 1] + rate[i - 1] * (target[i - 1] - temp[i - 1]) + shock[i]
        press = np.zeros(n_steps)
        eps = rng.normal(0.0, 0.1, size=n_steps)
        for i in range(1, n_steps):
            press[i] = 0.97 * press[i - 1] + eps[i]
        out[s, 0] = temp
        out[s, 1] = mu[1] + b[1] * wind
        out[s, 2] = mu[2] + b[2] * g + press
    out += rng.normal(0.0, 0.05, size=out.shape)
    return out


def sensor(n_stations=6, n_steps=12000, seed=0, smooth=21, readout=0.05):
    """Sensor tensor ``(station, measures, sensor_type, t; value)`` after Hann smoothing.

    ``readout`` is the standard deviation of noise added after smoothing,
    standing in for the finite precision of stored measurements.
    """
    from .ingest import hanning_smooth

    raw = sensor_series(n_stations, n_steps, seed)
    rng = np.random.default_rng((seed, 1))
    types = ["temperature", "wind", "pressure"]
    vocab = Vocab([f"station_{s}" for s in range(n_stations)], (), types)
    p = vocab.add_predicate("measures", REAL, kg_bearing=False)
    ev = EventTensor(vocab, n_steps)
    for s in range(n_stations):
        for j in range(len(types)):
            series = hanning_smooth(raw[s, j], smooth) if smooth > 1 else raw[s, j]
            series = series + rng.normal(0.0, readout, size=len(series)) if readout else series
            for t, v in enumerate(series):
                ev._set(s, p, j, t, float(v))
    kg = KGTensor(vocab)
    return SynthData(vocab, ev, kg, tuple(range(vocab.slice_size)), {"raw": raw})


def random_instance(seed=0, max_size=8, max_horizon=4, density=0.3):
    """Small random KG and event tensor mixing binary and real predicates.

    ``S``, ``P`` and ``O`` are drawn from ``[2, max_size]`` and the horizon
    from ``[2, max_horizon]``.  Predicate 0 is binary and predicate 1 real;
    further predicates pick a kind at random.
    """
    rng = np.random.default_rng(seed)
    S, P, O = (int(rng.integers(2, max_size + 1)) for _ in range(3))
    H = int(rng.integers(2, max_horizon + 1))
    vocab = Vocab([f"s{i}" for i in range(S)], (), [f"o{i}" for i in range(O)])
    for p in range(P):
        kind = BINARY if p == 0 else REAL if p == 1 else (BINARY if rng.random() < 0.5 else REAL)
        vocab.add_predicate(f"p{p}", kind, kg_bearing=bool(rng.random() < 0.7))

    def value(p):
        return int(rng.integers(2)) if vocab.kind(p) == BINARY else float(rng.normal())

    kg = KGTensor(vocab)
    ev = EventTensor(vocab, H)
    for s in range(S):
        for p in range(P):
            for o in range(O):
                if rng.random() < density:
                    upsert_triple(kg, TripleRecord(s, p, o, value(p)))
                for t in range(H):
                    if rng.random() < density / 2:
                        ev.add(EventRecord(s, p, o, t, value(p)))
    return vocab, kg, ev


def generate(task: str, seed: int = 0, **kwargs) -> SynthData:
    if task == "clinical":
        return clinical(seed=seed, **kwargs)
    if task == "ratings":
        return ratings(seed=seed, **kwargs)
    if task == "sensor":
        return sensor(seed=seed, **kwargs)
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
