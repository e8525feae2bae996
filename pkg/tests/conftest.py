import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from eventkg.tensor_store import BINARY, REAL, EventRecord, EventTensor, KGTensor, Vocab  # noqa: E402


def small_vocab(S=3, objects=("o0", "o1"), preds=(("p0", BINARY, True), ("p1", REAL, True))):
    v = Vocab([f"s{i}" for i in range(S)], (), objects)
    for name, kind, kgb in preds:
        v.add_predicate(name, kind, kg_bearing=kgb)
    return v


@pytest.fixture
def vocab():
    return small_vocab()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_events(vocab, horizon, n, rng):
    ev = EventTensor(vocab, horizon)
    for _ in range(n):
        s, p, o, t = (int(rng.integers(k)) for k in (vocab.S, vocab.P, vocab.O, horizon))
        v = int(rng.integers(2)) if vocab.kind(p) == BINARY else float(rng.normal())
        ev.add(EventRecord(s, p, o, t, v))
    return ev


def empty_kg(vocab):
    return KGTensor(vocab)


ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
