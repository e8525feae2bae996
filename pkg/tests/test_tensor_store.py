import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import small_vocab
from eventkg.errors import SchemaError
from eventkg.tensor_store import (
    BINARY,
    REAL,
    EventRecord,
    EventTensor,
    KGTensor,
    Labels,
    TripleRecord,
    Vocab,
    apply_events,
    merge,
    restrict,
    slice_subject,
    slice_subject_time,
    upsert_triple,
)


def test_labels_bijection():
    lab = Labels(["a", "b"])
    assert lab.add("c") == 2 and lab.add("a") == 0
    for i, name in enumerate(lab):
        assert lab.lookup(name) == i and lab.label(i) == name
    with pytest.raises(KeyError):
        lab.lookup("zzz")


def test_vocab_roundtrip_dict(vocab):
    assert Vocab.from_dict(vocab.to_dict()) == vocab
    assert vocab.flat(1, 0) == vocab.O
    assert vocab.unflat(vocab.flat(1, 1)) == (1, 1)


# upsert_triple


def test_upsert_single(vocab):
    kg = upsert_triple(KGTensor(vocab), TripleRecord(0, 0, 0, 1))
    assert len(kg) == 1 and kg.facts[(0, 0, 0)] == 1


def test_upsert_overwrite(vocab):
    kg = KGTensor(vocab)
    upsert_triple(kg, TripleRecord(0, 0, 0, 1))
    upsert_triple(kg, TripleRecord(0, 0, 0, 0))
    assert len(kg) == 1 and kg.facts[(0, 0, 0)] == 0


def test_upsert_bounds(vocab):
    with pytest.raises(IndexError):
        upsert_triple(KGTensor(vocab), TripleRecord(vocab.S, 0, 0, 1))


def test_upsert_kind_mismatch(vocab):
    with pytest.raises(SchemaError):
        upsert_triple(KGTensor(vocab), TripleRecord(0, 0, 0, 0.5))
    with pytest.raises(SchemaError):
        upsert_triple(KGTensor(vocab), TripleRecord(0, 1, 0, float("nan")))


# slice_subject


def test_slice_subject_layout():
    v = small_vocab(preds=(("p0", BINARY, True), ("p1", BINARY, True)))
    kg = upsert_triple(KGTensor(v), TripleRecord(0, 1, 0, 1))
    sl = slice_subject(kg, 0)
    assert sl.values.tolist() == [0, 0, 1, 0]
    assert sl.mask.tolist() == [0, 0, 1, 0]


def test_slice_subject_empty(vocab):
    sl = slice_subject(KGTensor(vocab), 1)
    assert not sl.values.any() and not sl.mask.any()


def test_slice_subject_full():
    v = small_vocab(preds=(("p0", BINARY, True), ("p1", BINARY, True)))
    kg = KGTensor(v)
    for (p, o), x in {(0, 0): 1, (0, 1): 0, (1, 0): 1, (1, 1): 1}.items():
        upsert_triple(kg, TripleRecord(0, p, o, x))
    sl = slice_subject(kg, 0)
    assert sl.values.tolist() == [1, 0, 1, 1]
    assert sl.mask.tolist() == [1, 1, 1, 1]


def test_slice_subject_bounds(vocab):
    with pytest.raises(IndexError):
        slice_subject(KGTensor(vocab), vocab.S)


# slice_subject_time


def test_slice_subject_time_layout(vocab):
    ev = EventTensor(vocab, 5).add(EventRecord(0, 0, 1, 3, 1))
    assert slice_subject_time(ev, 0, 3).values.tolist() == [0, 1, 0, 0]
    sl = slice_subject_time(ev, 0, 2)
    assert not sl.values.any() and not sl.mask.any()
    with pytest.raises(IndexError):
        slice_subject_time(ev, 0, 5)


def test_event_add_rejects_time_outside_horizon(vocab):
    with pytest.raises(IndexError):
        EventTensor(vocab, 3).add(EventRecord(0, 0, 0, 3, 1))


# apply_events


def test_apply_events_flip(vocab):
    kg = upsert_triple(KGTensor(vocab), TripleRecord(0, 0, 0, 1))
    ev = EventTensor(vocab, 3).add(EventRecord(0, 0, 0, 1, 0))
    apply_events(kg, ev, 1)
    assert kg.facts[(0, 0, 0)] == 0


def test_apply_events_skips_non_kg_bearing():
    v = small_vocab(preds=(("lab", BINARY, False),))
    kg = KGTensor(v)
    ev = EventTensor(v, 2).add(EventRecord(0, 0, 0, 0, 1))
    assert len(apply_events(kg, ev, 0)) == 0


def test_apply_events_no_events_identity(vocab, rng):
    kg = upsert_triple(KGTensor(vocab), TripleRecord(1, 1, 1, 2.5))
    before = kg.copy()
    apply_events(kg, EventTensor(vocab, 4), 2)
    assert kg == before


# properties


@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 1), st.integers(0, 1),
                          st.floats(-5, 5, allow_nan=False)), min_size=1, max_size=20))
def test_roundtrip_upsert_slice(cells):
    v = small_vocab(preds=(("p0", REAL, True), ("p1", REAL, True)))
    kg = KGTensor(v)
    last = {}
    for s, p, o, x in cells:
        upsert_triple(kg, TripleRecord(s, p, o, x))
        last[(s, p, o)] = x
    for (s, p, o), x in last.items():
        sl = slice_subject(kg, s)
        assert sl.values[p * v.O + o] == x and sl.mask[p * v.O + o] == 1


@given(st.integers(0, 2**32 - 1))
def test_apply_events_idempotent(seed):
    from conftest import random_events

    rng = np.random.default_rng(seed)
    v = small_vocab()
    ev = random_events(v, 4, 12, rng)
    t = int(rng.integers(4))
    once = apply_events(KGTensor(v), ev, t)
    twice = apply_events(apply_events(KGTensor(v), ev, t), ev, t)
    assert once == twice


def test_disjoint_subject_slices_do_not_alias(vocab):
    kg = KGTensor(vocab)
    upsert_triple(kg, TripleRecord(0, 1, 0, 3.0))
    upsert_triple(kg, TripleRecord(1, 1, 1, -1.0))
    before = slice_subject(kg, 1)
    upsert_triple(kg, TripleRecord(0, 1, 1, 7.0))
    after = slice_subject(kg, 1)
    assert np.array_equal(before.values, after.values) and np.array_equal(before.mask, after.mask)


def test_storage_linear_in_records():
    v = Vocab([f"s{i}" for i in range(1000)], (), [f"o{i}" for i in range(1000)])
    v.add_predicate("p", BINARY)
    kg = KGTensor(v)
    for i in range(50):
        upsert_triple(kg, TripleRecord(i, 0, i, 1))
    assert len(kg.facts) == 50  # never S * P * O


def test_restrict_and_merge_partition(vocab, rng):
    from conftest import random_events

    ev = random_events(vocab, 6, 40, rng)
    a = restrict(ev, lambda r: r.t < 3)
    b = restrict(ev, lambda r: r.t >= 3)
    assert len(a) + len(b) == len(ev)
    assert merge(a, b) == ev


def test_csr_views_match_records(vocab, rng):
    from conftest import random_events

    ev = random_events(vocab, 4, 30, rng)
    Z = ev.as_csr().toarray()
    N = ev.network_csr().toarray()
    PO = vocab.slice_size
    for r in ev.records():
        j = r.p * vocab.O + r.o
        assert Z[r.s * ev.horizon + r.t, j] == r.value
        assert N[r.t, r.s * PO + j] == r.value
