import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_events, small_vocab
from eventkg.errors import ConfigError, ShapeError
from eventkg.representations import (
    EmbeddingTable,
    MMapMatrix,
    mmap_embed,
    network_slice,
    time_embedding,
    window_embeddings,
)
from eventkg.tensor_store import (
    EventRecord,
    EventTensor,
    KGTensor,
    SliceVector,
    TripleRecord,
    slice_subject,
    upsert_triple,
)


def test_mmap_identity_and_zero():
    M = MMapMatrix("subject", [[1, 0], [0, 1]])
    assert mmap_embed(M, np.array([3.0, -1.0])).tolist() == [3.0, -1.0]
    M2 = MMapMatrix("subject", [[1, 1], [0, 2]])
    assert mmap_embed(M2, np.zeros(2)).tolist() == [0.0, 0.0]


def test_mmap_masked_cells_contribute_nothing():
    M = MMapMatrix("subject", np.ones((2, 3)))
    x = SliceVector(np.array([1.0, 5.0, 2.0]), np.array([1, 0, 1]))
    assert mmap_embed(M, x).tolist() == [3.0, 3.0]


def test_mmap_shape_error():
    with pytest.raises(ShapeError):
        mmap_embed(MMapMatrix("subject", np.ones((2, 3))), np.ones(4))


def test_mmap_column_limit():
    with pytest.raises(ConfigError):
        MMapMatrix.random("time", 2, 100, np.random.default_rng(0), max_columns=10)


vec3 = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3)


@given(vec3, vec3, st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 1000))
def test_mmap_linear(x, y, a, b, seed):
    M = MMapMatrix.random("subject", 4, 3, np.random.default_rng(seed))
    x, y = np.array(x), np.array(y)
    lhs = mmap_embed(M, a * x + b * y)
    rhs = a * mmap_embed(M, x) + b * mmap_embed(M, y)
    assert np.allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(rhs).max()))


@given(st.integers(0, 10_000))
def test_mmap_additive_over_disjoint_masks(seed):
    rng = np.random.default_rng(seed)
    M = MMapMatrix.random("subject", 3, 6, rng)
    values = rng.normal(size=6)
    m1 = rng.integers(0, 2, size=6)
    m2 = 1 - m1
    whole = mmap_embed(M, SliceVector(values, np.ones(6)))
    parts = mmap_embed(M, SliceVector(values, m1)) + mmap_embed(M, SliceVector(values, m2))
    assert np.allclose(whole, parts)


def test_window_zero_padding(vocab):
    ev = EventTensor(vocab, 5).add(EventRecord(0, 0, 0, 0, 1))
    M = MMapMatrix("subject_time", np.eye(vocab.slice_size)[:2])
    out = window_embeddings(ev, M, 0, 1, 3)
    assert len(out) == 4
    assert out[0].tolist() == [0, 0] and out[1].tolist() == [1, 0]
    assert out[2].tolist() == [0, 0] and out[3].tolist() == [0, 0]


@given(st.integers(0, 10_000))
def test_window_shift(seed):
    rng = np.random.default_rng(seed)
    v = small_vocab()
    ev = random_events(v, 8, 25, rng)
    M = MMapMatrix.random("subject_time", 2, v.slice_size, rng)
    s, t, T = int(rng.integers(v.S)), int(rng.integers(1, 8)), int(rng.integers(1, 4))
    cur = window_embeddings(ev, M, s, t, T)
    prev = window_embeddings(ev, M, s, t - 1, T)
    for k in range(T):
        assert np.array_equal(cur[k + 1], prev[k])


def test_window_bad_args(vocab):
    ev = EventTensor(vocab, 3)
    M = MMapMatrix("subject_time", np.ones((2, vocab.slice_size)))
    with pytest.raises(ValueError):
        window_embeddings(ev, M, 0, 0, -1)
    with pytest.raises(IndexError):
        window_embeddings(ev, M, vocab.S, 0, 1)


def test_new_subject_embedding_without_retraining(vocab):
    M = MMapMatrix.random("subject", 3, vocab.slice_size, np.random.default_rng(0))
    kg = KGTensor(vocab)
    upsert_triple(kg, TripleRecord(0, 0, 1, 1))
    before = M.weights.copy()
    a0 = mmap_embed(M, slice_subject(kg, 2))
    vocab2 = vocab
    upsert_triple(kg, TripleRecord(2, 1, 0, 0.5))
    a = mmap_embed(M, slice_subject(kg, 2))
    assert np.array_equal(M.weights, before)
    assert np.allclose(a - a0, 0.5 * M.weights[:, vocab2.flat(1, 0)])


def test_embedding_table_lookup():
    tab = EmbeddingTable("object", np.arange(6.0).reshape(3, 2))
    assert tab.lookup(2).tolist() == [4.0, 5.0]
    with pytest.raises(IndexError):
        tab.lookup(3)
    with pytest.raises(ShapeError):
        EmbeddingTable("object", np.ones(3))


def test_time_embedding_mmap_and_table(vocab, rng):
    ev = random_events(vocab, 4, 20, rng)
    cols = vocab.S * vocab.slice_size
    M = MMapMatrix.random("time", 2, cols, rng)
    assert np.allclose(time_embedding(ev, M, 2), M.weights @ network_slice(ev, 2))
    tab = EmbeddingTable("time", np.arange(8.0).reshape(4, 2))
    assert time_embedding(ev, tab, 3).tolist() == [6.0, 7.0]
    with pytest.raises(IndexError):
        time_embedding(ev, tab, 4)
    with pytest.raises(ShapeError):
        time_embedding(ev, MMapMatrix("time", np.ones((2, cols + 1))), 0)
