import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import small_vocab
from oracles import auprc_sweep, auroc_pairs, normal_equation_ridge
from eventkg.errors import DomainError, MissingDataError, NumericError, UndefinedMetricError
from eventkg.evaluation import (
    LogisticBaseline,
    MetricReport,
    RidgeBaseline,
    ScoredSet,
    auprc,
    auroc,
    baseline_constant,
    baseline_last_value,
    format_table,
    history_features,
    occurrence_rates,
    regression_error,
    write_reports,
)
from eventkg.tensor_store import BINARY, EventRecord, EventTensor


def test_metric_examples():
    perfect = ScoredSet([0.9, 0.8, 0.1], [1, 1, 0])
    assert auroc(perfect) == 1.0 and auprc(perfect) == 1.0
    assert auroc(ScoredSet([0.1, 0.9], [1, 0])) == 0.0
    assert auroc(ScoredSet([0.5] * 4, [1, 0, 1, 0])) == 0.5
    assert auprc(ScoredSet([0.5] * 4, [1, 0, 0, 0])) == 0.25
    with pytest.raises(UndefinedMetricError):
        auroc(ScoredSet([0.1, 0.2], [1, 1]))
    with pytest.raises(UndefinedMetricError):
        auprc(ScoredSet([0.1, 0.2], [0, 0]))


labelled = st.lists(st.tuples(st.integers(0, 6).map(float), st.integers(0, 1)),
                    min_size=2, max_size=40).filter(
    lambda xs: 0 < sum(y for _, y in xs) < len(xs))


@given(labelled)
def test_metrics_match_exhaustive_oracles(items):
    s, y = zip(*items)
    data = ScoredSet(s, y)
    assert auroc(data) == float(auroc_pairs(s, y))
    assert auprc(data) == float(auprc_sweep(s, y))


@given(labelled, st.integers(0, 10_000))
def test_metrics_invariant_to_monotone_transform_and_order(items, seed):
    s, y = map(np.array, zip(*items))
    base = ScoredSet(s, y)
    moved = ScoredSet(np.exp(0.3 * s) - 4.0, y)
    perm = np.random.default_rng(seed).permutation(len(s))
    shuffled = ScoredSet(s[perm], y[perm])
    for f in (auroc, auprc):
        assert f(base) == f(moved) == f(shuffled)


@given(labelled)
def test_auroc_flip(items):
    s, y = map(np.array, zip(*items))
    assert math.isclose(auroc(ScoredSet(s, y)) + auroc(ScoredSet(-s, y)), 1.0, abs_tol=1e-12)


@given(labelled)
def test_auprc_bounds(items):
    s, y = map(np.array, zip(*items))
    v = auprc(ScoredSet(s, y))
    assert 0 < v <= 1


def test_random_scores_auprc_near_prevalence():
    rng = np.random.default_rng(0)
    y = rng.random(200_000) < 0.05
    v = auprc(ScoredSet(rng.random(len(y)), y))
    assert abs(v - y.mean()) < 0.005


def test_regression_error():
    d = ScoredSet([1.0, 2.0], [0.0, 0.0])
    assert regression_error(d) == 2.5
    assert regression_error(d, "RMSE") == math.sqrt(2.5)
    with pytest.raises(MissingDataError):
        regression_error(ScoredSet([], []))
    with pytest.raises(DomainError):
        regression_error(d, "MAE")


def test_constant_baseline_rates():
    v = small_vocab(S=2, preds=(("e", BINARY, False),))
    ev = EventTensor(v, 4)
    ev.add(EventRecord(0, 0, 0, 0, 1)).add(EventRecord(0, 0, 1, 1, 1)).add(EventRecord(1, 0, 0, 1, 1))
    # three active steps; object 0 occurred in two of them
    assert np.allclose(occurrence_rates(ev), [2 / 3, 1 / 3])
    sc = baseline_constant(ev, [(1, 0, 0, 3), (1, 0, 1, 3)], [1, 0])
    assert np.allclose(sc.scores, [2 / 3, 1 / 3]) and auroc(sc) == 1.0
    assert not occurrence_rates(EventTensor(v, 2)).any()


def test_last_value():
    assert baseline_last_value([1.0, 2.0, 3.0]) == 3.0
    assert baseline_last_value(np.array([[1.0, 2.0], [3.0, 4.0]])).tolist() == [2.0, 4.0]
    with pytest.raises(MissingDataError):
        baseline_last_value([])


@given(st.integers(0, 10_000), st.floats(1e-3, 10))
def test_ridge_matches_normal_equations(seed, lam):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 4))
    Y = X @ rng.normal(size=(4, 2)) + 0.1 * rng.normal(size=(30, 2)) + 3.0
    m = RidgeBaseline(lam).fit(X, Y)
    B, c = normal_equation_ridge(X, Y, lam)
    assert np.allclose(m.coef, B, atol=1e-8) and np.allclose(m.intercept, c, atol=1e-8)


def test_ridge_exact_fit_and_rank_deficiency():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 3))
    Y = X @ np.array([1.0, -2.0, 0.5]) + 4.0
    m = RidgeBaseline(0.0).fit(X, Y)
    assert np.allclose(m.predict(X), Y, atol=1e-10)
    with pytest.raises(NumericError):
        RidgeBaseline(0.0).fit(np.c_[X, X[:, 0]], Y)
    RidgeBaseline(1e-3).fit(np.c_[X, X[:, 0]], Y)
    with pytest.raises(DomainError):
        RidgeBaseline(-1.0)


def test_ridge_large_lambda_predicts_mean():
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(40, 3)), rng.normal(size=40)
    m = RidgeBaseline(1e12).fit(X, Y)
    assert np.allclose(m.predict(X), Y.mean(), atol=1e-9)


def test_random_walk_mse_grows_with_lead():
    rng = np.random.default_rng(0)
    x = np.cumsum(rng.normal(size=20_000))
    errs = []
    for lead in (1, 5, 20):
        T = 5
        idx = np.arange(T, len(x) - lead)
        X = np.stack([x[idx - k] for k in range(T)], axis=1)
        Y = x[idx + lead]
        m = RidgeBaseline(1e-3).fit(X, Y)
        errs.append(regression_error(ScoredSet(m.predict(X), Y)))
    assert errs[0] < errs[1] < errs[2]
    assert abs(errs[2] / errs[0] - 20) < 3  # variance grows linearly with the lead


def test_logistic_baseline_separates():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(400, 3))
    Y = np.c_[(X[:, 0] > 0), (X[:, 1] < 0)].astype(float)
    m = LogisticBaseline(lam=1e-3).fit(X, Y)
    P = m.predict_proba(X)
    assert P.shape == Y.shape
    assert auroc(ScoredSet(P[:, 0], Y[:, 0])) > 0.99 and auroc(ScoredSet(P[:, 1], Y[:, 1])) > 0.99


def test_history_features_layout():
    v = small_vocab(S=1, preds=(("e", BINARY, False),))
    ev = EventTensor(v, 4).add(EventRecord(0, 0, 1, 2, 1)).add(EventRecord(0, 0, 0, 1, 1))
    F = history_features(ev, [(0, 2), (0, 0)], T=2)
    assert F.tolist() == [[0, 1, 1, 0], [0, 0, 0, 0]]
    assert history_features(ev, [(0, 2)], T=2, outputs=[1]).tolist() == [[1, 0]]


def test_metric_report_invariant(tmp_path):
    r = MetricReport.from_values("AUROC", [0.8, 0.9], model="m")
    assert r.repeats == 2 and math.isclose(r.std, np.std([0.8, 0.9], ddof=1))
    assert MetricReport.from_values("AUROC", [0.8]).std is None
    with pytest.raises(ValueError):
        MetricReport("AUROC", 0.5, std=0.1, repeats=1)
    with pytest.raises(ValueError):
        MetricReport("AUROC", 0.5, std=None, repeats=3)
    write_reports(tmp_path / "r.jsonl", [r])
    assert json.loads((tmp_path / "r.jsonl").read_text())["value"] == r.value
    table = format_table([r, MetricReport("AUPRC", 0.3, model="m")])
    assert "AUROC" in table and "0.850 +/-" in table and "0.300" in table
