"""Ranking/regression metrics and reference baselines."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from scipy import sparse
from scipy.optimize import minimize
from scipy.stats import rankdata

from .errors import DomainError, MissingDataError, NumericError, UndefinedMetricError
from .scoring import sigmoid, softplus
from .tensor_store import EventTensor


@dataclass
class ScoredSet:
    """Parallel arrays of scores and labels (or predictions and targets)."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float).ravel()
        self.labels = np.asarray(self.labels, dtype=float).ravel()
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels must have the same length")

    def __len__(self):
        return len(self.scores)


def auroc(data: ScoredSet) -> float:
    """Probability that a random positive outranks a random negative (ties count 1/2)."""
    y = data.labels
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    ranks = rankdata(data.scores)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


EXACT_STEPS = 512


def auprc(data: ScoredSet) -> float:
    """Area under the precision-recall step curve.

    Scores are swept in descending order; all items sharing a score form one
    step, at which precision is evaluated once and multiplied by the recall
    gained in that step.  Up to ``EXACT_STEPS`` steps the area is summed as an
    exact fraction and rounded once; beyond that the per-step terms are
    summed with ``math.fsum`` (a few ulp of error).
    """
    y = data.labels
    n_pos = int(np.sum(y == 1))
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive")
    order = np.argsort(-data.scores, kind="stable")
    scores, y = data.scores[order], y[order]
    last = np.r_[scores[1:] != scores[:-1], True]
    tp = np.cumsum(y == 1)[last]
    seen = np.flatnonzero(last) + 1
    gained = np.diff(np.r_[0, tp])
    hit = gained > 0
    # each step contributes precision * recall gain = tp * gained / (seen * n_pos)
    num = (tp[hit] * gained[hit]).tolist()
    den = seen[hit].tolist()
    if len(num) <= EXACT_STEPS:
        return float(sum((Fraction(a, b) for a, b in zip(num, den)), Fraction(0)) / n_pos)
    return math.fsum(a / (b * n_pos) for a, b in zip(num, den))


def regression_error(data: ScoredSet, kind: str = "MSE") -> float:
    if len(data) == 0:
        raise MissingDataError("regression error of an empty set")
    mse = float(np.mean((data.scores - data.labels) ** 2))
    if kind == "MSE":
        return mse
    if kind == "RMSE":
        return float(np.sqrt(mse))
    raise DomainError(f"unknown regression error {kind!r}")


# ---------------------------------------------------------------------------
# baselines


def occurrence_rates(train: EventTensor) -> np.ndarray:
    """Fraction of active ``(s, t)`` steps in which each ``(p, o)`` occurred."""
    vocab = train.vocab
    counts = np.zeros(vocab.slice_size)
    steps = set()
    for (s, p, o, t), v in train.events.items():
        steps.add((s, t))
        if v == 1:
            counts[p * vocab.O + o] += 1
    return counts / len(steps) if steps else counts


def baseline_constant(train: EventTensor, cells, labels=None) -> ScoredSet:
    """Score each ``(s, p, o, t)`` eval cell by the training occurrence rate of ``(p, o)``."""
    rates = occurrence_rates(train)
    cells = np.asarray(cells, dtype=int).reshape(-1, 4)
    scores = rates[cells[:, 1] * train.vocab.O + cells[:, 2]]
    return ScoredSet(scores, np.zeros(len(scores)) if labels is None else labels)


def baseline_last_value(history) -> float:
    history = np.asarray(history, dtype=float)
    if history.size == 0:
        raise MissingDataError("last-value baseline needs at least one observation")
    return history[..., -1] if history.ndim > 1 else float(history[-1])


class RidgeBaseline:
    """Least-squares map from a history window to lead-k targets, with intercept.

    The intercept is not penalized.  ``lam = 0`` on a rank-deficient design
    raises :class:`NumericError`.
    """

    def __init__(self, lam: float = 0.0):
        if lam < 0:
            raise DomainError("ridge weight must be non-negative")
        self.lam = lam

    def fit(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        vector = Y.ndim == 1
        Y = Y.reshape(len(Y), -1)
        self.x_mean = X.mean(axis=0)
        self.y_mean = Y.mean(axis=0)
        Xc, Yc = X - self.x_mean, Y - self.y_mean
        F = X.shape[1]
        if self.lam == 0 and np.linalg.matrix_rank(Xc) < F:
            raise NumericError("design matrix is rank deficient; use a ridge weight lam > 0")
        A = np.vstack([Xc, np.sqrt(self.lam) * np.eye(F)])
        B = np.vstack([Yc, np.zeros((F, Yc.shape[1]))])
        self.coef, *_ = np.linalg.lstsq(A, B, rcond=None)
        self.intercept = self.y_mean - self.x_mean @ self.coef
        if vector:
            self.coef, self.intercept = self.coef[:, 0], float(self.intercept[0])
        return self

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coef + self.intercept


class LogisticBaseline:
    """Independent ridge-penalized logistic regressions sharing one feature matrix."""

    def __init__(self, lam: float = 1e-2, max_iter: int = 100):
        self.lam = lam
        self.max_iter = max_iter

    def fit(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        Y2 = Y.reshape(len(Y), -1)
        n, F = X.shape
        K = Y2.shape[1]
        Xb = np.hstack([X, np.ones((n, 1))])
        if np.count_nonzero(Xb) < 0.2 * Xb.size:
            Xb = sparse.csr_matrix(Xb)

        def f(w):
            W = w.reshape(F + 1, K)
            theta = Xb @ W
            sign = 1.0 - 2.0 * Y2
            loss = softplus(sign * theta).sum() + self.lam * np.sum(W[:-1] ** 2)
            d = sign * sigmoid(sign * theta)
            g = Xb.T @ d
            g[:-1] += 2 * self.lam * W[:-1]
            return loss, g.ravel()

        res = minimize(f, np.zeros((F + 1) * K), jac=True, method="L-BFGS-B",
                       options={"maxiter": self.max_iter})
        self.W = res.x.reshape(F + 1, K)
        self._shape = Y.shape[1:]
        return self

    def decision_function(self, X):
        X = np.asarray(X, dtype=float)
        out = np.hstack([X, np.ones((len(X), 1))]) @ self.W
        return out.reshape((len(X),) + self._shape)

    def predict_proba(self, X):
        return sigmoid(self.decision_function(X))


def history_features(ev: EventTensor, pairs, T: int, outputs=None) -> np.ndarray:
    """Concatenated slices ``z_{s,:,:,t}, .., z_{s,:,:,t-T+1}`` for each ``(s, t)`` pair."""
    from .model import TensorCache

    cache = TensorCache(None, ev, need_network=False)
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    blocks = []
    for k in range(T):
        Z = cache.event_rows(pairs[:, 0], pairs[:, 1] - k)
        if outputs is not None:
            Z = Z[:, list(outputs)]
        blocks.append(Z)
    return np.hstack(blocks) if blocks else np.zeros((len(pairs), 0))


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    metric: str
    value: float
    std: float | None = None
    repeats: int = 1
    seconds: float | None = None
    model: str = ""

    def __post_init__(self):
        if (self.std is not None) != (self.repeats > 1):
            raise ValueError("dispersion must be present exactly when repeats > 1")

    @classmethod
    def from_values(cls, metric, values, seconds=None, model=""):
        values = np.asarray(values, dtype=float)
        std = float(values.std(ddof=1)) if len(values) > 1 else None
        return cls(metric, float(values.mean()), std, len(values), seconds, model)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def write_reports(path, reports) -> None:
    with open(path, "w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def format_table(reports) -> str:
    """One row per model, one column per metric (``mean +/- std``)."""
    models = list(dict.fromkeys(r.model for r in reports))
    metrics = list(dict.fromkeys(r.metric for r in reports))
    cell = {(r.model, r.metric): r for r in reports}
    width = max([len(m) for m in models] + [10])
    lines = [" " * width + "".join(f"  {m:>20s}" for m in metrics)]
    for m in models:
        row = f"{m:<{width}s}"
        for k in metrics:
            r = cell.get((m, k))
            if r is None:
                txt = "-"
            elif r.std is None:
                txt = f"{r.value:.3f}"
            else:
                txt = f"{r.value:.3f} +/- {r.std:.4f}"
            row += f"  {txt:>20s}"
        lines.append(row)
    return "\n".join(lines)
