"""Independent reference implementations used by the tests.

Each oracle is written the slow, obvious way and shares no code with the
package it checks.
"""

import math

import numpy as np


def auroc_pairs(scores, labels):
    """Exhaustive pairwise comparison, ties counted one half (exact fraction)."""
    from fractions import Fraction

    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = Fraction(0)
    for a in pos:
        for b in neg:
            if a > b:
                total += 1
            elif a == b:
                total += Fraction(1, 2)
    return total / (len(pos) * len(neg))


def auprc_sweep(scores, labels):
    """Precision/recall sweep over distinct thresholds, highest first.

    Every distinct score is one threshold; the area adds
    ``precision(threshold) * (recall(threshold) - recall(previous))``.
    """
    from fractions import Fraction

    n_pos = sum(1 for y in labels if y == 1)
    area = Fraction(0)
    prev_recall = Fraction(0)
    for thr in sorted(set(scores), reverse=True):
        selected = [y for s, y in zip(scores, labels) if s >= thr]
        tp = sum(1 for y in selected if y == 1)
        precision = Fraction(tp, len(selected))
        recall = Fraction(tp, n_pos)
        area += precision * (recall - prev_recall)
        prev_recall = recall
    return area


def rescal_double_sum(a_s, a_o, R):
    total = 0.0
    for k in range(len(a_s)):
        for l in range(len(a_o)):
            total += R[k][l] * a_s[k] * a_o[l]
    return total


def rescal_exact(a_s, a_o, R):
    """Naive double sum in exact rational arithmetic, rounded once."""
    from fractions import Fraction

    total = Fraction(0)
    for k in range(len(a_s)):
        for l in range(len(a_o)):
            total += Fraction(float(R[k][l])) * Fraction(float(a_s[k])) * Fraction(float(a_o[l]))
    return float(total)


def mlp_forward(x, weights, biases, activation):
    """Layer-by-layer re-evaluation with explicit loops over units."""
    act = {
        "tanh": math.tanh,
        "sigmoid": lambda z: 1.0 / (1.0 + math.exp(-z)),
        "relu": lambda z: max(z, 0.0),
    }[activation]
    h = list(x)
    for i, (W, b) in enumerate(zip(weights, biases)):
        out = []
        for j in range(W.shape[1]):
            z = b[j] + sum(h[k] * W[k, j] for k in range(W.shape[0]))
            out.append(z if i == len(weights) - 1 else act(z))
        h = out
    return np.array(h)


def normal_equation_ridge(X, Y, lam):
    """Closed-form ridge with an unpenalized intercept via centering."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    xm, ym = X.mean(0), Y.mean(0)
    Xc, Yc = X - xm, Y - ym
    B = np.linalg.solve(Xc.T @ Xc + lam * np.eye(X.shape[1]), Xc.T @ Yc)
    return B, ym - xm @ B


def hann_direct(window):
    w = [0.5 * (1 - math.cos(2 * math.pi * k / (window - 1))) for k in range(window)] if window > 1 else [1.0]
    total = sum(w)
    return [v / total for v in w]


def bernoulli_nll_direct(x, theta):
    p = 1.0 / (1.0 + math.exp(-theta))
    return -math.log(p) if x == 1 else -math.log(1.0 - p)


def bernoulli_nll_precise(x, theta, digits=60):
    """``-log sig(theta)`` or ``-log(1 - sig(theta))`` evaluated in 60-digit decimals."""
    from decimal import Decimal, localcontext

    with localcontext() as ctx:
        ctx.prec = digits
        one = Decimal(1)
        p = one / (one + (-Decimal(float(theta))).exp())
        return float(-(p if x == 1 else one - p).ln())


def central_difference(f, x, eps=1e-5):
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + eps
        fp = f(x)
        x.flat[i] = old - eps
        fm = f(x)
        x.flat[i] = old
        g.flat[i] = (fp - fm) / (2 * eps)
    return g
