"""Natural-parameter scoring functions and negative log-likelihoods."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DomainError, ShapeError

BERNOULLI = "bernoulli"
GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class LikelihoodSpec:
    kind: str = BERNOULLI
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in (BERNOULLI, GAUSSIAN):
            raise DomainError(f"unknown likelihood {self.kind!r}")
        if self.kind == GAUSSIAN and not self.sigma > 0:
            raise DomainError("sigma must be positive")


def score_rescal(a_s, a_o, R_p) -> float:
    """Bilinear score ``a_s^T R_p a_o``, correctly rounded.

    The sum is formed in exact rational arithmetic and rounded once, so the
    result does not depend on summation order.  Batched training code uses
    :meth:`LatentModel.kg_forward` instead.
    """
    a_s = np.asarray(a_s, dtype=float)
    a_o = np.asarray(a_o, dtype=float)
    R_p = np.asarray(R_p, dtype=float)
    r = a_s.shape[0]
    if a_s.ndim != 1 or a_o.shape != (r,) or R_p.shape != (r, r):
        raise ShapeError(
            f"incompatible shapes a_s={a_s.shape}, a_o={a_o.shape}, R_p={R_p.shape}"
        )
    xs = [Fraction(v) for v in a_s.tolist()]
    xo = [Fraction(v) for v in a_o.tolist()]
    total = sum(
        (Fraction(R_p[k, l]) * xs[k] * xo[l] for k in range(r) for l in range(r)), Fraction(0)
    )
    return float(total)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def nll_bernoulli(x, theta):
    """Cross-entropy ``log(1 + exp((1 - 2x) theta))``."""
    x_arr = np.asarray(x)
    if not np.all((x_arr == 0) | (x_arr == 1)):
        raise DomainError(f"Bernoulli target must be 0 or 1, got {x!r}")
    out = softplus((1.0 - 2.0 * x_arr) * np.asarray(theta, dtype=float))
    return float(out) if out.ndim == 0 else out


def nll_gaussian(x, theta, sigma: float = 1.0):
    """Gaussian negative log-likelihood without its additive constant."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    out = (np.asarray(x, dtype=float) - np.asarray(theta, dtype=float)) ** 2 / (2.0 * sigma**2)
    return float(out) if out.ndim == 0 else out


def nll_and_grad(lik: LikelihoodSpec, x, theta):
    """Elementwise NLL and its derivative with respect to ``theta``."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if lik.kind == BERNOULLI:
        sign = 1.0 - 2.0 * x
        return softplus(sign * theta), sign * sigmoid(sign * theta)
    resid = theta - x
    return resid**2 / (2.0 * lik.sigma**2), resid / lik.sigma**2


ACTIVATIONS = ("tanh", "sigmoid", "relu")


def _activate(kind, z):
    if kind == "tanh":
        h = np.tanh(z)
        return h, 1.0 - h**2
    if kind == "sigmoid":
        h = sigmoid(z)
        return h, h * (1.0 - h)
    if kind == "relu":
        return np.maximum(z, 0.0), (z > 0).astype(float)
    raise DomainError(f"unknown activation {kind!r}")


class MultiwayNet:
    """Feed-forward network over concatenated latent vectors.

    Hidden layers use ``activation``; the output layer is linear so that its
    outputs are unconstrained natural parameters.  Weights are stored with
    shape ``(fan_in, fan_out)`` in ``weights`` and biases in ``biases``.
    """

    def __init__(self, sizes, activation="tanh", weights=None, biases=None, rng=None):
        sizes = [int(n) for n in sizes]
        if len(sizes) < 2:
            raise ShapeError("a network needs at least input and output sizes")
        if activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {activation!r}")
        self.sizes = sizes
        self.activation = activation
        if weights is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            weights = [
                rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))
                for n_in, n_out in zip(sizes[:-1], sizes[1:])
            ]
        if biases is None:
            biases = [np.zeros(n) for n in sizes[1:]]
        for W, b, n_in, n_out in zip(weights, biases, sizes[:-1], sizes[1:]):
            if W.shape != (n_in, n_out) or b.shape != (n_out,):
                raise ShapeError(f"layer shape {W.shape}/{b.shape} != ({n_in}, {n_out})")
        self.weights = list(weights)
        self.biases = list(biases)

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def forward(self, X, cache=False):
        X = np.asarray(X, dtype=float)
        squeeze = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_in:
            raise ShapeError(f"input width {X.shape[1]} != network input size {self.n_in}")
        hs, ds = [X], []
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if i < last:
                h, d = _activate(self.activation, z)
                ds.append(d)
            else:
                h = z
            hs.append(h)
        out = h[0] if squeeze else h
        return (out, (hs, ds)) if cache else out

    def backward(self, cache, d_out):
        """Gradients of a scalar loss given ``d_out = dL/d(output)``.

        Returns ``(dW list, db list, dX)``.
        """
        hs, ds = cache
        g = np.atleast_2d(d_out)
        dWs, dbs = [None] * len(self.weights), [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            dWs[i] = hs[i].T @ g
            dbs[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g = g * ds[i - 1]
        return dWs, dbs, g


def score_multiway(net: MultiwayNet, inputs) -> np.ndarray | float:
    """Concatenate latent vectors and run the network forward."""
    x = np.concatenate([np.asarray(v, dtype=float).ravel() for v in inputs])
    if x.shape[0] != net.n_in:
        raise ShapeError(f"concatenated length {x.shape[0]} != network input size {net.n_in}")
    out = net.forward(x)
    return float(out[0]) if net.n_out == 1 else out
