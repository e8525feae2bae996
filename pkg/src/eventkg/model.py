"""Parameter container and batched forward/backward passes.

:class:`LatentModel` owns every trainable array (embedding tables ``A``,
M-map matrices ``M`` and network/core weights ``W``) and computes natural
parameters for the three scorers:

* KG scorer: ``theta_kg[s,p,o]`` by RESCAL or a multiway network.
* Event scorer: ``theta_event[s,p,o,t]`` from ``(a_s, a_p, a_o, a_t)``
  ("global") or ``(a_p, a_o, a_{s,t})`` ("personalized").
* Prediction scorer: ``theta_predict[s,:,:,t+lead]`` from a roster of
  KG and windowed event embeddings anchored at an origin time ``t``.

Gradients are computed by hand; :func:`eventkg.training.gradcheck` checks
them against central finite differences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .representations import DEFAULT_MAX_COLUMNS, init_matrix
from .scoring import BERNOULLI, GAUSSIAN, LikelihoodSpec, MultiwayNet, nll_and_grad
from .tensor_store import BINARY, EventTensor, KGTensor, Vocab

ROSTER_ELEMENTS = ("subject", "time", "current", "history", "network_history")
GROUPS = ("A", "M", "W")


@dataclass(frozen=True)
class PredictionSpec:
    """Inputs, window, outputs and likelihood of the prediction scorer.

    Roster elements, for origin time ``t`` and target time ``t + lead``:

    ``subject``          KG embedding ``a_{e_s}``
    ``time``             ``a_{e_t}``
    ``current``          ``a_{e_{s,t}}``
    ``history``          ``a_{e_{s,t-1}} .. a_{e_{s,t-T}}``
    ``network_history``  ``a_{e_{t-1}} .. a_{e_{t-T}}``
    """

    roster: tuple = ("subject", "time", "current", "history")
    window: int = 6
    outputs: tuple | None = None
    likelihood: LikelihoodSpec = LikelihoodSpec()
    lead: int = 1

    def __post_init__(self):
        object.__setattr__(self, "roster", tuple(self.roster))
        if self.outputs is not None:
            object.__setattr__(self, "outputs", tuple(int(j) for j in self.outputs))
        if not self.roster:
            raise ConfigError("prediction roster must not be empty")
        unknown = [e for e in self.roster if e not in ROSTER_ELEMENTS]
        if unknown:
            raise ConfigError(f"unresolvable roster elements {unknown}")
        if len(set(self.roster)) != len(self.roster):
            raise ConfigError("duplicate roster elements")
        if self.window < 0:
            raise ConfigError("window must be non-negative")
        if self.window == 0 and {"history", "network_history"} & set(self.roster):
            raise ConfigError("history roster elements need window >= 1")
        if self.lead < 1:
            raise ConfigError("lead must be a positive integer")

    def blocks(self) -> list[tuple[str, int]]:
        """Input layout as ``(element, lag)`` pairs in concatenation order."""
        out = []
        for e in self.roster:
            if e in ("history", "network_history"):
                out.extend((e, k) for k in range(1, self.window + 1))
            else:
                out.append((e, 0))
        return out

    def input_width(self, rank: int) -> int:
        return rank * len(self.blocks())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["roster"] = list(self.roster)
        d["outputs"] = None if self.outputs is None else list(self.outputs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionSpec":
        d = dict(d)
        d["likelihood"] = LikelihoodSpec(**d.get("likelihood", {}))
        return cls(**d)

    def checksum(self) -> str:
        layout = {"blocks": self.blocks(), "outputs": self.outputs, "lead": self.lead}
        return hashlib.sha256(json.dumps(layout).encode()).hexdigest()[:16]


@dataclass
class ModelConfig:
    rank: int = 8
    kg_scoring: str | None = "rescal"
    subject_repr: str = "table"
    time_repr: str = "mmap"
    event_form: str | None = None
    hidden: tuple = (32,)
    activation: str = "tanh"
    sigma: float = 1.0
    share_embeddings: bool = True
    max_columns: int = DEFAULT_MAX_COLUMNS
    predict: PredictionSpec | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if isinstance(self.predict, dict):
            self.predict = PredictionSpec.from_dict(self.predict)
        checks = (
            ("kg_scoring", self.kg_scoring, (None, "rescal", "multiway")),
            ("subject_repr", self.subject_repr, ("table", "mmap")),
            ("time_repr", self.time_repr, ("table", "mmap")),
            ("event_form", self.event_form, (None, "global", "personalized")),
            ("activation", self.activation, ("tanh", "sigmoid", "relu")),
        )
        for name, value, allowed in checks:
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        if self.rank < 1:
            raise ConfigError("rank must be positive")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["predict"] = None if self.predict is None else self.predict.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class ParameterSet:
    """Named arrays, each assigned to exactly one regularization group."""

    def __init__(self):
        self.arrays: dict[str, np.ndarray] = {}
        self.groups: dict[str, str] = {}

    def add(self, name: str, array, group: str) -> None:
        if group not in GROUPS:
            raise ValueError(f"unknown group {group!r}")
        if name in self.arrays:
            raise ValueError(f"duplicate parameter {name!r}")
        self.arrays[name] = np.asarray(array, dtype=float)
        self.groups[name] = group

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def __iter__(self):
        return iter(self.arrays)

    def names(self, group=None):
        return [n for n in self.arrays if group is None or self.groups[n] == group]

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for n, a in self.arrays.items():
            out.add(n, a.copy(), self.groups[n])
        return out

    def zeros_like(self) -> "ParameterSet":
        out = ParameterSet()
        for n, a in self.arrays.items():
            out.add(n, np.zeros_like(a), self.groups[n])
        return out

    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())

    def equal(self, other: "ParameterSet") -> bool:
        return self.arrays.keys() == other.arrays.keys() and all(
            np.array_equal(a, other.arrays[n]) for n, a in self.arrays.items()
        )


@dataclass(frozen=True)
class Regularization:
    lambda_A: float = 0.0
    lambda_M: float = 0.0
    lambda_W: float = 0.0

    def __post_init__(self):
        if min(self.lambda_A, self.lambda_M, self.lambda_W) < 0:
            raise ConfigError("regularization weights must be non-negative")

    def weight(self, group: str) -> float:
        return {"A": self.lambda_A, "M": self.lambda_M, "W": self.lambda_W}[group]


def penalty(params: ParameterSet, reg: Regularization) -> float:
    total = 0.0
    for n, a in params.arrays.items():
        lam = reg.weight(params.groups[n])
        if lam:
            total += lam * float(np.sum(a * a))
    return total


def add_penalty_grad(grads: dict, params: ParameterSet, reg: Regularization, scale=1.0):
    for n, a in params.arrays.items():
        lam = reg.weight(params.groups[n])
        if lam:
            grads[n] = grads.get(n, 0.0) + 2.0 * lam * scale * a


class TensorCache:
    """Sparse row views of a KG/event pair used for batched slicing."""

    def __init__(self, kg: KGTensor | None, ev: EventTensor, need_network=True):
        self.vocab = ev.vocab
        self.horizon = ev.horizon
        self.kg_csr = kg.as_csr() if kg is not None else None
        self.ev_csr = ev.as_csr()
        self.ev_mask = self.ev_csr.copy()
        self.ev_mask.data[:] = 1.0
        self.net_csr = ev.network_csr() if need_network else None
        rows = np.diff(self.ev_mask.indptr) > 0
        self.active = rows.reshape(self.vocab.S, ev.horizon)

    def event_rows(self, s, t, csr=None):
        """Dense ``z_{s,:,:,t}`` rows; rows with ``t`` outside the horizon are zero."""
        csr = self.ev_csr if csr is None else csr
        s = np.asarray(s)
        t = np.asarray(t)
        ok = (t >= 0) & (t < self.horizon)
        rows = s * self.horizon + np.clip(t, 0, max(self.horizon - 1, 0))
        out = csr[rows].toarray() if len(rows) else np.zeros((0, csr.shape[1]))
        out[~ok] = 0.0
        return out

    def kg_rows(self, s):
        if self.kg_csr is None:
            return np.zeros((len(s), self.vocab.slice_size))
        return self.kg_csr[np.asarray(s)].toarray()


def _split_net_names(prefix: str, n_layers: int):
    return [(f"{prefix}.W{i}", f"{prefix}.b{i}") for i in range(n_layers)]


class LatentModel:
    """Parameters plus scorers for a vocabulary and time horizon."""

    def __init__(self, vocab: Vocab, horizon: int, config: ModelConfig, seed: int = 0,
                 params: ParameterSet | None = None):
        self.vocab = vocab
        self.horizon = int(horizon)
        self.config = config
        self.seed = seed
        self.params = params if params is not None else self._build(np.random.default_rng(seed))

    # ---- parameter naming --------------------------------------------
    def _shared(self, component: str, base: str) -> str:
        if self.config.share_embeddings or component == "kg":
            return base
        return f"{component}.{base}"

    def subject_name(self, component="kg") -> str:
        base = "subject_mmap" if self.config.subject_repr == "mmap" else "subject_table"
        return self._shared(component, base)

    def time_name(self) -> str:
        return "time_mmap" if self.config.time_repr == "mmap" else "time_table"

    @property
    def needs_time(self) -> bool:
        cfg = self.config
        pred = cfg.predict
        return cfg.event_form == "global" or (
            pred is not None and {"time", "network_history"} & set(pred.roster)
        )

    def _net_sizes(self, n_in, n_out):
        return [n_in, *self.config.hidden, n_out]

    def event_input_width(self) -> int:
        r = self.config.rank
        return 4 * r if self.config.event_form == "global" else 3 * r

    def n_outputs(self) -> int:
        pred = self.config.predict
        return self.vocab.slice_size if pred.outputs is None else len(pred.outputs)

    # ---- construction -----------------------------------------------
    def _build(self, rng) -> ParameterSet:
        cfg, v = self.config, self.vocab
        r, PO = cfg.rank, v.slice_size
        ps = ParameterSet()

        def subject(component):
            name = self.subject_name(component)
            if name in ps:
                return
            if cfg.subject_repr == "mmap":
                ps.add(name, init_matrix(rng, (r, PO), PO), "M")
            else:
                ps.add(name, init_matrix(rng, (v.S, r), r), "A")

        def table(component, base, count):
            name = self._shared(component, base)
            if name not in ps:
                ps.add(name, init_matrix(rng, (count, r), r), "A")

        def net(prefix, n_in, n_out):
            sizes = self._net_sizes(n_in, n_out)
            for (wn, bn), a, b in zip(_split_net_names(prefix, len(sizes) - 1), sizes[:-1], sizes[1:]):
                ps.add(wn, init_matrix(rng, (a, b), a), "W")
                ps.add(bn, np.zeros(b), "W")

        if cfg.kg_scoring is not None:
            subject("kg")
            table("kg", "object_table", v.O)
            if cfg.kg_scoring == "rescal":
                ps.add("rescal_core", init_matrix(rng, (v.P, r, r), r), "W")
            else:
                table("kg", "predicate_table", v.P)
                net("kg_net", 3 * r, 1)
        if cfg.event_form is not None:
            table("event", "predicate_table", v.P)
            table("event", "object_table", v.O)
            if cfg.event_form == "global":
                subject("event")
            elif "subject_time_mmap" not in ps:
                ps.add("subject_time_mmap", init_matrix(rng, (r, PO), PO), "M")
            net("event_net", self.event_input_width(), 1)
        pred = cfg.predict
        if pred is not None:
            if "subject" in pred.roster:
                subject("predict")
            if {"current", "history"} & set(pred.roster) and "subject_time_mmap" not in ps:
                ps.add("subject_time_mmap", init_matrix(rng, (r, PO), PO), "M")
            net("predict_net", pred.input_width(r), self.n_outputs())
        if self.needs_time:
            if cfg.time_repr == "mmap":
                cols = v.S * PO
                if cols > cfg.max_columns:
                    raise ConfigError(
                        f"time M-map needs {cols} columns, above the limit {cfg.max_columns}; "
                        "set time_repr='table' or raise max_columns"
                    )
                ps.add("time_mmap", init_matrix(rng, (r, cols), cols), "M")
            else:
                ps.add("time_table", init_matrix(rng, (max(self.horizon, 1), r), r), "A")
        return ps

    def net(self, prefix: str) -> MultiwayNet:
        names = []
        i = 0
        while f"{prefix}.W{i}" in self.params:
            names.append((f"{prefix}.W{i}", f"{prefix}.b{i}"))
            i += 1
        if not names:
            raise ConfigError(f"model has no network {prefix!r}")
        Ws = [self.params[w] for w, _ in names]
        bs = [self.params[b] for _, b in names]
        sizes = [Ws[0].shape[0]] + [W.shape[1] for W in Ws]
        return MultiwayNet(sizes, self.config.activation, Ws, bs)

    def reinit_network(self, prefix: str, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for name in self.params.names("W"):
            if name.startswith(prefix + "."):
                a = self.params[name]
                if name.split(".")[-1].startswith("W"):
                    a[...] = init_matrix(rng, a.shape, a.shape[0])
                else:
                    a[...] = 0.0

    def layout_checksum(self) -> str:
        pred = self.config.predict
        return "" if pred is None else pred.checksum()

    # ---- embeddings ---------------------------------------------------
    def _subject_forward(self, cache: TensorCache, s, component):
        name = self.subject_name(component)
        if self.config.subject_repr == "mmap":
            X = cache.kg_rows(s)
            return X @ self.params[name].T, (name, X)
        return self.params[name][np.asarray(s)], (name, np.asarray(s))

    def _subject_backward(self, grads, ctx, dA):
        name, arg = ctx
        if self.config.subject_repr == "mmap":
            _acc(grads, name, dA.T @ arg, self.params[name].shape)
        else:
            g = grads.setdefault(name, np.zeros_like(self.params[name]))
            np.add.at(g, arg, dA)

    def time_embeddings(self, cache: TensorCache) -> np.ndarray:
        """All time-step embeddings, shape ``(horizon, rank)``."""
        if self.config.time_repr == "mmap":
            return np.asarray(cache.net_csr @ self.params["time_mmap"].T)
        table = self.params["time_table"]
        if table.shape[0] < cache.horizon:
            raise ShapeError(
                f"time table covers {table.shape[0]} steps, data has {cache.horizon}"
            )
        return table[: cache.horizon]

    def _time_backward(self, grads, cache, dE):
        if self.config.time_repr == "mmap":
            _acc(grads, "time_mmap", np.asarray((cache.net_csr.T @ dE).T), self.params["time_mmap"].shape)
        else:
            g = np.zeros_like(self.params["time_table"])
            g[: dE.shape[0]] += dE
            _acc(grads, "time_table", g, g.shape)

    # ---- KG scorer ----------------------------------------------------
    def kg_forward(self, cache, s, p, o, need_cache=False):
        cfg = self.config
        if cfg.kg_scoring is None:
            raise ConfigError("model has no KG scorer")
        s, p, o = (np.asarray(a, dtype=int) for a in (s, p, o))
        A_s, sctx = self._subject_forward(cache, s, "kg")
        A_o = self.params["object_table"][o]
        if cfg.kg_scoring == "rescal":
            Rp = self.params["rescal_core"][p]
            theta = np.einsum("bk,bkl,bl->b", A_s, Rp, A_o)
            ctx = (sctx, s, p, o, A_s, A_o, Rp)
        else:
            A_p = self.params["predicate_table"][p]
            net = self.net("kg_net")
            out, ncache = net.forward(np.hstack([A_s, A_p, A_o]), cache=True)
            theta = out[:, 0]
            ctx = (sctx, s, p, o, net, ncache)
        return (theta, ctx) if need_cache else theta

    def kg_backward(self, grads, ctx, dtheta):
        r = self.config.rank
        if self.config.kg_scoring == "rescal":
            sctx, s, p, o, A_s, A_o, Rp = ctx
            dA_s = np.einsum("b,bkl,bl->bk", dtheta, Rp, A_o)
            dA_o = np.einsum("b,bkl,bk->bl", dtheta, Rp, A_s)
            gR = grads.setdefault("rescal_core", np.zeros_like(self.params["rescal_core"]))
            np.add.at(gR, p, dtheta[:, None, None] * A_s[:, :, None] * A_o[:, None, :])
        else:
            sctx, s, p, o, net, ncache = ctx
            dWs, dbs, dX = net.backward(ncache, dtheta[:, None])
            _acc_net(grads, "kg_net", dWs, dbs)
            dA_s, dA_p, dA_o = dX[:, :r], dX[:, r : 2 * r], dX[:, 2 * r :]
            gP = grads.setdefault("predicate_table", np.zeros_like(self.params["predicate_table"]))
            np.add.at(gP, p, dA_p)
        gO = grads.setdefault("object_table", np.zeros_like(self.params["object_table"]))
        np.add.at(gO, o, dA_o)
        self._subject_backward(grads, sctx, dA_s)

    # ---- event scorer -------------------------------------------------
    def event_forward(self, cache, s, p, o, t, need_cache=False):
        cfg = self.config
        if cfg.event_form is None:
            raise ConfigError("model has no event scorer")
        s, p, o, t = (np.asarray(a, dtype=int) for a in (s, p, o, t))
        pn = self._shared("event", "predicate_table")
        on = self._shared("event", "object_table")
        A_p = self.params[pn][p]
        A_o = self.params[on][o]
        if cfg.event_form == "global":
            A_s, sctx = self._subject_forward(cache, s, "event")
            E = self.time_embeddings(cache)
            X = np.hstack([A_s, A_p, A_o, E[t]])
            extra = (sctx, E)
        else:
            Z = cache.event_rows(s, t)
            A_st = Z @ self.params["subject_time_mmap"].T
            X = np.hstack([A_p, A_o, A_st])
            extra = (Z,)
        net = self.net("event_net")
        out, ncache = net.forward(X, cache=True)
        ctx = (s, p, o, t, pn, on, net, ncache, extra)
        return (out[:, 0], ctx) if need_cache else out[:, 0]

    def event_backward(self, grads, cache, ctx, dtheta):
        r = self.config.rank
        s, p, o, t, pn, on, net, ncache, extra = ctx
        dWs, dbs, dX = net.backward(ncache, dtheta[:, None])
        _acc_net(grads, "event_net", dWs, dbs)
        if self.config.event_form == "global":
            dA_s, dA_p, dA_o, dE_t = (dX[:, i * r : (i + 1) * r] for i in range(4))
            sctx, E = extra
            self._subject_backward(grads, sctx, dA_s)
            dE = np.zeros_like(E)
            np.add.at(dE, t, dE_t)
            self._time_backward(grads, cache, dE)
        else:
            dA_p, dA_o, dA_st = (dX[:, i * r : (i + 1) * r] for i in range(3))
            (Z,) = extra
            _acc(grads, "subject_time_mmap", dA_st.T @ Z, self.params["subject_time_mmap"].shape)
        gP = grads.setdefault(pn, np.zeros_like(self.params[pn]))
        np.add.at(gP, p, dA_p)
        gO = grads.setdefault(on, np.zeros_like(self.params[on]))
        np.add.at(gO, o, dA_o)

    # ---- prediction scorer --------------------------------------------
    def predict_forward(self, cache, s, origin, need_cache=False):
        """Natural parameters for targets ``origin + lead``, shape ``(B, n_outputs)``."""
        pred = self.config.predict
        if pred is None:
            raise ConfigError("model has no prediction scorer")
        s = np.asarray(s, dtype=int)
        origin = np.asarray(origin, dtype=int)
        r = self.config.rank
        E = None
        if {"time", "network_history"} & set(pred.roster):
            E = self.time_embeddings(cache)
        blocks, bctx = [], []
        for elem, lag in pred.blocks():
            if elem == "subject":
                A, sctx = self._subject_forward(cache, s, "predict")
                blocks.append(A)
                bctx.append(sctx)
            elif elem in ("time", "network_history"):
                tt = origin - lag
                ok = (tt >= 0) & (tt < E.shape[0])
                A = np.zeros((len(s), r))
                A[ok] = E[tt[ok]]
                blocks.append(A)
                bctx.append((tt, ok))
            else:
                Z = cache.event_rows(s, origin - lag)
                blocks.append(Z @ self.params["subject_time_mmap"].T)
                bctx.append(Z)
        X = np.hstack(blocks)
        net = self.net("predict_net")
        out, ncache = net.forward(X, cache=True)
        return (out, (s, origin, E, bctx, net, ncache)) if need_cache else out

    def predict_backward(self, grads, cache, ctx, dtheta):
        pred = self.config.predict
        r = self.config.rank
        s, origin, E, bctx, net, ncache = ctx
        dWs, dbs, dX = net.backward(ncache, dtheta)
        _acc_net(grads, "predict_net", dWs, dbs)
        dE = None if E is None else np.zeros_like(E)
        dM = None
        for i, ((elem, lag), c) in enumerate(zip(pred.blocks(), bctx)):
            dA = dX[:, i * r : (i + 1) * r]
            if elem == "subject":
                self._subject_backward(grads, c, dA)
            elif elem in ("time", "network_history"):
                tt, ok = c
                np.add.at(dE, tt[ok], dA[ok])
            else:
                g = dA.T @ c
                dM = g if dM is None else dM + g
        if dM is not None:
            _acc(grads, "subject_time_mmap", dM, self.params["subject_time_mmap"].shape)
        if dE is not None:
            self._time_backward(grads, cache, dE)

    def predict_targets(self, cache, s, origin):
        """Target values and training mask at ``origin + lead`` for the outputs."""
        pred = self.config.predict
        tgt = np.asarray(origin) + pred.lead
        Y = cache.event_rows(s, tgt)
        if pred.likelihood.kind == BERNOULLI:
            mask = np.ones_like(Y)
        else:
            mask = cache.event_rows(s, tgt, csr=cache.ev_mask)
        if pred.outputs is not None:
            idx = list(pred.outputs)
            Y, mask = Y[:, idx], mask[:, idx]
        return Y, mask

    def output_cells(self) -> list[tuple[int, int]]:
        pred = self.config.predict
        idx = range(self.vocab.slice_size) if pred.outputs is None else pred.outputs
        return [self.vocab.unflat(j) for j in idx]

    def likelihoods_for(self, p) -> tuple[np.ndarray, LikelihoodSpec, LikelihoodSpec]:
        """Boolean Bernoulli mask per record plus the two likelihood specs."""
        kinds = np.array([self.vocab.kind(int(q)) == BINARY for q in np.atleast_1d(p)], dtype=bool)
        return kinds, LikelihoodSpec(BERNOULLI), LikelihoodSpec(GAUSSIAN, self.config.sigma)


def record_nll(model: LatentModel, p, x, theta):
    """Per-record NLL and derivative, choosing the likelihood by predicate kind."""
    is_bin, bern, gauss = model.likelihoods_for(p)
    x = np.asarray(x, dtype=float)
    nll = np.empty_like(theta)
    d = np.empty_like(theta)
    if is_bin.any():
        nll[is_bin], d[is_bin] = nll_and_grad(bern, x[is_bin], theta[is_bin])
    if (~is_bin).any():
        nll[~is_bin], d[~is_bin] = nll_and_grad(gauss, x[~is_bin], theta[~is_bin])
    return nll, d


def _acc(grads, name, g, shape):
    g = np.asarray(g)
    if g.shape != shape:
        raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {shape}")
    if name in grads:
        grads[name] = grads[name] + g
    else:
        grads[name] = g.copy()


def _acc_net(grads, prefix, dWs, dbs):
    for i, (dW, db) in enumerate(zip(dWs, dbs)):
        for name, g in ((f"{prefix}.W{i}", dW), (f"{prefix}.b{i}", db)):
            grads[name] = grads[name] + g if name in grads else g.copy()

