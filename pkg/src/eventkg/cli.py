"""Command-line interface: ``eventkg {train,evaluate,predict,coevolve,gradcheck,synth}``.

Configuration files are YAML or JSON with the sections ``data``, ``model``,
``train``, ``split`` and ``eval``; see the README for the keys.  Exit codes:

====  ==========================================
0     success
2     usage error (unknown flag, bad arguments)
3     configuration error (missing or invalid key)
4     data error (missing file, schema mismatch)
5     numeric failure (divergence, failed gradient check)
====  ==========================================

Setting ``EVENTKG_DETERMINISTIC=1`` limits BLAS to one thread (so floating
point reductions run in a fixed order) and drops wall-clock timings from
written reports, so repeated runs produce byte-identical files.  Seeds
always default to 0.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import synth
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, MissingDataError, NumericError, SchemaError, ShapeError
from .evaluation import MetricReport, ScoredSet, auprc, auroc, regression_error, write_reports
from .ingest import SplitSpec, load_event_log, split_subjects, temporal_split, write_event_log
from .model import LatentModel, ModelConfig, PredictionSpec, Regularization, TensorCache
from .prediction import CoevolutionState, coevolve, predict_step, write_predictions
from .scoring import BERNOULLI, LikelihoodSpec, sigmoid
from .tensor_store import apply_events, restrict
from .training import TrainConfig, TrainData, designated_pairs, train

log = logging.getLogger("eventkg")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4, 5
DETERMINISTIC_ENV = "EVENTKG_DETERMINISTIC"


def deterministic() -> bool:
    return os.environ.get(DETERMINISTIC_ENV, "") not in ("", "0", "false", "False")


class DataError(Exception):
    """Input data missing or unreadable."""


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {str(path)!r} not found")
    text = path.read_text()
    cfg = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping with sections data, model, train, split, eval")
    unknown = set(cfg) - {"data", "model", "train", "split", "eval"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    return cfg


def require(cfg: dict, dotted: str):
    """Value at ``a.b.c`` or a :class:`ConfigError` naming the missing key."""
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node or node[part] is None:
            raise ConfigError(f"missing config key '{dotted}'")
        node = node[part]
    return node


def _section(cfg, name) -> dict:
    sec = cfg.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"config section '{name}' must be a mapping")
    return sec


def load_data(cfg):
    path = require(cfg, "data.path")
    if not Path(path).exists():
        raise DataError(f"data file {path!r} (config key 'data.path') not found")
    loaded = load_event_log(path, _section(cfg, "data").get("time_unit", "day"))
    for lineno, reason in loaded.malformed:
        log.warning("data line %d skipped: %s", lineno, reason)
    vocab, ev, kg = loaded
    return vocab, ev, kg


def output_cells(vocab, data_cfg):
    preds = data_cfg.get("outputs")
    if preds is None:
        return None
    cells = []
    for name in preds:
        if name not in vocab.predicates:
            raise ConfigError(f"data.outputs names unknown predicate {name!r}")
        p = vocab.predicates.lookup(name)
        cells.extend(vocab.flat(p, o) for o in range(vocab.O))
    return tuple(cells)


def build_model_config(cfg, vocab) -> ModelConfig:
    m = dict(_section(cfg, "model"))
    pred = m.pop("predict", None)
    try:
        if pred is not None:
            pred = dict(pred)
            lik = pred.pop("likelihood", "bernoulli")
            sigma = pred.pop("sigma", m.get("sigma", 1.0))
            pred["likelihood"] = LikelihoodSpec(lik, sigma) if isinstance(lik, str) else LikelihoodSpec(**lik)
            pred["outputs"] = output_cells(vocab, _section(cfg, "data"))
            pred = PredictionSpec(**pred)
        return ModelConfig(**m, predict=pred)
    except TypeError as exc:
        raise ConfigError(f"invalid model section: {exc}") from exc


def build_train_config(cfg) -> TrainConfig:
    t = dict(_section(cfg, "train"))
    reg = t.pop("reg", {})
    if isinstance(reg, (int, float)):
        reg = Regularization(reg, reg, reg)
    elif isinstance(reg, dict):
        reg = Regularization(**{f"lambda_{k}" if not k.startswith("lambda_") else k: v
                                for k, v in reg.items()})
    if "seed" not in t:
        t["seed"] = 0
    try:
        return TrainConfig(reg=reg, **t)
    except TypeError as exc:
        raise ConfigError(f"invalid train section: {exc}") from exc


def build_split(cfg, ev):
    s = _section(cfg, "split")
    if not s:
        return None
    spec = dict(s)
    if spec.get("mode", "temporal") == "temporal" and "boundary" not in spec:
        raise ConfigError("missing config key 'split.boundary'")
    try:
        return SplitSpec(**spec)
    except TypeError as exc:
        raise ConfigError(f"invalid split section: {exc}") from exc


def _parts(cfg, ev):
    """Training events, validation pairs and test pairs per the split section."""
    spec = build_split(cfg, ev)
    lead = _section(_section(cfg, "model"), "predict").get("lead", 1)
    if spec is None:
        return ev, None, designated_pairs(ev, lead)
    train_ev, val_ev, _ = temporal_split(ev, spec)
    if spec.mode == "temporal":
        b = spec.boundary
        v0 = min((r.t for r in val_ev.records()), default=b)
        val_pairs = designated_pairs(restrict(ev, lambda r: r.t < b), lead, origins=range(v0 - 1, b - lead))
        test_pairs = designated_pairs(ev, lead, origins=range(b - 1, ev.horizon - lead))
    else:
        tr, va, te = split_subjects(ev.vocab.S, spec)
        val_pairs = designated_pairs(ev, lead, subjects=va) if len(va) else None
        test_pairs = designated_pairs(ev, lead, subjects=te)
    if val_pairs is not None and len(val_pairs) == 0:
        val_pairs = None
    return train_ev, val_pairs, test_pairs


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    vocab, ev, kg = load_data(cfg)
    mcfg = build_model_config(cfg, vocab)
    tcfg = build_train_config(cfg)
    train_ev, val_pairs, _ = _parts(cfg, ev)
    pairs = designated_pairs(train_ev, mcfg.predict.lead) if mcfg.predict is not None else None
    model = LatentModel(vocab, ev.horizon, mcfg, seed=tcfg.seed)
    validation = None
    if val_pairs is not None and mcfg.predict is not None:
        validation = TrainData(kg=kg, events=ev, pairs=val_pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(model, TrainData(kg=kg, events=train_ev, pairs=pairs), tcfg,
                   validation=validation, trace_path=out / "trace.jsonl")
    save_checkpoint(out / "checkpoint.npz", model, seed=tcfg.seed, epoch=len(result.trace))
    last = result.trace[-1]["train"] if result.trace else float("nan")
    print(f"trained {len(result.trace)} epochs, final objective {last:.6g}; wrote {out}")
    return EXIT_OK


def _scores(model, kg, ev, pairs):
    cache = TensorCache(kg, ev)
    theta = model.predict_forward(cache, pairs[:, 0], pairs[:, 1])
    Y, mask = model.predict_targets(cache, pairs[:, 0], pairs[:, 1])
    return theta, Y, mask


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    vocab, ev, kg = load_data(cfg)
    model, _ = load_checkpoint(args.checkpoint)
    if model.config.predict is None:
        raise ConfigError("checkpoint has no prediction scorer to evaluate")
    _, _, test_pairs = _parts(cfg, ev)
    if len(test_pairs) == 0:
        raise MissingDataError("no test pairs in the evaluation split")
    t0 = time.perf_counter()
    theta, Y, mask = _scores(model, kg, ev, test_pairs)
    seconds = None if deterministic() else round(time.perf_counter() - t0, 6)
    lik = model.config.predict.likelihood
    default = ["AUROC", "AUPRC"] if lik.kind == BERNOULLI else ["MSE", "RMSE"]
    metrics = _section(cfg, "eval").get("metrics", default)
    name = _section(cfg, "eval").get("name", "model")
    reports = []
    for metric in metrics:
        if metric in ("AUROC", "AUPRC"):
            sc = ScoredSet(sigmoid(theta.ravel()), Y.ravel())
            value = auroc(sc) if metric == "AUROC" else auprc(sc)
        elif metric in ("MSE", "RMSE"):
            sel = mask > 0
            value = regression_error(ScoredSet(theta[sel], Y[sel]), metric)
        else:
            raise ConfigError(f"unknown metric {metric!r} in eval.metrics")
        reports.append(MetricReport(metric, value, model=name, seconds=seconds))
    write_reports(args.out, reports)
    for r in reports:
        print(f"{r.metric} {r.value:.6f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    vocab, ev, kg = load_data(cfg)
    model, _ = load_checkpoint(args.checkpoint)
    spec = model.config.predict
    if spec is None:
        raise ConfigError("checkpoint has no prediction scorer")
    clock = ev.horizon if args.time is None else args.time
    if clock > model.horizon and model.config.time_repr == "table":
        raise ConfigError(f"time {clock} beyond the trained time table ({model.horizon} steps)")
    state = CoevolutionState(kg, ev, model, min(clock, ev.horizon))
    state.clock = clock
    theta = predict_step(state, spec, np.arange(vocab.S))
    n = write_predictions(args.out, model, [(clock, theta)])
    print(f"wrote {n} predictions for time {clock} to {args.out}")
    return EXIT_OK


def cmd_coevolve(args) -> int:
    cfg = load_config(args.config)
    vocab, ev, kg = load_data(cfg)
    model, _ = load_checkpoint(args.checkpoint)
    spec = model.config.predict
    if spec is None:
        raise ConfigError("checkpoint has no prediction scorer")
    start = args.start
    if not 0 <= start <= ev.horizon:
        raise ConfigError(f"--start {start} outside [0, {ev.horizon}]")
    observed = restrict(ev, lambda r: r.t < start)
    base = kg.copy()
    for t in range(start):
        apply_events(base, observed, t)
    state = CoevolutionState(base, observed, model, start)
    steps = args.steps if args.steps is not None else ev.horizon - start
    state, preds = coevolve(state, spec, steps, mode=args.mode, truth=ev,
                            threshold=args.threshold, gaussian_rule=args.gaussian_rule)
    n = write_predictions(args.out, model, preds)
    print(f"coevolved {len(preds)} steps from time {start}; wrote {n} predictions to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .experiments import gradcheck_suite

    t0 = time.perf_counter()
    failed = 0
    for cost, case, report in gradcheck_suite(args.seed, args.instances, tol=args.tol):
        status = "ok" if report.ok else "FAIL"
        failed += not report.ok
        print(f"{cost:8s} {case:14s} {status:4s} worst {report.worst:.2e} "
              f"over {report.checked} coordinates")
    print(f"{'all gradients match' if not failed else f'{failed} checks failed'} "
          f"({time.perf_counter() - t0:.1f} s)")
    return EXIT_OK if not failed else EXIT_NUMERIC


def cmd_synth(args) -> int:
    data = synth.generate(args.task, seed=args.seed)
    write_event_log(args.out, data.vocab, data.events, data.kg)
    print(f"wrote {args.task} dataset ({len(data.events)} events, {len(data.kg)} triples) to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eventkg", description="Latent event and knowledge-graph models.",
        epilog=f"Set {DETERMINISTIC_ENV}=1 for byte-identical outputs across runs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model; writes checkpoint.npz and trace.jsonl")
    p.add_argument("--config", required=True, help="YAML or JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score the test split; writes metric reports (JSON lines)")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="report file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict every subject at one time step")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--time", type=int, default=None,
                   help="target time (default: the step after the last observed one)")
    p.add_argument("--out", required=True, help="prediction dump (JSON lines)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("coevolve", help="run the prediction / KG update loop")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--start", type=int, default=0, help="initial clock")
    p.add_argument("--steps", type=int, default=None, help="number of steps (default: to the horizon)")
    p.add_argument("--mode", choices=("observe", "self-feed"), default="observe")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--gaussian-rule", choices=("mean",), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_coevolve)

    p = sub.add_parser("gradcheck", help="finite-difference gradient gate on random instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a seeded synthetic dataset as an event log")
    p.add_argument("--task", choices=synth.TASKS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if deterministic():
            with threadpool_limits(limits=1):
                return args.func(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaError, MissingDataError, ShapeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
