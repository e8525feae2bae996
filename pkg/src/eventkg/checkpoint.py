"""Versioned model checkpoints (``.npz`` with a JSON metadata entry)."""

from __future__ import annotations

import json

import numpy as np

from .errors import ConfigError
from .model import LatentModel, ModelConfig, ParameterSet
from .tensor_store import Vocab

FORMAT_VERSION = 1


def save_checkpoint(path, model: LatentModel, seed: int = 0, epoch: int = 0, extra=None) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "vocab": model.vocab.to_dict(),
        "horizon": model.horizon,
        "config": model.config.to_dict(),
        "groups": model.params.groups,
        "order": list(model.params.arrays),
        "layout": model.layout_checksum(),
        "seed": seed,
        "epoch": epoch,
        "extra": extra or {},
    }
    arrays = {f"param/{n}": a for n, a in model.params.arrays.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[LatentModel, dict]:
    """Rebuild the model; fails on any format version other than the current one."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        version = meta.get("format_version")
        if version != FORMAT_VERSION:
            raise ConfigError(
                f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )
        params = ParameterSet()
        for name in meta["order"]:
            params.add(name, z[f"param/{name}"].copy(), meta["groups"][name])
    config = ModelConfig.from_dict(meta["config"])
    model = LatentModel(Vocab.from_dict(meta["vocab"]), meta["horizon"], config,
                        seed=meta["seed"], params=params)
    if model.layout_checksum() != meta["layout"]:
        raise ConfigError("checkpoint layout checksum does not match its configuration")
    return model, meta
