"""Model checkpoints as versioned, hashed JSON documents."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from datetime import datetime, timezone

import numpy as np

from .domain import DiseaseCatalog
from .intensity import ModelParams
from .neural import NEURAL_FIELDS, NeuralParams

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def content_hash(payload: dict) -> str:
    body = {k: v for k, v in payload.items() if k != "content_hash"}
    return hashlib.sha256(_canonical(body).encode()).hexdigest()


def creation_stamp() -> str | None:
    """UTC stamp from ``SOURCE_DATE_EPOCH`` when set; otherwise ``None`` so
    that reruns stay byte-identical."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None:
        return None
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def model_to_dict(model: ModelParams, train_config: dict | None = None, extra: dict | None = None) -> dict:
    dims = {"K": model.K, "F": model.F}
    if model.neural is not None:
        dims.update(D=model.neural.D, H=model.neural.H)
    params = {
        name: {"shape": list(arr.shape), "data": arr.tolist()} for name, arr in model.arrays().items()
    }
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "catalog": list(model.catalog.codes),
        "dims": dims,
        "params": params,
        "train_config": train_config,
        "created": creation_stamp(),
    }
    if extra:
        payload.update(extra)
    payload["content_hash"] = content_hash(payload)
    return payload


def model_from_dict(payload: dict, verify: bool = True) -> ModelParams:
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}")
    if verify and payload.get("content_hash") != content_hash(payload):
        raise CheckpointError("checkpoint content hash mismatch")
    try:
        catalog = DiseaseCatalog(tuple(payload["catalog"]))
        arrays = {}
        for name, blob in payload["params"].items():
            arr = np.array(blob["data"], dtype=float).reshape(blob["shape"])
            arrays[name] = arr
        neural = None
        if payload["kind"] == "ddp":
            nkw = {n: arrays["neural." + n] for n in NEURAL_FIELDS}
            nkw["readout_b"] = float(nkw["readout_b"])
            neural = NeuralParams(**nkw)
        return ModelParams(
            payload["kind"], catalog, arrays["theta"], arrays["bias"],
            arrays.get("raw_alpha"), arrays.get("raw_beta"), neural,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None


def dumps_model(model: ModelParams, train_config: dict | None = None, extra: dict | None = None) -> str:
    return json.dumps(model_to_dict(model, train_config, extra), indent=1, sort_keys=True) + "\n"


def atomic_write(path, text: str):
    """Write via a temp file in the same directory and rename into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(path, model: ModelParams, train_config: dict | None = None, extra: dict | None = None):
    atomic_write(path, dumps_model(model, train_config, extra))


def load_model(path) -> ModelParams:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc.msg})") from None
    return model_from_dict(payload)
