"""JSON checkpoint container.

Layout::

    {
      "format": "gpoolnet-checkpoint", "version": 1,
      "spec": {...ModelSpec...},
      "params": {name: {"shape": [...], "dtype": "<f4", "data": base64}},
      "optimizer": {"t": int, "m": {...blobs...}, "v": {...blobs...}} | null,
      "seed": int, "step": int, "epoch": int,
      "rng_state": {...numpy bit generator state...} | null,
      "data": {...conversion settings needed to rebuild features...}
    }

Parameter blobs are float32, row-major, little-endian.
"""

import base64
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .model import ModelSpec, params_from_arrays

FORMAT = "gpoolnet-checkpoint"
VERSION = 1
BLOB_DTYPE = "<f4"


def encode_array(arr):
    arr = np.ascontiguousarray(np.asarray(arr, dtype=BLOB_DTYPE))
    return {
        "shape": list(arr.shape),
        "dtype": BLOB_DTYPE,
        "data": base64.b64encode(arr.tobytes(order="C")).decode("ascii"),
    }


def decode_array(blob):
    if blob.get("dtype") != BLOB_DTYPE:
        raise FormatError(f"unsupported blob dtype {blob.get('dtype')!r}")
    raw = base64.b64decode(blob["data"])
    return np.frombuffer(raw, dtype=BLOB_DTYPE).reshape(blob["shape"]).astype(np.float32)


@dataclass
class Checkpoint:
    spec: ModelSpec
    arrays: dict
    seed: int
    step: int = 0
    epoch: int = -1  # last completed epoch
    optimizer: dict | None = None  # {"t": int, "m": {name: arr}, "v": {name: arr}}
    rng_state: dict | None = None
    data: dict = field(default_factory=dict)

    def params(self, dtype=np.float32):
        return params_from_arrays(self.spec, self.arrays, dtype=dtype)


def save_checkpoint(path, ckpt):
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "spec": ckpt.spec.to_dict(),
        "params": {k: encode_array(v) for k, v in ckpt.arrays.items()},
        "optimizer": None,
        "seed": ckpt.seed,
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "data": ckpt.data,
    }
    if ckpt.optimizer is not None:
        doc["optimizer"] = {
            "t": ckpt.optimizer["t"],
            "m": {k: encode_array(v) for k, v in ckpt.optimizer["m"].items()},
            "v": {k: encode_array(v) for k, v in ckpt.optimizer["v"].items()},
        }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a checkpoint ({exc})") from exc
    if doc.get("format") != FORMAT:
        raise FormatError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    opt = doc.get("optimizer")
    if opt is not None:
        opt = {
            "t": int(opt["t"]),
            "m": {k: decode_array(v) for k, v in opt["m"].items()},
            "v": {k: decode_array(v) for k, v in opt["v"].items()},
        }
    return Checkpoint(
        spec=ModelSpec.from_dict(doc["spec"]),
        arrays={k: decode_array(v) for k, v in doc["params"].items()},
        seed=doc["seed"],
        step=doc["step"],
        epoch=doc["epoch"],
        optimizer=opt,
        rng_state=doc.get("rng_state"),
        data=doc.get("data") or {},
    )
