"""JSON parameter checkpoints: base64 little-endian float64 payloads."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def encode_params(params: dict[str, np.ndarray], header: dict | None = None) -> str:
    body = {}
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        body[name] = {
            "shape": list(arr.shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii"),
        }
    doc = {"format_version": FORMAT_VERSION, "header": header or {}, "params": body}
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def decode_params(text: str) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(text)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    params = {}
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        arr = np.frombuffer(base64.b64decode(entry["data"]), dtype="<f8").astype(np.float64)
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise ValueError(f"parameter {name!r}: payload size {arr.size} does not match shape {shape}")
        params[name] = arr.reshape(shape)
    return params, doc.get("header", {})


def save_params(path, params: dict[str, np.ndarray], header: dict | None = None) -> None:
    Path(path).write_text(encode_params(params, header), newline="\n")


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode_params(Path(path).read_text())
