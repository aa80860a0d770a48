"""Shared file helpers: atomic writes, canonical JSON, hashing, array packing."""

from __future__ import annotations

import base64
import hashlib
import json
import os
import tempfile

import numpy as np


def atomic_write_text(path: str, text: str) -> None:
    """Write text to path via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj) -> str:
    """Deterministic JSON encoding: sorted keys, no whitespace drift."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_of(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def pack_array(arr: np.ndarray) -> dict:
    """Encode an ndarray as a JSON-safe dict; round-trips bit-exact."""
    arr = np.ascontiguousarray(arr)
    return {
        "shape": list(arr.shape),
        "dtype": arr.dtype.name,
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def unpack_array(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    arr = np.frombuffer(raw, dtype=np.dtype(blob["dtype"]))
    return arr.reshape(blob["shape"]).copy()


def format_float(x: float) -> str:
    """Shortest round-trip decimal representation (deterministic)."""
    return repr(float(x))
