"""Model parameter snapshots and word-vector loading.

Snapshot layout (magic ``NNQA1``): a little-endian table of named float64
arrays — per entry a length-prefixed UTF-8 name, the rank, the dims as
uint32, then the raw C-order data.
"""

from __future__ import annotations

import io
import json
import struct
from typing import Iterable

import numpy as np

from qakb.errors import ParseError, ShapeMismatch
from qakb.nn.tensor import Tensor

MODEL_MAGIC = b"NNQA1"


def meta_path(path: str) -> str:
    return path + ".meta.json"


def write_model_meta(path: str, kind: str, payload: dict) -> None:
    """Sidecar JSON describing a parameter snapshot (vocab, config, ...)."""
    meta = {"kind": kind, **payload}
    with open(meta_path(path), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, sort_keys=True, separators=(",", ":")))


def read_model_meta(path: str, kind: str) -> dict:
    with open(meta_path(path), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("kind") != kind:
        raise ValueError(
            f"model at {path} is a {meta.get('kind')!r}, expected {kind!r}"
        )
    return meta


def save_params(params: dict[str, Tensor], path: str) -> None:
    """Write a named parameter table; entries are sorted for stable bytes."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            # ascontiguousarray would widen 0-d params to (1,); keep the
            # recorded rank faithful so restore can check exact shapes.
            data = np.asarray(params[name].data, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(data.tobytes())


def load_params(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ParseError(f"bad model header {magic!r}", 1)
        (count,) = struct.unpack("<I", fh.read(4))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(
                struct.unpack("<I", fh.read(4))[0] for _ in range(ndim)
            )
            size = int(np.prod(shape)) if shape else 1
            raw = fh.read(size * 8)
            if len(raw) != size * 8:
                raise ParseError(f"truncated data for parameter {name!r}", 1)
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return out


def restore_params(params: dict[str, Tensor], loaded: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into live tensors, checking names and shapes."""
    missing = sorted(set(params) - set(loaded))
    if missing:
        raise ShapeMismatch(f"snapshot lacks parameters: {missing}")
    for name, tensor in params.items():
        arr = loaded[name]
        if arr.shape != tensor.data.shape:
            raise ShapeMismatch(
                f"parameter {name!r}: snapshot shape {arr.shape}, "
                f"model shape {tensor.data.shape}"
            )
        tensor.data[...] = arr


def load_word_vectors(lines: Iterable[str]) -> tuple[list[str], np.ndarray]:
    """Parse ``token v1 .. vd`` lines into a vocabulary and matrix."""
    tokens: list[str] = []
    rows: list[list[float]] = []
    dim = None
    for line_no, line in enumerate(lines, start=1):
        parts = line.rstrip("\n").split()
        if not parts:
            continue
        if len(parts) < 2:
            raise ParseError("expected token followed by numbers", line_no)
        try:
            values = [float(v) for v in parts[1:]]
        except ValueError:
            raise ParseError(f"non-numeric vector for {parts[0]!r}", line_no)
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise ParseError(
                f"vector of length {len(values)}, expected {dim}", line_no
            )
        tokens.append(parts[0])
        rows.append(values)
    if dim is None:
        raise ParseError("empty word-vector file", 1)
    return tokens, np.asarray(rows, dtype=np.float64)


def load_word_vectors_file(path: str) -> tuple[list[str], np.ndarray]:
    with io.open(path, "r", encoding="utf-8") as fh:
        return load_word_vectors(fh)
