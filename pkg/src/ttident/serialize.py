"""Byte-stable on-disk containers for models and datasets.

Model container: one magic line, one JSON header line (sorted keys), then the
raw little-endian float64 bytes of all arrays in header order.  Identical
inputs serialize to identical bytes on the same build.

Dataset file: a text matrix with a one-line header carrying (m, d, seed,
sigma) followed by m rows of the 2d values [X | Y].
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .models import SelectionModel
from .tt import TensorTrain

_MAGIC = b"TTIDENT-MODEL v1\n"


def _array_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def dump_model(model, basis_kind: str | None = None) -> bytes:
    """Serialize a SelectionModel or TensorTrain to bytes."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    if isinstance(model, SelectionModel):
        header = {
            "format": "selection",
            "version": 1,
            "basis": basis_kind,
            "n": model.n_types,
            "d": model.n_variables,
            "p": model.basis_size,
            "stack_shapes": [list(s.shape) for s in model.stacks],
            "types": model.types.tolist(),
        }
        arrays = model.stacks
    elif isinstance(model, TensorTrain):
        header = {
            "format": "tt",
            "version": 1,
            "basis": basis_kind,
            "d": model.order,
            "p": model.mode_dims[0],
            "core_shapes": [list(c.shape) for c in model.cores],
        }
        arrays = model.cores
    else:
        raise TypeError(f"cannot serialize {type(model)!r}")
    buf.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
    buf.write(b"\n")
    for arr in arrays:
        buf.write(_array_bytes(arr))
    return buf.getvalue()


def save_model(path, model, basis_kind: str | None = None):
    Path(path).write_bytes(dump_model(model, basis_kind))


def load_model(path):
    """Load a model; returns (model, header dict)."""
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ValueError("not a model container")
    rest = raw[len(_MAGIC) :]
    newline = rest.index(b"\n")
    header = json.loads(rest[:newline].decode())
    blob = rest[newline + 1 :]
    offset = 0

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        return arr.reshape(shape).astype(float)

    if header["format"] == "selection":
        stacks = [take(s) for s in header["stack_shapes"]]
        model = SelectionModel(stacks, np.asarray(header["types"], dtype=int))
    elif header["format"] == "tt":
        model = TensorTrain([take(s) for s in header["core_shapes"]])
    else:
        raise ValueError(f"unknown container format {header['format']!r}")
    return model, header


def save_dataset(path, states: np.ndarray, values: np.ndarray, seed, sigma: float):
    states = np.asarray(states, dtype=float)
    values = np.asarray(values, dtype=float)
    m, d = states.shape
    if values.shape != (m, d):
        raise ValueError("states and values must both be m x d")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# m={m} d={d} seed={seed} sigma={float(sigma)!r}\n")
        for j in range(m):
            row = np.concatenate([states[j], values[j]])
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_dataset(path):
    """Load a dataset file; returns (X, Y, meta dict)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError("missing dataset header line")
        meta = {}
        for token in header[1:].split():
            key, _, val = token.partition("=")
            meta[key] = val
        data = np.loadtxt(fh, ndmin=2)
    d = int(meta["d"])
    m = int(meta["m"])
    if data.shape != (m, 2 * d):
        raise ValueError(f"dataset body has shape {data.shape}, expected ({m}, {2 * d})")
    return data[:, :d], data[:, d:], meta
