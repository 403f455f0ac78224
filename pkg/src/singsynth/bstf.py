"""Flat binary tensor files and the checkpoint container built on them.

A BSTF record is::

    b"BSTF" | u8 dtype code (0=f32, 1=i32) | u32 rank | u32 dims[rank] | payload

Everything is little-endian and the payload is C-ordered. A checkpoint is a
JSON header (config echo, statistics, tensor directory) followed by one BSTF
record per named tensor::

    b"BSCK" | u32 header length | UTF-8 JSON header | BSTF records...
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Any, BinaryIO, Mapping

import numpy as np

MAGIC = b"BSTF"
CHECKPOINT_MAGIC = b"BSCK"

_CODES = {np.dtype("<f4"): 0, np.dtype("<i4"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4")}


class FormatError(ValueError):
    """Raised for malformed BSTF records or checkpoint containers."""


class ConfigMismatchError(ValueError):
    """Raised when a checkpoint is loaded with a conflicting configuration."""


def _as_storable(array: np.ndarray) -> np.ndarray:
    array = np.asarray(array)
    if array.dtype.kind == "f":
        return array.astype("<f4", order="C")
    if array.dtype.kind in "iub":
        if array.size and (array.max() > np.iinfo(np.int32).max or array.min() < np.iinfo(np.int32).min):
            raise FormatError("integer tensor does not fit in int32")
        return array.astype("<i4", order="C")
    raise FormatError(f"unsupported dtype {array.dtype}")


def write_tensor(stream: BinaryIO, array: np.ndarray) -> None:
    data = _as_storable(array)
    stream.write(MAGIC)
    stream.write(struct.pack("<BI", _CODES[data.dtype], data.ndim))
    stream.write(struct.pack(f"<{data.ndim}I", *data.shape))
    stream.write(data.tobytes(order="C"))


def read_tensor(stream: BinaryIO) -> np.ndarray:
    magic = stream.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    head = stream.read(5)
    if len(head) != 5:
        raise FormatError("truncated header")
    code, rank = struct.unpack("<BI", head)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}I", stream.read(4 * rank))
    dtype = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    payload = stream.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise FormatError("truncated payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def save(path: str | Path, array: np.ndarray) -> None:
    """Write one tensor to ``path``."""
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load(path: str | Path) -> np.ndarray:
    """Read one tensor from ``path``."""
    with open(path, "rb") as fh:
        return read_tensor(fh)


def save_checkpoint(
    path: str | Path,
    tensors: Mapping[str, np.ndarray],
    config: Mapping[str, Any],
    extra: Mapping[str, Any] | None = None,
) -> None:
    """Write a checkpoint holding named tensors plus a JSON config echo.

    ``extra`` carries small JSON-serialisable metadata such as normalisation
    statistics or the training-loss curve.
    """
    names = sorted(tensors)
    header = {
        "config": dict(config),
        "extra": dict(extra or {}),
        "tensors": names,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for name in names:
        write_tensor(buf, tensors[name])
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(
    path: str | Path, expected_config: Mapping[str, Any] | None = None
) -> tuple[dict[str, np.ndarray], dict[str, Any], dict[str, Any]]:
    """Read a checkpoint; returns ``(tensors, config, extra)``.

    If ``expected_config`` is given, every key it shares with the stored config
    must agree, otherwise :class:`ConfigMismatchError` is raised. Nested
    mappings are compared key by key, so an expectation may name a subset.
    """
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode("utf-8"))
        tensors = {name: read_tensor(fh) for name in header["tensors"]}
    config = header["config"]
    if expected_config is not None:
        conflicts = sorted(_conflicts(_normalise(config), _normalise(dict(expected_config))))
        if conflicts:
            raise ConfigMismatchError(f"{path}: config conflicts on {', '.join(conflicts)}")
    return tensors, config, header["extra"]


def _normalise(value: Any) -> Any:
    # JSON turns tuples into lists; compare on the JSON view.
    return json.loads(json.dumps(value))


def _conflicts(stored: dict, expected: dict, prefix: str = "") -> list[str]:
    out = []
    for k, v in expected.items():
        if k not in stored:
            continue
        if isinstance(v, dict) and isinstance(stored[k], dict):
            out += _conflicts(stored[k], v, f"{prefix}{k}.")
        elif stored[k] != v:
            out.append(f"{prefix}{k}")
    return out
