"""Named-tensor checkpoint files.

Layout (little-endian):

    bytes 0..7    magic ``b"MODALCKP"``
    bytes 8..11   format version, uint32 (currently 1)
    bytes 12..19  header length L, uint64
    bytes 20..    UTF-8 JSON header of L bytes
    then          raw tensor payload

The JSON header has two keys: ``meta`` (free-form dict: model head, scale,
training stage, epoch, loss, ...) and ``tensors``, mapping each tensor name
to ``{"dtype": str, "shape": [...], "offset": int}`` with offsets relative
to the start of the payload. Tensor data is stored row-major.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"MODALCKP"
VERSION = 1


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    index = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        index[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset}
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta or {}, "tensors": index}).encode("utf-8")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns (tensors, meta)."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise FormatError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: corrupt checkpoint header: {exc}") from exc
        payload = fh.read()
    tensors = {}
    for name, info in header["tensors"].items():
        dt = np.dtype(info["dtype"])
        shape = tuple(info["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = info["offset"]
        tensors[name] = np.frombuffer(
            payload, dtype=dt, count=count, offset=start
        ).reshape(shape).copy()
    return tensors, header.get("meta", {})
