"""Single-file container for gridded tensors.

Layout: 4-byte magic ``GRD1``, little-endian uint64 header length, UTF-8 JSON
header, then the payload as raw little-endian float32 in row-major order. The
header's declared shape must account for every payload element, and the JSON
is canonicalized (sorted keys, no whitespace) so write -> read -> write is
byte-identical.
"""

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError

MAGIC = b"GRD1"
AXES = ("sample", "frame", "channel", "y", "x")


@dataclass
class GridData:
    data: np.ndarray   # float32, shape per header
    header: dict


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def atomic_write_bytes(path, blob: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def write_grid(path, data: np.ndarray, meta: dict | None = None,
               axes=AXES) -> None:
    data = np.asarray(data)
    if data.ndim != len(axes):
        raise ShapeError(f"data has {data.ndim} axes but {len(axes)} axis names given")
    header = dict(meta or {})
    for reserved in ("shape", "axes", "dtype"):
        if reserved in header:
            raise ParameterError(f"meta may not override reserved header key {reserved!r}")
    header.update({
        "shape": list(data.shape),
        "axes": list(axes),
        "dtype": "f32",
    })
    head = _canonical_json(header)
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    atomic_write_bytes(path, MAGIC + struct.pack("<Q", len(head)) + head + payload)


def read_grid(path) -> GridData:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ParameterError(f"{path}: not a grid file (bad magic {blob[:4]!r})")
    (head_len,) = struct.unpack("<Q", blob[4:12])
    header = json.loads(blob[12:12 + head_len].decode("utf-8"))
    if header.get("dtype") != "f32":
        raise ParameterError(f"{path}: unsupported dtype tag {header.get('dtype')!r}")
    shape = tuple(header["shape"])
    payload = blob[12 + head_len:]
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise ParameterError(
            f"{path}: payload has {len(payload)} bytes, header declares {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return GridData(data=data, header=header)
