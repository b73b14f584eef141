"""Wire tensor codec: base64 little-endian float32 with shape and CRC-32.

This is the protocol's authoritative server-side implementation; the
client keeps its own copy (the wire contract is the only coupling
between the two packages).
"""

from __future__ import annotations

import base64
import zlib

import numpy as np


class TensorError(ValueError):
    pass


def decode_tensor(payload: dict) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in payload["shape"])
        dtype = payload["dtype"]
        data = base64.b64decode(payload["data"])
        crc = int(payload["crc32"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TensorError(f"malformed tensor message: {exc}") from exc
    if dtype != "f32":
        raise TensorError(f"unsupported dtype {dtype!r}, expected 'f32'")
    if len(data) != 4 * int(np.prod(shape)):
        raise TensorError(f"byte length {len(data)} does not match shape {shape}")
    if (zlib.crc32(data) & 0xFFFFFFFF) != crc:
        raise TensorError("checksum mismatch")
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()


def encode_tensor(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f4")
    data = a.tobytes()
    return {
        "shape": list(a.shape),
        "dtype": "f32",
        "data": base64.b64encode(data).decode("ascii"),
        "crc32": zlib.crc32(data) & 0xFFFFFFFF,
    }
