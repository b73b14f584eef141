"""Lossless numeric file formats: PFM float maps, 16-bit PNG, flat TOML emit."""

from __future__ import annotations

import numpy as np
import cv2


def write_pfm(path, data: np.ndarray) -> None:
    """Grayscale PFM, little-endian float32, rows stored bottom-up."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("PFM writer expects a 2D float map")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(arr).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError(f"{path} is not a grayscale PFM")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(4 * w * h), dtype="<f4" if scale < 0 else ">f4")
    return np.flipud(data.reshape(h, w)).astype(np.float32)


def write_png16(path, img: np.ndarray) -> None:
    """16-bit PNG from a float image in [0, 1] (clipped); RGB or grayscale."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    q = np.round(arr * 65535.0).astype(np.uint16)
    if q.ndim == 3:
        q = cv2.cvtColor(q, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), q):
        raise IOError(f"failed to write {path}")


def read_png16(path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"failed to read {path}")
    if raw.ndim == 3:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return raw.astype(np.float32) / 65535.0


def read_image(path) -> np.ndarray:
    """Any 8/16-bit PNG (or float image) as float32 RGB/grayscale in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"failed to read {path}")
    if raw.ndim == 3:
        code = cv2.COLOR_BGRA2RGB if raw.shape[2] == 4 else cv2.COLOR_BGR2RGB
        raw = cv2.cvtColor(raw, code)
    if raw.dtype == np.uint8:
        return raw.astype(np.float32) / 255.0
    if raw.dtype == np.uint16:
        return raw.astype(np.float32) / 65535.0
    return raw.astype(np.float32)


def write_png8(path, mask: np.ndarray) -> None:
    arr = np.asarray(mask)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    if not cv2.imwrite(str(path), arr.astype(np.uint8)):
        raise IOError(f"failed to write {path}")


def read_png8(path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise IOError(f"failed to read {path}")
    return raw


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot emit {type(v)} as TOML")


def emit_toml(data: dict) -> str:
    """Serialize a dict of scalars plus one level of nested tables."""
    top = {k: v for k, v in data.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in data.items() if isinstance(v, dict)}
    lines = [f"{k} = {_toml_value(v)}" for k, v in top.items() if v is not None]
    for name, tbl in tables.items():
        lines.append(f"\n[{name}]")
        lines += [f"{k} = {_toml_value(v)}" for k, v in tbl.items() if v is not None]
    return "\n".join(lines) + "\n"
