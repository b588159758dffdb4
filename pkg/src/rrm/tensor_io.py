"""Array types and on-disk formats shared by the pipeline.

Tensors live in memory as numpy arrays. On disk they use a small container::

    b"RRMT\\0\\0\\0\\1"                  8-byte magic
    {"shape":[...],"dtype":"f32"}\\n     UTF-8 JSON header line
    <row-major little-endian float32 payload>

Label maps are 8-bit grayscale PNGs where 255 marks an unlabeled pixel.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"RRMT\x00\x00\x00\x01"
UNLABELED = 255
MAX_AXES = 4


class TensorLoadError(ValueError):
    """Base class for problems reading a tensor container."""


class TensorHeaderError(TensorLoadError):
    """Magic bytes or JSON header are malformed."""


class TensorSizeError(TensorLoadError):
    """Payload length does not match the declared shape."""


class NonFiniteTensorError(TensorLoadError):
    """Payload contains NaN or infinite values."""


class LabelMapError(ValueError):
    """Label map holds values outside {0..N} and 255."""


def _check_shape(shape):
    shape = [int(s) for s in shape]
    if not 1 <= len(shape) <= MAX_AXES:
        raise ValueError(f"tensor must have 1..{MAX_AXES} axes, got shape {shape}")
    if any(s < 1 for s in shape):
        raise ValueError(f"tensor dimensions must be >= 1, got {shape}")
    return shape


def atomic_write_bytes(path, data: bytes):
    """Write ``data`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(t) -> bytes:
    arr = np.asarray(t)
    shape = _check_shape(arr.shape)
    data = arr.astype("<f4")
    if not np.all(np.isfinite(data)):
        raise ValueError("tensor contains non-finite values")
    header = json.dumps({"shape": shape, "dtype": "f32"}, separators=(",", ":"))
    return MAGIC + header.encode("utf-8") + b"\n" + data.tobytes(order="C")


def decode_tensor(raw: bytes) -> np.ndarray:
    if raw[: len(MAGIC)] != MAGIC:
        raise TensorHeaderError("bad magic; not an RRMT tensor file")
    end = raw.find(b"\n", len(MAGIC))
    if end < 0:
        raise TensorHeaderError("missing header terminator")
    try:
        header = json.loads(raw[len(MAGIC) : end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorHeaderError(f"unparseable header: {exc}") from exc
    if not isinstance(header, dict) or header.get("dtype") != "f32":
        raise TensorHeaderError(f"unsupported header {header!r}")
    shape = header.get("shape")
    if not isinstance(shape, list) or not all(isinstance(s, int) for s in shape):
        raise TensorHeaderError(f"bad shape field {shape!r}")
    try:
        shape = _check_shape(shape)
    except ValueError as exc:
        raise TensorHeaderError(str(exc)) from exc
    payload = raw[end + 1 :]
    expected = 4 * int(np.prod(shape))
    if len(payload) != expected:
        raise TensorSizeError(f"payload is {len(payload)} bytes, shape {shape} needs {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise NonFiniteTensorError("tensor payload contains NaN or Inf")
    return data


def read_tensor(path) -> np.ndarray:
    """Load a float32 tensor in native byte order."""
    return decode_tensor(Path(path).read_bytes())


def write_tensor(t, path):
    atomic_write_bytes(path, encode_tensor(t))


def validate_label_map(labels, num_classes=20):
    arr = np.asarray(labels)
    if arr.ndim != 2 or min(arr.shape) < 1:
        raise LabelMapError(f"label map must be a non-empty H x W array, got {arr.shape}")
    bad = (arr != UNLABELED) & ((arr < 0) | (arr > num_classes))
    if np.any(bad):
        vals = np.unique(arr[bad])[:8].tolist()
        raise LabelMapError(f"label values {vals} outside 0..{num_classes} and 255")
    return arr.astype(np.uint8)


def read_label_map(path, num_classes=20) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise LabelMapError(f"{path}: expected 8-bit single-channel PNG, got mode {im.mode}")
        # palette PNGs (the VOC convention) store class ids as indices
        arr = np.array(im, dtype=np.uint8)
    return validate_label_map(arr, num_classes)


def write_label_map(labels, path, num_classes=20):
    arr = validate_label_map(labels, num_classes)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".png")
    os.close(fd)
    try:
        Image.fromarray(arr).save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_image(path) -> np.ndarray:
    """Read a PNG/PPM image as an (H, W, 3) uint8 array."""
    with Image.open(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def write_image(img, path):
    arr = np.asarray(img, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must be H x W x 3, got {arr.shape}")
    Image.fromarray(arr).save(path)


def resize_bilinear(t, out_h, out_w):
    """Corner-aligned bilinear resize of a (C, H, W) array.

    Output corners sample input corners exactly. Same-size input is returned
    unchanged (as a copy).
    """
    arr = np.asarray(t)
    if arr.ndim != 3:
        raise ValueError(f"expected (C, H, W), got {arr.shape}")
    out_h, out_w = int(out_h), int(out_w)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be >= 1, got {out_h}x{out_w}")
    _, h, w = arr.shape
    if (h, w) == (out_h, out_w):
        return arr.copy()
    x = arr.astype(np.float64)
    y0, y1, wy = _axis_weights(h, out_h)
    x0, x1, wx = _axis_weights(w, out_w)
    rows = x[:, y0, :] * (1.0 - wy)[None, :, None] + x[:, y1, :] * wy[None, :, None]
    out = rows[:, :, x0] * (1.0 - wx) + rows[:, :, x1] * wx
    return out.astype(arr.dtype) if np.issubdtype(arr.dtype, np.floating) else out


def _axis_weights(n_in, n_out):
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(pos).astype(np.int64), 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo
