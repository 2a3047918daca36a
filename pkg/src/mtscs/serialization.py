"""Binary checkpoint and measurement files.

Both formats are little-endian with an 8-byte magic and a u32 version so a
mismatched file fails loudly instead of decoding garbage.  Checkpoints embed
the config YAML verbatim, which is enough to rebuild the exact model before
loading its parameters.  Writes go through a temp file and ``os.replace`` so
a crash never leaves a half-written artifact behind.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .config import RunConfig, dumps_config, loads_config
from .errors import FormatError
from .model import CsModel

CKPT_MAGIC = b"MTSCSCK1"
MEAS_MAGIC = b"MTSCSME1"
FORMAT_VERSION = 1

_WIDTH_TO_DTYPE = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    """Cursor over a byte buffer; every read is bounds-checked."""

    def __init__(self, data: bytes, label: str):
        self.data = data
        self.pos = 0
        self.label = label

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {self.label} file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self) -> bool:
        return self.pos == len(self.data)


def _dtype_width(dtype: np.dtype) -> int:
    width = np.dtype(dtype).itemsize
    if width not in _WIDTH_TO_DTYPE:
        raise FormatError(f"unsupported float width {width}")
    return width


def save_checkpoint(path: str, model: CsModel, cfg: RunConfig) -> None:
    """Write model parameters plus the config that built them."""
    config_text = dumps_config(cfg).encode("utf-8")
    params = model.params()
    parts = [CKPT_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(struct.pack("<I", len(config_text)))
    parts.append(config_text)
    parts.append(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise FormatError(f"parameter name too long: {name!r}")
        width = _dtype_width(arr.dtype)
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", width, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(_WIDTH_TO_DTYPE[width], copy=False).tobytes())
    _atomic_write(path, b"".join(parts))


def load_checkpoint(path: str) -> tuple[CsModel, RunConfig]:
    """Rebuild the model a checkpoint describes and load its parameters."""
    from .training import build_model

    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), "checkpoint")
    if reader.take(8) != CKPT_MAGIC:
        raise FormatError(f"not a checkpoint file: {path}")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (config_len,) = reader.unpack("<I")
    cfg = loads_config(reader.take(config_len).decode("utf-8"))
    (n_params,) = reader.unpack("<I")
    params = {}
    for _ in range(n_params):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        width, ndim = reader.unpack("<BB")
        if width not in _WIDTH_TO_DTYPE:
            raise FormatError(f"unsupported float width {width}")
        shape = reader.unpack(f"<{ndim}I")
        count = 1
        for d in shape:
            count *= d
        raw = reader.take(count * width)
        params[name] = np.frombuffer(raw, dtype=_WIDTH_TO_DTYPE[width]).reshape(
            shape
        )
    if not reader.done():
        raise FormatError("trailing bytes after checkpoint payload")

    model = build_model(cfg, rng=np.random.default_rng(cfg.seed))
    dtype = np.float32 if cfg.precision == "float32" else np.float64
    model.set_params({k: v.astype(dtype) for k, v in params.items()})
    return model, cfg


def save_measurements(
    path: str,
    measurements: np.ndarray,
    original_shape: tuple[int, int, int],
    requested_cr: float,
    achieved_cr: float,
    scales: list[tuple[int, int, int]],
) -> None:
    """Write a measurement tensor with the geometry needed to decode it.

    ``scales`` lists ``(window, out_h, out_w)`` per encoder scale; the decoder
    checks them against the checkpoint's operator before reconstructing.
    """
    arr = np.ascontiguousarray(measurements)
    if arr.ndim != 3:
        raise FormatError(f"measurements must be 3-d, got {arr.ndim}-d")
    width = _dtype_width(arr.dtype)
    parts = [MEAS_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(struct.pack("<dd", float(requested_cr), float(achieved_cr)))
    parts.append(struct.pack("<3I", *original_shape))
    parts.append(struct.pack("<3I", *arr.shape))
    parts.append(struct.pack("<I", len(scales)))
    for window, out_h, out_w in scales:
        parts.append(struct.pack("<3I", window, out_h, out_w))
    parts.append(struct.pack("<B", width))
    parts.append(arr.astype(_WIDTH_TO_DTYPE[width], copy=False).tobytes())
    _atomic_write(path, b"".join(parts))


def load_measurements(path: str) -> dict:
    """Read a measurement file into a dict of tensor plus geometry."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), "measurement")
    if reader.take(8) != MEAS_MAGIC:
        raise FormatError(f"not a measurement file: {path}")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported measurement version {version}")
    requested_cr, achieved_cr = reader.unpack("<dd")
    original_shape = reader.unpack("<3I")
    meas_shape = reader.unpack("<3I")
    (n_scales,) = reader.unpack("<I")
    scales = [reader.unpack("<3I") for _ in range(n_scales)]
    (width,) = reader.unpack("<B")
    if width not in _WIDTH_TO_DTYPE:
        raise FormatError(f"unsupported float width {width}")
    count = meas_shape[0] * meas_shape[1] * meas_shape[2]
    raw = reader.take(count * width)
    if not reader.done():
        raise FormatError("trailing bytes after measurement payload")
    return {
        "measurements": np.frombuffer(raw, dtype=_WIDTH_TO_DTYPE[width]).reshape(
            meas_shape
        ),
        "original_shape": original_shape,
        "requested_cr": requested_cr,
        "achieved_cr": achieved_cr,
        "scales": scales,
    }
