"""Binary containers: PGM images and masks, MCF1 float rasters, MCM1 checkpoints.

MCF1 layout (little-endian)::

    b"MCF1" | u32 width | u32 height | f64 pixel_spacing_mm | f32[height*width]

MCM1 layout (little-endian)::

    b"MCM1" | u32 version | u32 config_bytes | config JSON (utf-8)
    | u32 n_tensors | per tensor: u32 ndim | u32[ndim] shape | f32[prod(shape)]
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .image import DEFAULT_PIXEL_SPACING_MM, GrayImage
from .network import Model, RegressorConfig, layer_shapes

MCF1_MAGIC = b"MCF1"
MCM1_MAGIC = b"MCM1"
MCM1_VERSION = 1
_MCF1_HEADER = struct.Struct("<4sIId")


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{path}: no such file") from None
    except IsADirectoryError:
        raise FormatError(f"{path}: is a directory") from None
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from None


def _write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# --- PGM ------------------------------------------------------------------


def _pgm_tokens(data: bytes, count: int):
    """Parse ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Return the raw integer raster and its declared maximum value."""
    data = _read_bytes(path)
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    try:
        tokens, offset = _pgm_tokens(data, 4)
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid PGM dimensions or maxval ({width}x{height}, {maxval})")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    payload = data[offset : offset + need]
    if len(payload) != need:
        raise FormatError(f"{path}: PGM raster truncated ({len(payload)} of {need} bytes)")
    raster = np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(np.int64)
    if raster.max(initial=0) > maxval:
        raise FormatError(f"{path}: PGM sample exceeds declared maxval {maxval}")
    return raster, maxval


def write_pgm(path, raster, maxval: int | None = None):
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise FormatError("PGM raster must be 2D")
    maxval = int(raster.max(initial=0)) if maxval is None else int(maxval)
    maxval = max(maxval, 1)
    if not 0 < maxval < 65536 or raster.min(initial=0) < 0 or raster.max(initial=0) > maxval:
        raise FormatError(f"PGM samples must lie in [0, {maxval}]")
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{raster.shape[1]} {raster.shape[0]}\n{maxval}\n".encode("ascii")
    _write_bytes(path, header + raster.astype(dtype).tobytes())


def write_image_pgm(path, image, bits: int = 16):
    """Quantize a [0, 1] image to a ``bits``-deep PGM."""
    arr = image.data if isinstance(image, GrayImage) else np.asarray(image, dtype=np.float64)
    maxval = (1 << bits) - 1
    write_pgm(path, np.rint(np.clip(arr, 0.0, 1.0) * maxval).astype(np.int64), maxval)


def write_mask_pgm(path, mask):
    write_pgm(path, np.asarray(mask, dtype=bool).astype(np.int64) * 255, 255)


# --- MCF1 -----------------------------------------------------------------


def write_mcf1(path, values, pixel_spacing_mm: float = DEFAULT_PIXEL_SPACING_MM):
    values = np.asarray(values)
    if values.ndim != 2:
        raise FormatError("MCF1 payload must be 2D")
    h, w = values.shape
    header = _MCF1_HEADER.pack(MCF1_MAGIC, w, h, float(pixel_spacing_mm))
    _write_bytes(path, header + values.astype("<f4").tobytes())


def read_mcf1(path) -> tuple[np.ndarray, float]:
    data = _read_bytes(path)
    if len(data) < _MCF1_HEADER.size:
        raise FormatError(f"{path}: MCF1 header truncated")
    magic, w, h, spacing = _MCF1_HEADER.unpack_from(data)
    if magic != MCF1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MCF1_MAGIC!r}")
    if w == 0 or h == 0 or not spacing > 0:
        raise FormatError(f"{path}: invalid MCF1 dimensions {w}x{h} or spacing {spacing}")
    need = w * h * 4
    payload = data[_MCF1_HEADER.size :]
    if len(payload) != need:
        raise FormatError(f"{path}: MCF1 payload has {len(payload)} bytes, expected {need}")
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64)
    return values, float(spacing)


def read_image(path, pixel_spacing_mm: float | None = None) -> GrayImage:
    """Load a PGM (normalized by its maxval) or MCF1 image."""
    data_head = _read_bytes(path)[:4]
    if data_head == MCF1_MAGIC:
        values, spacing = read_mcf1(path)
        if not np.all(np.isfinite(values)):
            raise FormatError(f"{path}: image contains non-finite values")
        return GrayImage(values, pixel_spacing_mm or spacing)
    raster, maxval = read_pgm(path)
    return GrayImage.from_raw(raster, maxval, pixel_spacing_mm or DEFAULT_PIXEL_SPACING_MM)


def read_mask(path) -> np.ndarray:
    """Boolean mask from a PGM or MCF1 file; nonzero means set."""
    if _read_bytes(path)[:4] == MCF1_MAGIC:
        return read_mcf1(path)[0] != 0
    return read_pgm(path)[0] != 0


def read_labels(path) -> np.ndarray:
    """Label image from MCF1 (integer-valued floats) or a PGM mask relabelled 8-connected."""
    if _read_bytes(path)[:4] == MCF1_MAGIC:
        values = read_mcf1(path)[0]
        if np.any(values < 0) or np.any(values != np.round(values)):
            raise FormatError(f"{path}: label raster must hold non-negative integers")
        return values.astype(np.int32)
    from .hessian_blob import label_components

    return label_components(read_pgm(path)[0] != 0)[0]


# --- MCM1 -----------------------------------------------------------------


def save_model(path, model: Model):
    model.check()
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MCM1_MAGIC, struct.pack("<II", MCM1_VERSION, len(cfg)), cfg]
    parts.append(struct.pack("<I", len(model.params)))
    for p in model.params:
        parts.append(struct.pack("<I", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.asarray(p).astype("<f4").tobytes())
    _write_bytes(path, b"".join(parts))


def load_model(path) -> Model:
    data = _read_bytes(path)
    try:
        if data[:4] != MCM1_MAGIC:
            raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {MCM1_MAGIC!r}")
        version, n_cfg = struct.unpack_from("<II", data, 4)
        if version != MCM1_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        cfg_dict = json.loads(data[pos : pos + n_cfg].decode("utf-8"))
        pos += n_cfg
        config = RegressorConfig(**cfg_dict)
        (n_tensors,) = struct.unpack_from("<I", data, pos)
        pos += 4
        params = []
        for _ in range(n_tensors):
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            chunk = data[pos : pos + 4 * count]
            if len(chunk) != 4 * count:
                raise FormatError(f"{path}: checkpoint tensor data truncated")
            params.append(np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float64))
            pos += 4 * count
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from None
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes after checkpoint")
    model = Model(config, params)
    if [p.shape for p in params] != [s for _, s in layer_shapes(config)]:
        raise FormatError(f"{path}: tensor shapes do not match the stored configuration")
    return model
