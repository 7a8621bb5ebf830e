"""Raster and blob file formats: 8-bit sRGB PNG, raw f32 depth, f32 clouds.

Depth maps use a fixed 16-byte header (ASCII "DPTH", u32 width, u32 height,
u32 reserved) followed by row-major little-endian f32 values; +inf marks
pixels with no surface. Point clouds are bare little-endian f32 triples.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

DEPTH_MAGIC = b"DPTH"


class RasterError(ValueError):
    """Malformed or unreadable raster/blob file."""


def write_png(path, image):
    """Write an image as 8-bit PNG. Accepts float sRGB in [0,1] (quantized
    by round) or uint8; HxW for grayscale, HxWx3 color, HxWx4 with alpha.
    ``path`` may be a filesystem path or a writable binary file object."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def png_bytes(image) -> bytes:
    import io
    buf = io.BytesIO()
    write_png(buf, image)
    return buf.getvalue()


def read_png(path) -> np.ndarray:
    """Read a PNG as float sRGB in [0,1]; color images come back HxWx3."""
    try:
        with Image.open(str(path)) as im:
            im.load()
            arr = np.asarray(im)
    except Exception as e:
        raise RasterError(f"cannot decode PNG {path}: {e}") from e
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return arr.astype(np.float64) / 255.0


def read_png_u8(path) -> np.ndarray:
    try:
        with Image.open(str(path)) as im:
            im.load()
            return np.asarray(im)
    except Exception as e:
        raise RasterError(f"cannot decode PNG {path}: {e}") from e


def write_depth(path, depth: np.ndarray):
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim != 2:
        raise RasterError(f"depth must be 2-D, got shape {depth.shape}")
    h, w = depth.shape
    header = DEPTH_MAGIC + struct.pack("<III", w, h, 0)
    with open(path, "wb") as f:
        f.write(header)
        f.write(depth.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != DEPTH_MAGIC:
        raise RasterError(f"{path}: missing depth header magic")
    w, h, _ = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * w * h
    if len(raw) != expected:
        raise RasterError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw[16:], dtype="<f4").reshape(h, w).astype(np.float32)


def write_cloud(path, cloud: np.ndarray):
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise RasterError(f"cloud must be (n, 3), got shape {cloud.shape}")
    with open(path, "wb") as f:
        f.write(cloud.astype("<f4").tobytes())


def read_cloud(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 12 != 0:
        raise RasterError(f"{path}: length {len(raw)} is not a whole number of f32 triples")
    return np.frombuffer(raw, dtype="<f4").reshape(-1, 3).astype(np.float64)
