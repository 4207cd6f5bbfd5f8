"""Input normalizations and the alpha-encoding codec.

Three comparable normalizations sit behind one interface: per-image log
scaling, per-dataset z-score, and alpha-encoding (per-image affine
min-max normalization stored as an 8-bit quantized payload, so it
doubles as a compact on-disk format).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DatasetStats",
    "EncodedImage",
    "log_scale",
    "z_score",
    "alpha_encode",
    "alpha_decode",
    "compute_dataset_stats",
    "write_aenc",
    "read_aenc",
    "AENC_MAGIC",
]

STD_FLOOR = 1e-6
AENC_MAGIC = b"AENC"
AENC_VERSION = 1
# magic(4) + version(1) + dims 3*u32 + offset f32 + scale f32
AENC_HEADER = struct.Struct("<4sB3Iff")


@dataclass
class DatasetStats:
    mean: np.ndarray  # per channel
    std: np.ndarray   # per channel, floored at STD_FLOOR


@dataclass
class EncodedImage:
    dims: tuple[int, int, int]  # (C, H, W)
    offset: float
    scale: float
    payload: np.ndarray  # uint8, flat, length C*H*W


def log_scale(img: np.ndarray, max_value: float = 255.0) -> np.ndarray:
    """ln(1 + x) / ln(1 + max_value), mapping [0, max_value] to [0, 1]."""
    if np.any(img < 0):
        raise ValueError("log_scale requires non-negative pixel values")
    return np.log1p(img) / np.log1p(max_value)


def z_score(img: np.ndarray, stats: DatasetStats) -> np.ndarray:
    """(x - mean_c) / std_c per channel; stats come from the train split."""
    C = img.shape[0]
    if stats.mean.shape[0] != C or stats.std.shape[0] != C:
        raise ValueError(f"stats cover {stats.mean.shape[0]} channels, image has {C}")
    return (img - stats.mean[:, None, None]) / stats.std[:, None, None]


def compute_dataset_stats(images) -> DatasetStats:
    """Exact per-channel mean/std over a training split (order independent)."""
    images = list(images)
    if not images:
        raise ValueError("cannot compute statistics of an empty split")
    C = images[0].shape[0]
    n = 0
    total = np.zeros(C, dtype=np.float64)
    total_sq = np.zeros(C, dtype=np.float64)
    for img in images:
        x = np.asarray(img, dtype=np.float64)
        n += x.shape[1] * x.shape[2]
        total += x.sum(axis=(1, 2))
        total_sq += (x * x).sum(axis=(1, 2))
    mean = total / n
    var = np.maximum(total_sq / n - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return DatasetStats(mean=mean, std=std)


def alpha_encode(img: np.ndarray) -> EncodedImage:
    """Per-image affine min-max normalization quantized to 8 bits.

    offset = min, scale = max - min (1 for constant images); payload is
    round(255 * (x - offset) / scale).  Round-trip error is bounded by
    scale / 510 plus float rounding.
    """
    if not np.all(np.isfinite(img)):
        raise ValueError("alpha_encode requires finite pixel values")
    if img.ndim != 3:
        raise ValueError("alpha_encode expects a (C, H, W) image")
    offset = float(img.min())
    scale = float(img.max()) - offset
    if scale == 0.0:
        scale = 1.0
    q = np.rint(255.0 * (np.asarray(img, dtype=np.float64) - offset) / scale)
    payload = np.clip(q, 0, 255).astype(np.uint8).ravel()
    return EncodedImage(dims=tuple(img.shape), offset=offset, scale=scale, payload=payload)


def alpha_decode(e: EncodedImage, dtype=np.float32) -> np.ndarray:
    x = e.offset + e.scale * e.payload.astype(np.float64) / 255.0
    return x.reshape(e.dims).astype(dtype)


def write_aenc(e: EncodedImage) -> bytes:
    """Serialize to the AENC wire format (little-endian, version 1)."""
    C, H, W = e.dims
    header = AENC_HEADER.pack(AENC_MAGIC, AENC_VERSION, C, H, W,
                              np.float32(e.offset), np.float32(e.scale))
    return header + e.payload.tobytes()


def read_aenc(data: bytes) -> EncodedImage:
    if len(data) < AENC_HEADER.size:
        raise ValueError("truncated AENC data")
    magic, version, C, H, W, offset, scale = AENC_HEADER.unpack_from(data)
    if magic != AENC_MAGIC:
        raise ValueError("bad AENC magic")
    if version != AENC_VERSION:
        raise ValueError(f"unsupported AENC version {version}")
    payload = np.frombuffer(data, dtype=np.uint8, offset=AENC_HEADER.size)
    if payload.size != C * H * W:
        raise ValueError(f"AENC payload length {payload.size} != {C}*{H}*{W}")
    return EncodedImage(dims=(C, H, W), offset=float(offset), scale=float(scale),
                        payload=payload.copy())
