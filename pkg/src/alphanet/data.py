"""Dataset ingestion, training-time augmentation, and evaluation-time
input protocols (10-crop, multi-scale).

Two on-disk formats are supported and produce identical Dataset values:

* idx-like: big-endian IDX pairs ``images.idx`` (magic 00 00 08 04,
  dims N,C,H,W, ubyte payload) and ``labels.idx`` (magic 00 00 08 01,
  dim N, ubyte payload) in one directory.
* image-dir: ``root/<class_name>/<id>.png`` plus a ``labels.csv``
  manifest with columns ``id,class_name``.

All randomness is drawn from per-sample stream forks so an epoch's
augmented batches are a pure function of (dataset, config, epoch seed).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import PrngStream

__all__ = [
    "Dataset",
    "AugmentConfig",
    "load_dataset",
    "save_idx",
    "make_toy_dataset",
    "resize_bilinear",
    "augment",
    "ten_crop",
    "multi_scale_scores",
    "normalize_dataset",
]

IDX_UBYTE = 0x08


@dataclass
class Dataset:
    split: str
    samples: list  # [(image (C,H,W) float array, int label), ...]
    class_count: int
    source: str = ""
    class_names: list | None = None

    def __len__(self):
        return len(self.samples)

    def images(self):
        return [img for img, _ in self.samples]

    def labels(self):
        return np.array([y for _, y in self.samples], dtype=np.int64)


@dataclass
class AugmentConfig:
    resize_range: tuple[int, int] = (36, 68)
    crop_size: int = 32
    hflip_prob: float = 0.5
    color_jitter_strength: float = 0.1

    def __post_init__(self):
        lo, hi = self.resize_range
        if lo > hi:
            raise ValueError("resize_range min exceeds max")
        if lo < self.crop_size:
            raise ValueError("resize_range minimum must be >= crop_size")
        if not 0 <= self.hflip_prob <= 1:
            raise ValueError("hflip_prob must lie in [0, 1]")


# ---- ingestion ---------------------------------------------------------


def _read_idx(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if len(data) < 4:
        raise ValueError(f"corrupt IDX header in {path}")
    zero1, zero2, dtype, ndims = struct.unpack(">BBBB", data[:4])
    if zero1 or zero2 or dtype != IDX_UBYTE:
        raise ValueError(f"unsupported IDX magic in {path}")
    dims = struct.unpack(f">{ndims}I", data[4 : 4 + 4 * ndims])
    payload = np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndims)
    expected = int(np.prod(dims))
    if payload.size != expected:
        raise ValueError(f"IDX payload length {payload.size} != {expected} in {path}")
    return payload.reshape(dims)


def _write_idx(path: Path, arr: np.ndarray):
    arr = np.asarray(arr, dtype=np.uint8)
    header = struct.pack(">BBBB", 0, 0, IDX_UBYTE, arr.ndim)
    header += struct.pack(f">{arr.ndim}I", *arr.shape)
    path.write_bytes(header + arr.tobytes())


def load_dataset(path, format: str, split: str = "train") -> Dataset:
    """Load one split directory into a Dataset with deterministic order."""
    root = Path(path)
    if format == "idx-like":
        images_path = root / "images.idx"
        labels_path = root / "labels.idx"
        if not images_path.exists() or not labels_path.exists():
            raise FileNotFoundError(f"missing images.idx/labels.idx under {root}")
        images = _read_idx(images_path)
        labels = _read_idx(labels_path)
        if images.ndim == 3:  # grayscale (N, H, W)
            images = images[:, None, :, :]
        if images.ndim != 4:
            raise ValueError(f"IDX image tensor must be (N,C,H,W), got {images.shape}")
        if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
            raise ValueError("IDX label count does not match image count")
        class_count = int(labels.max()) + 1 if labels.size else 0
        samples = [(images[i].astype(np.float32), int(labels[i])) for i in range(images.shape[0])]
        if not samples:
            raise ValueError(f"no samples in {root}")
        return Dataset(split=split, samples=samples, class_count=class_count, source=str(root))
    if format == "image-dir":
        from PIL import Image

        manifest = root / "labels.csv"
        if not manifest.exists():
            raise FileNotFoundError(f"missing labels.csv under {root}")
        rows = []
        with open(manifest, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append((row["id"], row["class_name"]))
        if not rows:
            raise ValueError(f"no samples listed in {manifest}")
        rows.sort(key=lambda r: r[0])
        class_names = sorted({cls for _, cls in rows})
        label_map = {cls: i for i, cls in enumerate(class_names)}
        samples = []
        for sample_id, cls in rows:
            img_path = root / cls / f"{sample_id}.png"
            if not img_path.exists():
                raise FileNotFoundError(f"missing image {img_path}")
            with Image.open(img_path) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32)
            samples.append((arr.transpose(2, 0, 1), label_map[cls]))
        return Dataset(split=split, samples=samples, class_count=len(class_names),
                       source=str(root), class_names=class_names)
    raise ValueError(f"unknown dataset format {format!r}")


def save_idx(ds: Dataset, path):
    """Write a Dataset as an idx-like split directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    images = np.stack([np.clip(img, 0, 255) for img, _ in ds.samples]).astype(np.uint8)
    labels = ds.labels().astype(np.uint8)
    _write_idx(root / "images.idx", images)
    _write_idx(root / "labels.idx", labels)


def make_toy_dataset(num_classes=10, per_class=50, size=32, seed=0, split="train") -> Dataset:
    """Separable synthetic image set: per-class smooth template + noise."""
    stream = PrngStream(seed, "toy")
    templates = [stream.fork(f"class{c}").normal((3, 4, 4)) for c in range(num_classes)]
    samples = []
    for c in range(num_classes):
        big = resize_bilinear(templates[c], size, size)
        cs = stream.fork(f"samples/class{c}")
        for _ in range(per_class):
            noise = cs.normal((3, size, size))
            img = np.clip(128.0 + 55.0 * big + 12.0 * noise, 0, 255)
            samples.append((img.astype(np.float32), c))
    return Dataset(split=split, samples=samples, class_count=num_classes, source=f"toy(seed={seed})")


# ---- geometry ----------------------------------------------------------


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers (corner-aligned = false)."""
    C, H, W = img.shape
    ys = (np.arange(out_h) + 0.5) * H / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * W / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, H - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, W - 1)
    y1 = np.clip(y0 + 1, 0, H - 1)
    x1 = np.clip(x0 + 1, 0, W - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)
    wx = np.clip(xs - x0, 0.0, 1.0)
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return (top * (1 - wy[None, :, None]) + bot * wy[None, :, None]).astype(img.dtype)


def augment(img: np.ndarray, cfg: AugmentConfig, stream: PrngStream) -> np.ndarray:
    """Scale augmentation, random crop, horizontal flip, channel jitter.

    The shorter side is resized to a uniform integer draw in
    resize_range; all choices come from the given stream, so the result
    is a pure function of (image, config, stream identity).
    """
    C, H, W = img.shape
    lo, hi = cfg.resize_range
    target = lo + int(stream.integers(0, hi - lo + 1))
    if H <= W:
        nh, nw = target, max(1, round(W * target / H))
    else:
        nh, nw = max(1, round(H * target / W)), target
    img = resize_bilinear(img, nh, nw)
    crop = cfg.crop_size
    if nh < crop or nw < crop:
        raise ValueError(f"image {nh}x{nw} smaller than crop {crop} after resize")
    oy = int(stream.integers(0, nh - crop + 1))
    ox = int(stream.integers(0, nw - crop + 1))
    img = img[:, oy : oy + crop, ox : ox + crop]
    if float(stream.uniform()) < cfg.hflip_prob:
        img = img[:, :, ::-1]
    if cfg.color_jitter_strength > 0:
        u = stream.uniform((C,)) * 2.0 - 1.0
        img = img * (1.0 + cfg.color_jitter_strength * u)[:, None, None]
    return np.ascontiguousarray(img, dtype=np.float32)


def ten_crop(img: np.ndarray, crop_size: int):
    """Four corners + center plus their horizontal flips, in fixed order
    (TL, TR, BL, BR, C, then the same five flipped)."""
    C, H, W = img.shape
    if H < crop_size or W < crop_size:
        raise ValueError(f"image {H}x{W} too small for crop {crop_size}")
    dy, dx = H - crop_size, W - crop_size
    offsets = [(0, 0), (0, dx), (dy, 0), (dy, dx), (dy // 2, dx // 2)]
    crops = [img[:, y : y + crop_size, x : x + crop_size] for y, x in offsets]
    crops += [np.ascontiguousarray(c[:, :, ::-1]) for c in crops]
    return crops


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def multi_scale_scores(score_fn, img: np.ndarray, scales, min_input: int) -> np.ndarray:
    """Average softmax score vectors over square resizes of the image.

    ``score_fn`` maps a batch (1,C,s,s) to a logit row; each scale must
    be at least the network's minimum input extent.
    """
    if not scales:
        raise ValueError("scales must be non-empty")
    total = None
    for s in scales:
        if s < min_input:
            raise ValueError(f"scale {s} below the network minimum input {min_input}")
        x = resize_bilinear(img, s, s)[None]
        probs = _softmax(score_fn(x))
        total = probs if total is None else total + probs
    return (total / len(scales))[0]


# ---- normalization front-end ------------------------------------------


def normalize_dataset(ds: Dataset, method: str, stats=None):
    """Apply one of the three comparable input normalizations.

    log: per-image log scaling.  zscore: per-channel standardization by
    train-split stats.  alpha: encode/decode through the 8-bit alpha
    codec, then standardize the decoded values.  Returns (dataset, stats)
    where stats is whatever the method needs at evaluation time.
    """
    from . import encode as E

    if method == "log":
        samples = [(E.log_scale(img), y) for img, y in ds.samples]
        return Dataset(ds.split, samples, ds.class_count, ds.source, ds.class_names), None
    if method == "zscore":
        if stats is None:
            stats = E.compute_dataset_stats(ds.images())
        samples = [(E.z_score(img, stats).astype(np.float32), y) for img, y in ds.samples]
        return Dataset(ds.split, samples, ds.class_count, ds.source, ds.class_names), stats
    if method == "alpha":
        decoded = [(E.alpha_decode(E.alpha_encode(img)), y) for img, y in ds.samples]
        if stats is None:
            stats = E.compute_dataset_stats([img for img, _ in decoded])
        samples = [(E.z_score(img, stats).astype(np.float32), y) for img, y in decoded]
        return Dataset(ds.split, samples, ds.class_count, ds.source, ds.class_names), stats
    raise ValueError(f"unknown normalization {method!r}")
