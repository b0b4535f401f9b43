"""Dataset ingestion: IDX files, class filtering, downsampling, fixtures.

IDX layout (big-endian): a 4-byte magic ``0x00000803`` for 3-D unsigned-byte
image stacks or ``0x00000801`` for 1-D label vectors, one 32-bit dimension per
axis, then the payload bytes in row-major order.
"""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IdxFormatError, PairingError, ShapeError, UnsupportedError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MAX_IDX_ELEMENTS = 2**31 - 1


@dataclass
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64).reshape(-1, self.height * self.width)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.images.shape[0] != self.labels.shape[0]:
            raise PairingError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixels must lie in [0, 1]")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.labels))

    def of_class(self, label: int) -> np.ndarray:
        return self.images[self.labels == label]


def _read_header(data: bytes, magic: int, ndim: int) -> tuple[list[int], int]:
    header_len = 4 + 4 * ndim
    if len(data) < 4:
        raise IdxFormatError(f"stream is {len(data)} bytes, too short for a magic number", 0)
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise IdxFormatError(f"bad magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    if len(data) < header_len:
        raise IdxFormatError(
            f"header needs {header_len} bytes, stream has {len(data)}", len(data)
        )
    dims = list(struct.unpack(f">{ndim}I", data[4:header_len]))
    total = 1
    for axis, d in enumerate(dims):
        total *= d
        if total > MAX_IDX_ELEMENTS:
            raise IdxFormatError(f"dimension product overflows at axis {axis} ({dims})", 4 + 4 * axis)
    expected = header_len + total
    if len(data) != expected:
        raise IdxFormatError(
            f"payload length mismatch: expected {total} bytes, got {len(data) - header_len}",
            min(len(data), expected),
        )
    return dims, header_len


def parse_idx_images(data: bytes) -> tuple[np.ndarray, int, int]:
    """Return ``(images, height, width)``; ``images`` has one row per image in [0, 1]."""
    (count, height, width), offset = _read_header(data, IMAGE_MAGIC, 3)
    pixels = np.frombuffer(data, dtype=np.uint8, offset=offset)
    return pixels.reshape(count, height * width).astype(np.float64) / 255.0, height, width


def parse_idx_labels(data: bytes) -> np.ndarray:
    (count,), offset = _read_header(data, LABEL_MAGIC, 1)
    return np.frombuffer(data, dtype=np.uint8, offset=offset, count=count).astype(np.int64)


def serialize_idx_images(images, height: int, width: int) -> bytes:
    """Inverse of :func:`parse_idx_images`; pixels are rounded to the nearest of 256 levels."""
    arr = np.asarray(images, dtype=np.float64).reshape(-1, height * width)
    raw = np.rint(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    return struct.pack(">4I", IMAGE_MAGIC, arr.shape[0], height, width) + raw.tobytes()


def serialize_idx_labels(labels) -> bytes:
    arr = np.asarray(labels).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError("IDX labels must fit in an unsigned byte")
    return struct.pack(">2I", LABEL_MAGIC, arr.shape[0]) + arr.astype(np.uint8).tobytes()


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def load_idx_dataset(images_path, labels_path) -> LabeledDataset:
    images, height, width = parse_idx_images(_read_bytes(images_path))
    labels = parse_idx_labels(_read_bytes(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise PairingError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    return LabeledDataset(images, labels, height, width)


def write_idx_dataset(ds: LabeledDataset, images_path, labels_path) -> None:
    Path(images_path).write_bytes(serialize_idx_images(ds.images, ds.height, ds.width))
    Path(labels_path).write_bytes(serialize_idx_labels(ds.labels))


def filter_classes(ds: LabeledDataset, keep) -> LabeledDataset:
    keep = np.asarray(sorted(set(int(k) for k in keep)), dtype=np.int64)
    rows = np.isin(ds.labels, keep)
    return LabeledDataset(ds.images[rows], ds.labels[rows], ds.height, ds.width)


def split_holdout(ds: LabeledDataset, fraction: float = 0.1) -> tuple[LabeledDataset, LabeledDataset]:
    """Per class, the last ``ceil(fraction * n)`` samples become the held-out split."""
    train_rows, test_rows = [], []
    for label in ds.classes:
        idx = np.flatnonzero(ds.labels == label)
        n_test = int(math.ceil(fraction * len(idx))) if fraction > 0 else 0
        n_test = min(n_test, len(idx))
        train_rows.append(idx[: len(idx) - n_test])
        test_rows.append(idx[len(idx) - n_test:])
    train = np.sort(np.concatenate(train_rows)) if train_rows else np.zeros(0, dtype=np.int64)
    test = np.sort(np.concatenate(test_rows)) if test_rows else np.zeros(0, dtype=np.int64)
    return (
        LabeledDataset(ds.images[train], ds.labels[train], ds.height, ds.width),
        LabeledDataset(ds.images[test], ds.labels[test], ds.height, ds.width),
    )


def _bilinear_axis(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # pixel-centre alignment: output centre i maps to source (i + 0.5) * src/dst - 0.5
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0, src - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def downsample(image, target_h: int, target_w: int) -> np.ndarray:
    """Bilinear resampling of a 2-D image onto a smaller grid."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"downsample expects a 2-D image, got shape {img.shape}")
    h, w = img.shape
    if target_h > h or target_w > w or target_h < 1 or target_w < 1:
        raise UnsupportedError(f"cannot resample {h}x{w} to {target_h}x{target_w}")
    r0, r1, fr = _bilinear_axis(h, target_h)
    c0, c1, fc = _bilinear_axis(w, target_w)
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bottom = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    out = top * (1 - fr)[:, None] + bottom * fr[:, None]
    return np.clip(out, 0.0, 1.0)


def downsample_dataset(ds: LabeledDataset, target_h: int = 28, target_w: int = 28) -> LabeledDataset:
    """Resample every image (e.g. 128x128 NIST characters to 28x28); no other normalization."""
    imgs = ds.images.reshape(-1, ds.height, ds.width)
    out = np.stack([downsample(im, target_h, target_w) for im in imgs]) if len(imgs) else np.zeros((0, target_h, target_w))
    return LabeledDataset(out.reshape(len(imgs), -1), ds.labels, target_h, target_w)


def make_synthetic(
    classes: int, per_class: int, dim: int, rng: np.random.Generator, noise: float = 0.05
) -> LabeledDataset:
    """Per class, a random prototype in [0.1, 0.9] plus Gaussian jitter, clamped to [0, 1]."""
    if dim < 4:
        raise ValueError("dim must be at least 4")
    side = math.isqrt(dim)
    height, width = (side, side) if side * side == dim else (1, dim)
    prototypes = rng.uniform(0.1, 0.9, size=(classes, dim))
    images = np.repeat(prototypes, per_class, axis=0)
    images = np.clip(images + noise * rng.standard_normal(images.shape), 0.0, 1.0)
    labels = np.repeat(np.arange(classes), per_class)
    return LabeledDataset(images, labels, height, width)


def load_bundled_mnist5k() -> LabeledDataset:
    """The 5,000-image MNIST subset (500 per digit) shipped with mlxtend."""
    try:
        from importlib.resources import files

        path = files("mlxtend.data") / "data" / "mnist_5k.csv.gz"
    except ModuleNotFoundError as exc:
        raise FileNotFoundError("the bundled MNIST subset needs mlxtend installed") from exc
    with path.open("rb") as raw, gzip.open(raw, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",")
    pixels, labels = table[:, :-1], table[:, -1].astype(np.int64)
    return LabeledDataset(pixels / 255.0, labels, 28, 28)
