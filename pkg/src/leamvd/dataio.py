"""MNIST IDX ingestion, binarization and 28x28 -> 7x7 downscaling."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    pass


@dataclass
class RawImages:
    images: np.ndarray  # (m, rows*cols) uint8
    rows: int
    cols: int
    labels: Optional[np.ndarray] = None

    @property
    def count(self) -> int:
        return self.images.shape[0]


@dataclass
class Dataset:
    images: np.ndarray  # (m, width*height) uint8 in {0, 1}
    width: int
    height: int
    provenance: str = "raw"

    def __post_init__(self):
        if self.images.ndim != 2 or self.images.shape[1] != self.width * self.height:
            raise ValueError(
                f"images of shape {self.images.shape} do not match {self.width}x{self.height}"
            )

    @property
    def count(self) -> int:
        return self.images.shape[0]

    def as_float(self) -> np.ndarray:
        return self.images.astype(float)


def _read_bytes(path: Path | str) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == GZIP_MAGIC:
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, path, magic: int, ndim: int) -> tuple[np.ndarray, tuple[int, ...]]:
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxFormatError(f"{path}: header needs {header_len} bytes, file has {len(raw)}")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    expected = header_len + int(np.prod(dims))
    if len(raw) != expected:
        kind = "truncated" if len(raw) < expected else "oversized"
        raise IdxFormatError(
            f"{path}: {kind} file, expected {expected} bytes for dimensions {dims}, got {len(raw)}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_len), dims


def load_idx(images_path: Path | str, labels_path: Path | str | None = None) -> RawImages:
    """Read an IDX image file (and optionally its labels); gzip is detected by content."""
    data, (m, rows, cols) = _parse_idx(_read_bytes(images_path), images_path, IMAGES_MAGIC, 3)
    images = data.reshape(m, rows * cols).copy()
    labels = None
    if labels_path is not None:
        lab, (ml,) = _parse_idx(_read_bytes(labels_path), labels_path, LABELS_MAGIC, 1)
        if ml != m:
            raise IdxFormatError(f"{labels_path}: {ml} labels for {m} images")
        labels = lab.copy()
    return RawImages(images, rows, cols, labels)


def find_split(data_dir: Path | str, split: str = "train") -> tuple[Path, Path]:
    """Locate the image/label files of an MNIST split, plain or .gz."""
    data_dir = Path(data_dir)
    found = []
    for stem in SPLIT_FILES[split]:
        candidates = [data_dir / stem, data_dir / f"{stem}.gz"]
        hit = next((p for p in candidates if p.exists()), None)
        if hit is None:
            raise FileNotFoundError(f"no {stem}[.gz] in {data_dir}")
        found.append(hit)
    return found[0], found[1]


def binarize(raw: RawImages, threshold: float = 0.5) -> Dataset:
    images = (raw.images.astype(float) / 255.0 > threshold).astype(np.uint8)
    return Dataset(images, raw.cols, raw.rows, provenance=f"binarized>{threshold}")


def downscale_7x7(dataset: Dataset) -> Dataset:
    """4x4 block means thresholded at 0.5; a block exactly half set maps to 1."""
    if dataset.width != 28 or dataset.height != 28:
        raise ValueError(f"expected 28x28 images, got {dataset.width}x{dataset.height}")
    blocks = dataset.images.reshape(-1, 7, 4, 7, 4)
    # compare counts, not float means, so the tie is exact
    counts = blocks.sum(axis=(2, 4), dtype=np.int32)
    small = (counts >= 8).astype(np.uint8).reshape(-1, 49)
    return Dataset(small, 7, 7, provenance=dataset.provenance + "|block4x4>=0.5")


def subset(dataset: Dataset, count: int, rng_seed: int) -> Dataset:
    """Seeded sample of ``count`` rows without replacement, original order kept."""
    if count > dataset.count:
        raise ValueError(f"cannot take {count} rows from a dataset of {dataset.count}")
    if count == dataset.count:
        rows = np.arange(count)
    else:
        rng = np.random.Generator(np.random.PCG64(rng_seed))
        rows = np.sort(rng.choice(dataset.count, size=count, replace=False))
    return Dataset(
        dataset.images[rows], dataset.width, dataset.height,
        provenance=dataset.provenance + f"|subset{count}@{rng_seed}",
    )


def load_mnist(data_dir: Path | str, split: str = "train", small: bool = False) -> Dataset:
    images_path, _ = find_split(data_dir, split)
    ds = binarize(load_idx(images_path))
    return downscale_7x7(ds) if small else ds
