"""MNIST IDX parsing, checksum-verified fetching, and a synthetic stand-in dataset."""
from __future__ import annotations

import gzip
import hashlib
import os
import shutil
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# SHA-256 of the canonical uncompressed IDX files
MNIST_FILES = {
    "train-images-idx3-ubyte": "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "train-labels-idx1-ubyte": "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    "t10k-images-idx3-ubyte": "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "t10k-labels-idx1-ubyte": "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
}
DEFAULT_MIRROR = "https://storage.googleapis.com/cvdf-datasets/mnist/"


class DataError(ValueError):
    """Missing, malformed or unverifiable dataset files."""


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray      # (N, 28, 28) float32 in [0, 1]
    labels: np.ndarray      # (N,) int64 in [0, 10)
    split: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.ndim != 3 or self.images.shape[1:] != (28, 28):
            raise DataError(f"images must be N x 28 x 28, got {self.images.shape}")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise DataError("pixel values outside [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 9):
            raise DataError("labels outside [0, 10)")

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.split)


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 4 * ndim:
        raise DataError(f"{path}: file too short for an IDX header")
    found = int.from_bytes(raw[:4], "big")
    if found != magic:
        raise DataError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = [int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim)]
    body = raw[4 + 4 * ndim:]
    want = int(np.prod(dims))
    if len(body) < want:
        raise DataError(f"{path}: truncated payload ({len(body)} of {want} bytes)")
    if len(body) > want:
        raise DataError(f"{path}: {len(body) - want} bytes beyond the declared size")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_mnist_idx(images_path, labels_path, split: str = "") -> Dataset:
    """Parse a pair of (uncompressed) IDX files; pixels are scaled by 1/255."""
    images = _read_idx(images_path, IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, LABEL_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    return Dataset((images / np.float32(255)).astype(np.float32), labels.astype(np.int64), split)


def data_dir(path=None) -> Path:
    return Path(path or os.environ.get("EPRC_DATA_DIR") or Path.home() / ".cache" / "eprc" / "mnist")


def load_mnist(split: str = "train", directory=None) -> Dataset:
    prefix = {"train": "train", "test": "t10k"}[split]
    d = data_dir(directory)
    img, lab = d / f"{prefix}-images-idx3-ubyte", d / f"{prefix}-labels-idx1-ubyte"
    if not img.exists() or not lab.exists():
        raise DataError(f"MNIST {split} files not found in {d}; run `eprc fetch` or set EPRC_DATA_DIR")
    return load_mnist_idx(img, lab, split)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def verify(directory=None) -> dict[str, bool]:
    d = data_dir(directory)
    return {name: (d / name).exists() and sha256(d / name) == digest for name, digest in MNIST_FILES.items()}


def fetch_mnist(directory=None, mirror: str = DEFAULT_MIRROR) -> Path:
    """Download the four gzipped IDX files, decompress, and check their SHA-256."""
    d = data_dir(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, digest in MNIST_FILES.items():
        target = d / name
        if target.exists() and sha256(target) == digest:
            continue
        tmp = target.with_suffix(".part")
        try:
            with urllib.request.urlopen(mirror + name + ".gz", timeout=60) as resp, open(tmp, "wb") as f:
                shutil.copyfileobj(gzip.GzipFile(fileobj=resp), f)
        except OSError as exc:
            tmp.unlink(missing_ok=True)
            raise DataError(f"download of {name} failed: {exc}") from None
        if sha256(tmp) != digest:
            tmp.unlink()
            raise DataError(f"{name}: checksum mismatch")
        tmp.replace(target)
    return d


def make_synthetic(n: int, seed: int = 0) -> Dataset:
    """Ten classes of 28x28 images, each drawn around one of two per-class prototype blobs.

    Prototypes are bright Gaussian bumps at class-specific positions on a dark
    background; a sample adds small pixel noise, so classes are linearly
    separable by a wide margin.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    yy, xx = np.mgrid[0:28, 0:28]
    proto_rng = np.random.default_rng(0x5EED)   # prototypes are fixed, samples follow ``seed``
    centers = proto_rng.uniform(5, 23, size=(10, 2, 2))
    protos = np.exp(-((yy - centers[..., 0, None, None]) ** 2 + (xx - centers[..., 1, None, None]) ** 2) / 18.0)
    rng = np.random.default_rng([int(seed), 0x5E])
    labels = rng.integers(0, 10, n)
    which = rng.integers(0, 2, n)
    images = protos[labels, which] + 0.1 * rng.standard_normal((n, 28, 28))
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    return Dataset(images, labels.astype(np.int64), "synthetic")
