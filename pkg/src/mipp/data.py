"""Datasets: MNIST IDX files, 8x8 digits and in-repo synthetic recipes."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DATA_ROOT_ENV = "MIPP_DATA_ROOT"

_IDX_TYPES = {
    0x08: np.uint8,
    0x09: np.int8,
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


class DatasetError(FileNotFoundError):
    pass


@dataclass
class Dataset:
    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    image_shape: tuple[int, ...] | None = None

    @property
    def n_classes(self) -> int:
        return int(max(self.y_train.max(), self.y_test.max()) + 1)

    @property
    def n_features(self) -> int:
        return int(np.prod(self.x_train.shape[1:]))


def read_idx(path) -> np.ndarray:
    """Read an IDX file (optionally gzipped): zero, zero, type, ndim, dims."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path}: bad IDX magic")
    dtype = _IDX_TYPES.get(raw[2])
    if dtype is None:
        raise ValueError(f"{path}: unknown IDX type code {raw[2]:#x}")
    ndim = raw[3]
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=dtype, offset=4 + 4 * ndim)
    if data.size != int(np.prod(dims)):
        raise ValueError(f"{path}: payload has {data.size} items, header says {dims}")
    return data.reshape(dims).astype(np.dtype(dtype).newbyteorder("="))


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    codes = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09, np.dtype(np.float32): 0x0D}
    code = codes[array.dtype]
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    payload = array.astype(array.dtype.newbyteorder(">")).tobytes()
    Path(path).write_bytes(header + payload)


def _find(root: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (root / name).exists():
            return root / name
    raise DatasetError(f"missing MNIST file {root / stem}")


def load_mnist(root=None) -> Dataset:
    root = Path(root or os.environ.get(DATA_ROOT_ENV, "data"))
    if not root.is_dir():
        raise DatasetError(f"MNIST directory {root} does not exist (set {DATA_ROOT_ENV})")
    parts = {}
    for split, prefix in (("train", "train"), ("test", "t10k")):
        x = read_idx(_find(root, f"{prefix}-images-idx3-ubyte"))
        y = read_idx(_find(root, f"{prefix}-labels-idx1-ubyte"))
        parts[split] = (x.reshape(len(x), -1).astype(np.float32) / 255.0, y.astype(np.int64))
    return Dataset("mnist", *parts["train"], *parts["test"], image_shape=(1, 28, 28))


def _split(x, y, test_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    n_test = int(round(len(x) * test_fraction))
    te, tr = order[:n_test], order[n_test:]
    return x[tr], y[tr], x[te], y[te]


def load_digits8x8(seed: int = 0, test_fraction: float = 0.25) -> Dataset:
    from sklearn.datasets import load_digits

    d = load_digits()
    x = (d.data / 16.0).astype(np.float32)
    y = d.target.astype(np.int64)
    return Dataset("digits8x8", *_split(x, y, test_fraction, seed), image_shape=(1, 8, 8))


def mnist_like(seed: int = 0) -> Dataset:
    """8x8 digits upscaled 3x and padded to 28x28 with a black border.

    A download-free stand-in for MNIST with the same input geometry and the
    same constant outer pixels.
    """
    d = load_digits8x8(seed)

    def grow(x):
        img = x.reshape(-1, 8, 8).repeat(3, axis=1).repeat(3, axis=2)
        return np.pad(img, ((0, 0), (2, 2), (2, 2))).reshape(len(x), -1).astype(np.float32)

    return Dataset("mnist-like", grow(d.x_train), d.y_train, grow(d.x_test), d.y_test, image_shape=(1, 28, 28))


def separable(seed: int = 0, n: int = 1000, dims: int = 8, margin: float = 0.5) -> Dataset:
    """Two Gaussian blobs split by a random hyperplane with a clear margin."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=dims)
    w /= np.linalg.norm(w)
    x = rng.normal(size=(2 * n, dims))
    s = x @ w
    keep = np.abs(s) > margin
    x, s = x[keep][:n], s[keep][:n]
    y = (s > 0).astype(np.int64)
    return Dataset("synthetic:separable", *_split(x.astype(np.float32), y, 0.25, seed))


def informative_subset(seed: int = 0, n: int = 2400, dims: int = 8, features=(0, 3)) -> Dataset:
    """Labels are a function of ``features`` only; other inputs are noise.

    Class = quadrant of the two generating features (4 classes for two).
    """
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, dims)).astype(np.float32)
    y = np.zeros(n, dtype=np.int64)
    for bit, f in enumerate(features):
        y |= (x[:, f] > 0).astype(np.int64) << bit
    return Dataset("synthetic:informative", *_split(x, y, 0.25, seed))


def constant_border(seed: int = 0, n: int = 1600, size: int = 12, border: int = 3, classes: int = 4) -> Dataset:
    """Images whose outer ``border`` pixels are always zero.

    The centre holds a class-dependent bright bar plus noise.
    """
    rng = np.random.default_rng(seed)
    inner = size - 2 * border
    y = rng.integers(0, classes, size=n)
    img = np.zeros((n, size, size), dtype=np.float32)
    centre = rng.uniform(0, 0.3, size=(n, inner, inner)).astype(np.float32)
    for c in range(classes):
        rows = y == c
        band = (c * inner) // classes
        centre[rows, band : band + max(1, inner // classes), :] += 1.0
    img[:, border : border + inner, border : border + inner] = centre
    x = img.reshape(n, -1)
    return Dataset("synthetic:border", *_split(x, y.astype(np.int64), 0.25, seed), image_shape=(1, size, size))


def border_mask(size: int = 12, border: int = 3) -> np.ndarray:
    """Boolean mask over flattened pixels, true on the constant border."""
    m = np.ones((size, size), dtype=bool)
    m[border : size - border, border : size - border] = False
    return m.ravel()


SYNTHETIC = {
    "separable": separable,
    "informative": informative_subset,
    "border": constant_border,
    "mnist-like": mnist_like,
}


def load_dataset(dataset_id: str, seed: int = 0, root=None) -> Dataset:
    """Resolve ``mnist``, ``digits8x8`` or ``synthetic:<recipe>``."""
    if dataset_id == "mnist":
        return load_mnist(root)
    if dataset_id == "digits8x8":
        return load_digits8x8(seed)
    if dataset_id.startswith("synthetic:"):
        recipe = dataset_id.split(":", 1)[1]
        if recipe not in SYNTHETIC:
            raise DatasetError(f"unknown synthetic recipe {recipe!r}; choose from {sorted(SYNTHETIC)}")
        return SYNTHETIC[recipe](seed)
    raise DatasetError(f"unknown dataset {dataset_id!r}")
