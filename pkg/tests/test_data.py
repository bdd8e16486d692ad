import gzip

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mipp.data import (
    DATA_ROOT_ENV,
    DatasetError,
    border_mask,
    constant_border,
    informative_subset,
    load_dataset,
    load_digits8x8,
    load_mnist,
    mnist_like,
    read_idx,
    write_idx,
)


@given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6)))
def test_idx_roundtrip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("idx") / "a-idx-ubyte"
    write_idx(path, arr)
    np.testing.assert_array_equal(read_idx(path), arr)


def test_idx_header_is_big_endian(tmp_path):
    path = tmp_path / "x"
    write_idx(path, np.zeros((2, 3), dtype=np.uint8))
    raw = path.read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x02"
    assert raw[4:12] == b"\x00\x00\x00\x02\x00\x00\x00\x03"


def test_idx_gzip_and_bad_magic(tmp_path):
    path = tmp_path / "a.gz"
    with gzip.open(path, "wb") as fh:
        fh.write(b"\x00\x00\x08\x01\x00\x00\x00\x02\x07\x09")
    np.testing.assert_array_equal(read_idx(path), [7, 9])
    bad = tmp_path / "bad"
    bad.write_bytes(b"\x01\x02\x08\x01")
    with pytest.raises(ValueError):
        read_idx(bad)


def _fake_mnist(root, n=5):
    rng = np.random.default_rng(0)
    for prefix in ("train", "t10k"):
        write_idx(root / f"{prefix}-images-idx3-ubyte", rng.integers(0, 256, (n, 28, 28), dtype=np.uint8))
        write_idx(root / f"{prefix}-labels-idx1-ubyte", rng.integers(0, 10, n, dtype=np.uint8))


def test_load_mnist_from_env(tmp_path, monkeypatch):
    _fake_mnist(tmp_path)
    monkeypatch.setenv(DATA_ROOT_ENV, str(tmp_path))
    d = load_dataset("mnist")
    assert d.x_train.shape == (5, 784) and d.x_train.max() <= 1.0
    assert d.image_shape == (1, 28, 28)


def test_missing_mnist_names_path(tmp_path):
    with pytest.raises(DatasetError, match=str(tmp_path)):
        load_mnist(tmp_path)
    with pytest.raises(DatasetError):
        load_mnist(tmp_path / "nope")


def test_digits_split():
    d = load_digits8x8(0)
    assert d.x_train.shape == (1348, 64) and d.x_test.shape == (449, 64)
    assert 0 <= d.x_train.min() and d.x_train.max() <= 1
    assert d.n_classes == 10


def test_mnist_like_border_constant():
    d = mnist_like(0)
    img = d.x_train.reshape(-1, 28, 28)
    assert np.all(img[:, :2] == 0) and np.all(img[:, :, -2:] == 0)


def test_constant_border_recipe():
    d = constant_border(0)
    mask = border_mask()
    assert mask.sum() == 144 - 36
    assert np.all(d.x_train[:, mask] == 0)
    assert np.all(d.x_train[:, ~mask].std(axis=0) > 0)


def test_informative_labels_from_features():
    d = informative_subset(3)
    y = (d.x_train[:, 0] > 0).astype(int) | ((d.x_train[:, 3] > 0).astype(int) << 1)
    np.testing.assert_array_equal(y, d.y_train)


@pytest.mark.parametrize("bad", ["cifar10", "synthetic:nope"])
def test_unknown_dataset(bad):
    with pytest.raises(DatasetError):
        load_dataset(bad)


def test_synthetic_recipes_seeded():
    a = load_dataset("synthetic:separable", seed=2)
    b = load_dataset("synthetic:separable", seed=2)
    np.testing.assert_array_equal(a.x_train, b.x_train)
