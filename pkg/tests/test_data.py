import hashlib

import numpy as np
import pytest

from eprc import autodiff as ad
from eprc.data import DataError, Dataset, load_mnist, load_mnist_idx, make_synthetic, verify
from eprc.optim import Adam
from conftest import MNIST_DIR

needs_mnist = pytest.mark.skipif(not (MNIST_DIR / "t10k-images-idx3-ubyte").exists(),
                                 reason="MNIST not available (set EPRC_DATA_DIR)")

# sha256 of the raw bytes of the first test image in the canonical files
FIRST_TEST_IMAGE_SHA256 = "8f6a418c9a639f9e14e96feca47a97df2a35a0a68ae2875431c5c80e05536941"


def write_idx(path, magic, dims, payload: bytes):
    header = magic.to_bytes(4, "big") + b"".join(d.to_bytes(4, "big") for d in dims)
    path.write_bytes(header + payload)


@pytest.fixture
def tiny_idx(tmp_path):
    img = tmp_path / "img"
    lab = tmp_path / "lab"
    pixels = np.arange(2 * 28 * 28, dtype=np.uint8)
    write_idx(img, 0x803, (2, 28, 28), pixels.tobytes())
    write_idx(lab, 0x801, (2,), bytes([3, 9]))
    return img, lab, pixels


def test_parse_small_files(tiny_idx):
    img, lab, pixels = tiny_idx
    ds = load_mnist_idx(img, lab)
    assert len(ds) == 2
    np.testing.assert_array_equal(ds.labels, [3, 9])
    np.testing.assert_allclose(ds.images.reshape(-1), pixels / 255.0, rtol=1e-6)
    # row-major, big-endian dimension header
    assert ds.images[0, 0, 5] == pytest.approx(5 / 255)


def test_bad_magic(tiny_idx, tmp_path):
    img, lab, pixels = tiny_idx
    bad = tmp_path / "bad"
    write_idx(bad, 0x804, (2, 28, 28), pixels.tobytes())
    with pytest.raises(DataError, match="magic"):
        load_mnist_idx(bad, lab)
    with pytest.raises(DataError, match="magic"):
        load_mnist_idx(lab, img)


def test_truncated_and_count_mismatch(tiny_idx, tmp_path):
    img, lab, pixels = tiny_idx
    short = tmp_path / "short"
    write_idx(short, 0x803, (2, 28, 28), pixels.tobytes()[:-1])
    with pytest.raises(DataError, match="truncated"):
        load_mnist_idx(short, lab)
    lab3 = tmp_path / "lab3"
    write_idx(lab3, 0x801, (3,), bytes([1, 2, 3]))
    with pytest.raises(DataError, match="mismatch"):
        load_mnist_idx(img, lab3)
    lab_short = tmp_path / "lab_short"
    lab_short.write_bytes(b"\x00\x00")
    with pytest.raises(DataError):
        load_mnist_idx(img, lab_short)


def test_missing_directory_is_data_error(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_mnist("train", tmp_path)


@needs_mnist
def test_canonical_mnist():
    assert all(verify(MNIST_DIR).values())
    train = load_mnist("train", MNIST_DIR)
    test = load_mnist("test", MNIST_DIR)
    assert len(train) == 60_000 and len(test) == 10_000
    hist = np.bincount(test.labels, minlength=10)
    assert hist.sum() == 10_000 and hist.min() > 800
    raw = np.round(test.images[0] * 255).astype(np.uint8).tobytes()
    assert hashlib.sha256(raw).hexdigest() == FIRST_TEST_IMAGE_SHA256
    assert test.labels[0] == 7


def test_synthetic_deterministic_and_valid():
    a, b = make_synthetic(300, seed=4), make_synthetic(300, seed=4)
    assert a.images.tobytes() == b.images.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    assert a.images.min() >= 0 and a.images.max() <= 1
    assert set(np.unique(a.labels)) == set(range(10))
    one = make_synthetic(1, seed=0)
    assert one.images.shape == (1, 28, 28)
    with pytest.raises(ValueError):
        make_synthetic(0)


def test_synthetic_linear_separability():
    ds = make_synthetic(2000, seed=0)
    x = ds.images.reshape(len(ds), -1).astype(np.float64)
    w = np.zeros((784, 10))
    b = np.zeros(10)
    opt = Adam([w, b], lr=0.01)
    r = np.random.default_rng(0)
    with ad.precision("float64"):
        for _ in range(500):
            idx = r.integers(0, len(ds), 128)
            wt, bt = ad.Tensor(w, requires_grad=True), ad.Tensor(b, requires_grad=True)
            loss = ad.softmax_cross_entropy(ad.bias_add(ad.matmul(ad.constant(x[idx]), wt), bt), ds.labels[idx])
            opt.step(ad.grad(loss, [wt, bt]))
    acc = np.mean((x @ w + b).argmax(1) == ds.labels)
    assert acc >= 0.95


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 28, 28), np.float32), np.zeros(3, np.int64), "x")
    with pytest.raises(DataError):
        Dataset(np.full((1, 28, 28), 2.0, np.float32), np.zeros(1, np.int64), "x")
    with pytest.raises(DataError):
        Dataset(np.zeros((1, 28, 28), np.float32), np.array([10]), "x")
