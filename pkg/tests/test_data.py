import struct

import numpy as np
import pytest

from stalesim.data import Sampler, find_mnist, load_idx, split_train_val, synthetic_dataset, synthetic_size, write_idx
from stalesim.errors import IngestError
from stalesim.numerics import RngStream


@pytest.fixture
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(7, 28, 28), dtype=np.uint8)
    labels = np.array([0, 1, 2, 3, 4, 5, 9], dtype=np.uint8)
    paths = tmp_path / "img", tmp_path / "lab"
    write_idx(images, labels, *paths)
    return images, labels, paths


def test_idx_round_trip(idx_pair):
    images, labels, paths = idx_pair
    ds = load_idx(*paths)
    assert len(ds) == 7
    np.testing.assert_array_equal(ds.images, images.reshape(7, 784) / 255.0)
    np.testing.assert_array_equal(ds.labels, labels)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    again = load_idx(*paths)
    assert np.array_equal(ds.images, again.images) and np.array_equal(ds.labels, again.labels)


def test_bad_magic_in_labels(idx_pair):
    _, _, (img, lab) = idx_pair
    blob = bytearray(lab.read_bytes())
    blob[:4] = struct.pack(">I", 0x803)
    lab.write_bytes(bytes(blob))
    with pytest.raises(IngestError, match="bad magic") as err:
        load_idx(img, lab)
    assert str(lab) in str(err.value)


def test_truncated_payload(idx_pair):
    _, _, (img, lab) = idx_pair
    img.write_bytes(img.read_bytes()[:-10])
    expected = 7 * 784
    with pytest.raises(IngestError, match=f"has {expected - 10} bytes, expected {expected}") as err:
        load_idx(img, lab)
    assert "offset 16" in str(err.value)


def test_count_mismatch(idx_pair, tmp_path):
    images, labels, (img, _) = idx_pair
    short = tmp_path / "short"
    short.write_bytes(struct.pack(">2I", 0x801, 6) + labels[:6].tobytes())
    with pytest.raises(IngestError, match="7 images but"):
        load_idx(img, short)


def test_missing_file(tmp_path):
    with pytest.raises(IngestError, match="cannot read"):
        load_idx(tmp_path / "nope", tmp_path / "nope2")


def test_find_mnist(idx_pair, tmp_path):
    assert find_mnist(tmp_path) is None
    _, _, (img, lab) = idx_pair
    img.rename(tmp_path / "train-images-idx3-ubyte")
    lab.rename(tmp_path / "train-labels-idx1-ubyte")
    assert find_mnist(tmp_path) == (tmp_path / "train-images-idx3-ubyte", tmp_path / "train-labels-idx1-ubyte")


def test_synthetic_balanced_and_deterministic():
    a = synthetic_dataset(RngStream(4, "synthetic"), 100)
    b = synthetic_dataset(RngStream(4, "synthetic"), 100)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert np.bincount(a.labels).tolist() == [10] * 10
    assert a.images.shape == (100, 784) and a.images.min() >= 0.0 and a.images.max() <= 1.0
    assert a.synthetic


def test_synthetic_needs_enough_rows():
    with pytest.raises(IngestError):
        synthetic_dataset(RngStream(0, "synthetic"), 5)


def test_linear_classifier_learns_synthetic():
    """Plain softmax regression, written here from scratch, must get below 1.0 NLL in 2000 steps."""
    ds = synthetic_dataset(RngStream(0, "synthetic"), 2000)
    rng = np.random.default_rng(1)
    w = np.zeros((784, 10))
    bias = np.zeros(10)
    for _ in range(2000):
        idx = rng.integers(0, len(ds), 16)
        x, y = ds.images[idx], ds.labels[idx]
        z = x @ w + bias
        p = np.exp(z - z.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(16), y] -= 1.0
        w -= 0.1 * x.T @ p / 16
        bias -= 0.1 * p.mean(axis=0)
    z = ds.images @ w + bias
    z -= z.max(axis=1, keepdims=True)
    nll = np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(ds)), ds.labels]
    assert nll.mean() < 1.0


def test_sampler_consumes_mu_draws():
    ds = synthetic_dataset(RngStream(0, "synthetic"), 20)
    rng = RngStream(3, "data")
    sampler = Sampler(ds, 6, rng)
    batch = sampler.next_batch()
    assert rng.counter == 6 and len(batch) == 6
    sampler.next_batch()
    assert rng.counter == 12


def test_sampler_single_row():
    ds = synthetic_dataset(RngStream(0, "synthetic"), 10).rows(0, 1, "train")
    batch = Sampler(ds, 1, RngStream(0, "data")).next_batch()
    assert np.array_equal(batch.inputs[0], ds.images[0])


def test_sampler_repeatable_from_counter():
    ds = synthetic_dataset(RngStream(0, "synthetic"), 50)
    a = Sampler(ds, 4, RngStream(5, "data", counter=40)).next_indices()
    b = Sampler(ds, 4, RngStream(5, "data", counter=40)).next_indices()
    assert a.tolist() == b.tolist()


def test_sampler_uniform():
    ds = synthetic_dataset(RngStream(0, "synthetic"), 10)
    sampler = Sampler(ds, 10, RngStream(8, "data"))
    idx = np.concatenate([sampler.next_indices() for _ in range(10_000)])
    freq = np.bincount(idx, minlength=10) / idx.size
    assert np.all(np.abs(freq - 0.1) <= 0.01)


def test_batch_larger_than_dataset():
    ds = synthetic_dataset(RngStream(0, "synthetic"), 10)
    with pytest.raises(IngestError):
        Sampler(ds, 11, RngStream(0, "data"))


def test_split_uses_tail_block():
    ds = synthetic_dataset(RngStream(0, "synthetic"), 100)
    train, val = split_train_val(ds, 50, 10, val_holdout=30)
    assert np.array_equal(train.images, ds.images[:50])
    assert np.array_equal(val.images, ds.images[70:80])
    assert (train.split, val.split) == ("train", "validation")
    train, val = split_train_val(ds, 95, 10)
    assert len(train) == 90 and np.array_equal(val.images, ds.images[90:])
    with pytest.raises(IngestError):
        split_train_val(ds, 50, 40, val_holdout=30)


def test_synthetic_size_rounds_up_to_classes():
    assert synthetic_size(10000, 2000) == 12000
    assert synthetic_size(11, 2) == 20
