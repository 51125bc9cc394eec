"""Dataset generation, CSV and IDX round-trips, fingerprint stability."""

import os

import numpy as np
import pytest

from epk import data
from epk.errors import FormatError, InputError

MNIST_TRAIN_IMAGES = os.environ.get("EPK_MNIST_IMAGES", "")
MNIST_TRAIN_LABELS = os.environ.get("EPK_MNIST_LABELS", "")


class TestBlobs:
    def test_degenerate_std_zero(self):
        spec = data.BlobSpec(means=((1.0, 4.0), (4.0, 1.0)), std=0.0, per_class_count=1, dim=5, seed=3)
        ds = data.gen_blobs(spec)
        np.testing.assert_array_equal(ds.X[0], [1.0, 4.0, 0.0, 0.0, 0.0])
        np.testing.assert_array_equal(ds.X[1], [4.0, 1.0, 0.0, 0.0, 0.0])
        np.testing.assert_array_equal(ds.labels, [0, 1])

    def test_sample_means_near_targets(self):
        """Law-of-large-numbers check at n=1000 per class."""
        ds = data.gen_blobs(data.BlobSpec(seed=2))
        means = data.BlobSpec().padded_means()
        for c in range(3):
            cls = ds.X[ds.labels == c]
            assert cls.shape[0] == 1000
            assert np.abs(cls.mean(axis=0) - means[c]).max() < 0.1

    def test_determinism(self):
        a = data.gen_blobs(data.BlobSpec(seed=9, per_class_count=10, dim=4, means=((0.0,), (1.0,))))
        b = data.gen_blobs(data.BlobSpec(seed=9, per_class_count=10, dim=4, means=((0.0,), (1.0,))))
        assert np.array_equal(a.X, b.X)
        assert a.fingerprint() == b.fingerprint()

    def test_validation(self):
        with pytest.raises(InputError):
            data.BlobSpec(means=((1.0, 2.0, 3.0),), dim=2)
        with pytest.raises(InputError):
            data.BlobSpec(means=((1.0, 2.0), (2.0, 1.0)), dim=1)


class TestFingerprint:
    def test_stable_across_csv_round_trip(self, tmp_path):
        ds = data.gen_blobs(data.BlobSpec(seed=5, per_class_count=7, dim=6))
        p = tmp_path / "blobs.csv"
        data.save_csv(ds, p)
        again = data.load_csv(p)
        assert np.array_equal(ds.X, again.X)
        assert np.array_equal(ds.Y, again.Y)
        assert ds.fingerprint() == again.fingerprint()

    def test_sensitive_to_values_and_labels(self):
        ds = data.gen_blobs(data.BlobSpec(seed=5, per_class_count=3, dim=4))
        X2 = ds.X.copy()
        X2[0, 0] += 1e-12
        assert data.LabeledDataset(X2, ds.Y).fingerprint() != ds.fingerprint()
        Y2 = ds.Y[::-1].copy()
        assert data.LabeledDataset(ds.X, Y2).fingerprint() != ds.fingerprint()

    def test_one_hot_enforced(self):
        with pytest.raises(InputError):
            data.LabeledDataset(np.zeros((2, 2)), np.array([[0.5, 0.5], [1.0, 0.0]]))
        with pytest.raises(InputError):
            data.LabeledDataset(np.zeros((2, 2)), np.array([[1.0, 1.0], [1.0, 0.0]]))


class TestIdx:
    def _write_pair(self, tmp_path, images, labels):
        ip = tmp_path / "imgs.idx"
        lp = tmp_path / "labs.idx"
        data.write_idx_images(ip, images)
        data.write_idx_labels(lp, labels)
        return ip, lp

    def test_constant_image_pools_to_constant(self, tmp_path):
        images = np.full((3, 28, 28), 37, dtype=np.uint8)
        ip, lp = self._write_pair(tmp_path, images, np.array([0, 1, 2], dtype=np.uint8))
        ds = data.load_mnist(ip, lp, downsample_to=14)
        assert ds.X.shape == (3, 196)
        np.testing.assert_allclose(ds.X, 37 / 255.0, rtol=0, atol=1e-15)

    def test_subset_per_class_counts(self, tmp_path):
        rng = np.random.default_rng(0)
        labels = np.repeat(np.arange(10, dtype=np.uint8), 25)
        rng.shuffle(labels)
        images = rng.integers(0, 256, size=(250, 28, 28), dtype=np.uint8)
        ip, lp = self._write_pair(tmp_path, images, labels)
        ds = data.load_mnist(ip, lp, subset_per_class=10)
        assert ds.n_samples == 100
        counts = np.bincount(ds.labels, minlength=10)
        assert np.all(counts == 10)

    def test_subset_keeps_file_order(self, tmp_path):
        labels = np.array([1, 0, 1, 0, 1], dtype=np.uint8)
        images = np.arange(5, dtype=np.uint8)[:, None, None] * np.ones((1, 4, 4), dtype=np.uint8)
        ip, lp = self._write_pair(tmp_path, images, labels)
        ds = data.load_mnist(ip, lp, subset_per_class=1)
        # first 1-label is image 0, first 0-label is image 1
        np.testing.assert_array_equal(sorted(np.unique(ds.X).tolist()), [0.0, 1 / 255.0])

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.idx"
        p.write_bytes(b"\x00\x00\x08\x99" + b"\x00" * 16)
        with pytest.raises(FormatError):
            data.load_mnist(p, p)

    def test_truncation(self, tmp_path):
        ip, lp = self._write_pair(
            tmp_path, np.zeros((2, 4, 4), dtype=np.uint8), np.zeros(2, dtype=np.uint8)
        )
        raw = ip.read_bytes()
        ip.write_bytes(raw[:-5])
        with pytest.raises(FormatError, match="offset"):
            data.load_mnist(ip, lp)

    @pytest.mark.skipif(
        not (os.path.exists(MNIST_TRAIN_IMAGES) and os.path.exists(MNIST_TRAIN_LABELS)),
        reason="canonical MNIST files not present",
    )
    def test_canonical_first_label(self):
        ds = data.load_mnist(MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS, subset_per_class=1)
        raw = data._read_idx_labels(MNIST_TRAIN_LABELS)
        assert int(raw[0]) == 5
