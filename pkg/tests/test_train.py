"""Trainer tests: initialization, update rule, replay, file format."""

import math

import numpy as np
import pytest

from epk import data, model, train
from epk.errors import FormatError, NumericalError


def tiny_dataset(seed=0, m=6, d=3, k=2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, d))
    Y = np.eye(k)[rng.integers(0, k, size=m)]
    return data.LabeledDataset(X, Y)


class TestInitModel:
    def test_constant_initial_output(self):
        spec = model.ModelSpec((4, 8, 3))
        w0 = train.init_model(spec, seed=7)
        rng = np.random.default_rng(1)
        ref = model.forward(spec, w0, rng.normal(size=4))
        for _ in range(100):
            out = model.forward(spec, w0, rng.normal(size=4))
            assert np.array_equal(out, ref)
        np.testing.assert_allclose(ref, math.log(1.0 / 3.0), rtol=0, atol=1e-15)

    def test_same_seed_bit_identical(self):
        spec = model.ModelSpec((5, 6, 2))
        assert np.array_equal(train.init_model(spec, 42), train.init_model(spec, 42))
        assert not np.array_equal(train.init_model(spec, 42), train.init_model(spec, 43))

    def test_final_layer_zero(self):
        spec = model.ModelSpec((3, 4, 2))
        layers = model.unpack(spec, train.init_model(spec, 0))
        assert np.all(layers[-1][0] == 0.0) and np.all(layers[-1][1] == 0.0)
        assert np.any(layers[0][0] != 0.0)


class TestTrainFullBatch:
    def test_zero_step_size_degenerate(self):
        ds = tiny_dataset()
        spec = model.ModelSpec((3, 4, 2))
        traj = train.train_full_batch(spec, ds, 0.0, 5, seed=1)
        for s in range(6):
            assert np.array_equal(traj.checkpoints[s], traj.checkpoints[0])

    def test_single_step_closed_form(self):
        ds = tiny_dataset(m=1)
        spec = model.ModelSpec((3, 4, 2))
        traj = train.train_full_batch(spec, ds, 0.25, 1, seed=3)
        w0 = traj.checkpoints[0]
        J = model.per_sample_jacobian(spec, w0, ds.X[0])
        expected = w0 - 0.25 * (J.T @ (-ds.Y[0]) / 1)
        np.testing.assert_array_equal(traj.checkpoints[1], expected)

    def test_replay_invariant(self):
        ds = tiny_dataset(seed=5, m=10)
        spec = model.ModelSpec((3, 5, 2))
        traj = train.train_full_batch(spec, ds, 0.1, 8, seed=11)
        for s in range(traj.n_steps):
            g = model.batch_loss_gradient(spec, traj.checkpoints[s], ds.X, ds.Y)
            w_next = traj.checkpoints[s] - traj.step_sizes[s] * g
            assert np.array_equal(w_next, traj.checkpoints[s + 1])

    def test_variable_step_sizes(self):
        ds = tiny_dataset(seed=2)
        spec = model.ModelSpec((3, 4, 2))
        eps = np.array([0.1, 0.2, 0.05])
        traj = train.train_full_batch(spec, ds, eps, 3, seed=1)
        np.testing.assert_array_equal(traj.step_sizes, eps)
        g = model.batch_loss_gradient(spec, traj.checkpoints[1], ds.X, ds.Y)
        np.testing.assert_array_equal(
            traj.checkpoints[2], traj.checkpoints[1] - 0.2 * g
        )

    def test_divergence_abort_names_step(self):
        ds = tiny_dataset(seed=4)
        spec = model.ModelSpec((3, 4, 2))
        with pytest.raises(NumericalError, match="step"):
            train.train_full_batch(spec, ds, 1e150, 50, seed=1)

    def test_determinism_byte_for_byte(self):
        ds = tiny_dataset(seed=8, m=12)
        spec = model.ModelSpec((3, 6, 2))
        a = train.train_full_batch(spec, ds, 0.15, 6, seed=21)
        b = train.train_full_batch(spec, ds, 0.15, 6, seed=21)
        assert train.trajectory_bytes(a) == train.trajectory_bytes(b)

    def test_toy_blob_accuracy(self):
        """Seeded sanity run on the 3-Gaussian problem: N=500, eps=0.1."""
        ds = data.gen_blobs(data.BlobSpec(seed=2718))
        spec = model.ModelSpec((100, 64, 3))
        traj = train.train_full_batch(spec, ds, 0.1, 500, seed=31415)
        acc = model.accuracy(spec, traj.checkpoints[-1], ds.X, ds.Y)
        assert acc > 0.95, f"final train accuracy {acc}"


class TestTrajectoryFile:
    def test_round_trip_byte_identical(self, tmp_path):
        ds = tiny_dataset(seed=6)
        spec = model.ModelSpec((3, 4, 2))
        traj = train.train_full_batch(spec, ds, 0.1, 4, seed=2)
        p1, p2 = tmp_path / "a.traj", tmp_path / "b.traj"
        train.save_trajectory(traj, p1)
        loaded = train.load_trajectory(p1)
        assert np.array_equal(loaded.checkpoints, traj.checkpoints)
        assert np.array_equal(loaded.step_sizes, traj.step_sizes)
        assert loaded.dataset_fingerprint == traj.dataset_fingerprint
        assert loaded.seed == traj.seed and loaded.loss == traj.loss
        assert loaded.spec == traj.spec
        train.save_trajectory(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_zero_step_trajectory_round_trips(self, tmp_path):
        ds = tiny_dataset(seed=1)
        spec = model.ModelSpec((3, 4, 2))
        traj = train.train_full_batch(spec, ds, 0.1, 0, seed=5)
        p = tmp_path / "init.traj"
        train.save_trajectory(traj, p)
        loaded = train.load_trajectory(p)
        assert loaded.n_steps == 0
        assert np.array_equal(loaded.checkpoints, traj.checkpoints)

    def test_corrupted_magic(self, tmp_path):
        ds = tiny_dataset(seed=1)
        spec = model.ModelSpec((3, 4, 2))
        traj = train.train_full_batch(spec, ds, 0.1, 1, seed=5)
        p = tmp_path / "bad.traj"
        train.save_trajectory(traj, p)
        raw = bytearray(p.read_bytes())
        raw[:4] = b"NOPE"
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            train.load_trajectory(p)

    def test_truncation_names_offset(self, tmp_path):
        ds = tiny_dataset(seed=1)
        spec = model.ModelSpec((3, 4, 2))
        traj = train.train_full_batch(spec, ds, 0.1, 2, seed=5)
        p = tmp_path / "trunc.traj"
        train.save_trajectory(traj, p)
        p.write_bytes(p.read_bytes()[:-9])
        with pytest.raises(FormatError, match="offset"):
            train.load_trajectory(p)
