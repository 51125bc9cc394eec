"""Full-batch forward-Euler training with every weight state checkpointed,
plus the binary trajectory file format.

The update rule is ``w_{s+1} = w_s - eps_s * g_s`` with ``g_s`` the mean
loss gradient from :func:`epk.model.batch_loss_gradient`.  Training is
strictly sequential over steps; each step's gradient reduction runs in
fixed index order, so a trajectory is a pure function of
(spec, data, seed, eps, N) down to the last bit.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import model
from .errors import ConfigurationError, FormatError, InputError, NumericalError

TRAJECTORY_MAGIC = b"EPK1"
TRAJECTORY_VERSION = 1


@dataclass
class Trajectory:
    """Ordered weight checkpoints w_0..w_N plus per-step sizes.

    ``checkpoints`` has shape [N+1, W]; ``step_sizes`` [N].  The stored
    dataset fingerprint identifies the training data the path was
    produced from; kernel reconstructions refuse other datasets.
    """

    spec: model.ModelSpec
    checkpoints: np.ndarray
    step_sizes: np.ndarray
    dataset_fingerprint: bytes
    seed: int
    n_samples: int
    loss: str = "nll"

    def __post_init__(self):
        self.checkpoints = np.ascontiguousarray(self.checkpoints, dtype=np.float64)
        self.step_sizes = np.ascontiguousarray(self.step_sizes, dtype=np.float64)
        if self.checkpoints.ndim != 2 or self.checkpoints.shape[1] != self.spec.weight_count:
            raise ConfigurationError("checkpoint array does not match the model spec")
        if self.step_sizes.shape != (self.checkpoints.shape[0] - 1,):
            raise ConfigurationError("need exactly one step size per step")
        if len(self.dataset_fingerprint) != 32:
            raise ConfigurationError("dataset fingerprint must be 32 bytes")

    @property
    def n_steps(self):
        return self.checkpoints.shape[0] - 1

    def require_dataset(self, dataset):
        if dataset.fingerprint() != self.dataset_fingerprint:
            from .errors import FingerprintMismatch

            raise FingerprintMismatch(
                "dataset fingerprint does not match the trajectory; kernel "
                "coefficients would not decompose the actual training path"
            )


def init_model(spec, seed):
    """Seeded initial weights with a constant model output.

    Hidden layers draw uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights
    and biases from a PCG64 stream (layer by layer, weights before
    bias).  The final layer is all zeros, which pins the initial output
    to the same vector for every input (log(1/K) under log-softmax).
    """
    rng = np.random.default_rng(seed)
    layers = []
    for l in range(spec.n_layers):
        n_in, n_out = spec.layer_widths[l], spec.layer_widths[l + 1]
        if l == spec.n_layers - 1:
            layers.append((np.zeros((n_in, n_out)), np.zeros(n_out)))
        else:
            bound = 1.0 / np.sqrt(n_in)
            W = rng.uniform(-bound, bound, size=(n_in, n_out))
            b = rng.uniform(-bound, bound, size=n_out)
            layers.append((W, b))
    return model.pack(spec, layers)


def _step_size_array(epsilon, n_steps):
    if np.isscalar(epsilon):
        eps = np.full(n_steps, float(epsilon))
    else:
        eps = np.asarray(epsilon, dtype=np.float64)
        if eps.shape != (n_steps,):
            raise InputError(f"need {n_steps} step sizes, got shape {eps.shape}")
    if np.any(eps < 0) or not np.all(np.isfinite(eps)):
        raise InputError("step sizes must be finite and non-negative")
    return eps


def train_full_batch(spec, dataset, epsilon, n_steps, seed, loss="nll"):
    """Run N full-batch forward-Euler steps, checkpointing every state."""
    if n_steps < 0:
        raise InputError("step count must be >= 0")
    if dataset.input_dim != spec.input_dim or dataset.n_classes != spec.output_dim:
        raise ConfigurationError(
            "dataset dimensions do not match the model spec "
            f"({dataset.input_dim}->{dataset.n_classes} vs "
            f"{spec.input_dim}->{spec.output_dim})"
        )
    eps = _step_size_array(epsilon, n_steps)
    checkpoints = np.empty((n_steps + 1, spec.weight_count))
    checkpoints[0] = init_model(spec, seed)
    w = checkpoints[0]
    for s in range(n_steps):
        # overflow during a diverging run surfaces as the explicit error below
        with np.errstate(over="ignore", invalid="ignore"):
            g = model.batch_loss_gradient(spec, w, dataset.X, dataset.Y, loss=loss)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite loss gradient at step {s}")
        w = w - eps[s] * g
        if not np.all(np.isfinite(w)):
            raise NumericalError(f"non-finite weights after step {s}")
        checkpoints[s + 1] = w
    return Trajectory(
        spec=spec,
        checkpoints=checkpoints,
        step_sizes=eps,
        dataset_fingerprint=dataset.fingerprint(),
        seed=int(seed),
        n_samples=dataset.n_samples,
        loss=loss,
    )


def _header_dict(traj):
    return {
        "model": traj.spec.to_json_dict(),
        "n_steps": traj.n_steps,
        "n_samples": traj.n_samples,
        "input_dim": traj.spec.input_dim,
        "output_dim": traj.spec.output_dim,
        "seed": traj.seed,
        "dataset_fingerprint": traj.dataset_fingerprint.hex(),
        "loss": traj.loss,
    }


def save_trajectory(traj, path):
    """Binary layout: magic 'EPK1', u32 version, u32 header_len, header
    JSON, N little-endian f64 step sizes, then (N+1)*W f64 weights."""
    header = json.dumps(_header_dict(traj), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(TRAJECTORY_MAGIC)
        fh.write(struct.pack("<II", TRAJECTORY_VERSION, len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(traj.step_sizes, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(traj.checkpoints, dtype="<f8").tobytes())


def _read_exact(fh, n, path, what):
    raw = fh.read(n)
    if len(raw) != n:
        raise FormatError(
            f"{path}: truncated while reading {what} at offset {fh.tell() - len(raw)}"
        )
    return raw


def load_trajectory(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != TRAJECTORY_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
        version, header_len = struct.unpack("<II", _read_exact(fh, 8, path, "version/header length"))
        if version != TRAJECTORY_VERSION:
            raise FormatError(f"{path}: unsupported version {version} at offset 4")
        header_raw = _read_exact(fh, header_len, path, "header")
        try:
            header = json.loads(header_raw)
            spec = model.ModelSpec.from_json_dict(header["model"])
            n_steps = int(header["n_steps"])
            n_samples = int(header["n_samples"])
            seed = int(header["seed"])
            fingerprint = bytes.fromhex(header["dataset_fingerprint"])
            loss = header.get("loss", "nll")
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"{path}: bad header at offset 12: {exc}") from exc
        eps_raw = _read_exact(fh, 8 * n_steps, path, "step sizes")
        W = spec.weight_count
        weights_raw = _read_exact(fh, 8 * (n_steps + 1) * W, path, "weights")
        trailing = fh.read(1)
        if trailing:
            raise FormatError(f"{path}: trailing bytes at offset {fh.tell() - 1}")
    eps = np.frombuffer(eps_raw, dtype="<f8").copy()
    checkpoints = np.frombuffer(weights_raw, dtype="<f8").reshape(n_steps + 1, W).copy()
    return Trajectory(
        spec=spec,
        checkpoints=checkpoints,
        step_sizes=eps,
        dataset_fingerprint=fingerprint,
        seed=seed,
        n_samples=n_samples,
        loss=loss,
    )


def trajectory_bytes(traj):
    """Serialized form without touching the filesystem (for tests)."""
    buf = io.BytesIO()
    header = json.dumps(_header_dict(traj), sort_keys=True, separators=(",", ":")).encode()
    buf.write(TRAJECTORY_MAGIC)
    buf.write(struct.pack("<II", TRAJECTORY_VERSION, len(header)))
    buf.write(header)
    buf.write(np.ascontiguousarray(traj.step_sizes, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(traj.checkpoints, dtype="<f8").tobytes())
    return buf.getvalue()
