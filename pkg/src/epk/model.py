"""Feed-forward network core: forward evaluation, per-sample Jacobians,
losses, and the full-batch loss gradient.

Everything here is a pure function of immutable inputs, computed in
float64.  Two reproducibility rules shape the implementation:

* All tensor contractions on the Jacobian/gradient path use
  ``np.einsum`` with its default fixed-order reduction.  Unlike BLAS
  matmuls, einsum produces bit-identical per-sample results regardless
  of batch size, which is what makes the batched and single-sample code
  paths interchangeable at the bit level.
* Reductions across samples are performed serially in index order, so
  ``batch_loss_gradient`` is bit-identical to summing per-sample
  contributions one by one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError

HIDDEN_ACTIVATIONS = ("relu",)
OUTPUT_HEADS = ("log_softmax", "identity")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: layer widths plus activation/head choices.

    ``layer_widths`` is (D, H_1, ..., H_{L-1}, K).  Classification models
    use at least one hidden layer and the log-softmax head; the identity
    head and the zero-hidden-layer form are accepted for affine
    diagnostics where the output must be linear in the weights.
    """

    layer_widths: tuple[int, ...]
    hidden_activation: str = "relu"
    output_head: str = "log_softmax"

    def __post_init__(self):
        widths = tuple(int(v) for v in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ConfigurationError("need at least input and output widths")
        if any(v < 1 for v in widths):
            raise ConfigurationError(f"all layer widths must be >= 1, got {widths}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.hidden_activation!r}")
        if self.output_head not in OUTPUT_HEADS:
            raise ConfigurationError(f"unknown output head {self.output_head!r}")

    @property
    def input_dim(self):
        return self.layer_widths[0]

    @property
    def output_dim(self):
        return self.layer_widths[-1]

    @property
    def n_layers(self):
        return len(self.layer_widths) - 1

    @property
    def weight_count(self):
        return sum(
            (self.layer_widths[l] + 1) * self.layer_widths[l + 1]
            for l in range(self.n_layers)
        )

    def layout(self):
        """Per-layer (weight_offset, weight_shape, bias_offset, bias_len).

        Offsets are contiguous, non-overlapping and cover [0, W): each
        layer stores its (in x out) weight block in C order followed by
        the bias vector.
        """
        slots = []
        off = 0
        for l in range(self.n_layers):
            n_in, n_out = self.layer_widths[l], self.layer_widths[l + 1]
            w_off = off
            b_off = w_off + n_in * n_out
            off = b_off + n_out
            slots.append((w_off, (n_in, n_out), b_off, n_out))
        return slots

    def to_json_dict(self):
        return {
            "layers": list(self.layer_widths),
            "activation": self.hidden_activation,
            "head": self.output_head,
        }

    @classmethod
    def from_json_dict(cls, obj):
        try:
            return cls(
                layer_widths=tuple(obj["layers"]),
                hidden_activation=obj.get("activation", "relu"),
                output_head=obj.get("head", "log_softmax"),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"bad model spec object: {exc}") from exc

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))


def check_weights(spec, w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != spec.weight_count:
        raise ConfigurationError(
            f"weight vector has length {w.shape}, spec requires {spec.weight_count}"
        )
    return w


def unpack(spec, w):
    """Views (W_l, b_l) into the flat weight vector, one pair per layer."""
    w = check_weights(spec, w)
    layers = []
    for w_off, w_shape, b_off, b_len in spec.layout():
        W = w[w_off : w_off + w_shape[0] * w_shape[1]].reshape(w_shape)
        b = w[b_off : b_off + b_len]
        layers.append((W, b))
    return layers


def pack(spec, layers):
    """Inverse of :func:`unpack`; returns a fresh flat vector."""
    out = np.empty(spec.weight_count, dtype=np.float64)
    slots = spec.layout()
    if len(layers) != len(slots):
        raise ConfigurationError("layer count mismatch")
    for (W, b), (w_off, w_shape, b_off, b_len) in zip(layers, slots):
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if W.shape != w_shape or b.shape != (b_len,):
            raise ConfigurationError("layer shape mismatch")
        out[w_off : w_off + W.size] = W.reshape(-1)
        out[b_off : b_off + b_len] = b
    return out


def _as_batch(spec, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ConfigurationError(
            f"input has shape {X.shape}, spec requires (*, {spec.input_dim})"
        )
    return X


def log_softmax(z):
    """Row-wise log-softmax, shifted by the row max for stability."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward_trace(spec, w, X):
    """All intermediate states of a batched forward pass.

    Returns (acts, pre_acts, logits): ``acts[l]`` is the input to layer
    l+1 (``acts[0]`` is X), ``pre_acts[l]`` the pre-activation output of
    layer l+1.  Hidden non-linearity is ReLU.
    """
    X = _as_batch(spec, X)
    layers = unpack(spec, w)
    acts = [X]
    pre_acts = []
    a = X
    for l, (W, b) in enumerate(layers):
        z = np.einsum("mi,ij->mj", a, W) + b
        pre_acts.append(z)
        if l < spec.n_layers - 1:
            a = np.maximum(z, 0.0)
            acts.append(a)
    z_out = pre_acts[-1]
    logits = log_softmax(z_out) if spec.output_head == "log_softmax" else z_out
    return acts, pre_acts, logits


def forward_batch(spec, w, X):
    """Model outputs for a batch of inputs, shape [M, K]."""
    return forward_trace(spec, w, X)[2]


def forward(spec, w, x):
    """Model output for a single input vector, shape [K].

    For the log-softmax head the result satisfies sum(exp(out)) == 1 to
    machine precision and every entry is <= 0.
    """
    return forward_batch(spec, w, np.asarray(x, dtype=np.float64)[None, :])[0]


def _head_deltas(spec, logits):
    """d output_k / d z_out_c per sample, shape [M, K, K]."""
    M, K = logits.shape
    eye = np.eye(K)
    if spec.output_head == "log_softmax":
        # d log_softmax_k / d z_c = delta_kc - softmax_c
        p = np.exp(logits)
        return eye[None, :, :] - p[:, None, :]
    return np.broadcast_to(eye, (M, K, K)).copy()


def class_factors_from_trace(spec, w, trace):
    """Per-layer Jacobian factors for every output class.

    Returns ``factors[l] = (a_in, dz)`` where ``a_in`` [M, H_{l-1}]
    feeds layer l+1 and ``dz`` [M, K, H_l] is the gradient of each
    output w.r.t. that layer's pre-activation.  The layer-l Jacobian
    block for sample m and class k is then ``outer(a_in[m], dz[m, k])``
    for weights and ``dz[m, k]`` for biases.  ReLU's derivative at
    exactly 0 is taken as 0.
    """
    acts, pre_acts, logits = trace
    dz = _head_deltas(spec, logits)
    layers = unpack(spec, w)
    rev = [(acts[-1], dz)]
    for l in range(spec.n_layers - 2, -1, -1):
        W_next = layers[l + 1][0]
        da = np.einsum("mkj,ij->mki", dz, W_next)
        dz = da * (pre_acts[l] > 0.0)[:, None, :]
        rev.append((acts[l], dz))
    rev.reverse()
    return rev


def class_factors(spec, w, X):
    """(factors, logits) of :func:`class_factors_from_trace` with a fresh trace."""
    trace = forward_trace(spec, w, X)
    return class_factors_from_trace(spec, w, trace), trace[2]


def seeded_factors_from_trace(spec, w, trace, seed_rows):
    """Per-layer factors of ``J^T seed`` for one seed row per sample.

    Same recursion as :func:`class_factors_from_trace` with the [K, K]
    identity head seed replaced by ``seed_rows`` [M, K]; returns
    ``factors[l] = (a_in [M, H_{l-1}], dz [M, H_l])``.  Used for loss
    gradients, where the seed is the loss gradient row.
    """
    acts, pre_acts, logits = trace
    seed_rows = np.asarray(seed_rows, dtype=np.float64)
    dz = np.einsum("mkc,mk->mc", _head_deltas(spec, logits), seed_rows)
    layers = unpack(spec, w)
    rev = [(acts[-1], dz)]
    for l in range(spec.n_layers - 2, -1, -1):
        W_next = layers[l + 1][0]
        da = np.einsum("mj,ij->mi", dz, W_next)
        dz = da * (pre_acts[l] > 0.0)
        rev.append((acts[l], dz))
    rev.reverse()
    return rev


def seeded_factors(spec, w, X, seed_rows):
    """(factors, logits) of :func:`seeded_factors_from_trace` with a fresh trace."""
    trace = forward_trace(spec, w, X)
    return seeded_factors_from_trace(spec, w, trace, seed_rows), trace[2]


def jacobian_batch(spec, w, X):
    """Exact reverse-mode Jacobians of all outputs, shape [M, K, W].

    Row k of sample m is the gradient of output k at x_m with respect to
    the full flat weight vector.
    """
    X = _as_batch(spec, X)
    factors = class_factors_from_trace(spec, w, forward_trace(spec, w, X))
    M, K, W = X.shape[0], spec.output_dim, spec.weight_count
    out = np.empty((M, K, W), dtype=np.float64)
    for (a_in, dz), (w_off, w_shape, b_off, b_len) in zip(factors, spec.layout()):
        blk = out[:, :, w_off : w_off + w_shape[0] * w_shape[1]]
        np.einsum("mi,mkj->mkij", a_in, dz, out=blk.reshape(M, K, *w_shape))
        out[:, :, b_off : b_off + b_len] = dz
    return out


def per_sample_jacobian(spec, w, x):
    """Jacobian [K, W] of a single input; one vectorized reverse pass."""
    return jacobian_batch(spec, w, np.asarray(x, dtype=np.float64)[None, :])[0]


def _check_one_hot(y):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or np.count_nonzero(y) != 1 or y[int(np.argmax(y))] != 1.0:
        raise InputError("label vector must be one-hot")
    return y


def loss_nll(logits, y):
    """Negative log likelihood of a one-hot label over log-probabilities."""
    y = _check_one_hot(y)
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != y.shape:
        raise InputError("logits and label shapes differ")
    return -logits[int(np.argmax(y))]


def loss_grad_wrt_output(logits, y):
    """Gradient of the NLL loss w.r.t. the model output: exactly -y.

    Independent of the logits; this constancy is what collapses the
    per-step kernel ensemble into a single kernel machine.
    """
    y = _check_one_hot(y)
    return -y


def _nll_values(logits, Y):
    idx = np.argmax(Y, axis=1)[:, None]
    return -np.take_along_axis(logits, idx, axis=1)[:, 0]


def _nll_grads(logits, Y):
    return -np.asarray(Y, dtype=np.float64)


def _se_values(logits, Y):
    return ((logits - Y) ** 2).sum(axis=1)


def _se_grads(logits, Y):
    return 2.0 * (logits - Y)


@dataclass(frozen=True)
class Loss:
    name: str
    values: callable  # (logits [M,K], Y [M,K]) -> [M]
    grads: callable  # (logits [M,K], Y [M,K]) -> [M,K]


LOSSES = {
    "nll": Loss("nll", _nll_values, _nll_grads),
    "squared_error": Loss("squared_error", _se_values, _se_grads),
}


def get_loss(name):
    try:
        return LOSSES[name]
    except KeyError:
        raise ConfigurationError(f"unknown loss {name!r}") from None


def batch_loss_gradient(spec, w, X, Y, loss="nll"):
    """Mean loss gradient over the batch, shape [W].

    Computes (1/M) sum_i J_i^T dL/df_i with the cross-sample sum taken
    serially in index order and the division by M applied once at the
    end, so the result is bit-identical to accumulating per-sample
    Jacobian contributions one by one.
    """
    X = _as_batch(spec, X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape != (X.shape[0], spec.output_dim):
        raise ConfigurationError(
            f"labels have shape {Y.shape}, expected {(X.shape[0], spec.output_dim)}"
        )
    loss_fn = get_loss(loss) if isinstance(loss, str) else loss
    trace = forward_trace(spec, w, X)
    rows = loss_fn.grads(trace[2], Y)
    factors = seeded_factors_from_trace(spec, w, trace, rows)

    g = np.zeros(spec.weight_count, dtype=np.float64)
    views = []
    for (a_in, dz), (w_off, w_shape, b_off, b_len) in zip(factors, spec.layout()):
        gw = g[w_off : w_off + w_shape[0] * w_shape[1]].reshape(w_shape)
        gb = g[b_off : b_off + b_len]
        views.append((a_in, dz, gw, gb))
    M = X.shape[0]
    for i in range(M):  # fixed index order; do not vectorize
        for a_in, dz, gw, gb in views:
            gw += np.multiply.outer(a_in[i], dz[i])
            gb += dz[i]
    return g / M


def mean_loss(spec, w, X, Y, loss="nll"):
    """Mean training loss over the batch (scalar)."""
    loss_fn = get_loss(loss) if isinstance(loss, str) else loss
    logits = forward_batch(spec, w, X)
    return float(loss_fn.values(logits, np.asarray(Y, dtype=np.float64)).mean())


def accuracy(spec, w, X, Y):
    """Fraction of rows where the arg-max output matches the label.

    Ties break toward the lowest class index (np.argmax), which makes
    the chance-level value for a constant-output model deterministic.
    """
    logits = forward_batch(spec, w, X)
    return float(
        np.mean(np.argmax(logits, axis=1) == np.argmax(np.asarray(Y), axis=1))
    )
