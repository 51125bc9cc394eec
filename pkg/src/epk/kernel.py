"""Path-kernel reconstruction of checkpointed training runs.

Predictions decompose the trained model into per-step, per-training-point
kernel contributions.  For step s with weights w_s -> w_{s+1}, the step
kernel pairs a *test-side* Jacobian integrated along the interpolated
segment w_s(t) = w_s + t(w_{s+1} - w_s) with a *train-side* Jacobian held
fixed at w_s(0); a point is treated per its role, so a training point
queried as a test point gets the integrated treatment.  The integral is a
left-endpoint Riemann sum with T nodes (midpoint rule available), and T=1
reproduces the discrete path kernel (DPK) exactly.  Empirical NTK
baselines freeze the test-side Jacobian at a single weight state instead.

Two evaluation routes exist on purpose:

* the scan engine below never materializes Jacobians; it contracts
  per-layer factors (the layer-wise inner-product decomposition of
  gradient outer products), which is what makes full sweeps affordable;
* :func:`epk_step_block` / :func:`ntk_block` contract explicit Jacobian
  matrices and serve as the independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model
from .errors import InputError, ReductionRefused
from .gp import GramMatrix

DEFAULT_RULE = "left"


@dataclass
class KernelBlock:
    """Per-pair kernel value of shape [K, K].

    ``values[a, b]`` pairs output class ``a`` of the first argument with
    class ``b`` of the second.
    """

    values: np.ndarray
    meta: tuple = ()


@dataclass
class SampleCoefficients:
    """Per-step, per-sample scalars eps_s/M plus the loss-gradient rows.

    ``constant_flag`` is True only when both the rows and the step sizes
    are exactly constant across steps, the condition under which the
    per-step ensemble collapses to one kernel machine.
    """

    a: np.ndarray  # [N, M]
    loss_rows: np.ndarray  # [N, M, K]
    constant_flag: bool
    max_row_deviation: float
    max_step_deviation: float


@dataclass
class PredictionReport:
    """Paired model/kernel outputs for one query point."""

    model_logits: np.ndarray  # [K]
    kernel_logits: np.ndarray  # [K]
    bias: np.ndarray  # [K]
    per_step_contrib: np.ndarray  # [N, K]
    integration_steps: int
    max_abs_err: float


@dataclass
class ReducedKernelMachine:
    """Single-kernel form: prediction = bias + sum_i coefficients[i] . kernel_values[i]."""

    coefficients: np.ndarray  # [M, K]
    kernel_values: np.ndarray  # [M, K, K]
    bias: np.ndarray  # [K]
    logits: np.ndarray  # [K]
    sample_coefficients: SampleCoefficients


def interpolate_weights(w_a, w_b, t):
    """Linear interpolation with exact endpoints: (1-t) w_a + t w_b."""
    if not 0.0 <= t <= 1.0:
        raise InputError(f"interpolation parameter {t} outside [0, 1]")
    w_a = np.asarray(w_a, dtype=np.float64)
    w_b = np.asarray(w_b, dtype=np.float64)
    if w_a.shape != w_b.shape:
        raise InputError("weight vectors must share a layout")
    return w_a * (1.0 - t) + w_b * t


def quadrature_nodes(T, rule=DEFAULT_RULE):
    """Nodes in [0, 1): tau/T for the left rule, (tau+1/2)/T for midpoint."""
    if T < 1:
        raise InputError("need at least one integration step")
    tau = np.arange(T, dtype=np.float64)
    if rule == "left":
        return tau / T
    if rule == "midpoint":
        return (tau + 0.5) / T
    raise InputError(f"unknown quadrature rule {rule!r}")


def step_weights(eps):
    """Aggregation weights eps_s / mean(eps); exactly 1 for a constant schedule."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.size == 0 or np.all(eps == eps[0]):
        return np.ones_like(eps)
    return eps / eps.mean()


# ---------------------------------------------------------------------------
# factored features: per-layer (input activation, pre-activation gradient)
# pairs whose products reassemble Jacobian inner products layer by layer
# ---------------------------------------------------------------------------


def _interpolated_stack(spec, w_a, w_b, ts):
    """Weight states along the segment, one row per node, shape [T, W]."""
    ts = np.asarray(ts, dtype=np.float64)
    return w_a[None, :] * (1.0 - ts)[:, None] + w_b[None, :] * ts[:, None]


def _stack_layers(spec, w_stack):
    layers = []
    for w_off, w_shape, b_off, b_len in spec.layout():
        W = w_stack[:, w_off : w_off + w_shape[0] * w_shape[1]].reshape(-1, *w_shape)
        b = w_stack[:, b_off : b_off + b_len]
        layers.append((W, b))
    return layers


def _test_features(spec, w_a, w_b, X_test, ts):
    """Quadrature-averaged test-side factors for every output class.

    Evaluates the per-class layer factors at each node of the
    interpolated segment and averages them in weight space (averaging
    before contraction is algebraically identical to contracting per
    node, because the train side is constant along the segment).

    Returns one entry per layer: ``(None, dzbar)`` for the first layer,
    whose input activation is the constant query itself, and
    ``(Mbar, dzbar)`` for deeper layers, where ``Mbar`` [Q, K, H_in,
    H_out] is the averaged outer product of input activations and
    pre-activation gradients and ``dzbar`` [Q, K, H_out] the averaged
    gradients (the bias factor).
    """
    ts = np.asarray(ts, dtype=np.float64)
    T = ts.shape[0]
    w_stack = _interpolated_stack(spec, w_a, w_b, ts)
    layers = _stack_layers(spec, w_stack)
    X_test = np.asarray(X_test, dtype=np.float64)

    # forward along the whole stack at once: [T, Q, H]
    acts = [np.broadcast_to(X_test, (T,) + X_test.shape)]
    pre = []
    a = acts[0]
    for l, (W, b) in enumerate(layers):
        z = np.matmul(a, W) + b[:, None, :]
        pre.append(z)
        if l < spec.n_layers - 1:
            a = np.maximum(z, 0.0)
            acts.append(a)
    z_out = pre[-1]
    if spec.output_head == "log_softmax":
        logits = model.log_softmax(z_out)
        p = np.exp(logits)
        eye = np.eye(spec.output_dim)
        dz = eye[None, None, :, :] - p[:, :, None, :]  # [T, Q, K, K]
    else:
        K = spec.output_dim
        dz = np.broadcast_to(np.eye(K), z_out.shape[:2] + (K, K)).copy()

    rev = [(acts[-1], dz)]
    for l in range(spec.n_layers - 2, -1, -1):
        W_next = layers[l + 1][0]  # [T, H_in, H_out]
        da = np.matmul(dz, np.ascontiguousarray(W_next.transpose(0, 2, 1))[:, None, :, :])
        dz = da * (pre[l] > 0.0)[:, :, None, :]
        rev.append((acts[l], dz))
    rev.reverse()

    feats = []
    for l, (a_in, dz) in enumerate(rev):
        dzbar = dz.sum(axis=0) / T
        if l == 0:
            feats.append((None, dzbar))
        else:
            Mbar = np.einsum("tqi,tqkj->qkij", a_in, dz) / T
            feats.append((Mbar, dzbar))
    return feats


def _contract_seeded(train_factors, feats, cross_plus1):
    """Inner products <U_i, Jbar_qk> of per-sample seeded gradient vectors
    with averaged test Jacobians, shape [M, Q, K].

    ``cross_plus1`` is X_train @ X_test.T + 1, the first layer's
    activation product plus its bias term.
    """
    M = train_factors[0][1].shape[0]
    Q, K = feats[0][1].shape[:2]
    out = np.zeros((M, Q, K))
    for l, ((a_in, dz), (Mbar, dzbar)) in enumerate(zip(train_factors, feats)):
        bias_term = dz @ dzbar.reshape(Q * K, -1).T  # [M, QK]
        if l == 0:
            out += bias_term.reshape(M, Q, K) * cross_plus1[:, :, None]
        else:
            C = np.einsum("mi,mj->mij", a_in, dz).reshape(M, -1)
            wt = C @ Mbar.reshape(Q * K, -1).T
            out += (wt + bias_term).reshape(M, Q, K)
    return out


def _contract_classes(train_factors, feats, cross_plus1):
    """Full per-pair blocks <J_i^(j), Jbar_q^(k)>, shape [M, K, Q, K].

    Same contraction as :func:`_contract_seeded` but with train-side
    factors per output class (j) instead of loss-seeded vectors.
    """
    M, K = train_factors[0][1].shape[:2]
    Q = feats[0][1].shape[0]
    out = np.zeros((M, K, Q, K))
    for l, ((a_in, dz), (Mbar, dzbar)) in enumerate(zip(train_factors, feats)):
        bias_term = dz.reshape(M * K, -1) @ dzbar.reshape(Q * K, -1).T
        bias_term = bias_term.reshape(M, K, Q, K)
        if l == 0:
            out += bias_term * cross_plus1[:, None, :, None]
        else:
            C = np.einsum("mi,mkj->mkij", a_in, dz).reshape(M * K, -1)
            wt = (C @ Mbar.reshape(Q * K, -1).T).reshape(M, K, Q, K)
            out += wt + bias_term
    return out


# ---------------------------------------------------------------------------
# the step scan
# ---------------------------------------------------------------------------

MODES = ("epk", "dpk", "ntk0", "ntkN")


@dataclass
class ScanResult:
    bias: np.ndarray  # [Q, K]
    model_logits: np.ndarray  # [Q, K]
    per_step: dict  # mode -> [N, Q, K]
    point_totals: dict = field(default_factory=dict)  # mode -> [M, Q, K]
    coefficients: SampleCoefficients | None = None
    full_blocks: np.ndarray | None = None  # [M, K, Q, K], unweighted sum over steps


def _scan(
    traj,
    dataset,
    X_test,
    T,
    rule=DEFAULT_RULE,
    modes=("epk",),
    collect_totals=False,
    collect_coefficients=False,
    collect_full_blocks=False,
):
    """One pass over all training steps, accumulating per-mode contributions.

    Per step the train side is evaluated once at w_s(0); each requested
    mode supplies its own test-side features but contracts against the
    same train-side vectors.
    """
    traj.require_dataset(dataset)
    unknown = set(modes) - set(MODES)
    if unknown:
        raise InputError(f"unknown prediction modes {sorted(unknown)}")
    spec = traj.spec
    X_test = np.atleast_2d(np.asarray(X_test, dtype=np.float64))
    loss_fn = model.get_loss(traj.loss)
    N, M = traj.n_steps, dataset.n_samples
    Q, K = X_test.shape[0], spec.output_dim

    cross_plus1 = dataset.X @ X_test.T + 1.0
    nodes = quadrature_nodes(T, rule)
    fixed_feats = {}
    if "ntk0" in modes:
        w0 = traj.checkpoints[0]
        fixed_feats["ntk0"] = _test_features(spec, w0, w0, X_test, np.zeros(1))
    if "ntkN" in modes:
        wN = traj.checkpoints[-1]
        fixed_feats["ntkN"] = _test_features(spec, wN, wN, X_test, np.zeros(1))

    per_step = {mode: np.zeros((N, Q, K)) for mode in modes}
    totals = {mode: np.zeros((M, Q, K)) for mode in modes} if collect_totals else {}
    rows_all = np.zeros((N, M, K)) if collect_coefficients else None
    full_blocks = np.zeros((M, K, Q, K)) if collect_full_blocks else None

    for s in range(N):
        w_s = traj.checkpoints[s]
        w_next = traj.checkpoints[s + 1]
        eps_s = traj.step_sizes[s]
        trace = model.forward_trace(spec, w_s, dataset.X)
        rows = loss_fn.grads(trace[2], dataset.Y)
        train_factors = model.seeded_factors_from_trace(spec, w_s, trace, rows)
        if rows_all is not None:
            rows_all[s] = rows

        for mode in modes:
            if mode == "epk":
                feats = _test_features(spec, w_s, w_next, X_test, nodes)
            elif mode == "dpk":
                feats = _test_features(spec, w_s, w_next, X_test, np.zeros(1))
            else:
                feats = fixed_feats[mode]
            atoms = _contract_seeded(train_factors, feats, cross_plus1)
            atoms *= -eps_s / M
            per_step[mode][s] = atoms.sum(axis=0)
            if collect_totals:
                totals[mode] += atoms
            if mode == "epk" and collect_full_blocks:
                class_factors = model.class_factors_from_trace(spec, w_s, trace)
                full_blocks += _contract_classes(class_factors, feats, cross_plus1)

    coeffs = None
    if collect_coefficients:
        a = np.broadcast_to((traj.step_sizes / M)[:, None], (N, M)).copy()
        row_dev = float(np.abs(rows_all - rows_all[0]).max()) if N else 0.0
        step_dev = float(np.abs(a - a[0]).max()) if N else 0.0
        coeffs = SampleCoefficients(
            a=a,
            loss_rows=rows_all,
            constant_flag=(row_dev == 0.0 and step_dev == 0.0),
            max_row_deviation=row_dev,
            max_step_deviation=step_dev,
        )

    return ScanResult(
        bias=model.forward_batch(spec, traj.checkpoints[0], X_test),
        model_logits=model.forward_batch(spec, traj.checkpoints[-1], X_test),
        per_step=per_step,
        point_totals=totals,
        coefficients=coeffs,
        full_blocks=full_blocks,
    )


def _report_from_scan(scan, mode, q, T):
    per_step_q = np.ascontiguousarray(scan.per_step[mode][:, q, :])
    kernel_logits = scan.bias[q] + per_step_q.sum(axis=0)
    return PredictionReport(
        model_logits=scan.model_logits[q].copy(),
        kernel_logits=kernel_logits,
        bias=scan.bias[q].copy(),
        per_step_contrib=per_step_q,
        integration_steps=T,
        max_abs_err=float(np.abs(scan.model_logits[q] - kernel_logits).max()),
    )


def predict(traj, dataset, X_test, T=100, method="epk", rule=DEFAULT_RULE):
    """Kernel predictions for a batch of query points.

    ``method`` selects the test-side treatment: "epk" integrates along
    each step's segment with T nodes, "dpk" uses the step's initial
    weights (= epk with T=1), "ntk0"/"ntkN" freeze the test Jacobian at
    the initial/final weights.  Returns one report per query row.
    """
    if method == "dpk":
        T = 1
    scan = _scan(traj, dataset, X_test, T, rule=rule, modes=(("epk" if method == "dpk" else method),))
    mode = "epk" if method == "dpk" else method
    Q = scan.bias.shape[0]
    return [_report_from_scan(scan, mode, q, T) for q in range(Q)]


def epk_predict(traj, dataset, x, T=100, rule=DEFAULT_RULE):
    """Exact path-kernel prediction for one query point (Riemann sum with T nodes)."""
    return predict(traj, dataset, np.atleast_2d(x), T=T, method="epk", rule=rule)[0]


def dpk_predict(traj, dataset, x):
    """Discrete path-kernel baseline: the T=1 left-endpoint special case."""
    return predict(traj, dataset, np.atleast_2d(x), T=1, method="epk")[0]


def ntk_block(spec, w, x, x2):
    """Empirical tangent-kernel block at one weight state: J(x) J(x2)^T."""
    Jx = model.per_sample_jacobian(spec, w, x)
    Jy = model.per_sample_jacobian(spec, w, x2)
    return KernelBlock(values=np.einsum("aw,bw->ab", Jx, Jy), meta=("ntk",))


def epk_step_block(traj, dataset, s, x, train_index, T, rule=DEFAULT_RULE):
    """Step-s kernel block between a query point and one training point.

    Explicit-Jacobian route: averages the query Jacobian over the T
    interpolation nodes and contracts with the training point's Jacobian
    fixed at the step's initial weights.  ``values[a, b]`` holds query
    class a against train class b.
    """
    traj.require_dataset(dataset)
    if not 0 <= s < traj.n_steps:
        raise InputError(f"step index {s} out of range [0, {traj.n_steps})")
    if not 0 <= train_index < dataset.n_samples:
        raise InputError(f"train index {train_index} out of range")
    spec = traj.spec
    w_s = traj.checkpoints[s]
    w_next = traj.checkpoints[s + 1]
    J_train = model.per_sample_jacobian(spec, w_s, dataset.X[train_index])
    J_sum = np.zeros_like(J_train)
    for t in quadrature_nodes(T, rule):
        w_t = w_s if t == 0.0 else interpolate_weights(w_s, w_next, t)
        J_sum += model.per_sample_jacobian(spec, w_t, x)
    J_avg = J_sum / T
    return KernelBlock(
        values=np.einsum("aw,bw->ab", J_avg, J_train),
        meta=(s, "query", int(train_index)),
    )


def dpk_step_block(traj, dataset, s, x, train_index):
    """Discrete path-kernel block: both Jacobians at the step's initial weights."""
    return epk_step_block(traj, dataset, s, x, train_index, T=1, rule="left")


def sample_coefficients(traj, dataset):
    """Per-step coefficients and loss-gradient rows, with the constancy check."""
    spec = traj.spec
    loss_fn = model.get_loss(traj.loss)
    N, M = traj.n_steps, dataset.n_samples
    rows_all = np.zeros((N, M, spec.output_dim))
    for s in range(N):
        logits = model.forward_batch(spec, traj.checkpoints[s], dataset.X)
        rows_all[s] = loss_fn.grads(logits, dataset.Y)
    a = np.broadcast_to((traj.step_sizes / M)[:, None], (N, M)).copy()
    row_dev = float(np.abs(rows_all - rows_all[0]).max()) if N else 0.0
    step_dev = float(np.abs(a - a[0]).max()) if N else 0.0
    return SampleCoefficients(
        a=a,
        loss_rows=rows_all,
        constant_flag=(row_dev == 0.0 and step_dev == 0.0),
        max_row_deviation=row_dev,
        max_step_deviation=step_dev,
    )


def reduce_to_kernel_machine(traj, dataset, x, T=100, rule=DEFAULT_RULE):
    """Collapse the per-step ensemble into one kernel machine.

    Requires exactly constant per-step coefficients (constant loss
    gradient rows and a constant step size); otherwise the ensemble is
    not a single kernel machine and the reduction is refused.  The
    aggregated kernel values are the unweighted sum of step blocks; the
    coefficients fold -eps/M into the constant loss-gradient rows.  The
    returned logits come from the same canonical accumulation as
    :func:`epk_predict` and match it bit for bit.
    """
    scan = _scan(
        traj,
        dataset,
        np.atleast_2d(x),
        T,
        rule=rule,
        modes=("epk",),
        collect_coefficients=True,
        collect_full_blocks=True,
    )
    coeffs = scan.coefficients
    if not coeffs.constant_flag:
        raise ReductionRefused(
            "per-step coefficients are not constant "
            f"(max loss-row deviation {coeffs.max_row_deviation:.3e}, "
            f"max step-size deviation {coeffs.max_step_deviation:.3e}); "
            "the ensemble does not reduce to a single kernel machine"
        )
    report = _report_from_scan(scan, "epk", 0, T)
    M = dataset.n_samples
    eps0 = traj.step_sizes[0] if traj.n_steps else 0.0
    coefficients = -(eps0 / M) * coeffs.loss_rows[0] if traj.n_steps else np.zeros_like(dataset.Y)
    kernel_values = scan.full_blocks[:, :, 0, :]  # [M, K(train), K(query)]
    return ReducedKernelMachine(
        coefficients=coefficients,
        kernel_values=kernel_values,
        bias=report.bias,
        logits=report.kernel_logits,
        sample_coefficients=coeffs,
    )


def kernel_contributions(traj, dataset, x, T=100, rule=DEFAULT_RULE):
    """Aggregated loss-contracted kernel mass per training point, [M, K].

    Row i sums that point's contribution over all steps; the rows plus
    the bias re-sum to the kernel prediction.
    """
    scan = _scan(traj, dataset, np.atleast_2d(x), T, rule=rule, modes=("epk",), collect_totals=True)
    return scan.point_totals["epk"][:, 0, :], _report_from_scan(scan, "epk", 0, T)


def alignment_error(traj, dataset, x, T=100, rule=DEFAULT_RULE):
    """Per-step gaps between the integrated contribution and each baseline.

    All four treatments contract the same train-side vectors, so each
    gap isolates the test-side difference: gap_s = max_k |epk_s -
    base_s|.  Cumulative sums expose the total accumulated error
    (gaps are magnitudes; positive and negative per-class errors do not
    cancel).
    """
    scan = _scan(traj, dataset, np.atleast_2d(x), T, rule=rule, modes=("epk", "dpk", "ntk0", "ntkN"))
    epk = scan.per_step["epk"][:, 0, :]
    out = {"step": np.arange(traj.n_steps)}
    for mode, col in (("dpk", "epk_dpk_gap"), ("ntk0", "epk_ntk0_gap"), ("ntkN", "epk_ntkN_gap")):
        gap = np.abs(epk - scan.per_step[mode][:, 0, :]).max(axis=1)
        out[col] = gap
        out["cum_" + col[:-4]] = np.cumsum(gap)
    return out


def weight_path_diagnostic(traj, dataset, resolution):
    """Training metrics along the straight chord from w_0 to w_N.

    Emits, for R points t in [0, 1]: training accuracy, mean loss, the
    weight-vector norm, and the dot product of the gradient of the
    summed outputs (over samples and classes) with the normalized
    overall displacement direction.
    """
    if resolution < 2:
        raise InputError("resolution must be >= 2")
    traj.require_dataset(dataset)
    spec = traj.spec
    w0 = traj.checkpoints[0]
    wN = traj.checkpoints[-1]
    direction = wN - w0
    norm = np.linalg.norm(direction)
    direction = direction / norm if norm > 0 else direction
    ones = np.ones((dataset.n_samples, spec.output_dim))
    out = {
        "t": np.linspace(0.0, 1.0, resolution),
        "accuracy": np.zeros(resolution),
        "mean_loss": np.zeros(resolution),
        "l2_norm": np.zeros(resolution),
        "grad_dot_direction": np.zeros(resolution),
    }
    for r, t in enumerate(out["t"]):
        w_t = interpolate_weights(w0, wN, t)
        out["accuracy"][r] = model.accuracy(spec, w_t, dataset.X, dataset.Y)
        out["mean_loss"][r] = model.mean_loss(spec, w_t, dataset.X, dataset.Y, loss=traj.loss)
        out["l2_norm"][r] = np.linalg.norm(w_t)
        factors, _ = model.seeded_factors(spec, w_t, dataset.X, ones)
        g = np.zeros(spec.weight_count)
        for (a_in, dz), (w_off, w_shape, b_off, b_len) in zip(factors, spec.layout()):
            g[w_off : w_off + w_shape[0] * w_shape[1]] = np.einsum(
                "mi,mj->ij", a_in, dz
            ).reshape(-1)
            g[b_off : b_off + b_len] = dz.sum(axis=0)
        out["grad_dot_direction"][r] = float(g @ direction)
    return out


# ---------------------------------------------------------------------------
# Gram assembly over point sets with explicit roles
# ---------------------------------------------------------------------------


@dataclass
class PointSet:
    """Query points plus their kernel role.

    Role "test" integrates Jacobians along each step segment; role
    "train" holds them at the step's initial weights and requires the
    points to be rows of the training set (``indices``).
    """

    points: np.ndarray
    role: str = "test"
    indices: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.role not in ("test", "train"):
            raise InputError(f"unknown point role {self.role!r}")
        if self.role == "train" and self.indices is None:
            raise InputError("train-role point sets need training indices")

    @classmethod
    def from_train(cls, dataset, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return cls(points=dataset.X[indices], role="train", indices=indices)

    @property
    def n_points(self):
        return self.points.shape[0]


def _class_features_at(spec, w, X):
    """Per-layer (input activation, per-class gradient) factors at one state."""
    factors, _ = model.class_factors(spec, w, X)
    return factors


def _cross_blocks(spec, feats_a, feats_b, cross_plus1):
    """Pairwise blocks [na, K, nb, K] from two factored feature sets."""
    na, K = feats_a[0][1].shape[:2]
    nb = feats_b[0][1].shape[0]
    out = np.zeros((na, K, nb, K))
    for l, ((a_in, a_dz), (b_in, b_dz)) in enumerate(zip(feats_a, feats_b)):
        bias_term = (
            a_dz.reshape(na * K, -1) @ b_dz.reshape(nb * K, -1).T
        ).reshape(na, K, nb, K)
        if l == 0:
            out += bias_term * cross_plus1[:, None, :, None]
        else:
            acts = a_in @ b_in.T + 1.0
            out += bias_term * acts[:, None, :, None]
    return out


def epk_gram(traj, dataset, rows: PointSet, cols: PointSet, T=32, rule=DEFAULT_RULE):
    """Aggregated path-kernel Gram matrix between two point sets.

    Sums step blocks weighted by eps_s / mean(eps) (exactly the plain
    sum for a fixed step size).  Both sides are evaluated per their
    role: test-role Jacobians are integrated node by node (the product
    is averaged, preserving positive semi-definiteness), train-role
    Jacobians stay at each step's initial weights.
    """
    traj.require_dataset(dataset)
    spec = traj.spec
    K = spec.output_dim
    na, nb = rows.n_points, cols.n_points
    blocks = np.zeros((na, K, nb, K))
    weights = step_weights(traj.step_sizes)
    nodes = quadrature_nodes(T, rule)
    cross_plus1 = rows.points @ cols.points.T + 1.0

    for s in range(traj.n_steps):
        w_s = traj.checkpoints[s]
        w_next = traj.checkpoints[s + 1]
        if rows.role == "train" and cols.role == "train":
            fa = _class_features_at(spec, w_s, rows.points)
            fb = _class_features_at(spec, w_s, cols.points)
            blocks += weights[s] * _cross_blocks(spec, fa, fb, cross_plus1)
            continue
        fa_fixed = _class_features_at(spec, w_s, rows.points) if rows.role == "train" else None
        fb_fixed = _class_features_at(spec, w_s, cols.points) if cols.role == "train" else None
        acc = np.zeros_like(blocks)
        for t in nodes:
            w_t = w_s if t == 0.0 else interpolate_weights(w_s, w_next, t)
            fa = fa_fixed if fa_fixed is not None else _class_features_at(spec, w_t, rows.points)
            fb = fb_fixed if fb_fixed is not None else _class_features_at(spec, w_t, cols.points)
            acc += _cross_blocks(spec, fa, fb, cross_plus1)
        blocks += weights[s] * (acc / T)

    return GramMatrix(
        blocks=blocks.transpose(0, 2, 1, 3),
        row_ids=[f"{rows.role}{i}" for i in range(na)],
        col_ids=[f"{cols.role}{j}" for j in range(nb)],
    )


def epk_self_blocks(traj, dataset, points, T=16, rule=DEFAULT_RULE):
    """Diagonal kernel blocks k(x, x) for many points at once, [G, K, K].

    Integrates the per-node self product for each point independently;
    this is the cheap path for variance fields on dense grids, where the
    full query Gram is never needed.
    """
    traj.require_dataset(dataset)
    spec = traj.spec
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    G, K = points.shape[0], spec.output_dim
    out = np.zeros((G, K, K))
    weights = step_weights(traj.step_sizes)
    nodes = quadrature_nodes(T, rule)
    self_plus1 = np.einsum("gd,gd->g", points, points) + 1.0
    for s in range(traj.n_steps):
        w_s = traj.checkpoints[s]
        w_next = traj.checkpoints[s + 1]
        acc = np.zeros_like(out)
        for t in nodes:
            w_t = w_s if t == 0.0 else interpolate_weights(w_s, w_next, t)
            feats = _class_features_at(spec, w_t, points)
            for l, (a_in, dz) in enumerate(feats):
                pair = np.einsum("gkh,gmh->gkm", dz, dz)
                if l == 0:
                    acc += pair * self_plus1[:, None, None]
                else:
                    acts = np.einsum("gh,gh->g", a_in, a_in) + 1.0
                    acc += pair * acts[:, None, None]
        out += weights[s] * (acc / T)
    return out
