"""Gram-matrix assembly, PSD verification, Kriging, and Monte-Carlo
posterior-probability spread.

Gram matrices are block-structured: every point pair carries a [K, K]
block of class-resolved kernel values.  Kriging decouples the classes,
solving K scalar systems built from the diagonal entries of each block
and reporting the block trace as the total variance; the off-diagonal
class-class covariances are stored but not solved for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InputError, NumericalError


@dataclass
class GramMatrix:
    """[n, m] grid of [K, K] kernel blocks over two point sets."""

    blocks: np.ndarray  # [n, m, K, K]
    row_ids: list = field(default_factory=list)
    col_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=np.float64)
        if self.blocks.ndim != 4 or self.blocks.shape[2] != self.blocks.shape[3]:
            raise InputError("blocks must have shape [n, m, K, K]")

    @property
    def n_rows(self):
        return self.blocks.shape[0]

    @property
    def n_cols(self):
        return self.blocks.shape[1]

    @property
    def n_classes(self):
        return self.blocks.shape[2]

    @property
    def flat(self):
        """Flattened [n*K, m*K] view with classes interleaved per point."""
        n, m, K, _ = self.blocks.shape
        return self.blocks.transpose(0, 2, 1, 3).reshape(n * K, m * K)

    def class_plane(self, k):
        """Scalar [n, m] matrix of the (k, k) entry of every block."""
        return np.ascontiguousarray(self.blocks[:, :, k, k])


def gram(kernel, A, B, ids=None):
    """Assemble blocks[i][j] = kernel(A_i, B_j); no symmetrization.

    ``kernel`` returns a [K, K] array (or an object with ``.values``)
    for a pair of points.  A non-finite block aborts with the offending
    pair named.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    first = kernel(A[0], B[0])
    first = getattr(first, "values", first)
    K = np.asarray(first).shape[0]
    blocks = np.empty((A.shape[0], B.shape[0], K, K))
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            blk = kernel(A[i], B[j]) if (i, j) != (0, 0) else first
            blk = np.asarray(getattr(blk, "values", blk), dtype=np.float64)
            if not np.all(np.isfinite(blk)):
                raise NumericalError(f"non-finite kernel block at pair ({i}, {j})")
            blocks[i, j] = blk
    return GramMatrix(blocks=blocks)


@dataclass
class PsdReport:
    min_eig: float
    max_eig: float
    symmetric_defect: float
    passed: bool


def check_psd(G: GramMatrix, rel_tol=1e-8):
    """Symmetry defect and eigenvalue range of the flattened Gram matrix.

    Eigenvalues come from a symmetric solve on the symmetrized matrix;
    passes when min_eig >= -rel_tol * max_eig and the symmetry defect is
    itself below rel_tol.
    """
    if G.n_rows != G.n_cols:
        raise InputError("PSD check requires a square Gram matrix")
    flat = G.flat
    scale = np.abs(flat).max()
    defect = float(np.abs(flat - flat.T).max() / scale) if scale > 0 else 0.0
    sym = 0.5 * (flat + flat.T)
    try:
        eigs = scipy.linalg.eigvalsh(sym)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    min_eig, max_eig = float(eigs[0]), float(eigs[-1])
    passed = bool(min_eig >= -rel_tol * max(max_eig, 0.0) and defect <= rel_tol)
    return PsdReport(min_eig=min_eig, max_eig=max_eig, symmetric_defect=defect, passed=passed)


@dataclass
class PosteriorField:
    """Kriging posterior over a set of query points."""

    points: np.ndarray  # [G, D]
    mean: np.ndarray  # [G, K]
    variance: np.ndarray  # [G, K], clamped at 0 after the >= -1e-10 check
    total_variance: np.ndarray  # [G]
    jitter_used: float
    mc_prob_std: np.ndarray | None = None  # [G, K]


def _factor_with_jitter(K_tt, jitter):
    """Cholesky with an additive-jitter schedule.

    With ``jitter=None`` starts at 1e-8 * mean(diag) and doubles until
    1e-2 * mean(diag); an explicit jitter is used as-is, once.
    """
    diag_scale = float(np.mean(np.diag(K_tt)))
    if not np.isfinite(diag_scale) or diag_scale <= 0.0:
        raise NumericalError(
            f"training Gram mean diagonal {diag_scale} is not usable as a jitter scale"
        )
    if jitter is not None:
        lam_values = [float(jitter)]
    else:
        lam = 1e-8 * diag_scale
        lam_values = []
        while lam <= 1e-2 * diag_scale:
            lam_values.append(lam)
            lam *= 2.0
    n = K_tt.shape[0]
    for lam in lam_values:
        try:
            cho = scipy.linalg.cho_factor(K_tt + lam * np.eye(n), lower=True)
            return cho, lam
        except scipy.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"training Gram factorization failed at maximum jitter "
        f"{lam_values[-1]:.3e} (diag scale {diag_scale:.3e})"
    )


def kriging(G_tt: GramMatrix, G_qt: GramMatrix, query_self_blocks, Y_targets, jitter=None, points=None):
    """Posterior mean and variance per class over the query points.

    mean_k  = K_qt_k (K_tt_k + lam I)^-1 y_k
    var_k   = k_qq_k - rowwise K_qt_k (K_tt_k + lam I)^-1 K_tq_k

    ``query_self_blocks`` holds the [G, K, K] self-kernel blocks of the
    query points (only their diagonal entries enter the per-class
    variance; the trace of the posterior block is the total variance).
    ``Y_targets`` [n, K] are the regression targets in output space.
    Variances are checked to be >= -1e-10, then clamped at zero.
    """
    if G_tt.n_rows != G_tt.n_cols:
        raise InputError("training Gram must be square")
    n, K = G_tt.n_rows, G_tt.n_classes
    query_self_blocks = np.asarray(query_self_blocks, dtype=np.float64)
    Gq = query_self_blocks.shape[0]
    Y_targets = np.asarray(Y_targets, dtype=np.float64)
    if G_qt.n_rows != Gq or G_qt.n_cols != n or Y_targets.shape != (n, K):
        raise InputError("inconsistent Kriging shapes")

    mean = np.zeros((Gq, K))
    variance = np.zeros((Gq, K))
    lam_used = 0.0
    for k in range(K):
        K_tt = G_tt.class_plane(k)
        K_tt = 0.5 * (K_tt + K_tt.T)
        cho, lam = _factor_with_jitter(K_tt, jitter)
        lam_used = max(lam_used, lam)
        K_qt = G_qt.class_plane(k)
        alpha = scipy.linalg.cho_solve(cho, Y_targets[:, k])
        mean[:, k] = K_qt @ alpha
        V = scipy.linalg.cho_solve(cho, K_qt.T)  # [n, G]
        variance[:, k] = query_self_blocks[:, k, k] - np.einsum("gn,ng->g", K_qt, V)

    if variance.min() < -1e-10:
        raise NumericalError(
            f"posterior variance fell below tolerance: min {variance.min():.3e}"
        )
    variance = np.maximum(variance, 0.0)
    if points is None:
        points = np.zeros((Gq, 0))
    return PosteriorField(
        points=np.asarray(points, dtype=np.float64),
        mean=mean,
        variance=variance,
        total_variance=variance.sum(axis=1),
        jitter_used=lam_used,
    )


def mc_prob_std(field: PosteriorField, samples, seed):
    """Monte-Carlo spread of post-softmax probabilities per class.

    Draws ``samples`` independent Gaussian logit vectors per query point
    from N(mean, diag(variance)), pushes each through the softmax, and
    returns the per-class standard deviation of the resulting
    probabilities.  Each point uses its own spawned substream of the
    seed, so results do not depend on evaluation order.
    """
    if samples < 2:
        raise InputError("need at least 2 Monte-Carlo samples")
    G, K = field.mean.shape
    std = np.sqrt(field.variance)
    out = np.zeros((G, K))
    streams = np.random.SeedSequence(seed).spawn(G)
    for g in range(G):
        rng = np.random.default_rng(streams[g])
        if np.all(std[g] == 0.0):
            continue  # degenerate Gaussian: identical draws, zero spread
        draws = field.mean[g] + std[g] * rng.standard_normal((samples, K))
        shifted = draws - draws.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        out[g] = probs.std(axis=0)
    field.mc_prob_std = out
    return out
