"""Benchmark the two kernel evaluation routes against each other.

The production scan contracts per-layer factors and never materializes a
Jacobian; the explicit route builds [K, W] Jacobian matrices per point
and per node, which is what the per-pair block ops use.  Both must agree
to rounding; the factored route is what makes full sweeps affordable.

Run:  python3 benchmarks/bench_engines.py [--steps N] [--nodes T]
"""

import argparse
import time

import numpy as np

from epk import data, kernel, model, train


def explicit_predict(traj, dataset, x, T):
    """Reference route: per-step averaged test Jacobian against explicit
    train Jacobians, contracted with the loss-gradient rows."""
    spec = traj.spec
    loss = model.get_loss(traj.loss)
    bias = model.forward(spec, traj.checkpoints[0], x)
    total = np.zeros(spec.output_dim)
    for s in range(traj.n_steps):
        w_s = traj.checkpoints[s]
        w_next = traj.checkpoints[s + 1]
        J_sum = np.zeros((spec.output_dim, spec.weight_count))
        for t in kernel.quadrature_nodes(T):
            w_t = w_s if t == 0.0 else kernel.interpolate_weights(w_s, w_next, t)
            J_sum += model.per_sample_jacobian(spec, w_t, x)
        J_avg = J_sum / T
        J_train = model.jacobian_batch(spec, w_s, dataset.X)
        logits = model.forward_batch(spec, w_s, dataset.X)
        rows = loss.grads(logits, dataset.Y)
        G = np.einsum("mjw,kw->mjk", J_train, J_avg)
        P = np.einsum("mj,mjk->k", rows, G)
        total += -traj.step_sizes[s] / dataset.n_samples * P
    return bias + total


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=30)
    ap.add_argument("--nodes", type=int, default=20)
    ap.add_argument("--queries", type=int, default=8)
    args = ap.parse_args()

    ds = data.gen_blobs(
        data.BlobSpec(
            means=((1.0, 4.0), (4.0, 1.0), (5.0, 5.0)), per_class_count=50, dim=20, seed=3
        )
    )
    spec = model.ModelSpec((20, 32, 3))
    traj = train.train_full_batch(spec, ds, 0.1, args.steps, seed=7)
    rng = np.random.default_rng(1)
    queries = rng.normal(size=(args.queries, 20)) + 3.0

    t0 = time.perf_counter()
    reports = kernel.predict(traj, ds, queries, T=args.nodes)
    t_fast = time.perf_counter() - t0

    t0 = time.perf_counter()
    explicit = [explicit_predict(traj, ds, q, args.nodes) for q in queries]
    t_explicit = time.perf_counter() - t0

    worst = max(
        float(np.abs(rep.kernel_logits - ref).max())
        for rep, ref in zip(reports, explicit)
    )
    print(f"config: N={args.steps} T={args.nodes} M={ds.n_samples} "
          f"W={spec.weight_count} queries={args.queries}")
    print(f"factored scan : {t_fast:8.3f} s")
    print(f"explicit route: {t_explicit:8.3f} s  ({t_explicit / t_fast:5.1f}x slower)")
    print(f"max |difference| between routes: {worst:.3e}")


if __name__ == "__main__":
    main()
