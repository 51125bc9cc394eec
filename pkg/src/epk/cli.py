"""Command-line entry point.

Subcommands: train, predict, compare, align, contrib, pathdiag, gram,
gp, data (gen-blobs / mnist), and experiment (the end-to-end artifact
run).  All analysis outputs are CSV with header rows; trajectories use
the binary format from :mod:`epk.train`.  Exit codes: 0 success, 2
validation, 3 numerical, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import data as data_mod
from . import gp as gp_mod
from . import kernel, model, train
from .errors import ConfigurationError, EpkError, FormatError

SCHEMA_VERSION = 1


def _fmt(v):
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def load_points(path, input_dim=None):
    """Query points from a CSV with header x0..x{D-1}[,label]; labels ignored."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        has_label = header and header[-1] == "label"
        D = len(header) - (1 if has_label else 0)
        if input_dim is not None and D != input_dim:
            raise ConfigurationError(f"{path}: points have dim {D}, expected {input_dim}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields")
            rows.append([float(v) for v in parts[:D]])
    return np.asarray(rows, dtype=np.float64)


def _apply_thread_cap(threads):
    if threads is None:
        env = os.environ.get("EPK_THREADS")
        threads = int(env) if env else None
    if threads is None:
        return None
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=threads)
    except ImportError:  # best effort; BLAS pools are already initialized
        os.environ["OMP_NUM_THREADS"] = str(threads)
        return None


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def cmd_train(args):
    with open(args.config) as fh:
        cfg = json.load(fh)
    allowed = {"model", "epsilon", "steps", "seed", "loss"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigurationError(f"unknown training config keys: {sorted(unknown)}")
    try:
        spec = model.ModelSpec.from_json_dict(cfg["model"])
        epsilon = cfg["epsilon"]
        steps = int(cfg["steps"])
        seed = int(cfg["seed"])
    except KeyError as exc:
        raise ConfigurationError(f"training config missing key {exc}") from exc
    dataset = data_mod.load_csv(args.data)
    traj = train.train_full_batch(
        spec, dataset, epsilon, steps, seed, loss=cfg.get("loss", "nll")
    )
    train.save_trajectory(traj, args.out)
    print(f"wrote {args.out}: N={traj.n_steps} W={spec.weight_count} M={dataset.n_samples}")
    return 0


def _predict_reports(args):
    traj = train.load_trajectory(args.traj)
    dataset = data_mod.load_csv(args.data)
    pts = load_points(args.inputs, traj.spec.input_dim)
    method = {"ntk0": "ntk0", "ntkN": "ntkN", "epk": "epk", "dpk": "dpk"}[args.method]
    reports = kernel.predict(traj, dataset, pts, T=args.steps, method=method)
    return traj, pts, reports


def cmd_predict(args):
    traj, pts, reports = _predict_reports(args)
    K = traj.spec.output_dim
    header = ["point"] + [f"kernel_{k}" for k in range(K)]
    rows = [
        [str(q)] + [_fmt(v) for v in rep.kernel_logits] for q, rep in enumerate(reports)
    ]
    write_csv(args.out, header, rows)
    print(f"wrote {args.out}: {len(rows)} points, method={args.method}, T={reports[0].integration_steps}")
    return 0


def cmd_compare(args):
    traj, pts, reports = _predict_reports(args)
    K = traj.spec.output_dim
    header = (
        ["point"]
        + [f"model_{k}" for k in range(K)]
        + [f"kernel_{k}" for k in range(K)]
        + ["max_abs_err"]
    )
    rows = []
    for q, rep in enumerate(reports):
        rows.append(
            [str(q)]
            + [_fmt(v) for v in rep.model_logits]
            + [_fmt(v) for v in rep.kernel_logits]
            + [_fmt(rep.max_abs_err)]
        )
    write_csv(args.out, header, rows)
    worst = max(rep.max_abs_err for rep in reports)
    print(f"wrote {args.out}: {len(rows)} points, worst max_abs_err={worst:.3e}")
    return 0


def cmd_align(args):
    traj = train.load_trajectory(args.traj)
    dataset = data_mod.load_csv(args.data)
    pts = load_points(args.inputs, traj.spec.input_dim)
    x = pts[args.point]
    out = kernel.alignment_error(traj, dataset, x, T=args.steps)
    header = [
        "step",
        "epk_dpk_gap",
        "epk_ntk0_gap",
        "epk_ntkN_gap",
        "cum_epk_dpk",
        "cum_epk_ntk0",
        "cum_epk_ntkN",
    ]
    rows = [
        [str(int(out["step"][s]))] + [_fmt(out[h][s]) for h in header[1:]]
        for s in range(len(out["step"]))
    ]
    write_csv(args.out, header, rows)
    print(f"wrote {args.out}: {len(rows)} steps")
    return 0


def cmd_contrib(args):
    traj = train.load_trajectory(args.traj)
    dataset = data_mod.load_csv(args.data)
    pts = load_points(args.inputs, traj.spec.input_dim)
    x = pts[args.point]
    contrib, rep = kernel.kernel_contributions(traj, dataset, x, T=args.steps)
    K = traj.spec.output_dim
    dist = np.linalg.norm(dataset.X - x, axis=1)
    header = ["train_index", "label", "distance"] + [f"contrib_{k}" for k in range(K)]
    rows = []
    labels = dataset.labels
    for i in range(dataset.n_samples):
        rows.append(
            [str(i), str(int(labels[i])), _fmt(dist[i])] + [_fmt(v) for v in contrib[i]]
        )
    write_csv(args.out, header, rows)
    print(
        f"wrote {args.out}: {len(rows)} training points, "
        f"prediction max_abs_err={rep.max_abs_err:.3e}"
    )
    return 0


def cmd_pathdiag(args):
    traj = train.load_trajectory(args.traj)
    dataset = data_mod.load_csv(args.data)
    out = kernel.weight_path_diagnostic(traj, dataset, args.resolution)
    header = ["t", "accuracy", "mean_loss", "l2_norm", "grad_dot_direction"]
    rows = [[_fmt(out[h][r]) for h in header] for r in range(args.resolution)]
    write_csv(args.out, header, rows)
    norms = out["l2_norm"]
    print(
        f"wrote {args.out}: {args.resolution} points, "
        f"norm change {abs(norms[-1] - norms[0]) / norms[0] * 100:.1f}%"
    )
    return 0


def cmd_gram(args):
    traj = train.load_trajectory(args.traj)
    dataset = data_mod.load_csv(args.data)
    pts = load_points(args.points, traj.spec.input_dim)
    P = kernel.PointSet(pts, role="test")
    G = kernel.epk_gram(traj, dataset, P, P, T=args.steps)
    if args.out.endswith(".npy"):
        np.save(args.out, G.blocks)
    else:
        flat = G.flat
        header = [f"c{j}" for j in range(flat.shape[1])]
        write_csv(args.out, header, [[_fmt(v) for v in row] for row in flat])
    rep = gp_mod.check_psd(G)
    print(
        f"wrote {args.out}: {G.n_rows}x{G.n_cols} blocks, "
        f"min_eig={rep.min_eig:.3e} max_eig={rep.max_eig:.3e} "
        f"defect={rep.symmetric_defect:.3e} psd={'pass' if rep.passed else 'FAIL'}"
    )
    return 0


def parse_grid(text, input_dim):
    """Grid spec "x0:x1:n,y0:y1:n" over the first two input dimensions."""
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigurationError("grid spec must have two axes: x0:x1:n,y0:y1:n")
    axes = []
    for part in parts:
        bits = part.split(":")
        if len(bits) != 3:
            raise ConfigurationError(f"bad grid axis {part!r}")
        lo, hi, n = float(bits[0]), float(bits[1]), int(bits[2])
        if n < 2:
            raise ConfigurationError("grid axes need at least 2 points")
        axes.append(np.linspace(lo, hi, n))
    xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
    pts = np.zeros((xx.size, input_dim))
    pts[:, 0] = xx.ravel()
    pts[:, 1] = yy.ravel()
    return pts


def _gp_field(traj, dataset, grid_pts, T, per_class, mc_samples, seed, targets, jitter=None):
    labels = dataset.labels
    idx = []
    for c in range(dataset.n_classes):
        idx.extend(np.flatnonzero(labels == c)[:per_class].tolist())
    idx = np.asarray(sorted(idx))
    train_pts = kernel.PointSet(dataset.X[idx], role="test")
    G_tt = kernel.epk_gram(traj, dataset, train_pts, train_pts, T=T)
    G_qt = kernel.epk_gram(traj, dataset, kernel.PointSet(grid_pts), train_pts, T=T)
    self_blocks = kernel.epk_self_blocks(traj, dataset, grid_pts, T=T)
    if targets == "onehot":
        Y = dataset.Y[idx]
    elif targets == "model":
        Y = model.forward_batch(traj.spec, traj.checkpoints[-1], dataset.X[idx])
    else:
        raise ConfigurationError(f"unknown targets choice {targets!r}")
    field = gp_mod.kriging(G_tt, G_qt, self_blocks, Y, jitter=jitter, points=grid_pts)
    gp_mod.mc_prob_std(field, mc_samples, seed)
    meta = {
        "targets": targets,
        "jitter_used": field.jitter_used,
        "train_indices": idx.tolist(),
        "integration_steps": T,
        "mc_samples": mc_samples,
        "mc_seed": seed,
    }
    return field, self_blocks, meta


def _write_field_csv(path, field, self_blocks):
    G, K = field.mean.shape
    header = (
        ["x0", "x1", "kernel_self"]
        + [f"mean_{k}" for k in range(K)]
        + [f"var_{k}" for k in range(K)]
        + ["total_variance"]
        + [f"mc_std_{k}" for k in range(K)]
    )
    rows = []
    for g in range(G):
        rows.append(
            [_fmt(field.points[g, 0]), _fmt(field.points[g, 1]), _fmt(np.trace(self_blocks[g]))]
            + [_fmt(v) for v in field.mean[g]]
            + [_fmt(v) for v in field.variance[g]]
            + [_fmt(field.total_variance[g])]
            + [_fmt(v) for v in field.mc_prob_std[g]]
        )
    write_csv(path, header, rows)


def cmd_gp(args):
    traj = train.load_trajectory(args.traj)
    dataset = data_mod.load_csv(args.data)
    if args.grid:
        grid_pts = parse_grid(args.grid, traj.spec.input_dim)
    else:
        grid_pts = load_points(args.points, traj.spec.input_dim)
    field, self_blocks, meta = _gp_field(
        traj,
        dataset,
        grid_pts,
        T=args.steps,
        per_class=args.train_per_class,
        mc_samples=args.mc_samples,
        seed=args.seed,
        targets=args.targets,
    )
    _write_field_csv(args.out, field, self_blocks)
    with open(args.out + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    print(
        f"wrote {args.out}: {field.mean.shape[0]} points, "
        f"jitter={field.jitter_used:.3e}, targets={meta['targets']}"
    )
    return 0


def cmd_data_gen_blobs(args):
    with open(args.spec) as fh:
        spec = data_mod.BlobSpec.from_json_dict(json.load(fh))
    ds = data_mod.gen_blobs(spec)
    data_mod.save_csv(ds, args.out)
    print(f"wrote {args.out}: {ds.n_samples} samples, D={ds.input_dim}, K={ds.n_classes}")
    return 0


def cmd_data_mnist(args):
    ds = data_mod.load_mnist(
        args.images, args.labels, subset_per_class=args.per_class, downsample_to=args.downsample
    )
    data_mod.save_csv(ds, args.out)
    print(f"wrote {args.out}: {ds.n_samples} samples, D={ds.input_dim}, K={ds.n_classes}")
    return 0


# ---------------------------------------------------------------------------
# experiment orchestration
# ---------------------------------------------------------------------------

EXPERIMENT_KEYS = {
    "model",
    "data",
    "epsilon",
    "steps",
    "seed",
    "loss",
    "integration_steps",
    "test_points",
    "outputs",
    "grid",
    "mc_samples",
    "gp_train_per_class",
    "contrib_point",
    "align_point",
    "pathdiag_resolution",
    "threads",
}

DEFAULT_OUTPUTS = ("preds", "compare", "align", "contrib", "pathdiag", "field")


def _build_dataset(cfg):
    kind = cfg.get("type")
    if kind == "blobs":
        return data_mod.gen_blobs(data_mod.BlobSpec.from_json_dict(cfg["spec"]))
    if kind == "csv":
        return data_mod.load_csv(cfg["path"])
    if kind == "idx":
        return data_mod.load_mnist(
            cfg["images"],
            cfg["labels"],
            subset_per_class=cfg.get("per_class"),
            downsample_to=cfg.get("downsample"),
        )
    raise ConfigurationError(f"unknown data source type {kind!r}")


def _build_test_points(cfg, dataset, data_cfg):
    mode = cfg.get("mode", "blobs")
    if mode == "blobs":
        if data_cfg.get("type") != "blobs":
            raise ConfigurationError("test_points mode 'blobs' needs a blobs data source")
        spec = data_mod.BlobSpec.from_json_dict(data_cfg["spec"])
        count = int(cfg.get("count", 100))
        rng = np.random.default_rng(int(cfg.get("seed", spec.seed + 1)))
        means = spec.padded_means()
        classes = rng.integers(0, len(spec.means), size=count)
        return means[classes] + spec.std * rng.standard_normal((count, spec.dim))
    if mode == "csv":
        return load_points(cfg["path"])
    if mode == "train_subset":
        count = int(cfg.get("count", 100))
        return dataset.X[:count].copy()
    raise ConfigurationError(f"unknown test_points mode {mode!r}")


def load_experiment_config(path):
    with open(path) as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - EXPERIMENT_KEYS
    if unknown:
        raise ConfigurationError(f"unknown experiment config keys: {sorted(unknown)}")
    for key in ("model", "data", "epsilon", "steps", "seed"):
        if key not in cfg:
            raise ConfigurationError(f"experiment config missing key {key!r}")
    if int(cfg["steps"]) < 1:
        raise ConfigurationError("experiment needs at least one training step")
    return cfg


def run_experiment(cfg, out_dir):
    """Train, reconstruct, and export every analysis CSV plus a manifest.

    Any stage failure removes the partial outputs and re-raises with the
    stage named.
    """
    os.makedirs(out_dir, exist_ok=True)
    created = []
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg,
        "versions": _version_info(),
        "stages": {},
        "results": {},
    }
    stage = "setup"

    def _path(name):
        p = os.path.join(out_dir, name)
        created.append(p)
        return p

    try:
        t_all = time.perf_counter()
        stage = "data"
        t0 = time.perf_counter()
        dataset = _build_dataset(cfg["data"])
        manifest["results"]["dataset_fingerprint"] = dataset.fingerprint().hex()
        manifest["stages"]["data"] = time.perf_counter() - t0

        stage = "train"
        t0 = time.perf_counter()
        spec = model.ModelSpec.from_json_dict(cfg["model"])
        traj = train.train_full_batch(
            spec,
            dataset,
            cfg["epsilon"],
            int(cfg["steps"]),
            int(cfg["seed"]),
            loss=cfg.get("loss", "nll"),
        )
        train.save_trajectory(traj, _path("trajectory.traj"))
        manifest["results"]["final_train_accuracy"] = model.accuracy(
            spec, traj.checkpoints[-1], dataset.X, dataset.Y
        )
        manifest["stages"]["train"] = time.perf_counter() - t0

        outputs = tuple(cfg.get("outputs", DEFAULT_OUTPUTS))
        T_list = cfg.get("integration_steps", 100)
        if np.isscalar(T_list):
            T_list = [int(T_list)]
        T_list = [int(T) for T in T_list]
        T_main = max(T_list)

        stage = "test-points"
        pts = _build_test_points(cfg.get("test_points", {}), dataset, cfg["data"])
        pts_ds = data_mod.LabeledDataset(
            pts, data_mod.one_hot(np.zeros(pts.shape[0], dtype=int), dataset.n_classes)
        )
        data_mod.save_csv(pts_ds, _path("test_points.csv"))

        K = spec.output_dim
        for T in T_list:
            stage = f"predict-T{T}"
            t0 = time.perf_counter()
            reports = kernel.predict(traj, dataset, pts, T=T, method="epk")
            worst = max(rep.max_abs_err for rep in reports)
            manifest["results"][f"max_abs_err_T{T}"] = worst
            if "preds" in outputs:
                header = ["point"] + [f"kernel_{k}" for k in range(K)]
                rows = [
                    [str(q)] + [_fmt(v) for v in rep.kernel_logits]
                    for q, rep in enumerate(reports)
                ]
                write_csv(_path(f"preds_T{T}.csv"), header, rows)
            if "compare" in outputs:
                header = (
                    ["point"]
                    + [f"model_{k}" for k in range(K)]
                    + [f"kernel_{k}" for k in range(K)]
                    + ["max_abs_err"]
                )
                rows = [
                    [str(q)]
                    + [_fmt(v) for v in rep.model_logits]
                    + [_fmt(v) for v in rep.kernel_logits]
                    + [_fmt(rep.max_abs_err)]
                    for q, rep in enumerate(reports)
                ]
                write_csv(_path(f"compare_T{T}.csv"), header, rows)
            manifest["stages"][f"predict-T{T}"] = time.perf_counter() - t0

        point_idx = int(cfg.get("contrib_point", 0))
        if "align" in outputs:
            stage = "align"
            t0 = time.perf_counter()
            out = kernel.alignment_error(
                traj, dataset, pts[int(cfg.get("align_point", point_idx))], T=T_main
            )
            header = [
                "step",
                "epk_dpk_gap",
                "epk_ntk0_gap",
                "epk_ntkN_gap",
                "cum_epk_dpk",
                "cum_epk_ntk0",
                "cum_epk_ntkN",
            ]
            rows = [
                [str(int(out["step"][s]))] + [_fmt(out[h][s]) for h in header[1:]]
                for s in range(len(out["step"]))
            ]
            write_csv(_path("align.csv"), header, rows)
            manifest["stages"]["align"] = time.perf_counter() - t0

        if "contrib" in outputs:
            stage = "contrib"
            t0 = time.perf_counter()
            x = pts[point_idx]
            contrib, _rep = kernel.kernel_contributions(traj, dataset, x, T=T_main)
            dist = np.linalg.norm(dataset.X - x, axis=1)
            labels = dataset.labels
            header = ["train_index", "label", "distance"] + [
                f"contrib_{k}" for k in range(K)
            ]
            rows = [
                [str(i), str(int(labels[i])), _fmt(dist[i])]
                + [_fmt(v) for v in contrib[i]]
                for i in range(dataset.n_samples)
            ]
            write_csv(_path("contrib.csv"), header, rows)
            manifest["results"]["contrib_point"] = point_idx
            manifest["stages"]["contrib"] = time.perf_counter() - t0

        if "pathdiag" in outputs:
            stage = "pathdiag"
            t0 = time.perf_counter()
            R = int(cfg.get("pathdiag_resolution", 21))
            out = kernel.weight_path_diagnostic(traj, dataset, R)
            header = ["t", "accuracy", "mean_loss", "l2_norm", "grad_dot_direction"]
            rows = [[_fmt(out[h][r]) for h in header] for r in range(R)]
            write_csv(_path("pathdiag.csv"), header, rows)
            norms = out["l2_norm"]
            manifest["results"]["weight_norm_change"] = float(
                abs(norms[-1] - norms[0]) / norms[0]
            )
            manifest["stages"]["pathdiag"] = time.perf_counter() - t0

        if "field" in outputs and cfg.get("grid"):
            stage = "field"
            t0 = time.perf_counter()
            grid_pts = parse_grid(cfg["grid"], spec.input_dim)
            field, self_blocks, meta = _gp_field(
                traj,
                dataset,
                grid_pts,
                T=min(T_main, 16),
                per_class=int(cfg.get("gp_train_per_class", 20)),
                mc_samples=int(cfg.get("mc_samples", 2000)),
                seed=int(cfg["seed"]) + 1,
                targets="onehot",
            )
            _write_field_csv(_path("field.csv"), field, self_blocks)
            manifest["results"]["gp"] = meta
            manifest["stages"]["field"] = time.perf_counter() - t0

        stage = "manifest"
        manifest["stages"]["total"] = time.perf_counter() - t_all
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return manifest
    except Exception as exc:
        for p in created:
            if os.path.exists(p):
                os.remove(p)
        if isinstance(exc, EpkError):
            raise type(exc)(f"stage {stage!r}: {exc}") from exc
        raise EpkError(f"stage {stage!r}: {exc}") from exc


def cmd_experiment(args):
    cfg = load_experiment_config(args.config)
    manifest = run_experiment(cfg, args.out_dir)
    keys = sorted(k for k in manifest["results"] if k.startswith("max_abs_err"))
    summary = ", ".join(f"{k}={manifest['results'][k]:.3e}" for k in keys)
    print(f"experiment complete in {manifest['stages']['total']:.1f}s: {summary}")
    return 0


def _version_info():
    import scipy

    from . import __version__

    return {"epk": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="epk",
        description="Checkpointed gradient-descent training and exact "
        "path-kernel reconstruction of the resulting models.",
    )
    p.add_argument("--threads", type=int, default=None, help="cap BLAS thread pools (default: EPK_THREADS env)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="full-batch forward-Euler training with checkpoints")
    t.add_argument("--config", required=True, help="JSON: model, epsilon, steps, seed[, loss]")
    t.add_argument("--data", required=True, help="dataset CSV")
    t.add_argument("--out", required=True, help="output trajectory file")
    t.set_defaults(func=cmd_train)

    for name, fn, extra in (
        ("predict", cmd_predict, "kernel predictions per query point"),
        ("compare", cmd_compare, "model vs kernel logits with max_abs_err"),
    ):
        c = sub.add_parser(name, help=extra)
        c.add_argument("--traj", required=True)
        c.add_argument("--data", required=True)
        c.add_argument("--inputs", required=True, help="query points CSV (x0..x{D-1}[,label])")
        c.add_argument("--method", default="epk", choices=["epk", "dpk", "ntk0", "ntkN"])
        c.add_argument("--steps", type=int, default=100, help="integration nodes T")
        c.add_argument("--out", required=True)
        c.set_defaults(func=fn)

    a = sub.add_parser("align", help="per-step gaps between the integrated kernel and baselines")
    a.add_argument("--traj", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--inputs", required=True)
    a.add_argument("--point", type=int, default=0, help="row of --inputs to analyze")
    a.add_argument("--steps", type=int, default=100)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_align)

    c = sub.add_parser("contrib", help="aggregated per-training-point kernel contributions")
    c.add_argument("--traj", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--inputs", required=True)
    c.add_argument("--point", type=int, default=0, help="row of --inputs to analyze")
    c.add_argument("--steps", type=int, default=100)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_contrib)

    d = sub.add_parser("pathdiag", help="metrics along the straight w_0 -> w_N chord")
    d.add_argument("--traj", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--resolution", type=int, default=21)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_pathdiag)

    g = sub.add_parser("gram", help="aggregated kernel Gram matrix over a point set")
    g.add_argument("--traj", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--points", required=True, help="points CSV")
    g.add_argument("--steps", type=int, default=32)
    g.add_argument("--out", required=True, help=".npy for blocks, else flat CSV")
    g.set_defaults(func=cmd_gram)

    q = sub.add_parser("gp", help="Kriging mean/variance field with MC probability spread")
    q.add_argument("--traj", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--grid", default=None, help='"x0:x1:n,y0:y1:n" over the first two dims')
    q.add_argument("--points", default=None, help="query points CSV (alternative to --grid)")
    q.add_argument("--steps", type=int, default=16)
    q.add_argument("--train-per-class", type=int, default=20)
    q.add_argument("--mc-samples", type=int, default=2000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--targets", default="onehot", choices=["onehot", "model"])
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_gp)

    dat = sub.add_parser("data", help="dataset generation and ingestion")
    dsub = dat.add_subparsers(dest="data_command", required=True)
    b = dsub.add_parser("gen-blobs", help="seeded Gaussian blob classes")
    b.add_argument("--spec", required=True, help="BlobSpec JSON file")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_data_gen_blobs)
    m = dsub.add_parser("mnist", help="IDX image/label pair to dataset CSV")
    m.add_argument("--images", required=True)
    m.add_argument("--labels", required=True)
    m.add_argument("--per-class", type=int, default=None)
    m.add_argument("--downsample", type=int, default=None)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_data_mnist)

    e = sub.add_parser("experiment", help="end-to-end run: train + all analysis CSVs + manifest")
    e.add_argument("--config", required=True)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_experiment)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    limiter = _apply_thread_cap(args.threads)
    try:
        if args.command == "gp" and not (args.grid or args.points):
            raise ConfigurationError("gp needs --grid or --points")
        return args.func(args)
    except EpkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
