"""Figure rendering from the training/kernel CLI's CSV artifacts.

Every figure kind reads one or more CSVs with documented header rows and
writes a PNG.  Inputs are never modified; optional columns degrade to
omitted overlays; a missing required column raises with its name.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

STYLE = {
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


class PlotError(Exception):
    exit_code = 2


@dataclass
class FigureJob:
    kind: str
    inputs: list
    out: str
    options: dict = field(default_factory=dict)


def read_csv(path):
    """Column dict from a headered CSV; every column parsed as float64."""
    try:
        table = np.genfromtxt(path, delimiter=",", names=True)
    except (OSError, ValueError) as exc:
        raise PlotError(f"{path}: not a readable CSV: {exc}") from exc
    if table.dtype.names is None:
        raise PlotError(f"{path}: missing header row")
    if table.ndim == 0:
        table = table.reshape(1)
    return {name: np.asarray(table[name], dtype=np.float64) for name in table.dtype.names}


def require(cols, names, path):
    missing = [n for n in names if n not in cols]
    if missing:
        raise PlotError(f"{path}: missing required column(s) {missing}")


def class_columns(cols, prefix):
    out = []
    k = 0
    while f"{prefix}{k}" in cols:
        out.append(f"{prefix}{k}")
        k += 1
    return out


def _identity_overlay(ax, values):
    lo, hi = float(np.min(values)), float(np.max(values))
    pad = 0.05 * (hi - lo or 1.0)
    span = [lo - pad, hi + pad]
    ax.plot(span, span, color="black", lw=0.8, ls="--", label="y = x")
    ax.set_xlim(span)
    ax.set_ylim(span)


def render_compare(job):
    """Model-vs-kernel logit scatter with a y = x reference line."""
    cols = read_csv(job.inputs[0])
    require(cols, ["model_0", "kernel_0"], job.inputs[0])
    model_cols = class_columns(cols, "model_")
    kernel_cols = class_columns(cols, "kernel_")
    if len(model_cols) != len(kernel_cols):
        raise PlotError(f"{job.inputs[0]}: model_*/kernel_* column counts differ")
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    everything = []
    for mc, kc in zip(model_cols, kernel_cols):
        ax.scatter(cols[mc], cols[kc], s=12, alpha=0.7, label=f"class {mc.split('_')[1]}")
        everything.extend([cols[mc], cols[kc]])
    _identity_overlay(ax, np.concatenate(everything))
    ax.set_xlabel("model logit")
    ax.set_ylabel("kernel logit")
    ax.legend(loc="upper left", fontsize=7)
    return fig


def render_align(job):
    """Per-step gap curves; cumulative columns add shaded accumulated bands."""
    cols = read_csv(job.inputs[0])
    require(cols, ["step", "epk_dpk_gap", "epk_ntk0_gap", "epk_ntkN_gap"], job.inputs[0])
    fig, ax = plt.subplots(figsize=(5.4, 3.4))
    steps = cols["step"]
    series = (
        ("epk_dpk_gap", "cum_epk_dpk", "tab:blue", "EPK-DPK"),
        ("epk_ntk0_gap", "cum_epk_ntk0", "tab:red", "EPK-NTK(w0)"),
        ("epk_ntkN_gap", "cum_epk_ntkN", "tab:green", "EPK-NTK(wN)"),
    )
    ax2 = None
    for gap_col, cum_col, color, label in series:
        ax.plot(steps, cols[gap_col], color=color, lw=1.0, label=label)
        if cum_col in cols:  # optional overlay
            if ax2 is None:
                ax2 = ax.twinx()
                ax2.set_ylabel("accumulated gap")
            ax2.fill_between(steps, 0.0, cols[cum_col], color=color, alpha=0.12)
    ax.set_xlabel("training step")
    ax.set_ylabel("per-step gap")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    return fig


def render_refine(job):
    """One model-vs-kernel panel per compare CSV (the T-refinement sweep)."""
    n = len(job.inputs)
    if n < 1:
        raise PlotError("refine needs at least one compare CSV")
    fig, axes = plt.subplots(n, 1, figsize=(4.0, 3.2 * n), squeeze=False)
    for ax, path in zip(axes[:, 0], job.inputs):
        cols = read_csv(path)
        require(cols, ["model_0", "kernel_0"], path)
        model_cols = class_columns(cols, "model_")
        kernel_cols = class_columns(cols, "kernel_")
        everything = []
        for mc, kc in zip(model_cols, kernel_cols):
            ax.scatter(cols[mc], cols[kc], s=10, alpha=0.7)
            everything.extend([cols[mc], cols[kc]])
        _identity_overlay(ax, np.concatenate(everything))
        label = path.rsplit("/", 1)[-1]
        if "max_abs_err" in cols:
            label += f"  (max err {cols['max_abs_err'].max():.2e})"
        ax.set_title(label, fontsize=8)
        ax.set_xlabel("model logit")
        ax.set_ylabel("kernel logit")
    fig.tight_layout()
    return fig


def _infer_grid(x0, x1):
    xs, ys = np.unique(x0), np.unique(x1)
    if xs.size * ys.size != x0.size:
        raise PlotError("field points do not form a full grid over (x0, x1)")
    return xs, ys


def render_field(job):
    """Paired heatmaps: self-kernel values and mean MC probability spread."""
    cols = read_csv(job.inputs[0])
    require(cols, ["x0", "x1", "kernel_self"], job.inputs[0])
    xs, ys = _infer_grid(cols["x0"], cols["x1"])
    shape = (xs.size, ys.size)
    order = np.lexsort((cols["x1"], cols["x0"]))

    def plane(values):
        return values[order].reshape(shape).T  # x horizontal, y vertical

    extent = (xs[0], xs[-1], ys[0], ys[-1])
    std_cols = class_columns(cols, "mc_std_")
    panels = [("kernel value k(x, x)", plane(cols["kernel_self"]), "viridis")]
    if std_cols:  # optional: omitted when MC sampling was skipped
        mc = np.mean([cols[c] for c in std_cols], axis=0)
        panels.append(("MC probability std", plane(mc), "viridis"))
    fig, axes = plt.subplots(1, len(panels), figsize=(4.2 * len(panels), 3.6), squeeze=False)
    for ax, (title, img, cmap) in zip(axes[0], panels):
        im = ax.imshow(img, origin="lower", extent=extent, aspect="auto", cmap=cmap)
        ax.set_title(title, fontsize=9)
        ax.set_xlabel("x0")
        ax.set_ylabel("x1")
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    return fig


def render_contrib(job):
    """Training points colored by their kernel contribution, one panel per
    class; needs the dataset CSV as the second input for coordinates."""
    if len(job.inputs) < 2:
        raise PlotError("contrib needs the contribution CSV and the dataset CSV")
    cols = read_csv(job.inputs[0])
    require(cols, ["train_index", "contrib_0"], job.inputs[0])
    ds = read_csv(job.inputs[1])
    require(ds, ["x0", "x1"], job.inputs[1])
    idx = cols["train_index"].astype(int)
    x0, x1 = ds["x0"][idx], ds["x1"][idx]
    contrib_cols = class_columns(cols, "contrib_")
    fig, axes = plt.subplots(1, len(contrib_cols), figsize=(3.6 * len(contrib_cols), 3.2), squeeze=False)
    for k, (ax, cc) in enumerate(zip(axes[0], contrib_cols)):
        sc = ax.scatter(x0, x1, c=cols[cc], s=10, cmap="coolwarm")
        ax.set_title(f"contribution to class {k}", fontsize=9)
        ax.set_xlabel("x0")
        ax.set_ylabel("x1")
        fig.colorbar(sc, ax=ax)
    fig.tight_layout()
    return fig


def render_pathdiag(job):
    """Metrics along the straight weight-space chord from w_0 to w_N."""
    cols = read_csv(job.inputs[0])
    require(cols, ["t", "accuracy", "mean_loss", "l2_norm"], job.inputs[0])
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    t = cols["t"]
    ax.plot(t, cols["accuracy"], color="tab:blue", label="accuracy")
    ax.set_xlabel("t along w(t) = w0 + t (wN - w0)")
    ax.set_ylabel("accuracy")
    ax2 = ax.twinx()
    ax2.plot(t, cols["mean_loss"], color="tab:red", label="mean loss")
    ax2.plot(t, cols["l2_norm"] / cols["l2_norm"][0], color="tab:green", label="|w| / |w0|")
    if "grad_dot_direction" in cols:  # optional overlay
        scale = np.abs(cols["grad_dot_direction"]).max() or 1.0
        ax2.plot(
            t,
            cols["grad_dot_direction"] / scale,
            color="tab:purple",
            ls="--",
            label="grad . direction (scaled)",
        )
    ax2.set_ylabel("loss / scaled diagnostics")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, fontsize=7, loc="center right")
    return fig


RENDERERS = {
    "compare": render_compare,
    "align": render_align,
    "refine": render_refine,
    "field": render_field,
    "contrib": render_contrib,
    "pathdiag": render_pathdiag,
}


def render(job: FigureJob):
    """Render one figure kind to ``job.out``; returns the output path."""
    if job.kind not in RENDERERS:
        raise PlotError(f"unknown figure kind {job.kind!r}; have {sorted(RENDERERS)}")
    with plt.rc_context(STYLE):
        fig = RENDERERS[job.kind](job)
        try:
            fig.savefig(job.out, metadata={"Software": None}, **job.options)
        finally:
            plt.close(fig)
    return job.out
