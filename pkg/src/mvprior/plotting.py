"""Matplotlib figures written next to the pipeline and attention outputs."""

import matplotlib
import numpy as np
from matplotlib.figure import Figure

# Figure objects render through Agg without importing pyplot, which keeps
# the pipeline's figure stage cheap.
matplotlib.rcParams.update(
    {
        "font.size": 9,
        "axes.titlesize": 9,
        "axes.labelsize": 9,
        "legend.fontsize": 8,
        "figure.dpi": 100,
    }
)


def _bare(ax):
    ax.set_xticks([])
    ax.set_yticks([])


def plot_stacks(stacks, path, title=None, max_side=256):
    """One row per view: rgb (warped for targets), mask, CCM at 1/8 scale.

    Full-resolution panels are point-sampled down to ``max_side`` pixels.
    """
    n = len(stacks)
    fig = Figure(figsize=(6.6, 2.2 * n))
    axes = fig.subplots(n, 3, squeeze=False)
    for row, st in enumerate(stacks):
        ax_rgb, ax_mask, ax_ccm = axes[row]
        step = max(1, int(np.ceil(max(st.mask.shape) / max_side)))
        ax_rgb.imshow(np.clip(st.rgb[::step, ::step], 0, 1), interpolation="nearest")
        ax_rgb.set_ylabel(f"view {st.view_index}\n{st.role}")
        ax_mask.imshow(st.mask[::step, ::step], cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        ax_mask.set_title(f"coverage {st.mask.mean():.3f}" if row else "mask", fontsize=8)
        ax_ccm.imshow(np.clip(st.ccm_embedding[..., :3], 0, 1), interpolation="nearest")
        for ax in axes[row]:
            _bare(ax)
    axes[0, 0].set_title("rgb")
    axes[0, 2].set_title("ccm (1/8)")
    if title:
        fig.suptitle(title)
    fig.subplots_adjust(left=0.08, right=0.98, bottom=0.02, top=0.9 if title else 0.95, wspace=0.05, hspace=0.12)
    fig.savefig(path, dpi=80)
    return path


def plot_dilution(rows, path):
    """Reference attention mass against the target count, one line per gamma."""
    fig = Figure(figsize=(4.2, 3.0))
    ax = fig.subplots()
    for g in sorted({r["gamma"] for r in rows}):
        pts = sorted((r["n_target"], r["reference_mass"]) for r in rows if r["gamma"] == g)
        x, y = zip(*pts)
        ax.plot(x, y, marker="o", ms=3, label=f"$\\gamma$ = {g:g}")
    ax.set_xlabel("target tokens")
    ax.set_ylabel("mean reference mass")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    return path


def plot_mass_curve(curve, path):
    fig = Figure(figsize=(4.2, 3.0))
    ax = fig.subplots()
    g, m = zip(*curve)
    ax.plot(g, m, marker=".")
    ax.set_xlabel("$\\gamma$")
    ax.set_ylabel("mean reference mass")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    return path
