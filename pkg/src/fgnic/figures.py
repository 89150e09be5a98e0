"""Matplotlib rendering for reports and qualitative panels.

Everything draws straight to files through the Agg backend: accuracy-vs-sigma
curves next to the delimited report output, degraded-image grids with their
gamma-corrected fidelity maps, and grayscale fidelity-map exports.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigurationError
from .fidelity import oracle_fidelity
from .imaging import DegradationSpec, degrade, gamma_correct, make_noise_field, save_image


def save_accuracy_curves(table, path, title: str = "Top-1 accuracy vs noise level"):
    """One line per (method, condition) over the uniform-sigma columns."""
    uniform = [(c, float(c.split(":", 1)[1])) for c in table.columns
               if c.startswith("uniform:") and not c.endswith("macro_avg")]
    if not uniform:
        raise ConfigurationError("table has no uniform:<sigma> columns to plot")
    uniform.sort(key=lambda cv: cv[1])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for row in table.sorted_rows():
        xs = [v for c, v in uniform if c in row.cells]
        ys = [row.cells[c].accuracy for c, _ in uniform if c in row.cells]
        if xs:
            ax.plot(xs, ys, marker="o", label=f"{row.method} / {row.condition}")
    ax.set_xlabel("noise standard deviation")
    ax.set_ylabel("top-1 accuracy (%)")
    ax.set_ylim(0, 100)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_degradation_panel(clean: np.ndarray, specs, path, *, denoiser=None,
                           gamma: float = 0.5, seed: int = 0):
    """Two-row panel: degraded images on top, their fidelity maps below.

    With a denoiser the maps score the restored images; without one they
    score the noisy images directly. Maps are gamma-corrected so faint
    structure stays visible.
    """
    specs = list(specs)
    if not specs:
        raise ConfigurationError("need at least one degradation spec")
    n = len(specs) + 1
    fig, axes = plt.subplots(2, n, figsize=(2.1 * n, 4.4))
    axes[0, 0].imshow(clean)
    axes[0, 0].set_title("clean", fontsize=9)
    axes[1, 0].imshow(np.ones(clean.shape[:2]), cmap="gray", vmin=0, vmax=1)
    for k, spec in enumerate(specs, start=1):
        field = make_noise_field(spec, clean.shape[0], clean.shape[1])
        noisy = degrade(clean, field, seed + k)
        shown = noisy
        if denoiser is not None:
            from .restoration import restore

            shown = restore(denoiser, noisy)
        fmap = oracle_fidelity(clean, shown, "l1")
        axes[0, k].imshow(shown)
        axes[0, k].set_title(spec.label(), fontsize=9)
        axes[1, k].imshow(gamma_correct(fmap, gamma), cmap="gray", vmin=0, vmax=1)
    for ax in axes.ravel():
        ax.set_xticks([])
        ax.set_yticks([])
    axes[1, 0].set_ylabel("fidelity map", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_fidelity_map_image(fmap: np.ndarray, path, gamma: float = 1.0):
    """Export a fidelity map as an 8-bit grayscale image after gamma correction."""
    corrected = gamma_correct(np.asarray(fmap, dtype=np.float64), gamma)
    save_image(path, corrected[:, :, None])
    return path


def save_training_curves(runs, path, metric: str = "train_loss", title: str = None):
    """Plot one metric across epochs for a set of named ExperimentRuns."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name, run in runs.items():
        ys = [rec[metric] for rec in run.metrics if metric in rec]
        ax.plot(range(len(ys)), ys, marker=".", label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel(metric)
    ax.set_title(title or metric)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
