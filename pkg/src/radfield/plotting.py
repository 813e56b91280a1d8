"""Report figures rendered straight to PNG files with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# drop the version string so identical data gives identical bytes
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_filter_histogram(report, path) -> Path:
    """Sharpness histogram with the removal threshold marked."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if report.histogram:
        lo = [h[0] for h in report.histogram]
        width = [h[1] - h[0] for h in report.histogram]
        counts = [h[2] for h in report.histogram]
        ax.bar(lo, counts, width=width, align="edge", color="#4c72b0", edgecolor="white")
    ax.axvline(report.threshold, color="#c44e52", linestyle="--", label=f"threshold {report.threshold:.4g}")
    ax.set_xlabel("Laplacian variance")
    ax.set_ylabel("frames")
    ax.set_title(f"kept {len(report.kept)}, removed {len(report.removed)}")
    ax.legend(loc="upper right")
    fig.tight_layout()
    return _save(fig, path)


def plot_training_curve(rows, path, title: str = "training") -> Path:
    """``rows`` are ``(iteration, loss, psnr, ...)`` tuples."""
    fig, ax1 = plt.subplots(figsize=(6, 3.5))
    its = [r[0] for r in rows]
    ax1.plot(its, [r[1] for r in rows], color="#4c72b0", label="loss")
    ax1.set_yscale("log")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("loss", color="#4c72b0")
    ax2 = ax1.twinx()
    ax2.plot(its, [r[2] for r in rows], color="#dd8452", label="PSNR")
    ax2.set_ylabel("PSNR (dB)", color="#dd8452")
    ax1.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_comparison(report, path) -> Path:
    """Side-by-side bars for held-out PSNR, SSIM, checkpoint size and train time."""
    methods = [report.nerf, report.splat]
    names = [m.method for m in methods]
    panels = [
        ("PSNR (dB)", [m.quality.psnr for m in methods]),
        ("SSIM", [m.quality.ssim for m in methods]),
        ("checkpoint (KiB)", [m.model_bytes / 1024 for m in methods]),
        ("train time (s)", [m.train_seconds for m in methods]),
    ]
    fig, axes = plt.subplots(1, len(panels), figsize=(10, 3))
    for ax, (label, vals) in zip(axes, panels):
        ax.bar(names, vals, color=["#4c72b0", "#55a868"])
        ax.set_title(label, fontsize=9)
        ax.tick_params(labelsize=8)
    if not report.timing_recorded:
        axes[-1].set_title("train time (not recorded)", fontsize=9)
    fig.tight_layout()
    return _save(fig, path)
