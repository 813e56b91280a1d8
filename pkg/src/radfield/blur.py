"""Blurry-frame detection by variance of the Laplacian.

Each frame is scored by the population variance of its 4-connected Laplacian
response over interior pixels. Frames scoring strictly below
``mean - k * std`` of the dataset's scores are dropped.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, EmptyResultError, ImageReadError, InsufficientDataError
from .geometry import DatasetManifest, FrameEntry

HISTOGRAM_BINS = 20
ROUNDOFF_ULPS = 8


@dataclass(frozen=True)
class SharpnessScore:
    frame_index: int
    variance: float


@dataclass
class FilterReport:
    mean: float
    std_dev: float
    k: float
    threshold: float
    kept: list[int]
    removed: list[int]
    histogram: list[tuple[float, float, int]] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std_dev": self.std_dev,
            "k": self.k,
            "threshold": self.threshold,
            "kept": list(self.kept),
            "removed": list(self.removed),
            "histogram": [[lo, hi, n] for lo, hi, n in self.histogram],
        }


def to_gray(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.size == 0:
        raise DomainError("empty image")
    if rgb.ndim == 2:
        return rgb
    if rgb.ndim != 3 or rgb.shape[-1] not in (3, 4):
        raise DomainError(f"expected (H, W, 3) image, got shape {rgb.shape}")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    # integer per-mille weights keep gray fixpoints exact: (1, 1, 1) -> 1.0
    return (299.0 * r + 587.0 * g + 114.0 * b) / 1000.0


def laplacian(img: np.ndarray) -> np.ndarray:
    """Interior response of the [[0,1,0],[1,-4,1],[0,1,0]] stencil, shape (H-2, W-2)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise DomainError(f"Laplacian needs a 2-D image of at least 3x3, got {img.shape}")
    c = img[1:-1, 1:-1]
    resp = img[:-2, 1:-1] + img[2:, 1:-1] + img[1:-1, :-2] + img[1:-1, 2:] - 4.0 * c
    # responses this small are rounding of the inputs (a sampled ramp is not exactly linear)
    tol = ROUNDOFF_ULPS * np.finfo(np.float64).eps * float(np.max(np.abs(img)))
    resp[np.abs(resp) <= tol] = 0.0
    return resp


def laplacian_variance(img: np.ndarray) -> float:
    return float(np.var(laplacian(img)))


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3 sigma), replicate border."""
    img = np.asarray(img, dtype=np.float64)
    if sigma <= 0:
        return img.copy()
    k = _gaussian_kernel(sigma)
    r = len(k) // 2
    out = img
    for axis in (0, 1):
        pad = [(0, 0)] * img.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="edge")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, w in enumerate(k):
            acc += w * np.take(padded, np.arange(i, i + n), axis=axis)
        out = acc
    return out


def score_image(img: np.ndarray) -> float:
    return laplacian_variance(to_gray(img))


def score_dataset(
    manifest: DatasetManifest,
    image_loader: Callable[[str], np.ndarray],
    workers: int = 1,
) -> list[SharpnessScore]:
    """Score every frame; output order follows the manifest regardless of ``workers``."""

    def one(item):
        i, fr = item
        try:
            img = image_loader(fr.image_ref)
        except (OSError, ValueError) as exc:
            raise ImageReadError(f"frame {i} ({fr.image_ref}): {exc}") from None
        return SharpnessScore(i, score_image(img))

    items = list(enumerate(manifest.frames))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, items))
    return [one(it) for it in items]


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def compute_threshold(scores: Sequence[SharpnessScore], k: float = 1.0) -> float:
    if len(scores) < 2:
        raise InsufficientDataError(f"need at least 2 scores to set a threshold, got {len(scores)}")
    mean, std = _mean_std([s.variance for s in scores])
    return mean - k * std


def score_histogram(values: Sequence[float], bins: int = HISTOGRAM_BINS) -> list[tuple[float, float, int]]:
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return [(lo, hi, int(values.size))] + [(hi, hi, 0)] * (bins - 1)
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def filter_dataset(
    manifest: DatasetManifest,
    scores: Sequence[SharpnessScore],
    k: float = 1.0,
) -> tuple[DatasetManifest, FilterReport]:
    if len(scores) != len(manifest.frames):
        raise DomainError("scores are not aligned with manifest frames")
    if len(scores) < 2:
        raise InsufficientDataError(f"need at least 2 scores to set a threshold, got {len(scores)}")
    values = [s.variance for s in scores]
    mean, std = _mean_std(values)
    threshold = mean - k * std
    kept, removed = [], []
    for i, v in enumerate(values):
        (removed if v < threshold else kept).append(i)
    if not kept:
        raise EmptyResultError("threshold removes every frame; lower k")
    frames = [
        FrameEntry(manifest.frames[i].image_ref, manifest.frames[i].pose, values[i]) for i in kept
    ]
    report = FilterReport(
        mean=mean,
        std_dev=std,
        k=float(k),
        threshold=threshold,
        kept=kept,
        removed=removed,
        histogram=score_histogram(values),
        scores=values,
    )
    return manifest.with_frames(frames), report
