"""Image quality metrics and the NeRF-vs-splatting comparison record."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def l1(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def mse(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(m: float) -> float:
    if m <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / m))


def psnr(a, b) -> float:
    return psnr_from_mse(mse(a, b))


def _window() -> np.ndarray:
    x = np.arange(SSIM_WINDOW, dtype=np.float64) - SSIM_WINDOW // 2
    g = np.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    return g / g.sum()


_G = _window()


def _filt(x: np.ndarray) -> np.ndarray:
    """Valid-mode separable Gaussian filter over the first two axes."""
    n = len(_G)
    h, w = x.shape[0] - n + 1, x.shape[1] - n + 1
    rows = sum(_G[i] * x[i : i + h] for i in range(n))
    return sum(_G[j] * rows[:, j : j + w] for j in range(n))


def _filt_adjoint(y: np.ndarray, shape) -> np.ndarray:
    n = len(_G)
    h, w = y.shape[0], y.shape[1]
    rows = np.zeros((h, shape[1]) + y.shape[2:])
    for j in range(n):
        rows[:, j : j + w] += _G[j] * y
    out = np.zeros(shape)
    for i in range(n):
        out[i : i + h] += _G[i] * rows
    return out


def _as_hwc(a: np.ndarray) -> np.ndarray:
    return a[..., None] if a.ndim == 2 else a


def _ssim_terms(a, b):
    a, b = _check_pair(a, b)
    a, b = _as_hwc(a), _as_hwc(b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise DomainError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    mu_a, mu_b = _filt(a), _filt(b)
    e_aa, e_bb, e_ab = _filt(a * a), _filt(b * b), _filt(a * b)
    a1 = 2 * mu_a * mu_b + SSIM_C1
    a2 = 2 * (e_ab - mu_a * mu_b) + SSIM_C2
    b1 = mu_a**2 + mu_b**2 + SSIM_C1
    b2 = (e_aa - mu_a**2) + (e_bb - mu_b**2) + SSIM_C2
    return a, b, mu_a, mu_b, a1, a2, b1, b2


def ssim(a, b) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    *_, a1, a2, b1, b2 = _ssim_terms(a, b)
    return float(np.mean((a1 * a2) / (b1 * b2)))


def ssim_and_grad(a, b) -> tuple[float, np.ndarray]:
    """SSIM and its gradient with respect to the first image."""
    shape = np.shape(a)
    a, b, mu_a, mu_b, a1, a2, b1, b2 = _ssim_terms(a, b)
    smap = (a1 * a2) / (b1 * b2)
    scale = 1.0 / smap.size
    denom = b1 * b2
    d_mu = (2 * mu_b * a2 - 2 * mu_b * a1) / denom - smap * (2 * mu_a / b1 - 2 * mu_a / b2)
    d_eab = 2 * a1 / denom
    d_eaa = -smap / b2
    grad = (
        _filt_adjoint(d_mu * scale, a.shape)
        + b * _filt_adjoint(d_eab * scale, a.shape)
        + 2 * a * _filt_adjoint(d_eaa * scale, a.shape)
    )
    return float(np.mean(smap)), grad.reshape(shape)


def d_ssim(a, b) -> float:
    return (1.0 - ssim(a, b)) / 2.0


@dataclass
class QualityReport:
    psnr: float
    ssim: float
    l1: float
    mse: float

    @classmethod
    def evaluate(cls, render, target) -> "QualityReport":
        render = np.clip(np.asarray(render, dtype=np.float64), 0.0, 1.0)
        m = mse(render, target)
        return cls(psnr_from_mse(m), ssim(render, target), l1(render, target), m)

    @classmethod
    def mean_of(cls, reports) -> "QualityReport":
        reports = list(reports)
        return cls(
            float(np.mean([r.psnr for r in reports])),
            float(np.mean([r.ssim for r in reports])),
            float(np.mean([r.l1 for r in reports])),
            float(np.mean([r.mse for r in reports])),
        )


@dataclass
class MethodResult:
    method: str
    quality: QualityReport
    model_bytes: int
    train_seconds: float
    iterations: int
    param_count: int
    splat_count: int | None = None
    per_view_psnr: list[float] = field(default_factory=list)

    @property
    def peak_resident_estimate(self) -> int:
        # float64 parameters plus one gradient and two optimizer moments
        return 4 * 8 * self.param_count


@dataclass
class ComparisonReport:
    nerf: MethodResult
    splat: MethodResult
    heldout_views: list[str]
    timing_recorded: bool = True

    def to_dict(self) -> dict:
        out = {"heldout_views": list(self.heldout_views), "timing_recorded": self.timing_recorded}
        for res in (self.nerf, self.splat):
            d = asdict(res)
            d["peak_resident_estimate"] = res.peak_resident_estimate
            out[res.method] = d
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "model_bytes", "peak_resident_estimate", "psnr", "ssim", "train_seconds"])
        for res in (self.nerf, self.splat):
            w.writerow(
                [
                    res.method,
                    res.model_bytes,
                    res.peak_resident_estimate,
                    repr(res.quality.psnr),
                    repr(res.quality.ssim),
                    repr(res.train_seconds),
                ]
            )
        return buf.getvalue()


def build_comparison(nerf, splat, heldout, timing_recorded: bool = True) -> ComparisonReport:
    """Evaluate two trained methods on the same held-out views.

    ``nerf`` and ``splat`` are mappings with keys ``render`` (callable taking
    ``(intrinsics, pose)``), ``model_bytes``, ``train_seconds``, ``iterations``,
    ``param_count`` and optionally ``splat_count``. ``heldout`` is a sequence of
    ``(name, intrinsics, pose, target_image)``.
    """
    heldout = list(heldout)
    if not heldout:
        raise DomainError("comparison needs at least one held-out view")
    results = []
    for method, art in (("nerf", nerf), ("splat", splat)):
        reports = [QualityReport.evaluate(art["render"](intr, pose), target) for _, intr, pose, target in heldout]
        results.append(
            MethodResult(
                method=method,
                quality=QualityReport.mean_of(reports),
                model_bytes=int(art["model_bytes"]),
                train_seconds=float(art["train_seconds"]),
                iterations=int(art["iterations"]),
                param_count=int(art["param_count"]),
                splat_count=art.get("splat_count"),
                per_view_psnr=[r.psnr for r in reports],
            )
        )
    return ComparisonReport(results[0], results[1], [name for name, *_ in heldout], timing_recorded)
