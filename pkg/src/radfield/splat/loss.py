"""Photometric loss ``(1 - lambda) L1 + lambda D-SSIM`` and the full analytic reverse pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from ..geometry import Intrinsics, Pose
from ..metrics import ssim, ssim_and_grad
from .gaussians import Gaussians
from .project import Projections, project_backward, project_gaussians
from .raster import RasterResult, bin_and_sort, rasterize, rasterize_backward


def splat_loss(render, target, lam: float = 0.2) -> float:
    render = np.asarray(render, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if render.shape != target.shape:
        raise DomainError(f"image shapes differ: {render.shape} vs {target.shape}")
    l1 = float(np.mean(np.abs(render - target)))
    if lam == 0:
        return l1
    return (1 - lam) * l1 + lam * (1.0 - ssim(render, target)) / 2.0


def splat_loss_and_image_grad(render, target, lam: float = 0.2):
    diff = render - target
    loss = (1 - lam) * float(np.mean(np.abs(diff)))
    grad = (1 - lam) * np.sign(diff) / diff.size
    if lam > 0:
        s, ds = ssim_and_grad(render, target)
        loss += lam * (1.0 - s) / 2.0
        grad = grad - 0.5 * lam * ds
    return loss, grad


def render_splats(g: Gaussians, pose: Pose, intr: Intrinsics, background=(0.0, 0.0, 0.0)):
    proj = project_gaussians(g, pose, intr)
    grid = bin_and_sort(proj, intr.width, intr.height)
    return rasterize(grid, proj, background), proj


@dataclass
class SplatGradients:
    loss: float
    grads: dict[str, np.ndarray]
    grad2d_norm: np.ndarray  # per Gaussian |dL/d mean2d|, pixels
    visible: np.ndarray  # per Gaussian, retained by projection
    render: RasterResult
    proj: Projections


def splat_grad(g: Gaussians, pose: Pose, intr: Intrinsics, target, lam: float = 0.2, background=(0.0, 0.0, 0.0)):
    """Loss and gradients of all five parameter groups for one view."""
    result, proj = render_splats(g, pose, intr, background)
    loss, d_img = splat_loss_and_image_grad(result.image, np.asarray(target, dtype=np.float64), lam)
    d_mean2d, d_conic, d_colors, d_opac = rasterize_backward(result, proj, d_img)
    grads = project_backward(proj, d_mean2d, d_conic, d_colors, d_opac)
    return SplatGradients(loss, grads, np.linalg.norm(d_mean2d, axis=1), proj.valid.copy(), result, proj)
