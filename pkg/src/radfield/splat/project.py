"""Perspective (EWA) projection of 3D Gaussians to screen space, with its reverse pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Intrinsics, Pose
from .gaussians import Gaussians, covariance_3d, quat_rotation_backward, sigmoid
from .sh import sh_basis

COV2D_BLUR = 0.3
RADIUS_SIGMAS = 3.0
NEAR_PLANE = 0.05


@dataclass
class Projections:
    """Screen-space footprint of every Gaussian; entries with ``valid == False`` are culled."""

    mean2d: np.ndarray  # (N, 2) pixel coords, pixel i has its center at i + 0.5
    cov2d: np.ndarray  # (N, 2, 2), regularized
    conic: np.ndarray  # (N, 3) inverse covariance entries a, b, c
    depth: np.ndarray  # (N,)
    radius: np.ndarray  # (N,)
    valid: np.ndarray  # (N,) bool
    colors: np.ndarray  # (N, 3)
    opacities: np.ndarray  # (N,)
    _cache: dict

    def __len__(self):
        return len(self.depth)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.valid)


def _camera_terms(pose: Pose, intr: Intrinsics, means: np.ndarray):
    pc = pose.world_to_camera(means)
    x, y, z = pc[:, 0], pc[:, 1], -pc[:, 2]
    return pc, x, y, z


def project_gaussians(g: Gaussians, pose: Pose, intr: Intrinsics, near: float = NEAR_PLANE) -> Projections:
    n = len(g)
    cov3, rot, mfac = covariance_3d(g, with_factors=True)
    pc, x, y, z = _camera_terms(pose, intr, g.means)
    valid = z > near
    zs = np.where(valid, z, 1.0)
    fx, fy = intr.fx, intr.fy
    u = intr.cx + fx * x / zs
    v = intr.cy - fy * y / zs
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = fx / zs
    J[:, 0, 2] = fx * x / zs**2
    J[:, 1, 1] = -fy / zs
    J[:, 1, 2] = -fy * y / zs**2
    W = pose.rotation.T
    T = J @ W
    cov2 = T @ cov3 @ np.swapaxes(T, -1, -2)
    cov2[:, 0, 0] += COV2D_BLUR
    cov2[:, 1, 1] += COV2D_BLUR
    A, B, C = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det = A * C - B * B
    valid &= det > 0
    det = np.where(det > 0, det, 1.0)
    conic = np.stack([C / det, -B / det, A / det], axis=-1)
    mid = 0.5 * (A + C)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = RADIUS_SIGMAS * np.sqrt(lam)
    on_screen = (u + radius > 0) & (u - radius < intr.width) & (v + radius > 0) & (v - radius < intr.height)
    valid &= on_screen

    view = g.means - pose.translation
    vnorm = np.linalg.norm(view, axis=1, keepdims=True)
    vnorm = np.where(vnorm > 0, vnorm, 1.0)
    dirs = view / vnorm
    basis, dbasis = sh_basis(dirs, g.degree, with_grad=True)
    raw_rgb = np.einsum("nk,nkc->nc", basis, g.sh) + 0.5
    colors = np.maximum(raw_rgb, 0.0)
    cache = dict(
        gaussians=g, pose=pose, intr=intr, cov3=cov3, rot=rot, mfac=mfac, x=x, y=y, z=zs,
        T=T, basis=basis, dbasis=dbasis, dirs=dirs, vnorm=vnorm, raw_rgb=raw_rgb,
    )
    return Projections(
        mean2d=np.stack([u, v], axis=-1),
        cov2d=cov2,
        conic=conic,
        depth=z,
        radius=radius,
        valid=valid,
        colors=colors,
        opacities=sigmoid(g.opacity_logits),
        _cache=cache,
    )


def project_backward(proj: Projections, d_mean2d, d_conic, d_colors, d_opacities) -> dict[str, np.ndarray]:
    """Chain screen-space gradients back to the five Gaussian parameter groups."""
    c = proj._cache
    g: Gaussians = c["gaussians"]
    intr: Intrinsics = c["intr"]
    pose: Pose = c["pose"]
    fx, fy = intr.fx, intr.fy
    x, y, z = c["x"], c["y"], c["z"]
    mask = proj.valid.astype(np.float64)
    d_mean2d = d_mean2d * mask[:, None]
    d_conic = d_conic * mask[:, None]

    # conic = inverse(cov2d): dL/dcov = -conic G conic with G the symmetric conic gradient
    a, b, cc = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 2]
    Q = np.stack([np.stack([a, b], -1), np.stack([b, cc], -1)], -2)
    G = np.stack(
        [np.stack([d_conic[:, 0], 0.5 * d_conic[:, 1]], -1), np.stack([0.5 * d_conic[:, 1], d_conic[:, 2]], -1)],
        -2,
    )
    d_cov2 = -Q @ G @ Q
    T = c["T"]
    cov3 = c["cov3"]
    d_cov3 = np.swapaxes(T, -1, -2) @ d_cov2 @ T
    d_T = 2.0 * d_cov2 @ T @ cov3
    d_J = d_T @ pose.rotation

    gx = d_J[:, 0, 2] * fx / z**2 + d_mean2d[:, 0] * fx / z
    gy = -d_J[:, 1, 2] * fy / z**2 - d_mean2d[:, 1] * fy / z
    gz = (
        -d_J[:, 0, 0] * fx / z**2
        - 2 * d_J[:, 0, 2] * fx * x / z**3
        + d_J[:, 1, 1] * fy / z**2
        + 2 * d_J[:, 1, 2] * fy * y / z**3
        - d_mean2d[:, 0] * fx * x / z**2
        + d_mean2d[:, 1] * fy * y / z**2
    )
    d_pc = np.stack([gx, gy, -gz], axis=-1)
    d_means = d_pc @ pose.rotation.T

    mfac, rot = c["mfac"], c["rot"]
    d_m = 2.0 * d_cov3 @ mfac
    scales = np.exp(g.log_scales)
    d_scales = np.sum(d_m * rot, axis=1)
    d_log_scales = d_scales * scales
    d_rot = d_m * scales[:, None, :]
    d_quats = quat_rotation_backward(g.quats, d_rot)

    # colors: clamp at zero, then SH basis in the view direction
    d_raw = d_colors * (c["raw_rgb"] > 0)
    d_sh = c["basis"][:, :, None] * d_raw[:, None, :]
    d_dir = np.einsum("nkd,nkc,nc->nd", c["dbasis"], g.sh, d_raw)
    dirs = c["dirs"]
    d_view = (d_dir - dirs * np.sum(dirs * d_dir, axis=1, keepdims=True)) / c["vnorm"]
    d_means = d_means + d_view

    op = proj.opacities
    d_logits = d_opacities * op * (1.0 - op)
    return {
        "means": d_means,
        "log_scales": d_log_scales,
        "quats": d_quats,
        "opacity_logits": d_logits,
        "sh": d_sh,
    }
