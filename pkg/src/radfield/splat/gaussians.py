"""Gaussian primitives stored as parallel arrays, and their covariance factorization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import DomainError
from .sh import SH_C0, n_coeffs

PARAM_GROUPS = ("means", "log_scales", "quats", "opacity_logits", "sh")
INIT_OPACITY = 0.1


def logit(p):
    return np.log(p / (1.0 - p))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class Gaussians:
    """``means`` (N,3), ``log_scales`` (N,3), ``quats`` (N,4) as w,x,y,z,
    ``opacity_logits`` (N,), ``sh`` (N, (degree+1)^2, 3)."""

    means: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray

    def __len__(self):
        return len(self.means)

    @property
    def degree(self) -> int:
        return int(round(math.sqrt(self.sh.shape[1]))) - 1

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def arrays(self) -> dict[str, np.ndarray]:
        return {g: getattr(self, g) for g in PARAM_GROUPS}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "Gaussians":
        return cls(*(np.asarray(arrays[g], dtype=np.float64) for g in PARAM_GROUPS))

    def copy(self) -> "Gaussians":
        return Gaussians(*(getattr(self, g).copy() for g in PARAM_GROUPS))

    def take(self, idx) -> "Gaussians":
        return Gaussians(*(getattr(self, g)[idx] for g in PARAM_GROUPS))

    def param_count(self) -> int:
        return int(sum(getattr(self, g).size for g in PARAM_GROUPS))

    @staticmethod
    def concat(parts) -> "Gaussians":
        return Gaussians(*(np.concatenate([getattr(p, g) for p in parts]) for g in PARAM_GROUPS))

    def normalize_quats(self) -> None:
        self.quats /= np.linalg.norm(self.quats, axis=1, keepdims=True)


def init_from_points(xyz, rgb, sh_degree: int = 1, default_scale: float = 0.05) -> Gaussians:
    """One isotropic Gaussian per point, sized by the mean distance to its three nearest neighbors."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    rgb = np.asarray(rgb, dtype=np.float64).reshape(-1, 3)
    n = len(xyz)
    if n == 0:
        raise DomainError("cannot initialize from an empty point set")
    if n > 1:
        k = min(3, n - 1)
        dist, _ = cKDTree(xyz).query(xyz, k=k + 1)
        scale = np.mean(np.atleast_2d(dist.reshape(n, -1))[:, 1:], axis=1)
        scale = np.where(scale > 0, scale, default_scale)
    else:
        scale = np.array([default_scale])
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    sh = np.zeros((n, n_coeffs(sh_degree), 3))
    sh[:, 0, :] = (rgb - 0.5) / SH_C0
    return Gaussians(
        means=xyz.copy(),
        log_scales=np.repeat(np.log(scale)[:, None], 3, axis=1),
        quats=quats,
        opacity_logits=np.full(n, logit(INIT_OPACITY)),
        sh=sh,
    )


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (N,3,3) from quaternions (N,4), normalized first."""
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.stack(
        [
            1 - 2 * (y * y + z * z),
            2 * (x * y - w * z),
            2 * (x * z + w * y),
            2 * (x * y + w * z),
            1 - 2 * (x * x + z * z),
            2 * (y * z - w * x),
            2 * (x * z - w * y),
            2 * (y * z + w * x),
            1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return r.reshape(q.shape[:-1] + (3, 3))


def quat_rotation_backward(q: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    """Gradient with respect to raw quaternions given dL/dR, through the normalization."""
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    g = d_rot.reshape(-1, 9)
    # rows: dR_flat/d(w, x, y, z)
    dw = np.stack([0 * w, -2 * z, 2 * y, 2 * z, 0 * w, -2 * x, -2 * y, 2 * x, 0 * w], -1)
    dx = np.stack([0 * w, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x], -1)
    dy = np.stack([-4 * y, 2 * x, 2 * w, 2 * x, 0 * w, 2 * z, -2 * w, 2 * z, -4 * y], -1)
    dz = np.stack([-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0 * w], -1)
    gq = np.stack([(g * dw).sum(-1), (g * dx).sum(-1), (g * dy).sum(-1), (g * dz).sum(-1)], -1)
    return (gq - qn * np.sum(gq * qn, axis=-1, keepdims=True)) / norm


def covariance_3d(gaussians: Gaussians, with_factors: bool = False):
    """``R diag(s^2) R^T`` for every Gaussian; symmetric positive definite by construction."""
    rot = quat_to_rotation(gaussians.quats)
    m = rot * np.exp(gaussians.log_scales)[:, None, :]
    cov = m @ np.swapaxes(m, -1, -2)
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    return (cov, rot, m) if with_factors else cov
