"""Real spherical harmonics up to degree 3 and their direction derivatives."""

from __future__ import annotations

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def n_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def sh_basis(dirs: np.ndarray, degree: int, with_grad: bool = False):
    """Basis values (N, K) and optionally d(basis)/d(dir) as (N, K, 3)."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    n = len(dirs)
    one, zero = np.ones(n), np.zeros(n)
    vals = [SH_C0 * one]
    grads = [np.stack([zero, zero, zero], -1)]
    if degree >= 1:
        vals += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
        grads += [
            np.stack([zero, -SH_C1 * one, zero], -1),
            np.stack([zero, zero, SH_C1 * one], -1),
            np.stack([-SH_C1 * one, zero, zero], -1),
        ]
    if degree >= 2:
        c = SH_C2
        xx, yy, zz = x * x, y * y, z * z
        vals += [c[0] * x * y, c[1] * y * z, c[2] * (2 * zz - xx - yy), c[3] * x * z, c[4] * (xx - yy)]
        grads += [
            np.stack([c[0] * y, c[0] * x, zero], -1),
            np.stack([zero, c[1] * z, c[1] * y], -1),
            np.stack([-2 * c[2] * x, -2 * c[2] * y, 4 * c[2] * z], -1),
            np.stack([c[3] * z, zero, c[3] * x], -1),
            np.stack([2 * c[4] * x, -2 * c[4] * y, zero], -1),
        ]
    if degree >= 3:
        c = SH_C3
        xx, yy, zz = x * x, y * y, z * z
        vals += [
            c[0] * y * (3 * xx - yy),
            c[1] * x * y * z,
            c[2] * y * (4 * zz - xx - yy),
            c[3] * z * (2 * zz - 3 * xx - 3 * yy),
            c[4] * x * (4 * zz - xx - yy),
            c[5] * z * (xx - yy),
            c[6] * x * (xx - 3 * yy),
        ]
        grads += [
            np.stack([c[0] * 6 * x * y, c[0] * (3 * xx - 3 * yy), zero], -1),
            np.stack([c[1] * y * z, c[1] * x * z, c[1] * x * y], -1),
            np.stack([-2 * c[2] * x * y, c[2] * (4 * zz - xx - 3 * yy), 8 * c[2] * y * z], -1),
            np.stack([-6 * c[3] * x * z, -6 * c[3] * y * z, c[3] * (6 * zz - 3 * xx - 3 * yy)], -1),
            np.stack([c[4] * (4 * zz - 3 * xx - yy), -2 * c[4] * x * y, 8 * c[4] * x * z], -1),
            np.stack([2 * c[5] * x * z, -2 * c[5] * y * z, c[5] * (xx - yy)], -1),
            np.stack([c[6] * (3 * xx - 3 * yy), -6 * c[6] * x * y, zero], -1),
        ]
    basis = np.stack(vals, axis=-1)
    if not with_grad:
        return basis
    return basis, np.stack(grads, axis=1)


def sh_to_color(sh: np.ndarray, view_dir: np.ndarray, clamp_display: bool = True) -> np.ndarray:
    """Evaluate coefficients ``sh`` (K, 3) or (N, K, 3) along unit ``view_dir``; offset 0.5, clamped."""
    single = sh.ndim == 2
    sh = sh[None] if single else sh
    dirs = np.broadcast_to(np.atleast_2d(view_dir), (len(sh), 3))
    degree = int(round(np.sqrt(sh.shape[1]))) - 1
    rgb = np.einsum("nk,nkc->nc", sh_basis(dirs, degree), sh) + 0.5
    rgb = np.maximum(rgb, 0.0)
    if clamp_display:
        rgb = np.minimum(rgb, 1.0)
    return rgb[0] if single else rgb
