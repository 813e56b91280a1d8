"""Tile-binned, depth-sorted front-to-back alpha blending and its reverse pass.

Per pixel, Gaussians are visited nearest first::

    alpha_i = min(0.99, opacity_i * exp(-0.5 d^T conic_i d))
    C += T * alpha_i * c_i ;  T *= 1 - alpha_i

A splat is skipped when alpha < 1/255 or the pixel lies beyond three standard
deviations of its footprint; traversal stops once T drops below 1e-4.
``rasterize_naive`` runs the same rule with a single global sort and an
explicit per-splat loop, and serves as the oracle for the tiled path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .project import RADIUS_SIGMAS, Projections

TILE_SIZE = 16
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_STOP = 1e-4
MAX_POWER = 0.5 * RADIUS_SIGMAS**2


@dataclass
class TileGrid:
    width: int
    height: int
    tile_size: int
    tiles_x: int
    tiles_y: int
    offsets: np.ndarray  # (tiles + 1,) CSR offsets into gaussian_ids
    gaussian_ids: np.ndarray
    depths: np.ndarray

    def tile_list(self, tx: int, ty: int) -> list[tuple[float, int]]:
        t = ty * self.tiles_x + tx
        s, e = self.offsets[t], self.offsets[t + 1]
        return list(zip(self.depths[s:e].tolist(), self.gaussian_ids[s:e].tolist()))

    def tile_ids(self, t: int) -> np.ndarray:
        return self.gaussian_ids[self.offsets[t] : self.offsets[t + 1]]


def bin_and_sort(proj: Projections, width: int, height: int, tile_size: int = TILE_SIZE) -> TileGrid:
    """Insert each retained splat into every tile its radius square touches, nearest first.

    Equal depths fall back to the Gaussian index, so the result is a pure function of the input.
    """
    tiles_x = -(-width // tile_size)
    tiles_y = -(-height // tile_size)
    idx = proj.indices
    u, v = proj.mean2d[idx, 0], proj.mean2d[idx, 1]
    r = proj.radius[idx]
    x0 = np.clip(np.floor((u - r) / tile_size), 0, tiles_x - 1).astype(np.int64)
    x1 = np.clip(np.floor((u + r) / tile_size), 0, tiles_x - 1).astype(np.int64)
    y0 = np.clip(np.floor((v - r) / tile_size), 0, tiles_y - 1).astype(np.int64)
    y1 = np.clip(np.floor((v + r) / tile_size), 0, tiles_y - 1).astype(np.int64)
    nx, ny = x1 - x0 + 1, y1 - y0 + 1
    counts = nx * ny
    owner = np.repeat(np.arange(len(idx)), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(counts.sum()) - start
    tx = x0[owner] + local % nx[owner]
    ty = y0[owner] + local // nx[owner]
    tile = ty * tiles_x + tx
    gid = idx[owner]
    depth = proj.depth[gid]
    order = np.lexsort((gid, depth, tile))
    tile, gid, depth = tile[order], gid[order], depth[order]
    offsets = np.searchsorted(tile, np.arange(tiles_x * tiles_y + 1))
    return TileGrid(width, height, tile_size, tiles_x, tiles_y, offsets, gid, depth)


@dataclass
class TileRecord:
    ys: np.ndarray
    xs: np.ndarray
    ids: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    gauss: np.ndarray  # exp(power)
    alpha: np.ndarray  # effective alpha (0 where skipped or past the stopping point)
    grad_mask: np.ndarray  # alpha depends smoothly on parameters here
    trans: np.ndarray  # transmittance before each splat
    t_final: np.ndarray


@dataclass
class RasterResult:
    image: np.ndarray
    final_transmittance: np.ndarray
    n_contrib: np.ndarray
    records: list[TileRecord] = field(default_factory=list)
    background: np.ndarray | None = None

    def contributors(self, px: int, py: int) -> list[tuple[int, float, float]]:
        """Blend sequence at one pixel: ``(gaussian index, alpha, transmittance before)``."""
        for rec in self.records:
            hit = np.flatnonzero((rec.xs == px) & (rec.ys == py))
            if len(hit):
                p = hit[0]
                use = rec.alpha[p] > 0
                return list(zip(rec.ids[use].tolist(), rec.alpha[p, use].tolist(), rec.trans[p, use].tolist()))
        return []


def _blend_tile(proj: Projections, ids, xs, ys, bg):
    mu = proj.mean2d[ids]
    con = proj.conic[ids]
    dx = (xs + 0.5)[:, None] - mu[None, :, 0]
    dy = (ys + 0.5)[:, None] - mu[None, :, 1]
    power = -0.5 * (con[:, 0] * dx * dx + con[:, 2] * dy * dy) - con[:, 1] * dx * dy
    gauss = np.exp(np.minimum(power, 0.0))
    raw = proj.opacities[ids] * gauss
    alpha = np.minimum(ALPHA_MAX, raw)
    keep = (raw >= ALPHA_MIN) & (power >= -MAX_POWER) & (power <= 0)
    alpha = np.where(keep, alpha, 0.0)
    surv = np.cumprod(1.0 - alpha, axis=1)
    trans = np.concatenate([np.ones((len(xs), 1)), surv[:, :-1]], axis=1)
    active = trans >= T_STOP
    alpha = np.where(active, alpha, 0.0)
    w = trans * alpha
    t_final = np.prod(1.0 - alpha, axis=1)
    rgb = w @ proj.colors[ids] + t_final[:, None] * bg
    grad_mask = keep & active & (raw < ALPHA_MAX)
    return rgb, TileRecord(ys, xs, ids, dx, dy, gauss, alpha, grad_mask, trans, t_final)


def rasterize(grid: TileGrid, proj: Projections, background=(0.0, 0.0, 0.0)) -> RasterResult:
    bg = np.asarray(background, dtype=np.float64)
    H, W, ts = grid.height, grid.width, grid.tile_size
    image = np.broadcast_to(bg, (H, W, 3)).copy()
    final_t = np.ones((H, W))
    n_contrib = np.zeros((H, W), dtype=np.int64)
    records = []
    for t in range(grid.tiles_x * grid.tiles_y):
        ids = grid.tile_ids(t)
        if len(ids) == 0:
            continue
        ty, tx = divmod(t, grid.tiles_x)
        yy, xx = np.mgrid[ty * ts : min(H, (ty + 1) * ts), tx * ts : min(W, (tx + 1) * ts)]
        ys, xs = yy.ravel(), xx.ravel()
        rgb, rec = _blend_tile(proj, ids, xs, ys, bg)
        image[ys, xs] = rgb
        final_t[ys, xs] = rec.t_final
        n_contrib[ys, xs] = np.count_nonzero(rec.alpha > 0, axis=1)
        records.append(rec)
    return RasterResult(image, final_t, n_contrib, records, bg)


def rasterize_naive(proj: Projections, width: int, height: int, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Reference blend: every pixel visits every retained splat in one global depth order."""
    bg = np.asarray(background, dtype=np.float64)
    idx = proj.indices
    order = idx[np.lexsort((idx, proj.depth[idx]))]
    yy, xx = np.mgrid[0:height, 0:width]
    px, py = xx.ravel() + 0.5, yy.ravel() + 0.5
    color = np.zeros((px.size, 3))
    T = np.ones(px.size)
    for i in order:
        live = T >= T_STOP
        if not live.any():
            break
        a, b, c = proj.conic[i]
        dx, dy = px - proj.mean2d[i, 0], py - proj.mean2d[i, 1]
        power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
        raw = proj.opacities[i] * np.exp(np.minimum(power, 0.0))
        use = live & (raw >= ALPHA_MIN) & (power >= -MAX_POWER) & (power <= 0)
        alpha = np.where(use, np.minimum(ALPHA_MAX, raw), 0.0)
        color += (T * alpha)[:, None] * proj.colors[i]
        T = T * (1.0 - alpha)
    color += T[:, None] * bg
    return color.reshape(height, width, 3)


def rasterize_backward(result: RasterResult, proj: Projections, d_image: np.ndarray):
    """Screen-space gradients ``(d_mean2d, d_conic, d_colors, d_opacities)`` for an image gradient."""
    n = len(proj)
    d_mean2d = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))
    d_colors = np.zeros((n, 3))
    d_opac = np.zeros(n)
    bg = result.background
    for rec in result.records:
        ids = rec.ids
        g = d_image[rec.ys, rec.xs]  # (P, 3)
        cols = proj.colors[ids]
        w = rec.trans * rec.alpha
        d_colors[ids] += w.T @ g
        cg = g @ cols.T  # (P, K) c_k . g_p
        wc = w * cg
        suffix = np.cumsum(wc[:, ::-1], axis=1)[:, ::-1] - wc + (rec.t_final * (g @ bg))[:, None]
        one_minus = np.where(rec.grad_mask, 1.0 - rec.alpha, 1.0)
        d_alpha = np.where(rec.grad_mask, rec.trans * cg - suffix / one_minus, 0.0)
        op = proj.opacities[ids]
        d_opac[ids] += np.sum(d_alpha * rec.gauss, axis=0)
        d_power = d_alpha * rec.gauss * op[None, :]
        con = proj.conic[ids]
        dx, dy = rec.dx, rec.dy
        d_conic[ids, 0] += np.sum(d_power * (-0.5 * dx * dx), axis=0)
        d_conic[ids, 1] += np.sum(d_power * (-dx * dy), axis=0)
        d_conic[ids, 2] += np.sum(d_power * (-0.5 * dy * dy), axis=0)
        # d = pixel - mean, so d(power)/d(mean) = conic @ d
        d_mean2d[ids, 0] += np.sum(d_power * (con[:, 0] * dx + con[:, 1] * dy), axis=0)
        d_mean2d[ids, 1] += np.sum(d_power * (con[:, 1] * dx + con[:, 2] * dy), axis=0)
    return d_mean2d, d_conic, d_colors, d_opac
