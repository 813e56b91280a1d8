"""Loss, exact gradients, training loop, image rendering and point-cloud export."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, TrainingDivergedError
from ..geometry import DatasetManifest, Intrinsics, Pose, ray_aabb, rays_for_image
from ..metrics import psnr_from_mse
from ..optim import make_optimizer
from .encoding import EncodingConfig
from .field import (
    FieldParams,
    NetworkConfig,
    encode_dirs,
    encode_positions,
    hash_table_grad,
    init_field_params,
    net_backward,
    net_forward,
    zero_grads,
)
from .render import merge_samples, pdf_sample, stratified_sample, volume_render, volume_render_backward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NerfTrainConfig:
    learning_rate: float = 5e-3
    iterations: int = 2000
    rays_per_batch: int = 64
    n_coarse: int = 64
    n_fine: int = 192
    seed: int = 0
    background_color: tuple[float, float, float] = (0.0, 0.0, 0.0)
    optimizer: str = "adam"
    lr_decay: float = 0.1
    log_every: int = 100
    dtype: str = "float32"
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    render_chunk: int = 4096

    def __post_init__(self):
        for name in ("iterations", "log_every", "render_chunk"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        for name in ("rays_per_batch", "n_coarse", "n_fine"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive")


@dataclass
class RayBatch:
    origins: np.ndarray
    dirs: np.ndarray
    t_near: np.ndarray
    t_far: np.ndarray
    t_coarse: np.ndarray | None = None
    t_all: np.ndarray | None = None

    def __len__(self):
        return len(self.origins)


def _dtype(cfg: NerfTrainConfig):
    return np.float32 if cfg.dtype == "float32" else np.float64


def clip_rays(params: FieldParams, origins, dirs):
    """Intersect rays with the scene box; returns the hit batch and the hit mask."""
    tn, tf, hit = ray_aabb(origins, dirs, params.aabb[0], params.aabb[1])
    return RayBatch(origins[hit], dirs[hit], tn[hit], tf[hit]), hit


def _coarse_pass(params, rays: RayBatch, bg):
    pts = rays.origins[:, None, :] + rays.t_coarse[..., None] * rays.dirs[:, None, :]
    return _pass(params, rays, rays.t_coarse, pts, bg, "coarse")


def _pass(params, rays, ts, pts, bg, which):
    R, S = ts.shape
    flat_pts = pts.reshape(-1, 3)
    dirs = np.broadcast_to(rays.dirs[:, None, :], (R, S, 3)).reshape(-1, 3)
    pos_feat, lookup = encode_positions(params, flat_pts, which)
    sigma, rgb, cache = net_forward(params, pos_feat, encode_dirs(params, dirs), which)
    out = volume_render(sigma.reshape(R, S), rgb.reshape(R, S, 3), ts, rays.t_far, bg)
    return out, (cache, lookup)


def prepare_samples(params: FieldParams, rays: RayBatch, cfg: NerfTrainConfig, rng=None, return_coarse=False):
    """Fix coarse and hierarchical fine sample positions (treated as constants for gradients).

    With ``return_coarse`` the coarse pass is also returned so a training step can reuse it.
    """
    dtype = rays.origins.dtype
    t_coarse, edges = stratified_sample(rays.t_near, rays.t_far, cfg.n_coarse, rng)
    rays.t_coarse = t_coarse.astype(dtype)
    coarse = _coarse_pass(params, rays, np.asarray(cfg.background_color, dtype=dtype))
    t_fine = pdf_sample(coarse[0].weights, edges, cfg.n_fine, rng)
    rays.t_all = merge_samples(t_coarse, t_fine).astype(dtype)
    return (rays, coarse) if return_coarse else rays


def _loss_and_grad(params: FieldParams, rays: RayBatch, targets, bg, need_grad=True, coarse=None):
    bg = np.asarray(bg, dtype=rays.origins.dtype)
    n = targets.size
    fine_pts = rays.origins[:, None, :] + rays.t_all[..., None] * rays.dirs[:, None, :]
    passes = {
        "coarse": coarse if coarse is not None else _coarse_pass(params, rays, bg),
        "fine": _pass(params, rays, rays.t_all, fine_pts, bg, "fine"),
    }
    loss = 0.0
    renders = {}
    grads = zero_grads(params) if need_grad else None
    for which, (out, (cache, lookup)) in passes.items():
        resid = out.rgb - targets
        loss += float(np.sum(resid * resid)) / n
        renders[which] = out.rgb
        if need_grad:
            d_sigma, d_col = volume_render_backward(out, 2.0 * resid / n)
            d_feat = net_backward(params, cache, d_sigma.reshape(-1), d_col.reshape(-1, 3), which, grads)
            if lookup is not None:
                grads[f"{which}.hash_table"] += hash_table_grad(params, d_feat, lookup, which)
    return loss, grads, renders


def nerf_loss(params: FieldParams, rays: RayBatch, targets, background=(0.0, 0.0, 0.0)) -> float:
    """Coarse MSE plus fine MSE, each averaged over rays and channels."""
    if len(rays) == 0:
        raise DomainError("empty ray batch")
    return _loss_and_grad(params, rays, np.asarray(targets), background, need_grad=False)[0]


def nerf_grad(params: FieldParams, rays: RayBatch, targets, background=(0.0, 0.0, 0.0)) -> dict:
    if len(rays) == 0:
        raise DomainError("empty ray batch")
    return _loss_and_grad(params, rays, np.asarray(targets), background)[1]


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)
    train_seconds: float = 0.0

    def to_csv(self) -> str:
        lines = ["iteration,loss,psnr"]
        lines += [f"{it},{loss!r},{p!r}" for it, loss, p in self.rows]
        return "\n".join(lines) + "\n"


def gather_training_rays(params: FieldParams, manifest: DatasetManifest, images, dtype=np.float64):
    origins, dirs, colors = [], [], []
    for fr, img in zip(manifest.frames, images):
        o, d = rays_for_image(manifest.intrinsics, fr.pose)
        origins.append(o.reshape(-1, 3))
        dirs.append(d.reshape(-1, 3))
        colors.append(np.asarray(img, dtype=np.float64)[..., :3].reshape(-1, 3))
    o, d, c = np.concatenate(origins), np.concatenate(dirs), np.concatenate(colors)
    rays, hit = clip_rays(params, o, d)
    rays.origins = rays.origins.astype(dtype)
    rays.dirs = rays.dirs.astype(dtype)
    return rays, c[hit].astype(dtype)


def init_nerf(manifest: DatasetManifest, cfg: NerfTrainConfig) -> FieldParams:
    aabb = manifest.aabb or ((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    rng = np.random.default_rng(cfg.seed)
    return init_field_params(cfg.encoding, cfg.network, aabb, rng, dtype=_dtype(cfg))


def nerf_train(manifest: DatasetManifest, images, cfg: NerfTrainConfig, params: FieldParams | None = None):
    """Adam (or SGD) on random ray batches; returns ``(params, TrainLog)``."""
    if len(manifest) < 2:
        raise DomainError("NeRF training needs at least two views")
    start = time.perf_counter()
    dtype = _dtype(cfg)
    params = init_nerf(manifest, cfg) if params is None else params
    rng = np.random.default_rng(cfg.seed + 1)
    all_rays, all_targets = gather_training_rays(params, manifest, images, dtype)
    opt = make_optimizer(cfg.optimizer, cfg.learning_rate)
    train_log = TrainLog()
    bg = np.asarray(cfg.background_color, dtype=dtype)
    for it in range(1, cfg.iterations + 1):
        sel = rng.integers(0, len(all_rays), size=cfg.rays_per_batch)
        batch = RayBatch(
            all_rays.origins[sel], all_rays.dirs[sel], all_rays.t_near[sel].astype(dtype), all_rays.t_far[sel].astype(dtype)
        )
        _, coarse = prepare_samples(params, batch, cfg, rng, return_coarse=True)
        loss, grads, renders = _loss_and_grad(params, batch, all_targets[sel], bg, coarse=coarse)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"NeRF loss became non-finite at iteration {it}", iteration=it)
        decay = cfg.lr_decay ** (it / max(1, cfg.iterations))
        opt.step(params.arrays, grads, scale=decay)
        if cfg.log_every and (it % cfg.log_every == 0 or it == cfg.iterations):
            fine_mse = float(np.mean((renders["fine"] - all_targets[sel]) ** 2))
            train_log.rows.append((it, loss, psnr_from_mse(fine_mse)))
            log.debug("nerf it %d loss %.5f", it, loss)
    train_log.train_seconds = time.perf_counter() - start
    return params, train_log


def nerf_render_rays(params: FieldParams, origins, dirs, cfg: NerfTrainConfig, which="fine"):
    """Deterministic coarse+fine render of arbitrary rays; misses get the background."""
    dtype = params.arrays[next(iter(params.arrays))].dtype
    bg = np.asarray(cfg.background_color, dtype=np.float64)
    out = np.broadcast_to(bg, (len(origins), 3)).copy()
    rays, hit = clip_rays(params, origins, dirs)
    hit_idx = np.flatnonzero(hit)
    chunk = max(1, cfg.render_chunk)
    for s in range(0, len(rays), chunk):
        sub = RayBatch(
            rays.origins[s : s + chunk].astype(dtype),
            rays.dirs[s : s + chunk].astype(dtype),
            rays.t_near[s : s + chunk],
            rays.t_far[s : s + chunk],
        )
        prepare_samples(params, sub, cfg, None)
        if which == "coarse":
            res, _ = _coarse_pass(params, sub, bg.astype(dtype))
        else:
            pts = sub.origins[:, None, :] + sub.t_all[..., None] * sub.dirs[:, None, :]
            res, _ = _pass(params, sub, sub.t_all, pts, bg.astype(dtype), "fine")
        out[hit_idx[s : s + chunk]] = res.rgb
    return out


def nerf_render_image(params: FieldParams, intr: Intrinsics, pose: Pose, cfg: NerfTrainConfig) -> np.ndarray:
    o, d = rays_for_image(intr, pose)
    rgb = nerf_render_rays(params, o.reshape(-1, 3), d.reshape(-1, 3), cfg)
    return rgb.reshape(intr.height, intr.width, 3)


EXPORT_VIEW_DIR = (0.0, 0.0, -1.0)  # looking down the world up axis


def nerf_export_pointcloud(params: FieldParams, grid_res: int, sigma_threshold: float, which="fine"):
    """Lattice cell centers with density above threshold, colored as seen from above."""
    lo = np.asarray(params.aabb[0])
    hi = np.asarray(params.aabb[1])
    ax = (np.arange(grid_res) + 0.5) / grid_res
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = lo + g * (hi - lo)
    dtype = params.arrays[next(iter(params.arrays))].dtype
    keep_xyz, keep_rgb = [], []
    for s in range(0, len(pts), 32768):
        p = pts[s : s + 32768].astype(dtype)
        d = np.broadcast_to(np.asarray(EXPORT_VIEW_DIR, dtype=dtype), p.shape)
        feat, _ = encode_positions(params, p, which)
        sigma, rgb, _ = net_forward(params, feat, encode_dirs(params, d), which)
        m = sigma > sigma_threshold
        keep_xyz.append(pts[s : s + 32768][m])
        keep_rgb.append(rgb[m].astype(np.float64))
    return np.concatenate(keep_xyz), np.concatenate(keep_rgb)
