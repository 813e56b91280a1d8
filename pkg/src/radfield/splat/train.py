"""Splat optimization loop: one view per step, per-group learning rates, periodic densification."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DomainError, TrainingDivergedError
from ..geometry import DatasetManifest
from ..metrics import psnr
from ..optim import make_optimizer
from .densify import DensifyConfig, GradStats, densify_and_prune
from .gaussians import PARAM_GROUPS, Gaussians, init_from_points
from .loss import render_splats, splat_grad

log = logging.getLogger(__name__)

DEFAULT_LR = {
    "means": 1.6e-3,
    "log_scales": 1.5e-2,
    "quats": 3e-3,
    "opacity_logits": 5e-2,
    "sh": 7.5e-3,
}


@dataclass(frozen=True)
class SplatTrainConfig:
    learning_rates: dict = field(default_factory=lambda: dict(DEFAULT_LR))
    iterations: int = 1500
    lam: float = 0.2
    seed: int = 0
    background_color: tuple[float, float, float] = (0.0, 0.0, 0.0)
    optimizer: str = "adam"
    momentum: float = 0.9
    adam_eps: float = 1e-15  # the loss is a per-pixel mean, so raw gradients are tiny
    mean_lr_final: float = 0.01  # fraction of the initial mean learning rate reached at the end
    other_lr_final: float = 1.0  # same, for the remaining groups
    sh_degree: int = 3
    densify: DensifyConfig = field(default_factory=DensifyConfig)
    densify_until: float = 0.7  # fraction of the run after which topology is frozen
    log_every: int = 100

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        if self.iterations < 0 or self.log_every < 0:
            raise ConfigError("iterations and log_every must be non-negative")
        if not 0 <= self.sh_degree <= 3:
            raise ConfigError("sh_degree must be between 0 and 3")
        missing = set(PARAM_GROUPS) - set(self.learning_rates)
        if missing:
            raise ConfigError(f"learning rate missing for {sorted(missing)}")
        if not (0 < self.mean_lr_final <= 1 and 0 < self.other_lr_final <= 1):
            raise ConfigError("final learning-rate fractions must be in (0, 1]")


@dataclass
class SplatTrainLog:
    rows: list[tuple[int, float, float, int]] = field(default_factory=list)
    train_seconds: float = 0.0

    def to_csv(self) -> str:
        lines = ["iteration,loss,psnr,splats"]
        lines += [f"{it},{loss!r},{p!r},{n}" for it, loss, p, n in self.rows]
        return "\n".join(lines) + "\n"


def splat_train(manifest: DatasetManifest, images, points, cfg: SplatTrainConfig, gaussians: Gaussians | None = None):
    """Optimize Gaussians initialized from ``points = (xyz, rgb)``; returns ``(gaussians, log)``."""
    if len(manifest) < 2:
        raise DomainError("splat training needs at least two views")
    if len(images) != len(manifest):
        raise DomainError("one image per manifest frame is required")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    if gaussians is None:
        xyz, rgb = points
        g = init_from_points(xyz, rgb, sh_degree=cfg.sh_degree)
    else:
        g = gaussians.copy()
    targets = [np.asarray(im, dtype=np.float64)[..., :3] for im in images]
    intr = manifest.intrinsics
    lr = dict(cfg.learning_rates)
    opt = make_optimizer(cfg.optimizer, lr, cfg.momentum, cfg.adam_eps)
    stats = GradStats.zeros(len(g))
    dcfg = cfg.densify
    last_densify = int(cfg.densify_until * cfg.iterations)
    order: list[int] = []
    train_log = SplatTrainLog()
    for it in range(1, cfg.iterations + 1):
        if not order:
            order = rng.permutation(len(manifest)).tolist()
        v = order.pop()
        pose = manifest.frames[v].pose
        sg = splat_grad(g, pose, intr, targets[v], cfg.lam, cfg.background_color)
        if not math.isfinite(sg.loss) or not all(np.all(np.isfinite(x)) for x in sg.grads.values()):
            raise TrainingDivergedError(f"splat loss became non-finite at iteration {it}", iteration=it)
        stats.add(sg.grad2d_norm, sg.visible, sg.grads["means"])
        frac = it / max(1, cfg.iterations)
        for name in PARAM_GROUPS:
            final = cfg.mean_lr_final if name == "means" else cfg.other_lr_final
            lr[name] = cfg.learning_rates[name] * final**frac
        opt.step(g.arrays(), sg.grads)
        g.normalize_quats()
        if it > dcfg.warmup and it % dcfg.interval == 0 and it <= last_densify:
            g, src = densify_and_prune(g, stats.mean(), dcfg, rng, stats.direction)
            for name in PARAM_GROUPS:
                opt.remap(name, src)
            stats = GradStats.zeros(len(g))
        if cfg.log_every and (it % cfg.log_every == 0 or it == cfg.iterations):
            train_log.rows.append((it, sg.loss, psnr(np.clip(sg.render.image, 0, 1), targets[v]), len(g)))
            log.debug("splat it %d loss %.5f splats %d", it, sg.loss, len(g))
    train_log.train_seconds = time.perf_counter() - start
    return g, train_log


def splat_render_image(g: Gaussians, intr, pose, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    result, _ = render_splats(g, pose, intr, background)
    return result.image
