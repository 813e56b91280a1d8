"""Adaptive density control: split oversized splats, clone small ones, prune transparent ones."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DegenerateSceneError
from .gaussians import Gaussians, covariance_3d


@dataclass(frozen=True)
class DensifyConfig:
    """``grad_threshold`` is in screen-space pixels per unit loss, averaged over the views
    a splat was visible in; ``scale_split_threshold`` is in world units."""

    grad_threshold: float = 1e-4
    scale_split_threshold: float = 0.1
    prune_epsilon: float = 0.005
    interval: int = 100
    split_factor: float = 1.6
    warmup: int = 100
    clone_step: float = 0.01
    max_gaussians: int = 4000

    def __post_init__(self):
        for name in ("grad_threshold", "scale_split_threshold", "prune_epsilon", "interval", "split_factor", "clone_step"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"densify {name} must be positive")
        if self.warmup < 0 or self.max_gaussians < 1:
            raise ConfigError("densify warmup must be >= 0 and max_gaussians >= 1")


@dataclass
class GradStats:
    """Running sum of screen-space positional gradient norms, tracked per splat."""

    total: np.ndarray
    count: np.ndarray
    direction: np.ndarray  # summed world-space gradient of the mean, for clone offsets

    @classmethod
    def zeros(cls, n: int) -> "GradStats":
        return cls(np.zeros(n), np.zeros(n), np.zeros((n, 3)))

    def add(self, grad2d_norm, visible, d_means) -> None:
        self.total += np.where(visible, grad2d_norm, 0.0)
        self.count += visible
        self.direction += np.where(visible[:, None], d_means, 0.0)

    def mean(self) -> np.ndarray:
        return np.where(self.count > 0, self.total / np.maximum(self.count, 1), 0.0)


def densify_and_prune(g: Gaussians, grads, cfg: DensifyConfig, rng: np.random.Generator, directions=None):
    """One densify pass. ``grads`` holds the per-splat mean positional gradient magnitude.

    Returns ``(gaussians, source)`` where ``source[i]`` is the index of the parent of output
    splat ``i``, which lets optimizer state follow the splats.
    """
    n = len(g)
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != (n,):
        raise ConfigError(f"expected {n} gradient entries, got shape {grads.shape}")
    hot = grads >= cfg.grad_threshold
    big = g.scales.max(axis=1) > cfg.scale_split_threshold
    room = max(0, cfg.max_gaussians - n)
    grow = np.flatnonzero(hot)
    if len(grow) > room:
        grow = grow[np.argsort(-grads[grow], kind="stable")[:room]]
        grow.sort()
    do_split = np.zeros(n, dtype=bool)
    do_clone = np.zeros(n, dtype=bool)
    do_split[grow[big[grow]]] = True
    do_clone[grow[~big[grow]]] = True

    keep_idx = np.flatnonzero(~do_split)
    parts = [g.take(keep_idx)]
    source = [keep_idx]

    split_idx = np.flatnonzero(do_split)
    if len(split_idx):
        parent = g.take(split_idx)
        _, _, m = covariance_3d(parent, with_factors=True)
        children = []
        for _ in range(2):
            z = rng.standard_normal((len(split_idx), 3))
            c = parent.copy()
            c.means = parent.means + np.einsum("nij,nj->ni", m, z)
            c.log_scales = parent.log_scales - math.log(cfg.split_factor)
            children.append(c)
            source.append(split_idx)
        parts += children

    clone_idx = np.flatnonzero(do_clone)
    if len(clone_idx):
        c = g.take(clone_idx).copy()
        if directions is not None:
            d = np.asarray(directions, dtype=np.float64)[clone_idx]
            norm = np.linalg.norm(d, axis=1, keepdims=True)
            # step against the loss gradient, i.e. toward the under-reconstructed region
            c.means = c.means - cfg.clone_step * np.where(norm > 0, d / np.where(norm > 0, norm, 1.0), 0.0)
        parts.append(c)
        source.append(clone_idx)

    out = Gaussians.concat(parts)
    src = np.concatenate(source)
    alive = out.opacities >= cfg.prune_epsilon
    out, src = out.take(np.flatnonzero(alive)), src[alive]
    if len(out) == 0:
        raise DegenerateSceneError("densify/prune removed every Gaussian")
    return out, src
