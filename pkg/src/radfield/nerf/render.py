"""Ray sampling and emission-absorption compositing, batched over rays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError


@dataclass
class RenderOutput:
    rgb: np.ndarray  # (R, 3)
    weights: np.ndarray  # (R, S)
    transmittance: np.ndarray  # (R,) after the last sample
    depth: np.ndarray  # (R,)
    alphas: np.ndarray
    trans: np.ndarray  # (R, S) transmittance before each sample
    deltas: np.ndarray
    colors: np.ndarray
    background: np.ndarray


def stratified_sample(t_near, t_far, n: int, rng: np.random.Generator | None = None):
    """One sample per equal-width bin of ``[t_near, t_far]``. Returns ``(t (R, n), edges (R, n+1))``.

    Without ``rng`` the bin midpoints are returned.
    """
    if n < 1:
        raise DomainError("need at least one sample per ray")
    t_near = np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    u = np.linspace(0.0, 1.0, n + 1)
    edges = t_near[:, None] + (t_far - t_near)[:, None] * u
    jitter = np.full((len(t_near), n), 0.5) if rng is None else rng.random((len(t_near), n))
    t = edges[:, :-1] + (edges[:, 1:] - edges[:, :-1]) * jitter
    return t, edges


def sample_deltas(ts: np.ndarray, t_far) -> np.ndarray:
    t_far = np.broadcast_to(np.asarray(t_far, dtype=ts.dtype), ts.shape[:-1])
    return np.concatenate([np.diff(ts, axis=-1), (t_far - ts[..., -1])[..., None]], axis=-1)


def volume_render(sigmas, colors, ts, t_far, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """``alpha_i = 1 - exp(-sigma_i delta_i)``, ``w_i = T_i alpha_i``, plus background times final T."""
    sigmas = np.atleast_2d(sigmas)
    colors = np.asarray(colors)
    colors = colors.reshape(sigmas.shape + (3,))
    ts = np.atleast_2d(ts)
    if np.any(np.diff(ts, axis=-1) < 0):
        raise DomainError("sample distances must be sorted ascending")
    if np.any(sigmas < 0):
        raise DomainError("density must be non-negative")
    bg = np.asarray(background, dtype=colors.dtype)
    deltas = sample_deltas(ts, t_far)
    with np.errstate(invalid="ignore"):
        tau = sigmas * deltas
    tau = np.where(np.isnan(tau), 0.0, tau)
    alphas = -np.expm1(-tau)
    surv = np.exp(-np.cumsum(tau, axis=-1))
    trans = np.concatenate([np.ones_like(surv[:, :1]), surv[:, :-1]], axis=-1)
    weights = trans * alphas
    t_final = surv[:, -1]
    rgb = np.einsum("rs,rsc->rc", weights, colors) + t_final[:, None] * bg
    depth = np.sum(weights * ts, axis=-1)
    return RenderOutput(rgb, weights, t_final, depth, alphas, trans, deltas, colors, bg)


def volume_render_backward(out: RenderOutput, d_rgb: np.ndarray):
    """Gradients of a loss with respect to densities and sample colors."""
    d_colors = out.weights[..., None] * d_rgb[:, None, :]
    # suffix[i] = sum_{j>i} w_j c_j.g + T_final bg.g
    wc = np.einsum("rs,rsc,rc->rs", out.weights, out.colors, d_rgb)
    tail = out.transmittance * (d_rgb @ out.background)
    suffix = np.cumsum(wc[:, ::-1], axis=-1)[:, ::-1] - wc + tail[:, None]
    t_next = out.trans * (1.0 - out.alphas)
    cg = np.einsum("rsc,rc->rs", out.colors, d_rgb)
    d_sigma = out.deltas * (t_next * cg - suffix)
    return d_sigma, d_colors


def invert_cdf(weights: np.ndarray, edges: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse of the piecewise-linear CDF of a piecewise-constant bin PDF.

    ``weights`` (R, B) >= 0, ``edges`` (R, B+1), ``u`` (R, K) in [0, 1).
    Rays whose weights sum to zero are treated as uniform.
    """
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum(axis=-1, keepdims=True)
    degenerate = total[:, 0] <= 0
    if np.any(degenerate):
        weights = weights.copy()
        weights[degenerate] = 1.0
        total = weights.sum(axis=-1, keepdims=True)
    pdf = weights / total
    cdf = np.concatenate([np.zeros_like(pdf[:, :1]), np.cumsum(pdf, axis=-1)], axis=-1)
    cdf[:, -1] = 1.0
    B = weights.shape[-1]
    # first bin whose upper CDF value exceeds u, skipping zero-mass bins
    idx = np.sum(cdf[:, 1:, None] <= u[:, None, :], axis=1)
    idx = np.clip(idx, 0, B - 1)
    lo_c = np.take_along_axis(cdf, idx, axis=-1)
    hi_c = np.take_along_axis(cdf, idx + 1, axis=-1)
    lo_e = np.take_along_axis(edges, idx, axis=-1)
    hi_e = np.take_along_axis(edges, idx + 1, axis=-1)
    span = hi_c - lo_c
    frac = np.where(span > 0, (u - lo_c) / np.where(span > 0, span, 1.0), 0.5)
    return lo_e + np.clip(frac, 0.0, 1.0) * (hi_e - lo_e)


def pdf_sample(weights, edges, n_fine: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Sorted importance samples from the coarse weights; stratified u, midpoints without ``rng``."""
    weights = np.atleast_2d(weights)
    edges = np.atleast_2d(edges)
    R = len(weights)
    jitter = np.full((R, n_fine), 0.5) if rng is None else rng.random((R, n_fine))
    u = (np.arange(n_fine) + jitter) / n_fine
    return np.sort(invert_cdf(weights, edges, u), axis=-1)


def merge_samples(t_coarse: np.ndarray, t_fine: np.ndarray) -> np.ndarray:
    return np.sort(np.concatenate([t_coarse, t_fine], axis=-1), axis=-1)
