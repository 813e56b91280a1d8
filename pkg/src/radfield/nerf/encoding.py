"""Input encodings: sinusoidal frequency bands and a multiresolution hash grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DomainError

HASH_PRIMES = (1, 2654435761, 805459861)
_CORNERS = np.array([[(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=np.int64)


@dataclass(frozen=True)
class EncodingConfig:
    kind: str = "frequency"
    pos_bands: int = 10
    dir_bands: int = 4
    hash_levels: int = 8
    hash_table_size: int = 2**14
    hash_features: int = 2
    hash_base_res: int = 16
    hash_growth: float = 1.5

    def __post_init__(self):
        if self.kind not in ("frequency", "hash"):
            raise ConfigError(f"encoding kind must be 'frequency' or 'hash', got {self.kind!r}")
        for name in ("pos_bands", "dir_bands", "hash_levels", "hash_table_size", "hash_features", "hash_base_res"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        n = self.hash_table_size
        if n & (n - 1):
            raise ConfigError("hash_table_size must be a power of two")

    @property
    def pos_dim(self) -> int:
        if self.kind == "hash":
            return self.hash_levels * self.hash_features
        return 2 * self.pos_bands * 3

    @property
    def dir_dim(self) -> int:
        return 2 * self.dir_bands * 3

    def level_resolutions(self) -> list[int]:
        return [int(math.floor(self.hash_base_res * self.hash_growth**l)) for l in range(self.hash_levels)]


def freq_encode(x: np.ndarray, L: int) -> np.ndarray:
    """Per component c and band k: ``sin(2^k pi x_c), cos(2^k pi x_c)``; length ``2 L dim``."""
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    freqs = ((2.0 ** np.arange(L)) * math.pi).astype(x.dtype)
    ang = x[..., :, None] * freqs
    out = np.stack([np.sin(ang), np.cos(ang)], axis=-1)
    return out.reshape(x.shape[:-1] + (2 * L * x.shape[-1],))


def hash_index(coords: np.ndarray, table_size: int) -> np.ndarray:
    c = coords.astype(np.uint64)
    h = c[..., 0] * np.uint64(HASH_PRIMES[0])
    h ^= c[..., 1] * np.uint64(HASH_PRIMES[1])
    h ^= c[..., 2] * np.uint64(HASH_PRIMES[2])
    return (h & np.uint64(table_size - 1)).astype(np.int64)


def hash_lookup(x: np.ndarray, cfg: EncodingConfig):
    """Table indices and trilinear weights, each shaped (8, N, levels), corner axis first.

    Corner ``c`` takes bit 0, 1, 2 of ``c`` as its x, y, z offset. Because the table
    size is a power of two, the mask distributes over XOR and each axis is hashed once.
    """
    x = np.asarray(x)
    if np.any(x < 0) or np.any(x > 1):
        raise DomainError("hash encoding expects positions inside the unit cube")
    n, L = x.shape[0], cfg.hash_levels
    res = np.asarray(cfg.level_resolutions(), dtype=x.dtype)
    scaled = x.T[:, :, None] * res  # (3, N, L)
    base = np.floor(scaled)
    frac = scaled - base
    # (b p) mod 2^k equals (b (p mod 2^k)) mod 2^k, which keeps every product inside int64
    mask = cfg.hash_table_size - 1
    b = base.astype(np.int64)
    primes = np.asarray([p & mask for p in HASH_PRIMES], dtype=np.int64)[:, None, None]
    h = np.stack([(b * primes) & mask, ((b + 1) * primes) & mask], axis=1)  # (3, 2, N, L)
    idx = h[2][:, None, None] ^ h[1][None, :, None] ^ h[0][None, None, :]
    w = np.stack([1 - frac, frac], axis=1)
    wts = w[2][:, None, None] * w[1][None, :, None] * w[0][None, None, :]
    return idx.reshape(8, n, L), wts.reshape(8, n, L)


def _flat_rows(idx: np.ndarray, cfg: EncodingConfig) -> np.ndarray:
    return idx + np.arange(cfg.hash_levels) * cfg.hash_table_size


def hash_encode(x: np.ndarray, cfg: EncodingConfig, tables: np.ndarray, lookup=None) -> np.ndarray:
    """Concatenated per-level trilinear features; ``tables`` is (levels, table_size, features)."""
    idx, wts = lookup if lookup is not None else hash_lookup(x, cfg)
    flat = _flat_rows(idx, cfg)
    rows = tables.reshape(-1, tables.shape[-1])
    feats = np.stack([np.sum(wts * rows[flat, f], axis=0) for f in range(tables.shape[-1])], axis=-1)
    return feats.reshape(idx.shape[1], -1)


def hash_encode_backward(grad_feat: np.ndarray, cfg: EncodingConfig, lookup, table_shape) -> np.ndarray:
    """Scatter feature gradients back into a dense table gradient."""
    idx, wts = lookup
    n = idx.shape[1]
    g = grad_feat.reshape(n, cfg.hash_levels, cfg.hash_features)
    flat = _flat_rows(idx, cfg).ravel()
    size = cfg.hash_levels * cfg.hash_table_size
    out = np.empty((size, cfg.hash_features), dtype=grad_feat.dtype)
    for f in range(cfg.hash_features):
        contrib = (wts * g[None, :, :, f]).ravel()
        out[:, f] = np.bincount(flat, weights=contrib, minlength=size)
    return out.reshape(table_shape)
