"""Coarse and fine radiance-field networks with hand-written reverse mode.

Each network maps encoded position to density through a ReLU trunk, then joins
the trunk features with the encoded view direction in one narrower ReLU layer
before a sigmoid color head. Density never sees the direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from .encoding import EncodingConfig, freq_encode, hash_encode, hash_encode_backward, hash_lookup

NETS = ("coarse", "fine")


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 4
    width: int = 64
    view_width: int | None = None
    density_activation: str = "relu"

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ConfigError("network depth and width must be >= 1")
        if self.density_activation not in ("relu", "softplus"):
            raise ConfigError("density_activation must be 'relu' or 'softplus'")

    @property
    def view_dim(self) -> int:
        return self.view_width or max(1, self.width // 2)


@dataclass
class FieldParams:
    encoding: EncodingConfig
    network: NetworkConfig
    aabb: tuple[tuple[float, float, float], tuple[float, float, float]]
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "FieldParams":
        return FieldParams(self.encoding, self.network, self.aabb, {k: v.copy() for k, v in self.arrays.items()})

    def param_count(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))

    def normalize(self, pts: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.aabb[0], dtype=pts.dtype)
        hi = np.asarray(self.aabb[1], dtype=pts.dtype)
        return np.clip((pts - lo) / (hi - lo), 0.0, 1.0)


def layer_shapes(enc: EncodingConfig, net: NetworkConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for name in NETS:
        fan_in = enc.pos_dim
        for l in range(net.depth):
            shapes[f"{name}.trunk{l}.weight"] = (fan_in, net.width)
            shapes[f"{name}.trunk{l}.bias"] = (net.width,)
            fan_in = net.width
        shapes[f"{name}.density.weight"] = (net.width, 1)
        shapes[f"{name}.density.bias"] = (1,)
        shapes[f"{name}.view.weight"] = (net.width + enc.dir_dim, net.view_dim)
        shapes[f"{name}.view.bias"] = (net.view_dim,)
        shapes[f"{name}.color.weight"] = (net.view_dim, 3)
        shapes[f"{name}.color.bias"] = (3,)
        if enc.kind == "hash":
            shapes[f"{name}.hash_table"] = (enc.hash_levels, enc.hash_table_size, enc.hash_features)
    return shapes


def init_field_params(
    enc: EncodingConfig,
    net: NetworkConfig,
    aabb,
    rng: np.random.Generator,
    dtype=np.float64,
    density_bias: float = 0.1,
) -> FieldParams:
    """He-uniform weights, zero biases; hash tables uniform in +-1e-4."""
    arrays = {}
    for name, shape in layer_shapes(enc, net).items():
        if name.endswith("hash_table"):
            arrays[name] = rng.uniform(-1e-4, 1e-4, size=shape).astype(dtype)
        elif name.endswith("weight"):
            bound = np.sqrt(6.0 / shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif name.endswith("density.bias"):
            arrays[name] = np.full(shape, density_bias, dtype=dtype)
        else:
            arrays[name] = np.zeros(shape, dtype=dtype)
    aabb = (tuple(map(float, aabb[0])), tuple(map(float, aabb[1])))
    return FieldParams(enc, net, aabb, arrays)


def check_dimensions(params: FieldParams) -> None:
    for name, shape in layer_shapes(params.encoding, params.network).items():
        got = params.arrays.get(name)
        if got is None or got.shape != shape:
            raise ConfigError(f"parameter {name} has shape {None if got is None else got.shape}, expected {shape}")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x):
    return np.logaddexp(0.0, x)


def encode_positions(params: FieldParams, pts: np.ndarray, which: str):
    """Returns ``(features, lookup)``; ``lookup`` is None for frequency encoding."""
    u = params.normalize(pts)
    enc = params.encoding
    if enc.kind == "hash":
        lookup = hash_lookup(u, enc)
        return hash_encode(u, enc, params.arrays[f"{which}.hash_table"], lookup), lookup
    return freq_encode(2.0 * u - 1.0, enc.pos_bands), None


def encode_dirs(params: FieldParams, dirs: np.ndarray) -> np.ndarray:
    return freq_encode(dirs, params.encoding.dir_bands)


def net_forward(params: FieldParams, pos_feat, dir_feat, which: str):
    """Returns ``(sigma (N,), rgb (N, 3), cache)``."""
    a = params.arrays
    net = params.network
    if pos_feat.shape[-1] != params.encoding.pos_dim or dir_feat.shape[-1] != params.encoding.dir_dim:
        raise ConfigError(
            f"feature sizes {pos_feat.shape[-1]}/{dir_feat.shape[-1]} do not match "
            f"configured {params.encoding.pos_dim}/{params.encoding.dir_dim}"
        )
    hs = [pos_feat]
    h = pos_feat
    for l in range(net.depth):
        h = np.maximum(h @ a[f"{which}.trunk{l}.weight"] + a[f"{which}.trunk{l}.bias"], 0.0)
        hs.append(h)
    raw = (h @ a[f"{which}.density.weight"] + a[f"{which}.density.bias"])[:, 0]
    sigma = np.maximum(raw, 0.0) if net.density_activation == "relu" else _softplus(raw)
    vin = np.concatenate([h, dir_feat], axis=-1)
    hv = np.maximum(vin @ a[f"{which}.view.weight"] + a[f"{which}.view.bias"], 0.0)
    rgb = _sigmoid(hv @ a[f"{which}.color.weight"] + a[f"{which}.color.bias"])
    return sigma, rgb, (hs, raw, vin, hv, rgb)


def net_backward(params: FieldParams, cache, d_sigma, d_rgb, which: str, grads: dict):
    """Accumulate parameter gradients into ``grads``; returns d(pos_feat)."""
    a = params.arrays
    net = params.network
    hs, raw, vin, hv, rgb = cache
    d_logit = d_rgb * rgb * (1.0 - rgb)
    grads[f"{which}.color.weight"] += hv.T @ d_logit
    grads[f"{which}.color.bias"] += d_logit.sum(0)
    d_hv = (d_logit @ a[f"{which}.color.weight"].T) * (hv > 0)
    grads[f"{which}.view.weight"] += vin.T @ d_hv
    grads[f"{which}.view.bias"] += d_hv.sum(0)
    d_h = (d_hv @ a[f"{which}.view.weight"].T)[:, : net.width]
    if net.density_activation == "relu":
        d_raw = d_sigma * (raw > 0)
    else:
        d_raw = d_sigma * _sigmoid(raw)
    grads[f"{which}.density.weight"] += hs[-1].T @ d_raw[:, None]
    grads[f"{which}.density.bias"] += d_raw.sum(keepdims=True)
    d_h = d_h + d_raw[:, None] * a[f"{which}.density.weight"][:, 0]
    for l in range(net.depth - 1, -1, -1):
        d_pre = d_h * (hs[l + 1] > 0)
        grads[f"{which}.trunk{l}.weight"] += hs[l].T @ d_pre
        grads[f"{which}.trunk{l}.bias"] += d_pre.sum(0)
        d_h = d_pre @ a[f"{which}.trunk{l}.weight"].T
    return d_h


def field_eval(params: FieldParams, pos_feat, dir_feat, which: str = "fine"):
    """Density and color for pre-encoded inputs."""
    if which not in NETS:
        raise ConfigError(f"which must be one of {NETS}")
    sigma, rgb, _ = net_forward(params, np.atleast_2d(pos_feat), np.atleast_2d(dir_feat), which)
    return sigma, rgb


def query(params: FieldParams, pts, dirs, which: str = "fine"):
    """Density and color at world-space points viewed along ``dirs``."""
    pos_feat, _ = encode_positions(params, pts, which)
    sigma, rgb, _ = net_forward(params, pos_feat, encode_dirs(params, dirs), which)
    return sigma, rgb


def zero_grads(params: FieldParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays.items()}


def hash_table_grad(params: FieldParams, d_feat, lookup, which: str):
    return hash_encode_backward(d_feat, params.encoding, lookup, params.arrays[f"{which}.hash_table"].shape)
