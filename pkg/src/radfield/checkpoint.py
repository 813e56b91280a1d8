"""Versioned, byte-deterministic JSON checkpoints for both reconstruction methods."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import from_dict, to_dict
from .errors import ConfigError, ImageReadError, MalformedManifestError
from .geometry import Intrinsics
from .nerf.field import FieldParams, check_dimensions
from .nerf.train import NerfTrainConfig
from .splat.gaussians import PARAM_GROUPS, Gaussians
from .splat.train import SplatTrainConfig

FORMAT = "radfield-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    method: str  # "nerf" or "splat"
    model: object  # FieldParams or Gaussians
    config: object  # NerfTrainConfig or SplatTrainConfig
    meta: dict = field(default_factory=dict)


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder not in ("|", "<") else a.dtype
    return {
        "dtype": dt.str,
        "shape": list(a.shape),
        "data": base64.b64encode(a.astype(dt).tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(d["data"].encode("ascii"), validate=True)
        return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedManifestError(f"bad array record: {exc}", field="arrays") from exc


def intrinsics_to_dict(intr: Intrinsics) -> dict:
    return {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy, "width": intr.width, "height": intr.height}


def intrinsics_from_dict(d: dict) -> Intrinsics:
    return Intrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]))


def to_json(ckpt: Checkpoint) -> str:
    if ckpt.method == "nerf":
        p: FieldParams = ckpt.model
        arrays = {k: _encode_array(v) for k, v in sorted(p.arrays.items())}
        model = {"aabb": [list(p.aabb[0]), list(p.aabb[1])], "arrays": arrays}
    elif ckpt.method == "splat":
        g: Gaussians = ckpt.model
        model = {"arrays": {k: _encode_array(getattr(g, k)) for k in PARAM_GROUPS}}
    else:
        raise ConfigError(f"unknown method {ckpt.method!r}")
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "method": ckpt.method,
        "config": to_dict(ckpt.config),
        "meta": ckpt.meta,
        "model": model,
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def from_json(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedManifestError(f"checkpoint is not valid JSON: {exc}", field="json") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise MalformedManifestError("not a radfield checkpoint", field="format")
    if doc.get("version") != VERSION:
        raise MalformedManifestError(f"unsupported checkpoint version {doc.get('version')!r}", field="version")
    method = doc.get("method")
    model = doc.get("model") or {}
    arrays = {k: _decode_array(v) for k, v in (model.get("arrays") or {}).items()}
    if method == "nerf":
        cfg = from_dict(NerfTrainConfig, doc.get("config"))
        aabb = model.get("aabb")
        if not aabb or len(aabb) != 2:
            raise MalformedManifestError("nerf checkpoint missing aabb", field="aabb")
        params = FieldParams(cfg.encoding, cfg.network, (tuple(aabb[0]), tuple(aabb[1])), arrays)
        check_dimensions(params)
        return Checkpoint("nerf", params, cfg, doc.get("meta") or {})
    if method == "splat":
        cfg = from_dict(SplatTrainConfig, doc.get("config"))
        missing = [k for k in PARAM_GROUPS if k not in arrays]
        if missing:
            raise MalformedManifestError(f"splat checkpoint missing {missing}", field="arrays")
        return Checkpoint("splat", Gaussians.from_arrays(arrays), cfg, doc.get("meta") or {})
    raise MalformedManifestError(f"unknown checkpoint method {method!r}", field="method")


def save(path, ckpt: Checkpoint) -> int:
    """Write the checkpoint; returns its size in bytes."""
    data = to_json(ckpt).encode("utf-8")
    Path(path).write_bytes(data)
    return len(data)


def load(path) -> Checkpoint:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ImageReadError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_json(text)

