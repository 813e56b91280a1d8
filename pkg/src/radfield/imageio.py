"""PNG and ASCII PPM reading/writing. Pixel values are float in [0, 1] internally."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ImageReadError


def _read_ppm_ascii(path: Path) -> np.ndarray:
    tokens = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    if not tokens or tokens[0] not in ("P2", "P3"):
        raise ImageReadError(f"{path}: not an ASCII PGM/PPM file")
    channels = 3 if tokens[0] == "P3" else 1
    w, h, maxval = (int(t) for t in tokens[1:4])
    data = np.array(tokens[4:], dtype=np.float64)
    if data.size != w * h * channels or maxval <= 0:
        raise ImageReadError(f"{path}: truncated pixel data")
    img = data.reshape(h, w, channels) / maxval
    return img if channels == 3 else img[..., 0]


def read_image(path) -> np.ndarray:
    """Read PNG (8/16-bit) or ASCII PPM/PGM to floats; returns (H, W, 3) or (H, W)."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            magic = fh.read(2)
        if magic in (b"P2", b"P3"):
            return _read_ppm_ascii(path)
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                return np.clip(arr, 0.0, 1.0)
            if mode == "L":
                return np.asarray(im, dtype=np.float64) / 255.0
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except ImageReadError:
        raise
    except (OSError, ValueError) as exc:
        raise ImageReadError(f"{path}: {exc}") from None


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG", optimize=False)


def write_ppm(path, img: np.ndarray) -> None:
    px = to_uint8(img)
    if px.ndim == 2:
        px = np.repeat(px[..., None], 3, axis=-1)
    h, w, _ = px.shape
    rows = [" ".join(str(v) for v in row.ravel()) for row in px]
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P3\n{w} {h}\n255\n")
        fh.write("\n".join(rows))
        fh.write("\n")


def write_image(path, img: np.ndarray) -> None:
    if str(path).lower().endswith((".ppm", ".pgm")):
        write_ppm(path, img)
    else:
        write_png(path, img)


def resolve_image_path(image_ref: str, base_dir) -> Path:
    """Locate a manifest ``file_path``; a bare stem also tries .png, as NeRF datasets do."""
    p = Path(image_ref)
    if not p.is_absolute():
        p = Path(base_dir) / p
    if p.exists() or p.suffix:
        return p
    for ext in (".png", ".ppm"):
        cand = p.with_suffix(ext)
        if cand.exists():
            return cand
    return p


def make_loader(base_dir):
    base_dir = os.fspath(base_dir)

    def load(image_ref: str) -> np.ndarray:
        return read_image(resolve_image_path(image_ref, base_dir))

    return load
