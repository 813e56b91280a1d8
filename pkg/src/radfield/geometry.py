"""Pinhole cameras, camera-to-world poses, rays and pose manifests.

Conventions: poses are camera-to-world, the camera looks down its local -z
axis with +y up and +x right. Pixel ``(px, py)`` is sampled at its center
``(px + 0.5, py + 0.5)``; image rows grow downward.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateOrientationError,
    DomainError,
    InvalidPoseError,
    MalformedManifestError,
)

ORTHO_EXACT_TOL = 1e-6
ORTHO_REJECT_TOL = 1e-3
DEFAULT_UP = (0.0, 0.0, 1.0)


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise DomainError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise DomainError("principal point lies outside the image")
        if self.width < 1 or self.height < 1:
            raise DomainError("image size must be positive")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float) -> "Intrinsics":
        f = 0.5 * width / math.tan(math.radians(fov_x_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height)

    def scaled(self, factor: float) -> "Intrinsics":
        w = max(1, int(round(self.width * factor)))
        h = max(1, int(round(self.height * factor)))
        sx, sy = w / self.width, h / self.height
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, w, h)


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def forward(self) -> np.ndarray:
        return -self.rotation[:, 2]

    @property
    def right(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def up(self) -> np.ndarray:
        return self.rotation[:, 1]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.translation) @ self.rotation

    def compose_left(self, rotation: np.ndarray) -> "Pose":
        """Apply a world-frame rotation about the origin to this camera."""
        rotation = np.asarray(rotation, dtype=np.float64)
        return Pose(rotation @ self.rotation, rotation @ self.translation)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float = 0.0
    t_far: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "origin", _frozen(self.origin, (3,)))
        object.__setattr__(self, "direction", _frozen(self.direction, (3,)))
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise DomainError("ray direction must be unit length")
        if not (0 <= self.t_near < self.t_far):
            raise DomainError("ray interval must satisfy 0 <= t_near < t_far")

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


@dataclass(frozen=True)
class FrameEntry:
    image_ref: str
    pose: Pose
    sharpness: float | None = None

    def __post_init__(self):
        if not self.image_ref:
            raise DomainError("image_ref must be nonempty")
        if self.sharpness is not None and not self.sharpness >= 0:
            raise DomainError("sharpness must be non-negative")


@dataclass(frozen=True)
class DatasetManifest:
    intrinsics: Intrinsics
    frames: tuple[FrameEntry, ...]
    aabb: tuple[tuple[float, float, float], tuple[float, float, float]] | None = None
    extras: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise DomainError("a manifest needs at least one frame")
        refs = [f.image_ref for f in self.frames]
        if len(set(refs)) != len(refs):
            raise DomainError("frames must reference distinct images")

    def __len__(self):
        return len(self.frames)

    @property
    def poses(self) -> list[Pose]:
        return [f.pose for f in self.frames]

    def subset(self, indices: Iterable[int]) -> "DatasetManifest":
        return replace(self, frames=tuple(self.frames[i] for i in indices))

    def with_frames(self, frames: Sequence[FrameEntry]) -> "DatasetManifest":
        return replace(self, frames=tuple(frames))


def orthonormality_error(rotation: np.ndarray) -> float:
    rotation = np.asarray(rotation, dtype=np.float64)
    return float(np.linalg.norm(rotation.T @ rotation - np.eye(3)))


def project_to_rotation(rotation: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar factor)."""
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def _number(obj: dict, key: str) -> float:
    if key not in obj:
        raise MalformedManifestError(f"missing field '{key}'", field=key)
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise MalformedManifestError(f"field '{key}' must be a finite number", field=key)
    return float(v)


def _parse_transform(raw, index: int) -> Pose:
    name = f"frames[{index}].transform_matrix"
    try:
        m = np.array(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise MalformedManifestError(f"{name} is not numeric", field=name) from None
    if m.shape != (4, 4):
        raise MalformedManifestError(f"{name} must be 4x4, got shape {m.shape}", field=name)
    if not np.all(np.isfinite(m)):
        raise MalformedManifestError(f"{name} contains non-finite values", field=name)
    if np.max(np.abs(m[3] - [0, 0, 0, 1])) > 1e-9:
        raise MalformedManifestError(f"{name} bottom row must be (0, 0, 0, 1)", field=name)
    rot = m[:3, :3]
    err = orthonormality_error(rot)
    if err > ORTHO_REJECT_TOL or np.linalg.det(rot) <= 0:
        raise InvalidPoseError(
            f"frame {index}: rotation is not a proper rotation (|R^T R - I| = {err:.3g})",
            frame_index=index,
        )
    if err > ORTHO_EXACT_TOL:
        rot = project_to_rotation(rot)
    return Pose(rot, m[:3, 3])


def parse_manifest(data: dict) -> DatasetManifest:
    if not isinstance(data, dict):
        raise MalformedManifestError("manifest must be a JSON object", field="<root>")
    fx, fy = _number(data, "fl_x"), _number(data, "fl_y")
    cx, cy = _number(data, "cx"), _number(data, "cy")
    w, h = _number(data, "w"), _number(data, "h")
    if w != int(w) or h != int(h):
        raise MalformedManifestError("image size must be integral", field="w")
    try:
        intr = Intrinsics(fx, fy, cx, cy, int(w), int(h))
    except DomainError as exc:
        raise MalformedManifestError(str(exc), field="fl_x") from None

    frames_raw = data.get("frames")
    if not isinstance(frames_raw, list) or not frames_raw:
        raise MalformedManifestError("'frames' must be a nonempty array", field="frames")
    frames = []
    for i, fr in enumerate(frames_raw):
        if not isinstance(fr, dict):
            raise MalformedManifestError(f"frames[{i}] must be an object", field=f"frames[{i}]")
        path = fr.get("file_path")
        if not isinstance(path, str) or not path:
            raise MalformedManifestError(
                f"frames[{i}].file_path must be a nonempty string", field=f"frames[{i}].file_path"
            )
        if "transform_matrix" not in fr:
            raise MalformedManifestError(
                f"frames[{i}] lacks transform_matrix", field=f"frames[{i}].transform_matrix"
            )
        pose = _parse_transform(fr["transform_matrix"], i)
        sharp = fr.get("sharpness")
        frames.append(FrameEntry(path, pose, None if sharp is None else float(sharp)))

    aabb = None
    if "aabb" in data:
        try:
            box = np.array(data["aabb"], dtype=np.float64)
        except (TypeError, ValueError):
            raise MalformedManifestError("aabb must be [[min xyz], [max xyz]]", field="aabb") from None
        if box.shape != (2, 3) or not np.all(box[1] > box[0]):
            raise MalformedManifestError("aabb must be [[min xyz], [max xyz]]", field="aabb")
        aabb = (tuple(box[0].tolist()), tuple(box[1].tolist()))
    try:
        return DatasetManifest(intr, tuple(frames), aabb)
    except DomainError as exc:
        raise MalformedManifestError(str(exc), field="frames") from None


def load_manifest(json_text: str) -> DatasetManifest:
    """Parse manifest JSON (``fl_x, fl_y, cx, cy, w, h, frames[]``); unknown keys are ignored."""
    try:
        data = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise MalformedManifestError(f"invalid JSON: {exc}", field="<root>") from None
    return parse_manifest(data)


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    intr = manifest.intrinsics
    out: dict[str, Any] = {
        "fl_x": intr.fx,
        "fl_y": intr.fy,
        "cx": intr.cx,
        "cy": intr.cy,
        "w": intr.width,
        "h": intr.height,
    }
    if manifest.aabb is not None:
        out["aabb"] = [list(manifest.aabb[0]), list(manifest.aabb[1])]
    frames = []
    for fr in manifest.frames:
        entry: dict[str, Any] = {
            "file_path": fr.image_ref,
            "transform_matrix": fr.pose.matrix().tolist(),
        }
        if fr.sharpness is not None:
            entry["sharpness"] = fr.sharpness
        frames.append(entry)
    out["frames"] = frames
    return out


def dump_manifest(manifest: DatasetManifest) -> str:
    return json.dumps(manifest_to_dict(manifest), indent=2) + "\n"


def _camera_direction(intr: Intrinsics, px, py) -> np.ndarray:
    x = (np.asarray(px, dtype=np.float64) + 0.5 - intr.cx) / intr.fx
    y = -(np.asarray(py, dtype=np.float64) + 0.5 - intr.cy) / intr.fy
    return np.stack(np.broadcast_arrays(x, y, -np.ones_like(x)), axis=-1)


def ray_for_pixel(intr: Intrinsics, pose: Pose, px: float, py: float) -> Ray:
    if not (0 <= px < intr.width and 0 <= py < intr.height):
        raise DomainError(f"pixel ({px}, {py}) outside {intr.width}x{intr.height} image")
    d = pose.rotation @ _camera_direction(intr, px, py)
    return Ray(pose.translation.copy(), d / np.linalg.norm(d))


def rays_for_image(intr: Intrinsics, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions for every pixel, each shaped ``(H, W, 3)``."""
    py, px = np.mgrid[0 : intr.height, 0 : intr.width]
    d = _camera_direction(intr, px, py) @ pose.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(pose.translation, d.shape).copy()
    return o, d


def ray_aabb(origins, directions, lo, hi, t_min: float = 0.0):
    """Slab test. Returns ``(t_near, t_far, hit)``; directions need not be unit."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    t0 = np.nan_to_num(t0, nan=-np.inf)
    t1 = np.nan_to_num(t1, nan=np.inf)
    tn = np.max(np.minimum(t0, t1), axis=-1)
    tf = np.min(np.maximum(t0, t1), axis=-1)
    tn = np.maximum(tn, t_min)
    return tn, tf, tf > tn


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def look_at(origin, target, up=DEFAULT_UP) -> Pose:
    """Camera at ``origin`` looking at ``target`` with zero roll about ``up``."""
    origin = np.asarray(origin, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - origin
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    n = np.linalg.norm(right)
    if n < 1e-12:
        raise DegenerateOrientationError("look direction is parallel to up")
    right /= n
    cam_up = np.cross(right, fwd)
    return Pose(np.stack([right, cam_up, -fwd], axis=1), origin)


def roll_pose(pose: Pose, angle: float) -> Pose:
    """Rotate the camera about its own forward axis; positive is clockwise seen from behind."""
    return Pose(pose.rotation @ rotation_about_axis((0, 0, 1), -angle), pose.translation)


def camera_roll(pose: Pose, up_world=DEFAULT_UP) -> float:
    """Signed roll of the camera's right axis out of the horizontal plane, radians.

    Positive means rotated clockwise as seen from behind the camera.
    """
    up = np.asarray(up_world, dtype=np.float64)
    n = np.linalg.norm(up)
    if n == 0:
        raise DomainError("up_world must be nonzero")
    up = up / n
    if np.linalg.norm(np.cross(pose.forward, up)) < 1e-9:
        raise DegenerateOrientationError("camera forward axis is parallel to up_world")
    return math.atan2(-float(pose.right @ up), float(pose.up @ up))


def _wrap(angle):
    return (angle + math.pi) % (2 * math.pi) - math.pi


def validate_trajectory(manifest: DatasetManifest, roll_tol: float, up_world=DEFAULT_UP) -> list[int]:
    """Indices of frames whose roll strays more than ``roll_tol`` from the median roll.

    Frames whose orientation makes roll undefined are always flagged.
    """
    rolls: list[float | None] = []
    for fr in manifest.frames:
        try:
            rolls.append(camera_roll(fr.pose, up_world))
        except DegenerateOrientationError:
            rolls.append(None)
    valid = [r for r in rolls if r is not None]
    median = float(np.median(valid)) if valid else 0.0
    return [i for i, r in enumerate(rolls) if r is None or abs(_wrap(r - median)) > roll_tol]
