"""Analytic ground-truth scenes: ray-traced Lambert primitives, orbit rigs and corpora.

Everything here is closed-form, so the images act as oracles for the
reconstruction methods and the blur filter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .blur import gaussian_blur
from .errors import DomainError
from .geometry import (
    DEFAULT_UP,
    DatasetManifest,
    FrameEntry,
    Intrinsics,
    Pose,
    dump_manifest,
    look_at,
    ray_aabb,
    rays_for_image,
    roll_pose,
    rotation_about_axis,
)
from .imageio import write_image

_EPS = 1e-9


@dataclass(frozen=True)
class Primitive:
    """A sphere, oriented box or square plane patch.

    ``size`` is the radius (sphere), half-extents (box) or half side length
    (plane). ``rotation`` orients boxes and planes (plane normal is local +z).
    """

    kind: str
    center: tuple[float, float, float]
    size: tuple[float, ...] | float
    albedo: tuple[float, float, float]
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        if self.kind not in ("sphere", "box", "plane"):
            raise DomainError(f"unknown primitive kind {self.kind!r}")
        sz = np.atleast_1d(np.asarray(self.size, dtype=np.float64))
        if np.any(sz <= 0):
            raise DomainError("primitive extents must be positive")
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))

    @property
    def half(self) -> np.ndarray:
        sz = np.atleast_1d(np.asarray(self.size, dtype=np.float64))
        return np.broadcast_to(sz, (3,)).copy() if self.kind == "box" else sz

    def area(self) -> float:
        if self.kind == "sphere":
            return 4 * math.pi * float(self.size) ** 2
        if self.kind == "plane":
            return 4 * float(self.size) ** 2
        hx, hy, hz = self.half
        return 8 * (hx * hy + hy * hz + hx * hz)

    def transformed(self, rot: np.ndarray) -> "Primitive":
        c = tuple((rot @ np.asarray(self.center)).tolist())
        return replace(self, center=c, rotation=rot @ self.rotation)

    def intersect(self, o: np.ndarray, d: np.ndarray):
        """Nearest positive hit distance (inf on miss) and world-space normals."""
        c = np.asarray(self.center, dtype=np.float64)
        n = len(o)
        t = np.full(n, np.inf)
        normal = np.zeros((n, 3))
        if self.kind == "sphere":
            r = float(self.size)
            oc = o - c
            b = np.einsum("ij,ij->i", oc, d)
            cc = np.einsum("ij,ij->i", oc, oc) - r * r
            disc = b * b - cc
            ok = disc >= 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            t0, t1 = -b - sq, -b + sq
            tt = np.where(t0 > _EPS, t0, t1)
            ok &= tt > _EPS
            t[ok] = tt[ok]
            normal[ok] = (o[ok] + t[ok, None] * d[ok] - c) / r
        elif self.kind == "box":
            ol, dl = (o - c) @ self.rotation, d @ self.rotation
            h = self.half
            tn, tf_, hit = ray_aabb(ol, dl, -h, h, t_min=-np.inf)
            tt = np.where(tn > _EPS, tn, tf_)
            ok = hit & (tt > _EPS)
            t[ok] = tt[ok]
            p = ol[ok] + tt[ok, None] * dl[ok]
            rel = np.abs(p) / h
            axis = np.argmax(rel, axis=1)
            nl = np.zeros_like(p)
            nl[np.arange(len(p)), axis] = np.sign(p[np.arange(len(p)), axis])
            normal[ok] = nl @ self.rotation.T
        else:
            nrm = self.rotation[:, 2]
            u, v = self.rotation[:, 0], self.rotation[:, 1]
            h = float(self.size)
            dn = d @ nrm
            with np.errstate(divide="ignore", invalid="ignore"):
                tt = ((c - o) @ nrm) / dn
            p = o + np.where(np.isfinite(tt), tt, 0.0)[:, None] * d
            ok = np.isfinite(tt) & (tt > _EPS)
            ok &= (np.abs((p - c) @ u) <= h) & (np.abs((p - c) @ v) <= h)
            t[ok] = tt[ok]
            normal[ok] = nrm * np.where(dn[ok] > 0, -1.0, 1.0)[:, None]
        return t, normal

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        c = np.asarray(self.center, dtype=np.float64)
        if self.kind == "sphere":
            v = rng.normal(size=(n, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            return c + float(self.size) * v
        if self.kind == "plane":
            h = float(self.size)
            uv = rng.uniform(-h, h, size=(n, 2))
            return c + uv @ self.rotation[:, :2].T
        h = self.half
        face_area = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]] * 2)
        face = rng.choice(6, size=n, p=face_area / face_area.sum())
        p = rng.uniform(-1.0, 1.0, size=(n, 3)) * h
        axis = face % 3
        sign = np.where(face < 3, 1.0, -1.0)
        p[np.arange(n), axis] = sign * h[axis]
        return c + p @ self.rotation.T


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple[Primitive, ...]
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bounds: tuple[tuple[float, float, float], tuple[float, float, float]] = ((-1, -1, -1), (1, 1, 1))
    light_dir: tuple[float, float, float] = (0.5, 0.3, 0.8)
    ambient: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if not self.primitives:
            raise DomainError("a scene needs at least one primitive")

    def transformed(self, rot: np.ndarray) -> "SceneSpec":
        rot = np.asarray(rot, dtype=np.float64)
        light = tuple((rot @ np.asarray(self.light_dir, dtype=np.float64)).tolist())
        return replace(self, primitives=tuple(p.transformed(rot) for p in self.primitives), light_dir=light)


@dataclass(frozen=True)
class OrbitRig:
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 3.2
    elevation_deg: float = 45.0
    n_frames: int = 12
    loops: int = 2
    radius_growth: float = 0.25
    azimuth_offset_deg: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise DomainError("orbit radius must be positive")
        if self.n_frames < 2 or self.loops < 1:
            raise DomainError("orbit needs n_frames >= 2 and loops >= 1")


def default_scene() -> SceneSpec:
    box_rot = rotation_about_axis((0, 0, 1), math.radians(30))
    return SceneSpec(
        primitives=(
            Primitive("plane", (0.0, 0.0, 0.0), 0.95, (0.75, 0.7, 0.6)),
            Primitive("sphere", (-0.3, 0.3, 0.35), 0.35, (0.85, 0.2, 0.15)),
            Primitive("box", (0.35, -0.3, 0.25), (0.25, 0.2, 0.25), (0.15, 0.45, 0.85), box_rot),
        ),
    )


def sphere_scene(radius: float = 0.5) -> SceneSpec:
    return SceneSpec(primitives=(Primitive("sphere", (0.0, 0.0, 0.0), radius, (0.9, 0.5, 0.2)),))


def default_intrinsics(size: int = 64, fov_x_deg: float = 55.0) -> Intrinsics:
    return Intrinsics.from_fov(size, size, fov_x_deg)


def trace(scene: SceneSpec, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Shade a flat batch of rays; returns (N, 3) colors."""
    n = len(origins)
    best = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    albedo = np.zeros((n, 3))
    for prim in scene.primitives:
        t, nrm = prim.intersect(origins, dirs)
        closer = t < best
        best[closer] = t[closer]
        normal[closer] = nrm[closer]
        albedo[closer] = prim.albedo
    light = np.asarray(scene.light_dir, dtype=np.float64)
    light /= np.linalg.norm(light)
    lam = np.clip(normal @ light, 0.0, None)
    shade = scene.ambient + (1 - scene.ambient) * lam
    hit = np.isfinite(best)
    return np.where(hit[:, None], albedo * shade[:, None], np.asarray(scene.background, dtype=np.float64))


DATASET_SUPERSAMPLE = 4


def render_reference(scene: SceneSpec, intr: Intrinsics, pose: Pose, supersample: int = 1) -> np.ndarray:
    """Ray-traced image; ``supersample`` s averages an s x s grid of rays inside each pixel."""
    if supersample < 1:
        raise DomainError("supersample must be >= 1")
    if supersample == 1:
        o, d = rays_for_image(intr, pose)
        return trace(scene, o.reshape(-1, 3), d.reshape(-1, 3)).reshape(intr.height, intr.width, 3)
    s = supersample
    o, d = rays_for_image(intr.scaled(s), pose)
    img = trace(scene, o.reshape(-1, 3), d.reshape(-1, 3)).reshape(intr.height, s, intr.width, s, 3)
    return img.mean(axis=(1, 3))


def orbit_poses(rig: OrbitRig, up=DEFAULT_UP) -> list[Pose]:
    """Circular look-at trajectory, loops growing outward and upward at fixed elevation."""
    target = np.asarray(rig.target, dtype=np.float64)
    e = math.radians(rig.elevation_deg)
    poses = []
    for loop in range(rig.loops):
        r = rig.radius * (1 + rig.radius_growth * loop)
        phase = math.radians(rig.azimuth_offset_deg) + loop * math.pi / rig.n_frames
        for i in range(rig.n_frames):
            a = phase + 2 * math.pi * i / rig.n_frames
            pos = target + r * np.array([math.cos(e) * math.cos(a), math.cos(e) * math.sin(a), math.sin(e)])
            poses.append(look_at(pos, target, up))
    return poses


def heldout_rig(rig: OrbitRig, n_frames: int | None = None) -> OrbitRig:
    """Same trajectory shape, azimuths offset to fall between the training views."""
    n = n_frames or max(2, rig.n_frames // 3)
    return replace(rig, n_frames=n, azimuth_offset_deg=rig.azimuth_offset_deg + 90.0 / rig.n_frames + 7.0)


def make_tilted_variant(poses: Sequence[Pose], tilt_deg: float, frame_indices) -> list[Pose]:
    chosen = set(int(i) for i in frame_indices)
    ang = math.radians(tilt_deg)
    return [roll_pose(p, ang) if i in chosen and tilt_deg != 0 else p for i, p in enumerate(poses)]


def build_manifest(intr: Intrinsics, poses: Sequence[Pose], scene: SceneSpec, prefix="images/frame") -> DatasetManifest:
    frames = [FrameEntry(f"{prefix}_{i:03d}.png", p) for i, p in enumerate(poses)]
    lo, hi = scene.bounds
    return DatasetManifest(intr, tuple(frames), (tuple(map(float, lo)), tuple(map(float, hi))))


def render_views(
    scene: SceneSpec, intr: Intrinsics, poses: Sequence[Pose], supersample: int = DATASET_SUPERSAMPLE
) -> list[np.ndarray]:
    """Dataset images. Rays are averaged over each pixel footprint, as a physical sensor would."""
    return [render_reference(scene, intr, p, supersample) for p in poses]


def make_blur_corpus(
    scene: SceneSpec,
    rig: OrbitRig,
    intr: Intrinsics,
    blur_sigmas: Sequence[float],
    blurred_fraction: float,
    seed: int,
    supersample: int = DATASET_SUPERSAMPLE,
):
    """Render every orbit view and Gaussian-blur a seeded subset.

    Returns ``(manifest, images, labels)``; ``labels`` maps frame index to
    ``{"blurred": bool, "sigma": float}``.
    """
    if not 0 <= blurred_fraction < 1:
        raise DomainError("blurred_fraction must lie in [0, 1)")
    poses = orbit_poses(rig)
    images = render_views(scene, intr, poses, supersample)
    rng = np.random.default_rng(seed)
    n_blur = int(round(blurred_fraction * len(poses)))
    chosen = sorted(rng.choice(len(poses), size=n_blur, replace=False).tolist()) if n_blur else []
    labels = {i: {"blurred": False, "sigma": 0.0} for i in range(len(poses))}
    sigmas = list(blur_sigmas) or [2.0]
    for j, i in enumerate(chosen):
        s = float(sigmas[j % len(sigmas)])
        images[i] = gaussian_blur(images[i], s)
        labels[i] = {"blurred": True, "sigma": s}
    return build_manifest(intr, poses, scene), images, labels


def sample_surface_points(scene: SceneSpec, n: int, seed: int):
    """``n`` points spread uniformly by area over all primitive surfaces, with albedo colors."""
    if n < 1:
        raise DomainError("need at least one point")
    rng = np.random.default_rng(seed)
    areas = np.array([p.area() for p in scene.primitives])
    owner = rng.choice(len(areas), size=n, p=areas / areas.sum())
    xyz = np.zeros((n, 3))
    rgb = np.zeros((n, 3))
    for k, prim in enumerate(scene.primitives):
        idx = np.flatnonzero(owner == k)
        if len(idx):
            xyz[idx] = prim.sample_surface(len(idx), rng)
            rgb[idx] = prim.albedo
    return xyz, rgb


def save_dataset(out_dir, manifest: DatasetManifest, images, labels=None, manifest_name="manifest.json"):
    out_dir = Path(out_dir)
    for fr, img in zip(manifest.frames, images):
        path = out_dir / fr.image_ref
        path.parent.mkdir(parents=True, exist_ok=True)
        write_image(path, img)
    (out_dir / manifest_name).write_text(dump_manifest(manifest))
    if labels is not None:
        payload = {str(k): v for k, v in sorted(labels.items())}
        (out_dir / "labels.json").write_text(json.dumps(payload, indent=2) + "\n")
