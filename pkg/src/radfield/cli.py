"""Command-line pipeline: synth, filter, validate-poses, train, render, compare, export.

Every subcommand writes into ``--out`` and fails with one stderr line
``error: <category>: <message>`` and an exit code specific to the category.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .blur import filter_dataset, score_dataset
from .config import from_dict, to_dict
from .errors import ConfigError, ImageReadError, RadFieldError
from .geometry import (
    DatasetManifest,
    FrameEntry,
    Pose,
    camera_roll,
    dump_manifest,
    load_manifest,
    validate_trajectory,
)
from .imageio import make_loader, write_png
from .metrics import build_comparison
from .nerf.train import NerfTrainConfig, init_nerf, nerf_export_pointcloud, nerf_render_image, nerf_train
from .splat.gaussians import init_from_points
from .splat.ply import parse_ply, pointcloud_export, splat_export
from .splat.train import SplatTrainConfig, splat_render_image, splat_train
from .synthetic import (
    DATASET_SUPERSAMPLE,
    OrbitRig,
    build_manifest,
    default_intrinsics,
    default_scene,
    heldout_rig,
    make_blur_corpus,
    make_tilted_variant,
    orbit_poses,
    render_views,
    sample_surface_points,
    save_dataset,
    sphere_scene,
)

log = logging.getLogger("radfield")

EXIT_CODES = {
    "config": 2,
    "io": 3,
    "insufficient-data": 4,
    "diverged": 5,
    "malformed-manifest": 6,
    "invalid-pose": 7,
    "empty-result": 8,
    "degenerate-scene": 9,
    "domain": 10,
    "degenerate-orientation": 11,
}


@dataclass(frozen=True)
class SynthConfig:
    scene: str = "default"
    image_size: int = 64
    fov_deg: float = 55.0
    rig: OrbitRig = field(default_factory=lambda: OrbitRig(n_frames=16))
    blur_sigmas: tuple[float, ...] = (2.0,)
    blurred_fraction: float = 0.25
    supersample: int = DATASET_SUPERSAMPLE
    heldout_frames: int = 8
    points: int = 500
    tilt_deg: float = 0.0
    tilt_frames: tuple[int, ...] = ()


@dataclass(frozen=True)
class FilterConfig:
    k: float = 1.0


@dataclass(frozen=True)
class ValidateConfig:
    roll_tol_deg: float = 5.0


@dataclass(frozen=True)
class ExportConfig:
    grid_res: int = 48
    sigma_threshold: float = 5.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = 1
    deterministic: bool = False
    synth: SynthConfig = field(default_factory=SynthConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    validate: ValidateConfig = field(default_factory=ValidateConfig)
    nerf: NerfTrainConfig = field(default_factory=NerfTrainConfig)
    splat: SplatTrainConfig = field(default_factory=SplatTrainConfig)
    export: ExportConfig = field(default_factory=ExportConfig)


def load_run_config(path: str | None) -> RunConfig:
    if not path:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ImageReadError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(RunConfig, data)


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    """Command-line flags win over the config file."""
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    if args.deterministic:
        cfg = replace(cfg, deterministic=True)
    if cfg.threads < 1:
        raise ConfigError("--threads must be >= 1")
    # the run seed drives both trainers
    cfg = replace(cfg, nerf=replace(cfg.nerf, seed=cfg.seed), splat=replace(cfg.splat, seed=cfg.seed))
    if getattr(args, "k", None) is not None:
        cfg = replace(cfg, filter=FilterConfig(k=args.k))
    if getattr(args, "roll_tol_deg", None) is not None:
        cfg = replace(cfg, validate=ValidateConfig(roll_tol_deg=args.roll_tol_deg))
    if getattr(args, "iterations", None) is not None:
        if args.iterations < 0:
            raise ConfigError("--iterations must be >= 0")
        cfg = replace(cfg, nerf=replace(cfg.nerf, iterations=args.iterations))
        cfg = replace(cfg, splat=replace(cfg.splat, iterations=args.iterations))
    if getattr(args, "tilt_deg", None) is not None:
        cfg = replace(cfg, synth=replace(cfg.synth, tilt_deg=args.tilt_deg))
    if getattr(args, "tilt_frames", None) is not None:
        try:
            frames = tuple(int(x) for x in args.tilt_frames.split(",") if x.strip())
        except ValueError as exc:
            raise ConfigError(f"--tilt-frames must be comma-separated integers: {exc}") from exc
        cfg = replace(cfg, synth=replace(cfg.synth, tilt_frames=frames))
    return cfg


# ---------------------------------------------------------------- helpers


def _read_manifest(path) -> tuple[DatasetManifest, Path]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ImageReadError(f"cannot read manifest {path}: {exc}") from exc
    return load_manifest(text), path.parent


def _load_images(manifest: DatasetManifest, base: Path) -> list[np.ndarray]:
    loader = make_loader(base)
    images = []
    for i, fr in enumerate(manifest.frames):
        try:
            images.append(loader(fr.image_ref))
        except (OSError, ValueError) as exc:
            raise ImageReadError(f"frame {i} ({fr.image_ref}): {exc}") from None
    return images


def _rebase(manifest: DatasetManifest, src_dir: Path, dst_dir: Path) -> DatasetManifest:
    """Rewrite image references so they resolve from ``dst_dir``."""
    frames = []
    for fr in manifest.frames:
        ref = Path(fr.image_ref)
        target = ref if ref.is_absolute() else src_dir / ref
        rel = os.path.relpath(target, dst_dir)
        frames.append(FrameEntry(Path(rel).as_posix(), fr.pose, fr.sharpness))
    return manifest.with_frames(frames)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _scene(name: str):
    if name == "default":
        return default_scene()
    if name == "sphere":
        return sphere_scene()
    raise ConfigError(f"unknown scene {name!r}; expected 'default' or 'sphere'")


def _load_points(path: Path):
    try:
        props = parse_ply(path.read_bytes())
    except OSError as exc:
        raise ImageReadError(f"cannot read point cloud {path}: {exc}") from exc
    xyz = np.stack([props[c].astype(np.float64) for c in "xyz"], axis=1)
    if all(c in props for c in ("red", "green", "blue")):
        rgb = np.stack([props[c].astype(np.float64) / 255.0 for c in ("red", "green", "blue")], axis=1)
    else:
        rgb = np.full_like(xyz, 0.5)
    return xyz, rgb


def _find_points(args, manifest: DatasetManifest, manifest_dir: Path) -> Path:
    """``--points``, else a points.ply beside the manifest or beside the dataset its images came from."""
    if args.points:
        return Path(args.points)
    image_dir = (manifest_dir / manifest.frames[0].image_ref).parent
    for d in (manifest_dir, *manifest_dir.parents[:2], image_dir, *image_dir.parents[:2]):
        cand = d / "points.ply"
        if cand.exists():
            return cand
    raise ConfigError("splat training needs --points (no points.ply found near the manifest or its images)")


def _renderer(ck: ckpt_io.Checkpoint):
    if ck.method == "nerf":
        return lambda intr, pose: nerf_render_image(ck.model, intr, pose, ck.config)
    return lambda intr, pose: splat_render_image(ck.model, intr, pose, ck.config.background_color)


# ---------------------------------------------------------------- subcommands


def cmd_synth(cfg: RunConfig, args, out: Path) -> int:
    s = cfg.synth
    scene = _scene(s.scene)
    intr = default_intrinsics(s.image_size, s.fov_deg)
    manifest, images, labels = make_blur_corpus(
        scene, s.rig, intr, s.blur_sigmas, s.blurred_fraction, cfg.seed, supersample=s.supersample
    )
    if s.tilt_frames and s.tilt_deg:
        bad = [i for i in s.tilt_frames if not 0 <= i < len(manifest)]
        if bad:
            raise ConfigError(f"tilt frame indices out of range: {bad}")
        # the camera really was level; only the recorded orientation carries the roll
        poses = make_tilted_variant([f.pose for f in manifest.frames], s.tilt_deg, s.tilt_frames)
        manifest = manifest.with_frames([replace(f, pose=p) for f, p in zip(manifest.frames, poses)])
    save_dataset(out, manifest, images, labels)
    hrig = heldout_rig(s.rig, s.heldout_frames)
    hposes = orbit_poses(hrig)[: s.heldout_frames]
    hman = build_manifest(intr, hposes, scene, prefix="images/view")
    save_dataset(out / "holdout", hman, render_views(scene, intr, hposes, s.supersample))
    xyz, rgb = sample_surface_points(scene, s.points, cfg.seed)
    (out / "points.ply").write_bytes(pointcloud_export(xyz, rgb))
    print(f"synth: {len(manifest)} frames, {len(hman)} held-out views, {s.points} points -> {out}")
    return 0


def cmd_filter(cfg: RunConfig, args, out: Path) -> int:
    from .plotting import plot_filter_histogram

    manifest, base = _read_manifest(args.manifest)
    scores = score_dataset(manifest, make_loader(base), workers=1 if cfg.deterministic else cfg.threads)
    kept, report = filter_dataset(manifest, scores, cfg.filter.k)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(dump_manifest(_rebase(kept, base, out)), encoding="utf-8")
    payload = report.to_dict()
    payload["scores"] = [{"frame": s.frame_index, "variance": s.variance} for s in scores]
    _write_json(out / "report.json", payload)
    plot_filter_histogram(report, out / "filter_histogram.png")
    print(f"filter: kept {len(report.kept)}, removed {len(report.removed)} (threshold {report.threshold:.6g})")
    return 0


def cmd_validate(cfg: RunConfig, args, out: Path) -> int:
    manifest, _ = _read_manifest(args.manifest)
    tol = math.radians(cfg.validate.roll_tol_deg)
    flagged = validate_trajectory(manifest, tol)
    rolls = []
    for fr in manifest.frames:
        try:
            rolls.append(math.degrees(camera_roll(fr.pose)) + 0.0)  # no negative zeros in the report
        except RadFieldError:
            rolls.append(None)
    _write_json(out / "report.json", {"roll_tol_deg": cfg.validate.roll_tol_deg, "flagged": flagged, "roll_deg": rolls})
    print("validate-poses: flagged " + (",".join(map(str, flagged)) if flagged else "none"))
    return 0


def _threadpool(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def cmd_train(cfg: RunConfig, args, out: Path) -> int:
    from .plotting import plot_training_curve

    manifest, base = _read_manifest(args.manifest)
    images = _load_images(manifest, base)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "intrinsics": ckpt_io.intrinsics_to_dict(manifest.intrinsics),
        "aabb": [list(manifest.aabb[0]), list(manifest.aabb[1])] if manifest.aabb else None,
        "frames": len(manifest),
    }
    if args.method == "nerf":
        tcfg = cfg.nerf
        if tcfg.iterations == 0:
            model, rows, seconds = init_nerf(manifest, tcfg), [], 0.0
        else:
            model, tlog = nerf_train(manifest, images, tcfg)
            rows, seconds = tlog.rows, tlog.train_seconds
        csv_text = "iteration,loss,psnr\n" + "".join(f"{a},{b!r},{c!r}\n" for a, b, c in rows)
        extra = {"param_count": model.param_count()}
    else:
        tcfg = cfg.splat
        points = _load_points(_find_points(args, manifest, base))
        if tcfg.iterations == 0:
            model = init_from_points(*points, sh_degree=tcfg.sh_degree)
            rows, seconds = [], 0.0
        else:
            model, tlog = splat_train(manifest, images, points, tcfg)
            rows, seconds = tlog.rows, tlog.train_seconds
        csv_text = "iteration,loss,psnr,splats\n" + "".join(f"{a},{b!r},{c!r},{d}\n" for a, b, c, d in rows)
        extra = {"param_count": model.param_count(), "splat_count": len(model)}
    meta.update(extra)
    meta["iterations"] = tcfg.iterations
    meta["train_seconds"] = 0.0 if cfg.deterministic else seconds
    meta["timing_recorded"] = not cfg.deterministic
    size = ckpt_io.save(out / "ckpt.json", ckpt_io.Checkpoint(args.method, model, tcfg, meta))
    (out / "log.csv").write_text(csv_text, encoding="utf-8")
    if rows:
        plot_training_curve(rows, out / "training_curve.png", title=f"{args.method} training")
    summary = dict(meta, method=args.method, model_bytes=size)
    if rows:
        summary["final_loss"], summary["final_psnr"] = rows[-1][1], rows[-1][2]
    _write_json(out / "report.json", summary)
    print(f"train: {args.method} {tcfg.iterations} iterations, checkpoint {size} bytes -> {out / 'ckpt.json'}")
    return 0


def _render_poses(cfg: RunConfig, args, ck: ckpt_io.Checkpoint):
    if args.manifest:
        manifest, _ = _read_manifest(args.manifest)
        return manifest.intrinsics, [f.pose for f in manifest.frames]
    intr = ckpt_io.intrinsics_from_dict(ck.meta["intrinsics"])
    hrig = heldout_rig(cfg.synth.rig, cfg.synth.heldout_frames)
    return intr, orbit_poses(hrig)[: cfg.synth.heldout_frames]


def cmd_render(cfg: RunConfig, args, out: Path) -> int:
    ck = ckpt_io.load(args.checkpoint)
    intr, poses = _render_poses(cfg, args, ck)
    render = _renderer(ck)
    rdir = out / "renders"
    rdir.mkdir(parents=True, exist_ok=True)
    for i, pose in enumerate(poses):
        write_png(rdir / f"view_{i:03d}.png", np.clip(render(intr, pose), 0.0, 1.0))
    print(f"render: {len(poses)} views -> {rdir}")
    return 0


def cmd_compare(cfg: RunConfig, args, out: Path) -> int:
    from .plotting import plot_comparison

    hman, hbase = _read_manifest(args.holdout)
    targets = _load_images(hman, hbase)
    heldout = [(fr.image_ref, hman.intrinsics, fr.pose, t) for fr, t in zip(hman.frames, targets)]
    arts = {}
    timing = True
    for method, path in (("nerf", args.nerf), ("splat", args.splat)):
        ck = ckpt_io.load(path)
        if ck.method != method:
            raise ConfigError(f"--{method} checkpoint {path} holds a {ck.method} model")
        timing = timing and ck.meta.get("timing_recorded", True)
        arts[method] = {
            "render": _renderer(ck),
            "model_bytes": Path(path).stat().st_size,
            "train_seconds": ck.meta.get("train_seconds", 0.0),
            "iterations": ck.meta.get("iterations", 0),
            "param_count": ck.model.param_count(),
            "splat_count": len(ck.model) if method == "splat" else None,
        }
    report = build_comparison(arts["nerf"], arts["splat"], heldout, timing_recorded=timing and not cfg.deterministic)
    _write_json(out / "report.json", report.to_dict())
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    plot_comparison(report, out / "comparison.png")
    print(report.to_csv(), end="")
    return 0


def cmd_export(cfg: RunConfig, args, out: Path) -> int:
    ck = ckpt_io.load(args.checkpoint)
    if ck.method == "splat":
        data = splat_export(ck.model)
    else:
        xyz, rgb = nerf_export_pointcloud(ck.model, cfg.export.grid_res, cfg.export.sigma_threshold)
        data = pointcloud_export(xyz, rgb)
    out.mkdir(parents=True, exist_ok=True)
    (out / "export.ply").write_bytes(data)
    print(f"export: {len(data)} bytes -> {out / 'export.ply'}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "filter": cmd_filter,
    "validate-poses": cmd_validate,
    "train": cmd_train,
    "render": cmd_render,
    "compare": cmd_compare,
    "export": cmd_export,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: config: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CODES["config"])


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON run configuration")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--threads", type=int)
    shared.add_argument("--deterministic", action="store_true", help="single reduction order, no wall-clock fields")
    shared.add_argument("--out", default="out", help="output directory")
    shared.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="radfield", description="Radiance-field reconstruction pipeline on synthetic or posed image sets.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[shared], help="render the synthetic scene, held-out views and points")
    s.add_argument("--tilt-deg", type=float)
    s.add_argument("--tilt-frames", help="comma-separated frame indices whose recorded pose is rolled")

    f = sub.add_parser("filter", parents=[shared], help="drop blurred frames by Laplacian variance")
    f.add_argument("--manifest", required=True)
    f.add_argument("--k", type=float)

    v = sub.add_parser("validate-poses", parents=[shared], help="flag frames with camera roll")
    v.add_argument("--manifest", required=True)
    v.add_argument("--roll-tol-deg", type=float)

    t = sub.add_parser("train", parents=[shared], help="train a NeRF or a splat model")
    t.add_argument("--method", choices=("nerf", "splat"), required=True)
    t.add_argument("--manifest", required=True)
    t.add_argument("--iterations", type=int)
    t.add_argument("--points", help="PLY point cloud for splat initialization")

    r = sub.add_parser("render", parents=[shared], help="render views from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--manifest", help="render these poses instead of the held-out orbit")

    c = sub.add_parser("compare", parents=[shared], help="evaluate both methods on held-out views")
    c.add_argument("--nerf", required=True)
    c.add_argument("--splat", required=True)
    c.add_argument("--holdout", required=True, help="manifest of held-out views with images")

    e = sub.add_parser("export", parents=[shared], help="write a PLY from a checkpoint")
    e.add_argument("--checkpoint", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_run_config(args.config), args)
        out = Path(args.out)
        with _threadpool(cfg.threads):
            return COMMANDS[args.command](cfg, args, out)
    except RadFieldError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
