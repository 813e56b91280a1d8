import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radfield.errors import DomainError
from radfield.geometry import Intrinsics, camera_roll, dump_manifest, load_manifest, look_at, rotation_about_axis, validate_trajectory
from radfield.synthetic import (
    OrbitRig,
    Primitive,
    SceneSpec,
    build_manifest,
    default_intrinsics,
    default_scene,
    heldout_rig,
    make_blur_corpus,
    make_tilted_variant,
    orbit_poses,
    render_reference,
    sample_surface_points,
    save_dataset,
    sphere_scene,
)


@pytest.mark.parametrize("d", [2.0, 3.0])
def test_sphere_silhouette_radius(d):
    r = 0.5
    intr = Intrinsics.from_fov(160, 160, 40)
    img = render_reference(sphere_scene(r), intr, look_at([0, -d, 0], [0, 0, 0]))
    hit = np.any(img > 0, axis=-1)
    expected = intr.fx * r / math.sqrt(d * d - r * r)
    assert math.sqrt(hit.sum() / math.pi) == pytest.approx(expected, abs=0.5)
    assert hit[80, 80] and not hit[0, 0]


def test_miss_rays_get_background():
    scene = SceneSpec(primitives=sphere_scene().primitives, background=(0.1, 0.2, 0.3))
    img = render_reference(scene, default_intrinsics(16), look_at([0, -3, 0], [0, 0, 3]))
    np.testing.assert_array_equal(img, np.broadcast_to([0.1, 0.2, 0.3], img.shape))


def test_supersampling_averages_subpixels():
    intr = default_intrinsics(8)
    pose = look_at([2, -2, 1.5], [0, 0, 0])
    fine = render_reference(default_scene(), intr.scaled(2), pose)
    coarse = render_reference(default_scene(), intr, pose, supersample=2)
    np.testing.assert_allclose(coarse, fine.reshape(8, 2, 8, 2, 3).mean(axis=(1, 3)), atol=1e-12)
    with pytest.raises(DomainError):
        render_reference(default_scene(), intr, pose, supersample=0)


@given(st.floats(-math.pi, math.pi), st.floats(-0.5, 0.5))
def test_rigid_rotation_consistency(yaw, tilt):
    rot = rotation_about_axis((0, 0, 1), yaw) @ rotation_about_axis((1, 0, 0), tilt)
    pose = look_at([2.0, -2.2, 1.6], [0, 0, 0])
    intr = default_intrinsics(24)
    a = render_reference(default_scene(), intr, pose)
    b = render_reference(default_scene().transformed(rot), intr, pose.compose_left(rot))
    assert np.mean(np.abs(a - b) > 1e-6) < 0.01  # only grazing edge pixels may flip


def test_rotation_consistency_is_tight_for_a_yaw():
    rot = rotation_about_axis((0, 0, 1), 0.7)
    pose = look_at([2.0, -2.2, 1.6], [0, 0, 0])
    a = render_reference(default_scene(), default_intrinsics(32), pose)
    b = render_reference(default_scene().transformed(rot), default_intrinsics(32), pose.compose_left(rot))
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_primitive_validation():
    with pytest.raises(DomainError):
        Primitive("cone", (0, 0, 0), 1.0, (1, 1, 1))
    with pytest.raises(DomainError):
        Primitive("box", (0, 0, 0), (1.0, 0.0, 1.0), (1, 1, 1))
    with pytest.raises(DomainError):
        SceneSpec(primitives=())


# ---------------------------------------------------------------- trajectories


@given(st.integers(2, 20), st.integers(1, 3), st.floats(10, 80))
def test_orbit_properties(n, loops, elev):
    rig = OrbitRig(n_frames=n, loops=loops, elevation_deg=elev)
    poses = orbit_poses(rig)
    assert len(poses) == n * loops
    for i, p in enumerate(poses):
        to_target = -p.translation / np.linalg.norm(p.translation)
        np.testing.assert_allclose(p.forward, to_target, atol=1e-12)
        assert abs(camera_roll(p)) <= 1e-12
        elevation = math.degrees(math.asin(p.translation[2] / np.linalg.norm(p.translation)))
        assert elevation == pytest.approx(elev, abs=1e-9)
        radius = rig.radius * (1 + rig.radius_growth * (i // n))
        assert np.linalg.norm(p.translation) == pytest.approx(radius, rel=1e-12)
    assert validate_trajectory(build_manifest(default_intrinsics(8), poses, default_scene()), math.radians(1)) == []


def test_heldout_views_interleave_training_views():
    rig = OrbitRig(n_frames=16)
    train = orbit_poses(rig)
    held = orbit_poses(heldout_rig(rig, 8))
    assert len(held) == 16
    for h in held:
        assert min(np.linalg.norm(h.translation - t.translation) for t in train) > 0.05


def test_manifest_round_trip_of_orbit():
    poses = orbit_poses(OrbitRig(n_frames=5))
    m = build_manifest(default_intrinsics(32), poses, default_scene())
    back = load_manifest(dump_manifest(m))
    for a, b in zip(m.frames, back.frames):
        np.testing.assert_allclose(a.pose.matrix(), b.pose.matrix(), atol=1e-9, rtol=0)
    assert back.aabb == ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


def test_tilted_variant():
    poses = orbit_poses(OrbitRig(n_frames=8))
    tilted = make_tilted_variant(poses, 15.0, [1, 4])
    for i, (a, b) in enumerate(zip(poses, tilted)):
        if i in (1, 4):
            assert math.degrees(camera_roll(b)) == pytest.approx(15.0, abs=1e-9)
            np.testing.assert_allclose(a.forward, b.forward, atol=1e-12)
            np.testing.assert_array_equal(a.translation, b.translation)
        else:
            assert b is a
    m = build_manifest(default_intrinsics(8), tilted, default_scene())
    assert validate_trajectory(m, math.radians(5)) == [1, 4]
    assert make_tilted_variant(poses, 0.0, [1]) == poses


# ---------------------------------------------------------------- points and corpora


def test_surface_points_lie_on_surfaces():
    xyz, rgb = sample_surface_points(sphere_scene(0.7), 300, seed=2)
    assert xyz.shape == rgb.shape == (300, 3)
    np.testing.assert_allclose(np.linalg.norm(xyz, axis=1), 0.7, atol=1e-12)
    np.testing.assert_array_equal(rgb, np.broadcast_to((0.9, 0.5, 0.2), rgb.shape))


def test_default_scene_points_are_on_some_primitive():
    scene = default_scene()
    xyz, _ = sample_surface_points(scene, 500, seed=0)
    plane, sphere, box = scene.primitives
    on_plane = (np.abs(xyz[:, 2]) < 1e-12) & np.all(np.abs(xyz[:, :2]) <= 0.95 + 1e-12, axis=1)
    on_sphere = np.abs(np.linalg.norm(xyz - sphere.center, axis=1) - 0.35) < 1e-12
    local = np.abs((xyz - box.center) @ box.rotation) / box.half
    on_box = np.abs(local.max(axis=1) - 1) < 1e-9
    assert np.all(on_plane | on_sphere | on_box)
    a, _ = sample_surface_points(scene, 500, seed=0)
    np.testing.assert_array_equal(a, xyz)
    with pytest.raises(DomainError):
        sample_surface_points(scene, 0, seed=0)


def test_blur_corpus_labels():
    rig = OrbitRig(n_frames=4)
    m, imgs, labels = make_blur_corpus(default_scene(), rig, default_intrinsics(16), [1.0, 3.0], 0.25, seed=5, supersample=1)
    assert len(m) == len(imgs) == 8
    blurred = [i for i, lab in labels.items() if lab["blurred"]]
    assert len(blurred) == 2
    assert sorted(labels[i]["sigma"] for i in blurred) == [1.0, 3.0]
    _, _, again = make_blur_corpus(default_scene(), rig, default_intrinsics(16), [1.0, 3.0], 0.25, seed=5, supersample=1)
    assert again == labels
    with pytest.raises(DomainError):
        make_blur_corpus(default_scene(), rig, default_intrinsics(16), [1.0], 1.0, seed=0)


def test_save_dataset(tmp_path):
    m, imgs, labels = make_blur_corpus(default_scene(), OrbitRig(n_frames=2), default_intrinsics(8), [1.0], 0.5, 0, 1)
    save_dataset(tmp_path, m, imgs, labels)
    assert len(load_manifest((tmp_path / "manifest.json").read_text())) == 4
    assert all((tmp_path / f.image_ref).exists() for f in m.frames)
    assert json.loads((tmp_path / "labels.json").read_text())["0"].keys() == {"blurred", "sigma"}
