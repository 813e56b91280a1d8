import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radfield.errors import ConfigError, DomainError, TrainingDivergedError
from radfield.nerf import (
    EncodingConfig,
    NerfTrainConfig,
    NetworkConfig,
    RayBatch,
    field_eval,
    freq_encode,
    hash_encode,
    hash_lookup,
    init_field_params,
    invert_cdf,
    merge_samples,
    nerf_export_pointcloud,
    nerf_grad,
    nerf_loss,
    nerf_train,
    pdf_sample,
    prepare_samples,
    stratified_sample,
    volume_render,
)
from radfield.nerf.encoding import hash_encode_backward, hash_index
from radfield.nerf.field import layer_shapes
from radfield.nerf.render import volume_render_backward

# ---------------------------------------------------------------- frequency encoding


def test_freq_encode_examples():
    f = freq_encode(np.zeros(3), 5)
    assert f.shape == (30,)
    np.testing.assert_array_equal(f.reshape(3, 5, 2)[..., 0], 0.0)
    np.testing.assert_array_equal(f.reshape(3, 5, 2)[..., 1], 1.0)
    assert freq_encode(np.zeros((7, 3)), 10).shape == (7, 60)
    half = freq_encode(np.full(3, 0.5), 1).reshape(3, 2)
    np.testing.assert_allclose(half, [[1, 0]] * 3, atol=1e-15)


def test_freq_encode_keeps_float32():
    assert freq_encode(np.zeros((2, 3), dtype=np.float32), 4).dtype == np.float32


# ---------------------------------------------------------------- hash encoding

SMALL_HASH = EncodingConfig(kind="hash", hash_levels=3, hash_table_size=2**6, hash_features=2, hash_base_res=4)


def _tables(cfg, rng):
    return rng.normal(size=(cfg.hash_levels, cfg.hash_table_size, cfg.hash_features))


def _direct_hash_encode(x, cfg, tables):
    """Per point, per level: hash the 8 corners one at a time and trilinearly blend."""
    out = []
    for p in x:
        feats = []
        for lvl, res in enumerate(cfg.level_resolutions()):
            s = p * res
            b = np.floor(s)
            f = s - b
            acc = np.zeros(cfg.hash_features)
            for c in range(8):
                off = np.array([(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1])
                w = np.prod(np.where(off == 1, f, 1 - f))
                idx = hash_index((b + off)[None].astype(np.int64), cfg.hash_table_size)[0]
                acc += w * tables[lvl, idx]
            feats.append(acc)
        out.append(np.concatenate(feats))
    return np.array(out)


def test_hash_config_validation():
    with pytest.raises(ConfigError):
        EncodingConfig(kind="hash", hash_table_size=1000)
    with pytest.raises(ConfigError):
        EncodingConfig(kind="grid")
    with pytest.raises(ConfigError):
        EncodingConfig(hash_levels=0)


def test_hash_index_uses_xor_of_prime_products():
    c = np.array([[3, 5, 7]])
    expected = (3 * 1) ^ (5 * 2654435761) ^ (7 * 805459861)
    assert hash_index(c, 2**10)[0] == expected % 2**10


def test_hash_on_vertex_returns_entry(rng):
    cfg = SMALL_HASH
    tables = _tables(cfg, rng)
    res = cfg.level_resolutions()
    # (0.5, 0.25, 0.75) is a lattice vertex at every level whose resolution is a multiple of 4
    x = np.array([[0.5, 0.25, 0.75]])
    feats = hash_encode(x, cfg, tables).reshape(cfg.hash_levels, cfg.hash_features)
    for lvl, r in enumerate(res):
        if r % 4 == 0:
            idx = hash_index((x * r).astype(np.int64), cfg.hash_table_size)[0]
            np.testing.assert_allclose(feats[lvl], tables[lvl, idx], atol=1e-14)


def test_hash_zero_tables_and_cell_centre(rng):
    cfg = SMALL_HASH
    assert np.all(hash_encode(rng.random((5, 3)), cfg, np.zeros((3, 64, 2))) == 0)
    tables = _tables(cfg, rng)
    r0 = cfg.level_resolutions()[0]
    x = np.array([[1.5, 2.5, 0.5]]) / r0
    got = hash_encode(x, cfg, tables)[0, :2]
    corners = [
        tables[0, hash_index(np.array([[1 + dx, 2 + dy, 0 + dz]]), cfg.hash_table_size)[0]]
        for dx in (0, 1)
        for dy in (0, 1)
        for dz in (0, 1)
    ]
    np.testing.assert_allclose(got, np.mean(corners, axis=0), atol=1e-14)


def test_hash_outside_unit_cube():
    with pytest.raises(DomainError):
        hash_lookup(np.array([[0.5, 1.01, 0.5]]), SMALL_HASH)


@given(st.integers(0, 10_000))
def test_hash_encode_matches_direct_evaluation(seed):
    rng = np.random.default_rng(seed)
    tables = _tables(SMALL_HASH, rng)
    x = rng.random((6, 3))
    np.testing.assert_allclose(hash_encode(x, SMALL_HASH, tables), _direct_hash_encode(x, SMALL_HASH, tables), atol=1e-12)


def test_hash_backward_is_adjoint(rng):
    cfg = SMALL_HASH
    x = rng.random((9, 3))
    lookup = hash_lookup(x, cfg)
    tables = _tables(cfg, rng)
    g = rng.normal(size=(9, cfg.pos_dim))
    gt = hash_encode_backward(g, cfg, lookup, tables.shape)
    # <g, E t> == <E^T g, t> for the linear map E
    assert np.sum(g * hash_encode(x, cfg, tables, lookup)) == pytest.approx(np.sum(gt * tables), rel=1e-12)


# ---------------------------------------------------------------- field network

NET = NetworkConfig(depth=2, width=16)
BOX = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


def test_zero_weights_give_zero_density_and_grey():
    enc = EncodingConfig()
    p = init_field_params(enc, NET, BOX, np.random.default_rng(0))
    for v in p.arrays.values():
        v[...] = 0
    sigma, rgb = field_eval(p, np.ones((4, enc.pos_dim)), np.ones((4, enc.dir_dim)))
    assert np.all(sigma == 0)
    np.testing.assert_array_equal(rgb, 0.5)


@given(st.integers(0, 10_000))
def test_density_ignores_direction(seed):
    rng = np.random.default_rng(seed)
    enc = EncodingConfig(pos_bands=4, dir_bands=2)
    p = init_field_params(enc, NET, BOX, rng)
    pos = rng.normal(size=(5, enc.pos_dim))
    s1, _ = field_eval(p, pos, rng.normal(size=(5, enc.dir_dim)))
    s2, _ = field_eval(p, pos, rng.normal(size=(5, enc.dir_dim)))
    np.testing.assert_array_equal(s1, s2)


def test_hand_computed_forward_pass():
    enc = EncodingConfig(pos_bands=1, dir_bands=1)  # pos_dim 6, dir_dim 6
    net = NetworkConfig(depth=1, width=2, view_width=1)
    p = init_field_params(enc, net, BOX, np.random.default_rng(0))
    a = p.arrays
    for k in a:
        a[k][...] = 0
    a["fine.trunk0.weight"][0] = [1.0, -1.0]
    a["fine.trunk0.bias"][:] = [0.5, 0.25]
    a["fine.density.weight"][:, 0] = [2.0, 3.0]
    a["fine.density.bias"][:] = -0.5
    a["fine.view.weight"][:, 0] = [1.0, 1.0, 0.5, 0, 0, 0, 0, 0]
    a["fine.color.weight"][0] = [1.0, -1.0, 0.0]
    pos = np.array([[0.2, 0, 0, 0, 0, 0]])
    dirf = np.array([[0.4, 0, 0, 0, 0, 0]])
    # trunk: relu(0.2 + 0.5, -0.2 + 0.25) = (0.7, 0.05)
    h = np.array([0.7, 0.05])
    sigma_ref = max(2.0 * h[0] + 3.0 * h[1] - 0.5, 0.0)
    hv = max(h[0] + h[1] + 0.5 * 0.4, 0.0)
    rgb_ref = 1 / (1 + np.exp(-np.array([hv, -hv, 0.0])))
    sigma, rgb = field_eval(p, pos, dirf)
    assert sigma[0] == pytest.approx(sigma_ref, abs=1e-15)
    np.testing.assert_allclose(rgb[0], rgb_ref, atol=1e-15)


def test_dimension_mismatch():
    enc = EncodingConfig()
    p = init_field_params(enc, NET, BOX, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        field_eval(p, np.ones((1, 5)), np.ones((1, enc.dir_dim)))
    with pytest.raises(ConfigError):
        field_eval(p, np.ones((1, enc.pos_dim)), np.ones((1, enc.dir_dim)), which="medium")


def test_layer_shapes_chain():
    enc = EncodingConfig(kind="hash")
    shapes = layer_shapes(enc, NetworkConfig(depth=3, width=8))
    assert shapes["fine.trunk0.weight"] == (enc.pos_dim, 8)
    assert shapes["fine.trunk2.weight"] == (8, 8)
    assert shapes["coarse.view.weight"] == (8 + enc.dir_dim, 4)
    assert shapes["coarse.hash_table"] == (8, 2**14, 2)


# ---------------------------------------------------------------- sampling


def test_stratified_examples(rng):
    t, _ = stratified_sample([2.0], [3.0], 1, rng)
    assert 2.0 <= t[0, 0] <= 3.0
    t, _ = stratified_sample([1.0], [5.0], 4)
    np.testing.assert_allclose(t[0], 1 + (np.arange(4) + 0.5) * 1.0)
    with pytest.raises(DomainError):
        stratified_sample([0.0], [1.0], 0)


@given(st.integers(1, 64), st.integers(0, 10_000))
def test_stratified_increasing_and_in_bins(n, seed):
    t, edges = stratified_sample([0.5, 2.0], [4.0, 2.5], n, np.random.default_rng(seed))
    assert np.all(np.diff(t, axis=1) > 0)
    assert np.all(t >= edges[:, :-1]) and np.all(t <= edges[:, 1:])


def test_pdf_sample_single_bin(rng):
    edges = np.linspace(0, 4, 5)[None]
    t = pdf_sample(np.array([[0, 0, 1.0, 0]]), edges, 50, rng)
    assert np.all((t >= 2) & (t <= 3))


def test_invert_cdf_hand_example():
    edges = np.linspace(0, 4, 5)[None]
    t = invert_cdf(np.array([[0, 1.0, 0, 1.0]]), edges, np.array([[0.25]]))
    assert t[0, 0] == pytest.approx(1.5)


def test_pdf_sample_uniform_matches_stratified():
    edges = np.linspace(0, 1, 9)[None]
    t = pdf_sample(np.ones((1, 8)), edges, 1000, np.random.default_rng(0))[0]
    # every equal-width bin receives the same share up to stratification
    counts = np.histogram(t, bins=10, range=(0, 1))[0]
    assert np.all(np.abs(counts - 100) <= 2)
    # degenerate weights fall back to uniform as well
    t0 = pdf_sample(np.zeros((1, 8)), edges, 1000)[0]
    np.testing.assert_allclose(t0, (np.arange(1000) + 0.5) / 1000, atol=1e-12)


def test_merge_sorted():
    out = merge_samples(np.array([[1.0, 3.0]]), np.array([[2.0, 0.5]]))
    np.testing.assert_array_equal(out, [[0.5, 1.0, 2.0, 3.0]])


# ---------------------------------------------------------------- compositing


def test_volume_render_examples():
    ts = np.array([[1.0, 2.0, 3.0]])
    cols = np.random.default_rng(0).random((1, 3, 3))
    out = volume_render(np.zeros((1, 3)), cols, ts, 4.0, background=(0.2, 0.3, 0.4))
    np.testing.assert_array_equal(out.rgb[0], [0.2, 0.3, 0.4])
    assert np.all(out.weights == 0) and out.transmittance[0] == 1
    out = volume_render(np.array([[1e300, 1.0, 1.0]]), cols, ts, 4.0)
    np.testing.assert_allclose(out.rgb[0], cols[0, 0])
    assert out.weights[0, 0] == 1.0


def test_volume_render_two_sample_composite():
    ln2 = math.log(2.0)
    out = volume_render(np.array([[ln2, ln2]]), np.array([[[1, 0, 0], [0, 1, 0]]], float), np.array([[0.0, 1.0]]), 2.0)
    assert out.rgb[0].tolist() == [0.5, 0.25, 0.0]
    assert out.transmittance[0] == 0.25


def test_volume_render_errors():
    with pytest.raises(DomainError):
        volume_render(np.ones((1, 2)), np.ones((1, 2, 3)), np.array([[2.0, 1.0]]), 3.0)
    with pytest.raises(DomainError):
        volume_render(-np.ones((1, 2)), np.ones((1, 2, 3)), np.array([[1.0, 2.0]]), 3.0)


@given(st.integers(0, 10_000), st.integers(1, 40), st.floats(0, 50))
def test_weight_bounds(seed, n, scale):
    rng = np.random.default_rng(seed)
    sig = rng.random((3, n)) * scale
    ts = np.sort(rng.random((3, n)) * 4, axis=1)
    out = volume_render(sig, rng.random((3, n, 3)), ts, 5.0)
    assert np.all(out.weights >= 0) and np.all(out.weights <= 1)
    assert np.all(out.weights.sum(1) <= 1 + 1e-6)
    np.testing.assert_allclose(out.transmittance, 1 - out.weights.sum(1), atol=1e-6)
    assert np.all((out.transmittance >= 0) & (out.transmittance <= 1))


@given(st.floats(0, 20), st.integers(1, 32), st.floats(0.1, 3))
def test_segment_split_consistency(sigma, k, length):
    c = np.array([0.3, 0.6, 0.9])
    one = volume_render(np.array([[sigma]]), c[None, None], np.array([[0.0]]), length)
    ts = (np.arange(k) * length / k)[None]
    many = volume_render(np.full((1, k), sigma), np.tile(c, (1, k, 1)), ts, length)
    np.testing.assert_allclose(many.rgb, one.rgb, atol=1e-12, rtol=0)
    assert many.transmittance[0] == pytest.approx(one.transmittance[0], abs=1e-12)


def test_volume_render_backward_matches_finite_differences(rng):
    R, S = 3, 6
    sig = rng.random((R, S)) * 2
    col = rng.random((R, S, 3))
    ts = np.sort(rng.random((R, S)) * 3, axis=1)
    bg = np.array([0.1, 0.5, 0.2])
    g = rng.normal(size=(R, 3))

    def f(s, c):
        return np.sum(volume_render(s, c, ts, 3.5, bg).rgb * g)

    d_sig, d_col = volume_render_backward(volume_render(sig, col, ts, 3.5, bg), g)
    h = 1e-6
    for i in np.ndindex(R, S):
        e = np.zeros_like(sig)
        e[i] = h
        assert d_sig[i] == pytest.approx((f(sig + e, col) - f(sig - e, col)) / (2 * h), rel=1e-6, abs=1e-9)
    e = np.zeros_like(col)
    e[1, 2, 0] = h
    assert d_col[1, 2, 0] == pytest.approx((f(sig, col + e) - f(sig, col - e)) / (2 * h), rel=1e-6)


# ---------------------------------------------------------------- loss, gradient, training


def _tiny_setup(kind="frequency", seed=0):
    enc = EncodingConfig(kind=kind, pos_bands=4, dir_bands=2, hash_levels=3, hash_table_size=2**6, hash_base_res=4)
    rng = np.random.default_rng(seed)
    p = init_field_params(enc, NET, BOX, rng)
    cfg = NerfTrainConfig(n_coarse=8, n_fine=8, encoding=enc, network=NET)
    R = 3
    o = np.tile([0.0, 0.0, 3.0], (R, 1)) + rng.normal(size=(R, 3)) * 0.1
    d = np.array([0, 0, -1.0]) + rng.normal(size=(R, 3)) * 0.2
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    batch = prepare_samples(p, RayBatch(o, d, np.full(R, 2.0), np.full(R, 4.0)), cfg, rng)
    return p, cfg, batch, rng


def test_loss_single_ray_example():
    p, cfg, batch, _ = _tiny_setup()
    p.arrays["coarse.density.bias"][:] = -1e3
    p.arrays["fine.density.bias"][:] = -1e3
    one = RayBatch(batch.origins[:1], batch.dirs[:1], batch.t_near[:1], batch.t_far[:1], batch.t_coarse[:1], batch.t_all[:1])
    assert nerf_loss(p, one, np.ones((1, 3))) == 2.0


def test_zero_loss_gives_zero_gradient():
    p, cfg, batch, rng = _tiny_setup()
    assert nerf_loss(p, batch, rng.random((len(batch), 3))) >= 0
    # an empty field renders the black background on both passes
    p.arrays["coarse.density.bias"][:] = -1e3
    p.arrays["fine.density.bias"][:] = -1e3
    target = np.zeros((len(batch), 3))
    assert nerf_loss(p, batch, target) == 0.0
    assert all(np.all(v == 0) for v in nerf_grad(p, batch, target).values())


def test_empty_batch_rejected():
    p, cfg, batch, _ = _tiny_setup()
    empty = RayBatch(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros(0))
    with pytest.raises(DomainError):
        nerf_loss(p, empty, np.zeros((0, 3)))


@pytest.mark.parametrize("kind", ["frequency", "hash"])
def test_gradient_spot_check(kind):
    p, cfg, batch, rng = _tiny_setup(kind, seed=3)
    target = rng.random((len(batch), 3))
    g = nerf_grad(p, batch, target)
    for name in ("fine.trunk0.weight", "coarse.color.bias", "fine.density.weight"):
        v = p.arrays[name]
        i = np.argmax(np.abs(g[name]))
        old = v.flat[i]
        h = 1e-6
        v.flat[i] = old + h
        lp = nerf_loss(p, batch, target)
        v.flat[i] = old - h
        lm = nerf_loss(p, batch, target)
        v.flat[i] = old
        assert g[name].flat[i] == pytest.approx((lp - lm) / (2 * h), rel=1e-4)


def _two_view_dataset():
    from radfield.synthetic import build_manifest, default_intrinsics, orbit_poses, render_views, sphere_scene, OrbitRig

    scene = sphere_scene()
    intr = default_intrinsics(12)
    poses = orbit_poses(OrbitRig(n_frames=3, loops=1, radius=2.5))
    return build_manifest(intr, poses, scene), render_views(scene, intr, poses, 1)


def test_training_is_deterministic():
    m, imgs = _two_view_dataset()
    cfg = NerfTrainConfig(iterations=6, rays_per_batch=16, n_coarse=8, n_fine=8, log_every=2, network=NET)
    p1, log1 = nerf_train(m, imgs, cfg)
    p2, log2 = nerf_train(m, imgs, cfg)
    assert log1.rows == log2.rows
    assert all(np.array_equal(p1.arrays[k], p2.arrays[k]) for k in p1.arrays)
    assert log1.to_csv().splitlines()[0] == "iteration,loss,psnr"
    assert all(v.dtype == np.float32 for v in p1.arrays.values())


def test_training_divergence_is_reported():
    m, imgs = _two_view_dataset()
    imgs = [np.full_like(imgs[0], np.nan)] + imgs[1:]
    cfg = NerfTrainConfig(iterations=50, rays_per_batch=64, n_coarse=4, n_fine=4, network=NET, seed=1)
    with pytest.raises(TrainingDivergedError) as exc:
        nerf_train(m, imgs, cfg)
    assert exc.value.iteration >= 1


def test_training_needs_two_views():
    m, imgs = _two_view_dataset()
    with pytest.raises(DomainError):
        nerf_train(m.subset([0]), imgs[:1], NerfTrainConfig(iterations=1))


def test_config_validation():
    with pytest.raises(DomainError):
        NerfTrainConfig(n_fine=0)
    with pytest.raises(DomainError):
        NerfTrainConfig(iterations=-1)
    assert NerfTrainConfig().n_fine == 192


# ---------------------------------------------------------------- export


def test_export_of_empty_field():
    p = init_field_params(EncodingConfig(), NET, BOX, np.random.default_rng(0))
    p.arrays["fine.density.bias"][:] = -1e3
    xyz, rgb = nerf_export_pointcloud(p, 8, 0.0)
    assert len(xyz) == 0 and rgb.shape == (0, 3)


def test_export_size_bound():
    p = init_field_params(EncodingConfig(), NET, BOX, np.random.default_rng(0))
    p.arrays["fine.density.bias"][:] = 5.0
    xyz, rgb = nerf_export_pointcloud(p, 6, 0.0)
    assert 0 < len(xyz) <= 6**3
    assert np.all((rgb >= 0) & (rgb <= 1))
    assert np.all(np.abs(xyz) < 1)


def test_export_of_trained_sphere():
    """Density learned from a lone sphere concentrates on it."""
    from radfield.synthetic import OrbitRig, build_manifest, default_intrinsics, orbit_poses, render_views, sphere_scene

    radius = 0.5
    scene = sphere_scene(radius)
    intr = default_intrinsics(32)
    poses = orbit_poses(OrbitRig(n_frames=8, radius=2.5))
    manifest = build_manifest(intr, poses, scene)
    images = render_views(scene, intr, poses, 2)
    # on a mostly black frame a large step size can switch the ReLU density off everywhere
    cfg = NerfTrainConfig(iterations=1000, learning_rate=1e-3, rays_per_batch=128, n_coarse=32, n_fine=32, log_every=0)
    params, _ = nerf_train(manifest, images, cfg)
    xyz, _ = nerf_export_pointcloud(params, 32, 2.0)
    assert len(xyz) > 100
    inside = np.linalg.norm(xyz, axis=1) <= 1.2 * radius
    assert inside.mean() >= 0.9
