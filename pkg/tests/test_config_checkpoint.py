import json

import numpy as np
import pytest

from radfield import checkpoint
from radfield.checkpoint import Checkpoint
from radfield.config import from_dict, to_dict
from radfield.errors import ConfigError, ImageReadError, MalformedManifestError
from radfield.geometry import DatasetManifest, FrameEntry, Intrinsics, Pose
from radfield.nerf.encoding import EncodingConfig
from radfield.nerf.train import NerfTrainConfig, init_nerf
from radfield.splat.gaussians import PARAM_GROUPS, init_from_points
from radfield.splat.train import SplatTrainConfig


def _manifest():
    return DatasetManifest(
        Intrinsics(10, 10, 5, 5, 10, 10), (FrameEntry("a.png", Pose.identity()),), ((-1, -1, -1), (1, 1, 1))
    )


# ---------------------------------------------------------------- config


def test_from_dict_partial_and_nested():
    cfg = from_dict(NerfTrainConfig, {"iterations": 5, "encoding": {"kind": "hash"}, "background_color": [1, 1, 1]})
    assert cfg.iterations == 5 and cfg.encoding.kind == "hash" and cfg.encoding.hash_levels == 8
    assert cfg.background_color == (1, 1, 1) and cfg.n_coarse == 64
    assert from_dict(NerfTrainConfig, to_dict(cfg)) == cfg


def test_from_dict_is_strict():
    with pytest.raises(ConfigError, match="bogus"):
        from_dict(NerfTrainConfig, {"bogus": 1})
    with pytest.raises(ConfigError, match="encoding.levels"):
        from_dict(NerfTrainConfig, {"encoding": {"levels": 3}})
    with pytest.raises(ConfigError, match="learning_rates.colour"):
        from_dict(SplatTrainConfig, {"learning_rates": {"colour": 1.0}})
    with pytest.raises(ConfigError):
        from_dict(NerfTrainConfig, [1, 2])
    with pytest.raises(ConfigError):
        from_dict(EncodingConfig, {"hash_table_size": 1000})


def test_from_dict_layers_on_base():
    base = NerfTrainConfig(iterations=7)
    cfg = from_dict(NerfTrainConfig, {"seed": 3}, base)
    assert (cfg.iterations, cfg.seed) == (7, 3)


def test_invalid_values_become_config_errors():
    with pytest.raises(ConfigError, match="iterations"):
        from_dict(NerfTrainConfig, {"iterations": -1})


# ---------------------------------------------------------------- checkpoints


@pytest.mark.parametrize("kind", ["frequency", "hash"])
def test_nerf_checkpoint_round_trip(kind, tmp_path):
    cfg = NerfTrainConfig(encoding=EncodingConfig(kind=kind, hash_table_size=2**8, hash_levels=2))
    params = init_nerf(_manifest(), cfg)
    ck = Checkpoint("nerf", params, cfg, {"iterations": 0})
    size = checkpoint.save(tmp_path / "c.json", ck)
    assert size == (tmp_path / "c.json").stat().st_size
    back = checkpoint.load(tmp_path / "c.json")
    assert back.method == "nerf" and back.config == cfg and back.meta == {"iterations": 0}
    assert back.model.aabb == ((-1, -1, -1), (1, 1, 1))
    assert set(back.model.arrays) == set(params.arrays)
    for k, v in params.arrays.items():
        assert back.model.arrays[k].dtype == v.dtype
        np.testing.assert_array_equal(back.model.arrays[k], v)
    assert checkpoint.to_json(back) == checkpoint.to_json(ck)


def test_splat_checkpoint_round_trip(rng):
    g = init_from_points(rng.random((9, 3)), rng.random((9, 3)), sh_degree=3)
    g.sh += rng.normal(size=g.sh.shape)
    cfg = SplatTrainConfig(iterations=3)
    text = checkpoint.to_json(Checkpoint("splat", g, cfg, {"splat_count": 9}))
    back = checkpoint.from_json(text)
    for name in PARAM_GROUPS:
        np.testing.assert_array_equal(getattr(back.model, name), getattr(g, name))
    assert back.config == cfg
    assert checkpoint.to_json(back) == text


def test_checkpoint_errors(tmp_path):
    with pytest.raises(MalformedManifestError):
        checkpoint.from_json("{")
    with pytest.raises(MalformedManifestError, match="not a radfield"):
        checkpoint.from_json(json.dumps({"format": "other"}))
    with pytest.raises(MalformedManifestError):
        checkpoint.from_json(json.dumps({"format": "radfield-checkpoint", "version": 99}))
    with pytest.raises(MalformedManifestError):
        checkpoint.from_json(json.dumps({"format": "radfield-checkpoint", "version": 1, "method": "splat"}))
    with pytest.raises(ImageReadError):
        checkpoint.load(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        checkpoint.to_json(Checkpoint("voxels", None, NerfTrainConfig()))


def test_truncated_nerf_arrays_are_rejected():
    cfg = NerfTrainConfig()
    doc = json.loads(checkpoint.to_json(Checkpoint("nerf", init_nerf(_manifest(), cfg), cfg)))
    doc["model"]["arrays"].pop(sorted(doc["model"]["arrays"])[0])
    with pytest.raises((MalformedManifestError, ConfigError)):
        checkpoint.from_json(json.dumps(doc))
