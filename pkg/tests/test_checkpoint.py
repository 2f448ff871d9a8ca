"""Binary checkpoint container and model save/load."""
import struct

import numpy as np
import pytest

from tokentrack.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from tokentrack.config import ModelConfig
from tokentrack.model import build_model, load_model, save_model


def sample_params():
    rng = np.random.default_rng(7)
    return {
        "a.weight": rng.normal(size=(4, 3)),
        "a.bias": rng.normal(size=(3,)),
        "scalar": np.asarray(2.5),
        "deep.block.0.w": rng.normal(size=(2, 2, 2)),
    }


def test_roundtrip_exact(tmp_path):
    path = tmp_path / "m.ckpt"
    params = sample_params()
    cfg = {"dim": 64, "name": "x", "flag": True}
    save_checkpoint(path, params, cfg)
    cfg2, params2, width = load_checkpoint(path)
    assert cfg2 == cfg and width == 8
    assert set(params2) == set(params)
    for name in params:
        assert params2[name].shape == params[name].shape
        assert params2[name].tobytes() == np.ascontiguousarray(params[name]).tobytes()


def test_same_content_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    params = sample_params()
    save_checkpoint(p1, params, {"k": 1})
    save_checkpoint(p2, params, {"k": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_width_four_roundtrip(tmp_path):
    path = tmp_path / "m.ckpt"
    params = {"w": np.asarray([1.5, 2.25, -3.0])}
    save_checkpoint(path, params, {}, width=4)
    _, params2, width = load_checkpoint(path)
    assert width == 4
    assert params2["w"].dtype == np.dtype("<f4")
    assert np.array_equal(params2["w"], np.asarray([1.5, 2.25, -3.0], dtype="<f4"))


def test_invalid_width_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "m.ckpt", {}, {}, width=2)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_unsupported_version_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {}, {})
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_truncated_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, sample_params(), {"k": 1})
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, sample_params(), {"k": 1})
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_model_roundtrip_preserves_forward(tmp_path):
    model = build_model(ModelConfig(), seed=3)
    path = tmp_path / "model.ckpt"
    save_model(model, path)
    model2, cfg_dump = load_model(path)
    assert cfg_dump["dim"] == model.cfg.dim

    a = dict(model.named_parameters())
    b = dict(model2.named_parameters())
    assert set(a) == set(b)
    for name in a:
        assert a[name].data.tobytes() == b[name].data.tobytes()

    rng = np.random.default_rng(0)
    refs = [rng.uniform(size=(3, model.cfg.ref_size, model.cfg.ref_size)) for _ in range(2)]
    search = rng.uniform(size=(3, model.cfg.search_size, model.cfg.search_size))
    out1 = model.forward_frame(refs, search, "rgb_only")
    out2 = model2.forward_frame(refs, search, "rgb_only")
    assert out1.maps.score.data.tobytes() == out2.maps.score.data.tobytes()
    assert out1.token_rgb.data.tobytes() == out2.token_rgb.data.tobytes()


def test_model_save_is_deterministic(tmp_path):
    model = build_model(ModelConfig(), seed=5)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_model(model, p1)
    save_model(model, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_extra_config_survives(tmp_path):
    model = build_model(ModelConfig(), seed=1)
    path = tmp_path / "m.ckpt"
    save_model(model, path, extra={"epochs": 12, "tasks": ["rgb", "rgbd"]})
    _, cfg_dump = load_model(path)
    assert cfg_dump["epochs"] == 12
    assert cfg_dump["tasks"] == ["rgb", "rgbd"]


def test_attn_override_on_load(tmp_path):
    model = build_model(ModelConfig(attn="concat"), seed=2)
    path = tmp_path / "m.ckpt"
    save_model(model, path)
    model2, _ = load_model(path, attn_override="separate")
    assert model2.cfg.attn == "separate"
    # same parameters, different wiring
    assert dict(model.named_parameters()).keys() == dict(model2.named_parameters()).keys()


def test_missing_parameter_rejected(tmp_path):
    model = build_model(ModelConfig(), seed=4)
    path = tmp_path / "m.ckpt"
    from tokentrack.config import config_dict
    params = {n: p.data for n, p in model.named_parameters()}
    params.pop("head.score.0.weight", None) or params.pop(next(iter(params)))
    save_checkpoint(path, params, config_dict(model.cfg))
    with pytest.raises((KeyError, ValueError)):
        load_model(path)
