import numpy as np
import pytest

from ebsr.layers import depth_to_space, space_to_depth
from ebsr.network import (
    CheckpointError,
    ChecksumError,
    ConfigError,
    Model,
    ModelConfig,
    ShapeMismatchError,
    build_model,
    load_checkpoint,
    save_checkpoint,
    upsample_tail,
)
from ebsr.synthetic import synthetic_set
from ebsr.tensor import DimensionError

SMALL = dict(blocks=2, channels=16)


@pytest.fixture(scope="module")
def images():
    return np.stack(synthetic_set(2, 24, 24, seed=3))


@pytest.mark.parametrize("kw", [dict(scale=5), dict(blocks=0), dict(channels=4), dict(variant="xx"),
                                dict(variant="ebsr_sq", sq_bits=(8, 8)), dict(sq_bits=(4, 4)), dict(tail="nope")])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_same_seed_same_parameters():
    a, b = build_model(ModelConfig(**SMALL), seed=7), build_model(ModelConfig(**SMALL), seed=7)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa, pb)


@pytest.mark.parametrize("scale,size", [(4, 128), (3, 96), (2, 64)])
def test_output_shape(scale, size):
    m = Model(ModelConfig(scale=scale, **SMALL))
    x = np.random.default_rng(0).random((1, 3, 32, 32), dtype=np.float32)
    m.calibrate(x)
    assert m.forward(x).shape == (1, 3, size, size)


def test_channel_mismatch():
    with pytest.raises(DimensionError):
        Model(ModelConfig(**SMALL)).forward(np.zeros((1, 4, 8, 8), dtype=np.float32))


@pytest.mark.parametrize("variant,kw", [("ebsr", {}), ("baseline", {}), ("spatial_only", {}), ("channel_only", {}),
                                        ("ebsr_sq", {"sq_bits": (4, 4)}), ("fp", {})])
def test_init_output_bounded(images, variant, kw):
    m = Model(ModelConfig.light(variant=variant, **kw))
    m.calibrate(images)
    out = m.forward(images, clamp=False)
    assert np.all(np.isfinite(out)) and np.abs(out).max() <= 10


def test_inference_clamps(images):
    m = Model(ModelConfig(**SMALL))
    m.calibrate(images)
    out = m.forward(images)
    assert out.min() >= 0 and out.max() <= 1


def test_depth_to_space_definition():
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
    np.testing.assert_array_equal(depth_to_space(x, 2)[0, 0], [[1, 2], [3, 4]])
    y = np.random.default_rng(0).standard_normal((2, 18, 3, 4))
    np.testing.assert_array_equal(space_to_depth(depth_to_space(y, 3), 3), y)


def test_upsample_tail_shapes():
    f = np.random.default_rng(0).standard_normal((1, 8, 5, 5)).astype(np.float32)
    assert upsample_tail(f, 4).shape == (1, 3, 20, 20)
    assert upsample_tail(f, 3).shape == (1, 3, 15, 15)
    with pytest.raises(ConfigError):
        upsample_tail(f, 5)


def test_audit_precision_classes():
    m = Model(ModelConfig(blocks=3, channels=16))
    rows = m.audit()
    binary = [r for r in rows if r[1] == "binary"]
    assert len(binary) == 6 and all(r[2] == "W1A1" for r in binary)
    kinds = {name: kind for name, kind, _ in rows}
    assert kinds["head"] == "fp"
    assert all(kind == "fp" for name, kind in kinds.items() if name.startswith("tail"))


def test_global_residual_wiring(images):
    m = Model(ModelConfig(rho=0.0, **SMALL))
    m.calibrate(images)
    feats = m.features(images)
    np.testing.assert_array_equal(feats["tail_in"], 2 * feats["head"])
    # body blocks are identities here, so tail input = body output + head output
    np.testing.assert_array_equal(feats["body.1"], feats["head"])


def test_forward_deterministic(images):
    m = Model(ModelConfig(**SMALL))
    m.calibrate(images)
    assert m.forward(images).tobytes() == m.forward(images).tobytes()


def test_checkpoint_roundtrip(tmp_path, images):
    m = Model(ModelConfig(variant="ebsr_sq", sq_bits=(2, 4), **SMALL), seed=3)
    m.calibrate(images)
    p1, p2 = tmp_path / "a.ebsr", tmp_path / "b.ebsr"
    save_checkpoint(m, p1)
    m2 = load_checkpoint(p1)
    save_checkpoint(m2, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert m2.cfg == m.cfg and m2.calibrated
    for (n1, a), (n2, b) in zip(m.named_parameters(), m2.named_parameters()):
        assert n1 == n2 and a.tobytes() == b.tobytes()


def test_checkpoint_corruption(tmp_path):
    p = tmp_path / "m.ebsr"
    save_checkpoint(Model(ModelConfig(**SMALL)), p)
    data = bytearray(p.read_bytes())
    data[len(data) // 2] ^= 0x40
    p.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        load_checkpoint(p)
    p.write_bytes(b"NOPE" + bytes(data[4:]))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_checkpoint_into_mismatched_config(tmp_path):
    p = tmp_path / "m.ebsr"
    save_checkpoint(Model(ModelConfig(**SMALL)), p)
    with pytest.raises(ShapeMismatchError, match="head.weight"):
        load_checkpoint(p, ModelConfig(blocks=2, channels=32))
