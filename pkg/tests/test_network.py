import numpy as np
import pytest

from svbrdf_forge import network as N
from svbrdf_forge.core import SvbrdfMaps
from svbrdf_forge.gradcheck import check_network
from svbrdf_forge.tensor import Tape


def tiny(**kw):
    base = dict(input_resolution=8, first_features=4, encoder_features=(4, 8), dropout_scales=1)
    base.update(kw)
    return N.NetworkConfig(**base)


def image(res, seed=0, n=None):
    shape = (res, res, 3) if n is None else (n, res, res, 3)
    return np.random.default_rng(seed).random(shape).astype(np.float32)


def test_config_validation():
    with pytest.raises(ValueError):
        N.NetworkConfig(input_resolution=48)
    with pytest.raises(ValueError):
        N.NetworkConfig(input_resolution=16, encoder_features=(8,) * 5)
    with pytest.raises(ValueError):
        tiny(dropout_scales=3)
    cfg = N.NetworkConfig.desk32()
    assert N.NetworkConfig.from_dict(cfg.to_dict()) == cfg


def test_feature_ladders():
    full = N.NetworkConfig.full()
    assert full.scales == 8 and full.filter_size == 4 and full.dropout_scales == 3
    assert full.features == (64, 128, 256, 512, 512, 512, 512, 512, 512)
    assert full.decoder_features == tuple(reversed(full.features[:-1]))
    desk = N.NetworkConfig.desk()
    assert (desk.input_resolution, desk.encoder_features) == (64, (16, 32, 64, 128, 128))


def test_full_config_layer_shapes():
    cfg = N.NetworkConfig.full()
    shapes = dict(N.layer_shapes(cfg))
    assert shapes["enc0.conv.w"] == (4, 4, 3, 64)
    assert shapes["enc8.conv.w"] == (4, 4, 512, 512)
    assert shapes["dec1.conv_b.w"] == (4, 4, 64, 64)
    assert shapes["out.conv.w"] == (4, 4, 64, 9)
    # global vector width tracks the feature count of each scale
    assert shapes["enc2.gfc.w"] == (128 + 256, 256)
    assert shapes["out.inject.w"] == (64, 9)


def test_desk32_shape_contract():
    w = N.init_weights(N.NetworkConfig.desk32(), 0)
    out = N.predict(image(32), w)
    assert out.shape == (1, 32, 32, 9)
    assert out.min() > 0 and out.max() < 1


@pytest.mark.slow
def test_full_shape_contract():
    w = N.init_weights(N.NetworkConfig.full(), 0)
    out = N.predict(image(256), w)
    assert out.shape == (1, 256, 256, 9)
    assert out.min() > 0 and out.max() < 1


def test_wrong_resolution_rejected():
    w = N.init_weights(tiny(), 0)
    with pytest.raises(ValueError, match="8x8x3"):
        N.predict(image(16), w)
    with pytest.raises(ValueError):
        N.forward(image(8), w, mode="test")
    with pytest.raises(ValueError, match="rng"):
        N.forward(image(8), w, mode="train")


def test_init_determinism_and_biases():
    cfg = tiny()
    a, b, c = N.init_weights(cfg, 3), N.init_weights(cfg, 3), N.init_weights(cfg, 4)
    assert a.equals(b)
    assert not a.equals(c)
    for name, arr in a.arrays.items():
        if name.endswith(".b"):
            assert not arr.any(), name
    w = a.arrays["enc1.conv.w"]
    bound = np.sqrt(3.0 / (4 * 4 * 4))
    assert np.abs(w).max() <= bound and abs(w.mean()) < bound / 4


def test_plain_unet_drops_exactly_the_global_layers():
    on, off = tiny(), tiny(global_track=False)
    w_on, w_off = N.init_weights(on, 0), N.init_weights(off, 0)
    shapes = dict(N.layer_shapes(on))
    extra = sum(int(np.prod(shapes[n])) for n in N.global_track_layers(on))
    assert w_on.parameter_count() - w_off.parameter_count() == extra
    assert N.global_track_layers(off) == []

    def ops(w):
        with Tape() as tape:
            N.forward(image(8), w.tensors(), w.config)
        return tape.ops()

    for op in ("fc", "selu", "add_bias"):
        assert op in ops(w_on)
        assert op not in ops(w_off)


def test_eval_mode_is_deterministic_and_rng_free():
    w = N.init_weights(tiny(), 1)
    rng = np.random.default_rng(0)
    before = rng.bit_generator.state
    a = N.forward(image(8, n=2), w, mode="eval", rng=rng).data
    b = N.forward(image(8, n=2), w, mode="eval", rng=rng).data
    assert np.array_equal(a, b)
    assert rng.bit_generator.state == before


def test_train_mode_dropout_depends_on_rng():
    w = N.init_weights(tiny(), 1)
    a = N.forward(image(8), w, mode="train", rng=np.random.default_rng(1)).data
    b = N.forward(image(8), w, mode="train", rng=np.random.default_rng(1)).data
    c = N.forward(image(8), w, mode="train", rng=np.random.default_rng(2)).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_batch_items_are_independent():
    w = N.init_weights(tiny(), 2)
    batch = image(8, n=3)
    joint = N.predict(batch, w)
    single = N.predict(batch[1], w)
    assert np.allclose(joint[1], single[0], atol=1e-6)


def test_global_track_carries_far_content():
    # strong injections: content in one corner reaches the opposite corner via the bias path
    cfg = tiny()
    w = N.init_weights(cfg, 5)
    for name in w.arrays:
        if ".inject." in name:
            w.arrays[name] = np.random.default_rng(9).normal(0, 1, w.arrays[name].shape).astype(np.float32)
    img = image(8, 6)
    moved = img.copy()
    moved[:2, :2] = 1.0 - moved[:2, :2]
    diff = np.abs(N.predict(img, w) - N.predict(moved, w))[0]
    assert diff[-1, -1].max() > 1e-4


def test_decode_examples():
    raw = np.full((2, 2, 9), 0.5)
    raw[..., N.ROUGHNESS_SLICE] = 0.3
    maps = N.decode_prediction(raw)
    assert np.allclose(maps.normal, [0, 0, 1])
    assert np.allclose(maps.roughness, 0.3)
    with pytest.raises(ValueError):
        N.decode_prediction(np.zeros((2, 2, 8)))


def test_encode_decode_round_trip():
    rng = np.random.default_rng(3)
    xy = rng.uniform(-0.5, 0.5, (4, 4, 2))
    n = np.concatenate([xy, np.sqrt(1 - (xy**2).sum(-1, keepdims=True))], -1)
    maps = SvbrdfMaps(n, rng.random((4, 4, 3)), rng.random((4, 4, 3)), rng.random((4, 4)))
    back = N.decode_prediction(N.encode_maps(maps))
    for f in ("normal", "diffuse", "specular", "roughness"):
        assert np.abs(getattr(back, f) - getattr(maps, f)).max() < 1e-6


def test_checkpoint_round_trip_bit_exact(tmp_path):
    w = N.init_weights(N.NetworkConfig.desk32(), 7)
    w.arrays["out.conv.b"][:] = np.float32(np.pi)
    w.save(tmp_path / "a.svbf")
    raw = (tmp_path / "a.svbf").read_bytes()
    assert raw[:4] == b"SVBF"
    back = N.Weights.load(tmp_path / "a.svbf")
    assert back.equals(w)
    back.save(tmp_path / "b.svbf")
    assert (tmp_path / "b.svbf").read_bytes() == raw
    assert np.array_equal(N.predict(image(32), back), N.predict(image(32), w))


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing.svbf"):
        N.Weights.load(tmp_path / "missing.svbf")
    raw = N.init_weights(tiny(), 0).to_bytes()
    with pytest.raises(ValueError, match="not an SVBF"):
        N.Weights.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="trailing"):
        N.Weights.from_bytes(raw + b"\0\0\0\0")


def test_gradients_match_finite_differences():
    results = check_network(seed=0)
    assert all(r.passed for r in results), results
