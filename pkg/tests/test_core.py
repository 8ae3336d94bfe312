import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svbrdf_forge.core import (
    MATERIAL_CLASSES,
    MaterialClass,
    SvbrdfMaps,
    blend_svbrdfs,
    decode_normal,
    encode_normal,
    load_bundle,
    quantize_maps,
    save_bundle,
    transform_svbrdf,
)

unit = st.floats(0.0, 1.0, allow_nan=False)


def random_maps(rng, res=8, tilt=0.6):
    """Random maps with normals tilted up to ``tilt`` in xy length."""
    r = tilt * np.sqrt(rng.random((res, res)))
    phi = rng.uniform(0, 2 * math.pi, (res, res))
    xy = np.stack([r * np.cos(phi), r * np.sin(phi)], -1)
    z = np.sqrt(1 - r**2)
    return SvbrdfMaps(
        normal=np.concatenate([xy, z[..., None]], -1),
        diffuse=rng.random((res, res, 3)),
        specular=rng.random((res, res, 3)),
        roughness=rng.random((res, res)),
    )


def smooth_normal_field(res):
    c = (np.arange(res) + 0.5) / res * 2 - 1
    px, py = np.meshgrid(c, -c)
    nx = 0.4 * np.sin(1.5 * px) * np.cos(py)
    ny = 0.4 * np.cos(1.2 * px + 0.3) * np.sin(1.3 * py)
    n = np.stack([nx, ny, np.ones_like(nx)], -1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


# -- data model ---------------------------------------------------------------


def test_material_classes_closed_set():
    assert [c.value for c in MATERIAL_CLASSES] == [
        "paint", "plastic", "leather", "metal", "wood", "fabric", "stone", "tiles", "ground",
    ]
    with pytest.raises(ValueError):
        MaterialClass("glass")


def test_maps_reject_bad_invariants():
    ok = SvbrdfMaps.uniform(4)
    with pytest.raises(ValueError):
        SvbrdfMaps(ok.normal * 1.1, ok.diffuse, ok.specular, ok.roughness)
    with pytest.raises(ValueError):
        SvbrdfMaps(ok.normal, ok.diffuse + 0.6, ok.specular, ok.roughness)
    with pytest.raises(ValueError):
        SvbrdfMaps(ok.normal * np.array([1, 1, -1]), ok.diffuse, ok.specular, ok.roughness)
    with pytest.raises(ValueError):
        SvbrdfMaps(ok.normal, ok.diffuse[:2], ok.specular, ok.roughness)


# -- normal codec -------------------------------------------------------------


def test_decode_normal_examples():
    assert np.allclose(decode_normal([0.5, 0.5]), [0, 0, 1])
    assert np.allclose(decode_normal([1.0, 0.5]), [1, 0, 0])
    assert np.allclose(decode_normal([0.75, 0.5]), [0.5, 0, math.sqrt(0.75)], atol=1e-12)


@given(unit, unit)
def test_decode_normal_unit_and_upper(x, y):
    n = decode_normal([x, y])
    assert abs(np.linalg.norm(n) - 1) < 1e-5
    assert n[2] >= 0


@given(st.floats(-0.7, 0.7), st.floats(-0.7, 0.7))
def test_encode_decode_round_trip(x, y):
    n = np.array([x, y, math.sqrt(1 - x * x - y * y)])
    assert np.allclose(decode_normal(encode_normal(n)), n, atol=1e-12)


# -- blending -----------------------------------------------------------------


def test_blend_endpoints_and_midpoint():
    rng = np.random.default_rng(0)
    a, b = random_maps(rng), random_maps(rng)
    assert blend_svbrdfs(a, b, 0.0).equals(a)
    assert blend_svbrdfs(a, b, 1.0).equals(b)
    m = blend_svbrdfs(SvbrdfMaps.uniform(4, diffuse=0.2), SvbrdfMaps.uniform(4, diffuse=0.6), 0.5)
    assert np.allclose(m.diffuse, 0.4)


def test_blend_rejects_resolution_mismatch():
    with pytest.raises(ValueError):
        blend_svbrdfs(SvbrdfMaps.uniform(4), SvbrdfMaps.uniform(8), 0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), unit)
def test_blend_with_itself_is_identity(seed, alpha):
    a = random_maps(np.random.default_rng(seed))
    out = blend_svbrdfs(a, a, alpha)
    for f in ("normal", "diffuse", "specular", "roughness"):
        assert np.allclose(getattr(out, f), getattr(a, f), atol=1e-12)


def test_blend_normals_renormalized():
    a = SvbrdfMaps.uniform(2, normal=(0.6, 0, 0.8))
    b = SvbrdfMaps.uniform(2, normal=(-0.6, 0, 0.8))
    assert np.allclose(blend_svbrdfs(a, b, 0.5).normal, [0, 0, 1])


# -- transforms ---------------------------------------------------------------


def test_identity_transform():
    a = random_maps(np.random.default_rng(1), 16)
    out = transform_svbrdf(a, 0.0, 1.0, (0, 0, 16))
    for f in ("normal", "diffuse", "specular", "roughness"):
        assert np.allclose(getattr(out, f), getattr(a, f), atol=1e-12)


def test_rotation_acts_on_vector_field():
    res = 8
    normal = np.zeros((res, res, 3))
    normal[..., 2] = 1.0
    normal[2, 5] = [1.0, 0.0, 0.0]  # row 2, col 5
    maps = SvbrdfMaps(normal, np.zeros((res, res, 3)), np.zeros((res, res, 3)), np.zeros((res, res)))
    out = transform_svbrdf(maps, math.pi / 2)
    # 90 deg CCW about the centre, y up: (col, row) = (5, 2) lands at (2, 2)
    assert np.allclose(out.normal[2, 2], [0.0, 1.0, 0.0], atol=1e-9)


def test_two_45_equals_one_90_within_disc():
    res = 64
    n = smooth_normal_field(res)
    maps = SvbrdfMaps(n, np.zeros((res, res, 3)), np.zeros((res, res, 3)), np.zeros((res, res)))
    twice = transform_svbrdf(transform_svbrdf(maps, math.pi / 4), math.pi / 4)
    once = transform_svbrdf(maps, math.pi / 2)
    c = (np.arange(res) + 0.5) / res * 2 - 1
    px, py = np.meshgrid(c, -c)
    # corners of the first 45-degree step sample outside the source and are edge clamped
    disc = px**2 + py**2 < 0.9**2
    assert np.abs(twice.normal - once.normal)[disc].max() < 2e-2


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0.5, 2.0))
def test_flat_field_is_rotation_invariant_and_ranges_hold(theta, scale):
    rng = np.random.default_rng(3)
    maps = SvbrdfMaps(
        np.tile([0.0, 0.0, 1.0], (8, 8, 1)), rng.random((8, 8, 3)), rng.random((8, 8, 3)), rng.random((8, 8))
    )
    out = transform_svbrdf(maps, theta, scale)
    assert np.allclose(out.normal, [0, 0, 1])
    for f in ("diffuse", "specular", "roughness"):
        v = getattr(out, f)
        assert v.min() >= 0 and v.max() <= 1


def test_transform_rejects_bad_crop_and_scale():
    maps = SvbrdfMaps.uniform(8)
    with pytest.raises(ValueError):
        transform_svbrdf(maps, crop=(4, 4, 8))
    with pytest.raises(ValueError):
        transform_svbrdf(maps, crop=(-1, 0, 4))
    with pytest.raises(ValueError):
        transform_svbrdf(maps, scale=0.0)


def test_crop_selects_window():
    a = random_maps(np.random.default_rng(4), 8)
    out = transform_svbrdf(a, crop=(2, 3, 4))
    assert np.allclose(out.diffuse, a.diffuse[3:7, 2:6])


# -- bundle io ------------------------------------------------------------------


def test_bundle_round_trip_bit_exact(tmp_path):
    a = random_maps(np.random.default_rng(5), 16, tilt=0.999)
    save_bundle(tmp_path / "b", a, material_class="wood", seed=7)
    first, meta = load_bundle(tmp_path / "b")
    assert meta == {"resolution": 16, "class": "wood", "seed": 7}
    assert first.equals(quantize_maps(a))
    save_bundle(tmp_path / "c", first, "wood", 7)
    for name in ("normal.png", "diffuse.png", "specular.png", "roughness.png", "meta.json"):
        assert (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()
    second, _ = load_bundle(tmp_path / "c")
    assert second.equals(first)


def test_bundle_normal_encoding_and_meta(tmp_path):
    save_bundle(tmp_path, SvbrdfMaps.uniform(4, roughness=0.3), "metal", 1)
    from svbrdf_forge.pngio import read_png_codes

    codes, depth = read_png_codes(tmp_path / "normal.png")
    assert depth == 16 and codes.shape == (4, 4, 3)
    assert np.allclose(codes[0, 0] / 65535, [0.5, 0.5, 1.0], atol=1e-4)
    assert json.loads((tmp_path / "meta.json").read_text())["class"] == "metal"


def test_missing_bundle_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="normal.png"):
        load_bundle(tmp_path / "nope")
