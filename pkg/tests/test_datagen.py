import json
import shutil

import numpy as np
import pytest

from svbrdf_forge import datagen as D
from svbrdf_forge.core import MATERIAL_CLASSES, MaterialClass, load_bundle
from svbrdf_forge.pngio import read_png_codes


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    manifest = D.synthesize_dataset(D.DatasetSpec(count=24, seed=3, resolution=16), out, threads=1)
    return out, manifest


# -- generators ----------------------------------------------------------------------


def test_every_class_has_a_generator_with_valid_ranges():
    assert set(D.GENERATORS) == set(MATERIAL_CLASSES)
    for cls, gen in D.GENERATORS.items():
        assert gen.material_class is cls
        assert 4 <= len(gen.params) <= 8, cls
        assert len({p.name for p in gen.params}) == len(gen.params)
        for p in gen.params:
            assert p.lo <= p.default <= p.hi
    with pytest.raises(ValueError):
        D.ParamSpec("x", 1.0, 0.0, 2.0)


@pytest.mark.parametrize("cls", list(MaterialClass))
def test_generation_is_deterministic_and_valid(cls):
    a = D.generate_base_material(cls, 5, 32)
    b = D.generate_base_material(cls, 5, 32)
    assert a.equals(b)
    assert a.resolution == 32
    assert np.isfinite(a.diffuse).all() and a.roughness.min() > 0
    # the seed must matter
    assert not a.equals(D.generate_base_material(cls, 6, 32))


def test_metal_specular_dominates_diffuse():
    gen = D.generator_for("metal")
    for seed in range(100):
        m = D.perturb_material(gen, seed, 16)
        assert m.specular.mean() > m.diffuse.mean(), seed


@pytest.mark.parametrize("cls", ["wood", "tiles", "fabric"])
def test_zero_width_ranges_reproduce_the_default(cls):
    gen = D.generator_for(cls)
    pinned = gen.with_ranges(**{p.name: (p.default, p.default) for p in gen.params})
    assert D.perturb_material(pinned, 11, 24).equals(D.generate_base_material(cls, 11, 24))


def test_drawn_parameters_within_range():
    for gen in D.GENERATORS.values():
        for seed in range(50):
            vals = D.draw_parameters(gen, seed)
            for p in gen.params:
                assert p.lo <= vals[p.name] <= p.hi


@pytest.mark.parametrize("cls", list(MaterialClass))
def test_perturbations_are_not_degenerate(cls):
    gen = D.generator_for(cls)
    means = {round(float(D.perturb_material(gen, s, 8).diffuse.mean()), 6) for s in range(100)}
    assert len(means) >= 2


def test_unknown_parameter_rejected():
    with pytest.raises(ValueError, match="unknown"):
        D.generator_for("paint").generate({"sparkle": 1.0}, 0, 8)


def test_height_to_normal_flat_and_slope():
    assert np.allclose(D.height_to_normal(np.zeros((4, 4))), [0, 0, 1])
    # height rising towards +x tilts the normal towards -x
    ramp = np.tile(np.linspace(0, 0.1, 8), (8, 1))
    n = D.height_to_normal(ramp)
    assert np.all(n[..., 0] < 0) and np.allclose(n[..., 1], 0)


# -- dataset ---------------------------------------------------------------------------


def test_spec_validation_and_sizes():
    spec = D.DatasetSpec(resolution=64)
    assert (spec.stored_resolution, spec.base_resolution) == (80, 160)
    with pytest.raises(ValueError):
        D.DatasetSpec(count=-1)
    with pytest.raises(ValueError):
        D.DatasetSpec(blend_fraction=1.5)


def test_empty_dataset(tmp_path):
    manifest = D.synthesize_dataset(D.DatasetSpec(count=0), tmp_path)
    assert manifest["samples"] == [] and manifest["count"] == 0
    assert [p.name for p in tmp_path.iterdir()] == ["manifest.json"]


def test_blend_fraction_statistics():
    spec = D.DatasetSpec(count=1000, seed=1)
    blends = sum(D._draw_record(spec, i)["alpha"] is not None for i in range(1000))
    assert 450 <= blends <= 550
    none = D.DatasetSpec(count=50, seed=1, blend_fraction=0.0)
    assert all(len(D._draw_record(none, i)["sources"]) == 1 for i in range(50))


def test_record_draws_stay_in_their_ranges():
    spec = D.DatasetSpec(count=200, seed=2, resolution=32)
    for i in range(200):
        r = D._draw_record(spec, i)
        x0, y0, size = r["crop"]
        assert size == 40 and 0 <= x0 and x0 + size <= r["base_resolution"] and 0 <= y0 and y0 + size <= 80
        assert 1.0 <= r["scale"] <= 1.5 and 0 <= r["rotation"] < 2 * np.pi
        assert np.hypot(*r["light_offset"]) <= D.LIGHT_OFFSET_RADIUS
        assert r["split"] == ("test" if i % 20 == 19 else "train")


def test_split_and_counts(small_dataset):
    _, manifest = small_dataset
    c = manifest["counts"]
    assert c["train"] + c["test"] == 24 and c["test"] == 1
    assert c["variants"] + c["blends"] == 24
    assert manifest["stored_resolution"] == 20


def test_bundles_and_inputs_are_valid(small_dataset):
    out, manifest = small_dataset
    for rec in manifest["samples"]:
        d = D.sample_dir(out, rec["index"])
        maps, meta = load_bundle(d)
        assert meta["resolution"] == 20
        assert meta["class"] == "+".join(s["class"] for s in rec["sources"])
        codes, depth = read_png_codes(d / "input.png")
        assert depth == 16 and codes.shape == (20, 20, 3)
        img = codes / 65535.0
        assert img.min() >= 0 and img.max() <= 1
        if maps.diffuse.max() + maps.specular.max() < 0.05:
            continue
        # the flash highlight: a smoothed-luminance maximum strictly inside the frame
        lum = img.mean(-1)
        k = np.ones(3) / 3
        blur = np.apply_along_axis(lambda r: np.convolve(r, k, "same"), 0, lum)
        blur = np.apply_along_axis(lambda r: np.convolve(r, k, "same"), 1, blur)
        r, c = np.unravel_index(np.argmax(blur[1:-1, 1:-1]), (18, 18))
        assert 0 < r + 1 < 19 and 0 < c + 1 < 19


def test_input_is_rendered_from_stored_maps(small_dataset):
    out, manifest = small_dataset
    rec = manifest["samples"][0]
    codes, maps = D.realize_record(rec)
    stored, _ = load_bundle(D.sample_dir(out, 0))
    assert stored.equals(maps)
    assert np.array_equal(read_png_codes(D.sample_dir(out, 0) / "input.png")[0], codes)


def test_manifest_is_reproducible(tmp_path, small_dataset):
    out, _ = small_dataset
    D.synthesize_dataset(D.DatasetSpec(count=24, seed=3, resolution=16), tmp_path, threads=1)
    assert D.manifest_hash(tmp_path) == D.manifest_hash(out)
    text = (tmp_path / "manifest.json").read_text()
    assert text == D.canonical_json(json.loads(text))


def test_parallel_matches_serial(tmp_path, small_dataset):
    out, _ = small_dataset
    D.synthesize_dataset(D.DatasetSpec(count=24, seed=3, resolution=16), tmp_path, threads=4)
    assert D.manifest_hash(tmp_path) == D.manifest_hash(out)


def test_replay_after_deleting_samples(tmp_path, small_dataset):
    out, _ = small_dataset
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    originals = {p.relative_to(copy): p.read_bytes() for p in copy.rglob("*.png")}
    for d in copy.iterdir():
        if d.is_dir():
            shutil.rmtree(d)
    assert D.replay_dataset(copy) == []
    for rel, raw in originals.items():
        assert (copy / rel).read_bytes() == raw


def test_write_failures_name_the_sample(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(D.DatasetError):
        D.synthesize_dataset(D.DatasetSpec(count=1, resolution=8), blocker / "sub")
    with pytest.raises(FileNotFoundError, match="manifest"):
        D.load_manifest(tmp_path)
