import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svbrdf_forge.core import SvbrdfMaps
from svbrdf_forge.gradcheck import check_rendering_loss
from svbrdf_forge.loss import (
    LOG_OFFSET,
    N_DIFFUSE_CONFIGS,
    N_MIRROR_CONFIGS,
    l1_map_loss,
    loss_and_grad,
    rendering_loss,
    rendering_loss_grad,
    sample_loss_configs,
)
from svbrdf_forge.render import DIRECTIONAL, RenderConfig
from svbrdf_forge.shading import BrdfPoint, eval_brdf


def random_maps(rng, res=8):
    xy = rng.uniform(-0.4, 0.4, (res, res, 2))
    n = np.concatenate([xy, np.sqrt(1 - (xy**2).sum(-1, keepdims=True))], -1)
    return SvbrdfMaps(n, rng.random((res, res, 3)), rng.random((res, res, 3)), rng.uniform(0.1, 1, (res, res)))


def test_loss_counts():
    assert (N_DIFFUSE_CONFIGS, N_MIRROR_CONFIGS) == (3, 6)
    cfgs = sample_loss_configs(np.random.default_rng(0))
    assert [c.mode for c in cfgs].count(DIRECTIONAL) == 3 and len(cfgs) == 9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_identity_symmetry_and_determinism(seed):
    rng = np.random.default_rng(seed)
    a, b = random_maps(rng), random_maps(rng)
    assert rendering_loss(a, a, np.random.default_rng(seed)) == 0.0
    ab = rendering_loss(a, b, np.random.default_rng(seed))
    assert ab == rendering_loss(b, a, np.random.default_rng(seed))
    assert ab == rendering_loss(a, b, np.random.default_rng(seed))
    assert ab > 0


def test_lambertian_closed_form_per_config():
    a = SvbrdfMaps.uniform(4, diffuse=0.2, specular=0.0, roughness=0.5)
    b = SvbrdfMaps.uniform(4, diffuse=0.4, specular=0.0, roughness=0.5)
    rng = np.random.default_rng(11)
    cfgs = sample_loss_configs(rng, n_diffuse=5, n_mirror=0)
    expected = []
    for c in cfgs:
        # F0 = 0 still leaves the Schlick term, so the oracle includes the specular lobe
        up = np.array([0.0, 0.0, 1.0])
        spec = eval_brdf(BrdfPoint(up, np.zeros(3), np.zeros(3), np.float64(0.5)), c.light, c.view)[0]
        s = c.light[2] * c.light_intensity
        expected.append(abs(math.log((0.2 / math.pi + spec) * s + LOG_OFFSET) - math.log((0.4 / math.pi + spec) * s + LOG_OFFSET)))
    loss = rendering_loss(a, b, np.random.default_rng(11), n_diffuse=5, n_mirror=0)
    assert loss == pytest.approx(np.mean(expected), rel=1e-12)


def test_loss_at_normal_incidence_is_pure_lambert():
    # view = light = +z: v.h = 1 so Schlick with F0 = 0 vanishes exactly
    a = SvbrdfMaps.uniform(4, diffuse=0.2, specular=0.0)
    b = SvbrdfMaps.uniform(4, diffuse=0.4, specular=0.0)
    cfg = RenderConfig(DIRECTIONAL, (0, 0, 1), (0, 0, 1), math.pi)
    arrays = lambda m: (m.normal, m.diffuse, m.specular, m.roughness)  # noqa: E731
    loss, _ = loss_and_grad(arrays(a), arrays(b), [cfg], need_grad=False)
    assert loss == pytest.approx(abs(math.log(0.21) - math.log(0.41)))


def test_gradient_zero_at_match():
    a = random_maps(np.random.default_rng(3))
    g = rendering_loss_grad(a, a, np.random.default_rng(4))
    for v in g.values():
        assert np.all(v == 0)


def test_dead_roughness_path():
    rng = np.random.default_rng(5)
    a = random_maps(rng)
    pred = SvbrdfMaps(a.normal, a.diffuse, np.zeros_like(a.specular), a.roughness)
    # F0 = 0 and retro-reflective configs (v = l, so v.h = 1 and F = 0): roughness is invisible
    gt = SvbrdfMaps.uniform(8, diffuse=0.3, specular=0.0)
    cfgs = [RenderConfig(DIRECTIONAL, d, d, math.pi) for d in [(0.0, 0.0, 1.0), (0.6, 0.0, 0.8), (0.0, -0.28, 0.96)]]
    arrays = lambda m: (m.normal, m.diffuse, m.specular, m.roughness)  # noqa: E731
    _, grads = loss_and_grad(arrays(pred), arrays(gt), cfgs)
    assert np.all(grads[3] == 0)


def test_gradient_matches_finite_differences():
    result = check_rendering_loss(seed=3)
    assert result.passed, result


def test_expectation_roughness_shift_is_positive():
    base = random_maps(np.random.default_rng(6))
    shifted = SvbrdfMaps(base.normal, base.diffuse, base.specular, np.clip(base.roughness + 0.2, 0, 1))
    losses = [rendering_loss(base, shifted, np.random.default_rng(s)) for s in range(200)]
    same = [rendering_loss(base, base, np.random.default_rng(s)) for s in range(200)]
    assert np.mean(losses) > np.mean(same) == 0.0


def test_resolution_mismatch_rejected():
    with pytest.raises(ValueError):
        rendering_loss(SvbrdfMaps.uniform(4), SvbrdfMaps.uniform(8), np.random.default_rng(0))


def test_l1_map_loss_examples():
    rng = np.random.default_rng(7)
    a = random_maps(rng)
    assert l1_map_loss(a, a) == 0.0
    shifted = SvbrdfMaps(a.normal, a.diffuse, a.specular, a.roughness * 0.5)
    b = SvbrdfMaps(a.normal, a.diffuse, a.specular, a.roughness * 0.5 + 0.1)
    assert l1_map_loss(shifted, b) == pytest.approx(0.1 / 9)
    perm = rng.permutation(64)

    def permute(m):
        f = lambda x: x.reshape(64, -1)[perm].reshape(x.shape)  # noqa: E731
        return SvbrdfMaps(f(m.normal), f(m.diffuse), f(m.specular), f(m.roughness))

    c = random_maps(rng)
    assert l1_map_loss(permute(a), permute(c)) == pytest.approx(l1_map_loss(a, c), rel=1e-12)
