"""Cook-Torrance BRDF with a GGX distribution, Schlick Fresnel and separable
Smith-Schlick shadowing, plus closed-form partial derivatives.

Every function broadcasts over leading axes; vectors live on a trailing axis of 3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DOT_EPS = 1e-6
MIN_ALPHA = 1e-3
INV_PI = 1.0 / np.pi


def dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


def normalize(v: np.ndarray) -> np.ndarray:
    """Unit vectors; zero vectors (opposite light and view) map to +z."""
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(norm > 0.0, v / np.where(norm > 0.0, norm, 1.0), np.array([0.0, 0.0, 1.0]))
    return safe


def ggx_ndf(alpha, ndoth):
    a2 = np.square(np.maximum(alpha, MIN_ALPHA))
    q = np.square(ndoth) * (a2 - 1.0) + 1.0
    return a2 / (np.pi * q * q)


def fresnel_schlick(f0, vdoth):
    f0 = np.asarray(f0, dtype=np.float64)
    return f0 + (1.0 - f0) * (1.0 - np.asarray(vdoth, dtype=np.float64)) ** 5


def smith_g1(k, x):
    return x / (x * (1.0 - k) + k)


def smith_geometry(alpha, ndotv, ndotl):
    k = np.maximum(alpha, MIN_ALPHA) * 0.5
    return smith_g1(k, ndotv) * smith_g1(k, ndotl)


@dataclass(frozen=True)
class BrdfPoint:
    """Shading parameters at one or many surface points (arrays broadcast)."""

    normal: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    roughness: np.ndarray

    @property
    def alpha(self):
        return np.square(self.roughness)


@dataclass(frozen=True)
class BrdfGradient:
    """Partials of each RGB channel of the BRDF value.

    ``normal_xy[..., c, j]`` is d f_c / d n_j for j in (x, y) with the normal
    parameterized on the tangent plane (z = sqrt(1 - x^2 - y^2)). Diffuse and
    specular partials are diagonal across channels and stored as (..., 3).
    """

    normal_xy: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    roughness: np.ndarray
    normal: np.ndarray  # d f_c / d n over the raw 3-vector, (..., 3, 3)


class _Shade:
    """Shared intermediates for the forward value and the partials."""

    def __init__(self, normal, diffuse, specular, roughness, wi, wo):
        n = np.asarray(normal, dtype=np.float64)
        self.l = np.broadcast_to(np.asarray(wi, dtype=np.float64), np.broadcast_shapes(np.shape(wi), n.shape))
        self.v = np.broadcast_to(np.asarray(wo, dtype=np.float64), self.l.shape)
        self.h = normalize(self.l + self.v)
        a_raw, b_raw, c_raw = dot(n, self.l), dot(n, self.v), dot(n, self.h)
        # v.h equals l.h; averaging keeps swapping wi and wo bit-exact
        e_raw = 0.5 * (dot(self.v, self.h) + dot(self.l, self.h))
        self.visible = (a_raw > 0.0) & (b_raw > 0.0)
        self.a = np.clip(a_raw, DOT_EPS, 1.0)
        self.b = np.clip(b_raw, DOT_EPS, 1.0)
        self.c = np.clip(c_raw, DOT_EPS, 1.0)
        self.e = np.clip(e_raw, DOT_EPS, 1.0)
        self.ma = (a_raw >= DOT_EPS) & (a_raw <= 1.0)
        self.mb = (b_raw >= DOT_EPS) & (b_raw <= 1.0)
        self.mc = (c_raw >= DOT_EPS) & (c_raw <= 1.0)

        r = np.asarray(roughness, dtype=np.float64)
        self.r = r
        alpha_raw = r * r
        self.alpha = np.maximum(alpha_raw, MIN_ALPHA)
        self.m_alpha = alpha_raw >= MIN_ALPHA
        self.k = 0.5 * self.alpha
        a2 = self.alpha * self.alpha
        self.q = self.c * self.c * (a2 - 1.0) + 1.0
        self.D = a2 / (np.pi * self.q * self.q)
        self.Pa = 1.0 / (self.a * (1.0 - self.k) + self.k)  # G1(a) / a
        self.Pb = 1.0 / (self.b * (1.0 - self.k) + self.k)
        self.schlick = (1.0 - self.e) ** 5
        self.f0 = np.asarray(specular, dtype=np.float64)
        self.F = self.f0 + (1.0 - self.f0) * self.schlick[..., None]
        self.kd = np.asarray(diffuse, dtype=np.float64)
        # D G / (4 a b) without F
        self.spec_scalar = self.D * (self.Pa * self.Pb) * 0.25

    def value(self) -> np.ndarray:
        f = self.kd * INV_PI + self.F * self.spec_scalar[..., None]
        return np.where(self.visible[..., None], f, 0.0)

    def scalar_partials(self):
        """d f / d(a, b, c, alpha) with the channel-dependent F factored in."""
        a2 = self.alpha * self.alpha
        common = self.D * 0.25
        df_da = -common * (1.0 - self.k) * self.Pa * self.Pa * self.Pb
        df_db = -common * (1.0 - self.k) * self.Pb * self.Pb * self.Pa
        dD_dc = -4.0 * a2 * self.c * (a2 - 1.0) / (np.pi * self.q**3)
        df_dc = dD_dc * self.Pa * self.Pb * 0.25
        dD_dalpha = 2.0 * self.alpha / (np.pi * self.q**3) * (self.q - 2.0 * a2 * self.c * self.c)
        dPa_dk = -(1.0 - self.a) * self.Pa * self.Pa
        dPb_dk = -(1.0 - self.b) * self.Pb * self.Pb
        df_dalpha = 0.25 * (dD_dalpha * self.Pa * self.Pb + self.D * 0.5 * (dPa_dk * self.Pb + self.Pa * dPb_dk))
        return df_da, df_db, df_dc, df_dalpha


def eval_brdf(p: BrdfPoint, wi, wo) -> np.ndarray:
    """diffuse / pi + D F G / (4 (n.l)(n.v)); zero when either direction is below the horizon."""
    return _Shade(p.normal, p.diffuse, p.specular, p.roughness, wi, wo).value()


def eval_brdf_gradient(p: BrdfPoint, wi, wo) -> BrdfGradient:
    s = _Shade(p.normal, p.diffuse, p.specular, p.roughness, wi, wo)
    vis = s.visible[..., None]
    df_da, df_db, df_dc, df_dalpha = s.scalar_partials()

    dn = (
        (df_da * s.ma)[..., None] * s.l + (df_db * s.mb)[..., None] * s.v + (df_dc * s.mc)[..., None] * s.h
    )  # (..., 3) without F
    d_normal = s.F[..., :, None] * dn[..., None, :]
    d_normal = np.where(vis[..., None], d_normal, 0.0)

    n = np.asarray(p.normal, dtype=np.float64)
    z = np.maximum(n[..., 2], 1e-12)
    dn_dx = np.stack([np.ones_like(z), np.zeros_like(z), -n[..., 0] / z], axis=-1)
    dn_dy = np.stack([np.zeros_like(z), np.ones_like(z), -n[..., 1] / z], axis=-1)
    d_xy = np.stack(
        [np.sum(d_normal * dn_dx[..., None, :], axis=-1), np.sum(d_normal * dn_dy[..., None, :], axis=-1)], axis=-1
    )

    d_diffuse = np.where(vis, np.broadcast_to(INV_PI, s.F.shape), 0.0)
    d_specular = np.where(vis, (s.spec_scalar * (1.0 - s.schlick))[..., None] * np.ones_like(s.F), 0.0)
    d_rough = (df_dalpha * s.m_alpha * 2.0 * s.r)[..., None] * s.F
    d_rough = np.where(vis, d_rough, 0.0)
    return BrdfGradient(normal_xy=d_xy, diffuse=d_diffuse, specular=d_specular, roughness=d_rough, normal=d_normal)
