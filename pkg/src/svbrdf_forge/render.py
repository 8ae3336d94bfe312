"""Texture-space pixel shader for SVBRDF maps, the flash-photo scene, log tone
mapping and the light/view configuration samplers used by the rendering loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import SvbrdfMaps, pixel_to_plane
from .pngio import write_png8
from .shading import INV_PI, _Shade, normalize

DIRECTIONAL = "directional"
POSITIONAL = "positional"

TONEMAP_OFFSET = 0.01
TONEMAP_TOP = 1.01
_LOG_LO = math.log(TONEMAP_OFFSET)
_LOG_SPAN = math.log(TONEMAP_TOP) - math.log(TONEMAP_OFFSET)

# mirror-configuration distances: exp(d), d ~ Normal(0.5, 0.75) on a 2 x 2 plane
MIRROR_LOG_MEAN = 0.5
MIRROR_LOG_STD = 0.75
DIRECTIONAL_INTENSITY = math.pi
# irradiance at the median mirror distance matches the directional configurations
POSITIONAL_INTENSITY = math.pi * math.exp(2.0 * MIRROR_LOG_MEAN)

FLASH_FOV_DEG = 50.0
FLASH_CAMERA_DISTANCE = 1.0 / math.tan(math.radians(FLASH_FOV_DEG / 2.0))
FLASH_CENTER_READING = 0.8


@dataclass(frozen=True)
class RenderConfig:
    """One light/view configuration.

    In directional mode ``light`` and ``view`` are unit directions (the view above
    the horizon, the light anywhere); in positional
    mode they are points above the plane z = 0, which spans [-1, 1]^2.
    """

    mode: str
    light: tuple[float, float, float]
    view: tuple[float, float, float]
    light_intensity: float = 1.0
    include_falloff: bool = False

    def __post_init__(self) -> None:
        light = tuple(float(c) for c in self.light)
        view = tuple(float(c) for c in self.view)
        object.__setattr__(self, "light", light)
        object.__setattr__(self, "view", view)
        if self.mode == DIRECTIONAL:
            for name, vec in (("light", light), ("view", view)):
                if abs(math.sqrt(sum(c * c for c in vec)) - 1.0) > 1e-6:
                    raise ValueError(f"directional {name} must be a unit vector, got {vec}")
            # a light below the horizon is allowed and renders black
            if view[2] <= 0.0:
                raise ValueError(f"directional view must have z > 0, got {view}")
        elif self.mode == POSITIONAL:
            if light[2] <= 0.0 or view[2] <= 0.0:
                raise ValueError("positional light and view must sit above the plane (z > 0)")
        else:
            raise ValueError(f"unknown render mode {self.mode!r}")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "light": list(self.light),
            "view": list(self.view),
            "light_intensity": self.light_intensity,
            "include_falloff": self.include_falloff,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RenderConfig:
        return cls(d["mode"], tuple(d["light"]), tuple(d["view"]), d["light_intensity"], d["include_falloff"])


@dataclass(frozen=True)
class FlashScene:
    """Fronto-parallel camera framing the plane exactly, point flash in the camera plane."""

    light_offset: tuple[float, float] = (0.0, 0.0)
    fov: float = FLASH_FOV_DEG
    camera_distance: float = field(default=FLASH_CAMERA_DISTANCE)
    light_intensity: float = 1.0

    def __post_init__(self) -> None:
        if self.fov != FLASH_FOV_DEG:
            raise ValueError("the flash scene field of view is fixed at 50 degrees")

    @property
    def exposure(self) -> float:
        # albedo-1 Lambertian plane at the image centre, flash on axis, reads 0.8
        return FLASH_CENTER_READING * math.pi * self.camera_distance**2 / self.light_intensity

    def config(self) -> RenderConfig:
        ox, oy = self.light_offset
        d = self.camera_distance
        return RenderConfig(
            POSITIONAL,
            light=(ox, oy, d),
            view=(0.0, 0.0, d),
            light_intensity=self.light_intensity * self.exposure,
            include_falloff=True,
        )


def _geometry(cfg: RenderConfig, resolution: int):
    """Per-pixel (or constant) light direction, view direction and intensity factor."""
    if cfg.mode == DIRECTIONAL:
        l = np.asarray(cfg.light)
        v = np.asarray(cfg.view)
        return l, v, np.float64(cfg.light_intensity)
    px, py = pixel_to_plane(resolution)
    p = np.stack([px, py, np.zeros_like(px)], axis=-1)
    to_light = np.asarray(cfg.light) - p
    dist2 = np.sum(to_light * to_light, axis=-1)
    l = to_light / np.sqrt(dist2)[..., None]
    v = normalize(np.asarray(cfg.view) - p)
    scale = cfg.light_intensity / dist2 if cfg.include_falloff else np.full(dist2.shape, cfg.light_intensity)
    return l, v, scale


def shade_arrays(normal, diffuse, specular, roughness, cfg: RenderConfig):
    """Render raw arrays (leading batch axes allowed before (R, R)).

    Returns ``(radiance, vjp)`` where ``vjp(g)`` maps an upstream gradient on the
    radiance to gradients on (normal, diffuse, specular, roughness).
    """
    resolution = normal.shape[-2]
    l, v, intensity = _geometry(cfg, resolution)
    s = _Shade(normal, diffuse, specular, roughness, l, v)
    vis = s.visible
    scale = intensity * vis
    f = s.kd * INV_PI + s.F * s.spec_scalar[..., None]
    radiance = f * (s.a * scale)[..., None]

    def vjp(g: np.ndarray):
        gs = g * scale[..., None]  # zero below the horizon
        a = s.a
        d_diffuse = gs * (a * INV_PI)[..., None]
        d_specular = gs * (s.spec_scalar * (1.0 - s.schlick) * a)[..., None]
        df_da, df_db, df_dc, df_dalpha = s.scalar_partials()
        gF = np.sum(gs * s.F, axis=-1)
        gsum_f = np.sum(gs * f, axis=-1)
        # radiance = f a: product rule for a
        coef_a = (gF * df_da * a + gsum_f) * s.ma
        coef_b = gF * df_db * a * s.mb
        coef_c = gF * df_dc * a * s.mc
        d_normal = coef_a[..., None] * s.l + coef_b[..., None] * s.v + coef_c[..., None] * s.h
        d_rough = gF * df_dalpha * a * s.m_alpha * 2.0 * s.r
        return d_normal, d_diffuse, d_specular, d_rough

    return radiance, vjp


def render_svbrdf(maps: SvbrdfMaps, cfg: RenderConfig) -> np.ndarray:
    """HDR radiance image: f(l, v) (n.l)+ times intensity (and 1/d^2 falloff)."""
    radiance, _ = shade_arrays(maps.normal, maps.diffuse, maps.specular, maps.roughness, cfg)
    return radiance


def render_flash_input(maps: SvbrdfMaps, scene: FlashScene) -> np.ndarray:
    """LDR flash photograph: exposure-scaled rendering clamped to [0, 1]."""
    return np.clip(render_svbrdf(maps, scene.config()), 0.0, 1.0)


def tonemap_log(x):
    """Compact LDR values into [0, 1] in log space; inputs above 1 are clamped first."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return (np.log(x + TONEMAP_OFFSET) - _LOG_LO) / _LOG_SPAN


def tonemap_log_inverse(y):
    return np.exp(np.asarray(y, dtype=np.float64) * _LOG_SPAN + _LOG_LO) - TONEMAP_OFFSET


def sample_cosine_direction(u1, u2) -> np.ndarray:
    """Cosine-weighted upper-hemisphere direction(s) from uniforms in [0, 1)."""
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    return np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(1.0 - u1)], axis=-1)


def _hemisphere(rng: np.random.Generator) -> np.ndarray:
    while True:
        d = sample_cosine_direction(rng.random(), rng.random())
        if d[2] > 0.0:
            return d / np.linalg.norm(d)


def sample_mirror_distance(rng: np.random.Generator, size=None):
    return np.exp(rng.normal(MIRROR_LOG_MEAN, MIRROR_LOG_STD, size=size))


def sample_render_config(rng: np.random.Generator, regime: str) -> RenderConfig:
    """Draw one configuration from ``diffuse_set`` or ``mirror_set``."""
    if regime == "diffuse_set":
        light = _hemisphere(rng)
        view = _hemisphere(rng)
        return RenderConfig(DIRECTIONAL, tuple(light), tuple(view), DIRECTIONAL_INTENSITY, False)
    if regime == "mirror_set":
        light_dir = _hemisphere(rng)
        view_dir = light_dir * np.array([-1.0, -1.0, 1.0])
        origin = np.append(rng.uniform(-1.0, 1.0, size=2), 0.0)
        d_light, d_view = sample_mirror_distance(rng, size=2)
        return RenderConfig(
            POSITIONAL,
            tuple(origin + d_light * light_dir),
            tuple(origin + d_view * view_dir),
            POSITIONAL_INTENSITY,
            True,
        )
    raise ValueError(f"unknown configuration regime {regime!r}")


def turntable_configs(n_frames: int, radius: float = 1.2, height: float = 1.5) -> list[RenderConfig]:
    """Point light circling above the plane, camera fixed overhead."""
    out = []
    for i in range(n_frames):
        t = 2.0 * math.pi * i / max(n_frames, 1)
        out.append(
            RenderConfig(
                POSITIONAL,
                (radius * math.cos(t), radius * math.sin(t), height),
                (0.0, 0.0, FLASH_CAMERA_DISTANCE),
                POSITIONAL_INTENSITY,
                True,
            )
        )
    return out


def write_preview(path, image: np.ndarray, gamma: float = 2.2) -> None:
    """8-bit sRGB-ish preview of a linear image."""
    write_png8(path, np.clip(image, 0.0, 1.0) ** (1.0 / gamma))

