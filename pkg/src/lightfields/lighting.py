"""Surface light field queries and environment-map composition.

A trained model answers single-light queries; spatially varying illumination
is approximated by evaluating the field once per sampled environment
direction and combining the results, either as a plain mean in prediction
space or as a linear-space sum with a single exposure scalar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .colorspace import linear_to_srgb, srgb_to_linear
from .nets import DEFAULT_LIGHT_RADIUS, LightConfig, SurfaceLightFieldModel

COMPOSITE_MODES = ("eq4_mean", "exposure_normalized")


@dataclass
class EnvironmentMap:
    """K directional samples of an environment: unit directions with linear
    RGB radiance."""

    directions: np.ndarray
    radiance: np.ndarray
    source: str | None = None

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.float64)
        self.radiance = np.asarray(self.radiance, dtype=np.float64)
        if self.directions.ndim != 2 or self.directions.shape[1] != 3 or len(self.directions) < 1:
            raise ValueError("environment map needs at least one (K, 3) direction")
        if self.radiance.shape != self.directions.shape:
            raise ValueError("radiance must be one RGB triple per direction")
        norms = np.linalg.norm(self.directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("environment directions must be unit-norm")
        if np.any(self.radiance < 0.0):
            raise ValueError("radiance must be non-negative")

    def __len__(self):
        return len(self.directions)


@dataclass
class CompositeConfig:
    mode: str = "exposure_normalized"
    target_mean_intensity: float = 0.35
    light_radius: float = DEFAULT_LIGHT_RADIUS
    northern_only: bool = False

    def __post_init__(self):
        if self.mode not in COMPOSITE_MODES:
            raise ValueError(f"unknown composite mode {self.mode!r}")
        if not (0.0 < self.target_mean_intensity <= 1.0):
            raise ValueError("target_mean_intensity must lie in (0, 1]")


def eval_cslf(model: SurfaceLightFieldModel, p, v, light: LightConfig | None = None,
              s=None, z=None):
    """Query the conditional surface light field at (p, v, light, s, z).

    Dispatches to the one-step network or to the appearance/lighting
    composition; accepts single queries or row-stacked batches.
    """
    _check_codes(model, s, z)
    if model.config.kind == "one_step":
        return model.one_step_forward(p, v, light, s, z)
    f = model.appearance_forward(p, s, z)
    return model.lighting_forward(f, v, light, s)


def _check_codes(model, s, z):
    if s is not None and not model.config.uses_s:
        raise ValueError("geometry code given, but the model is not shape-conditioned")
    if z is not None and not model.config.uses_z:
        raise ValueError("image code given, but the model is not image-conditioned")


def env_lights(env: EnvironmentMap, cfg: CompositeConfig):
    """Turn environment samples into point lights on the trained-light radius."""
    lights = []
    for d, rad in zip(env.directions, env.radiance):
        if cfg.northern_only and d[2] < 0.0:
            continue
        lights.append(LightConfig(position=d * cfg.light_radius,
                                  color=np.clip(rad, 0.0, 1.0)))
    if not lights:
        raise ValueError("no usable environment lights (all masked?)")
    return lights


def exposure_normalize(linear_sum: np.ndarray, target_mean: float):
    """Scale a linear-space composite by one global scalar so its mean
    intensity equals ``target_mean``. Returns (scaled, scalar)."""
    m = float(np.mean(linear_sum))
    if m <= 0.0:
        return np.zeros_like(linear_sum), 0.0
    scalar = target_mean / m
    return linear_sum * scalar, scalar


def composite_env(model: SurfaceLightFieldModel, p, v, env: EnvironmentMap,
                  s=None, z=None, cfg: CompositeConfig | None = None):
    """Aggregate the field over an environment map at points p seen from v.

    eq4_mean averages per-light predictions directly in prediction (sRGB)
    space. exposure_normalized converts each prediction to linear, sums,
    rescales once so the mean intensity over the evaluated points hits the
    target, and re-encodes. The scalar is global: pixel ratios survive.
    """
    cfg = cfg or CompositeConfig()
    _check_codes(model, s, z)
    lights = env_lights(env, cfg)

    p2 = np.atleast_2d(np.asarray(p, dtype=np.float64))
    single = np.asarray(p).ndim == 1

    if model.config.kind == "two_step":
        feats = model.appearance_forward(p, s, z)  # cache once, relight K times
        preds = [np.atleast_2d(model.lighting_forward(feats, v, l, s)) for l in lights]
    else:
        preds = [np.atleast_2d(model.one_step_forward(p, v, l, s, z)) for l in lights]

    if cfg.mode == "eq4_mean":
        out = np.mean(preds, axis=0)
    else:
        linear_sum = np.zeros_like(preds[0])
        for pred in preds:
            linear_sum += srgb_to_linear(pred)
        scaled, _ = exposure_normalize(linear_sum, cfg.target_mean_intensity)
        out = linear_to_srgb(scaled)
    assert out.shape == p2.shape
    return out[0] if single else out


def equidistributed_sphere_points(n_target: int) -> np.ndarray:
    """Deterministic near-uniform sphere covering by regular placement:
    one point per ~4*pi/n of area, laid out on evenly spaced colatitude
    rings with counts proportional to ring circumference."""
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    area = 4.0 * np.pi / n_target
    d = np.sqrt(area)
    m_theta = max(int(round(np.pi / d)), 1)
    d_theta = np.pi / m_theta
    d_phi = area / d_theta
    pts = []
    for m in range(m_theta):
        theta = np.pi * (m + 0.5) / m_theta
        m_phi = max(int(2.0 * np.pi * np.sin(theta) / d_phi), 1)
        for j in range(m_phi):
            phi = 2.0 * np.pi * j / m_phi
            pts.append((np.sin(theta) * np.cos(phi),
                        np.sin(theta) * np.sin(phi),
                        np.cos(theta)))
    return np.asarray(pts, dtype=np.float64)


def load_envmap(path, n_target: int) -> EnvironmentMap:
    """Read an 8-bit sRGB equirectangular PNG and sample it."""
    from .rasters import read_png
    return env_from_equirect(read_png(path), n_target, source=str(path))


def env_from_equirect(image: np.ndarray, n_target: int, source: str | None = None) -> EnvironmentMap:
    """Sample an equirectangular sRGB image into an EnvironmentMap.

    Convention: row 0 is the +z pole, longitude runs from +x toward +y.
    Radiance is the linearized color of the nearest pixel.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"expected an HxWx3 image, got shape {image.shape}")
    h, w = image.shape[:2]
    dirs = equidistributed_sphere_points(n_target)
    theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2.0 * np.pi)
    rows = np.clip((theta / np.pi * h).astype(int), 0, h - 1)
    cols = np.mod((phi / (2.0 * np.pi) * w).astype(int), w)
    radiance = srgb_to_linear(image[rows, cols])
    return EnvironmentMap(directions=dirs, radiance=radiance, source=source)
