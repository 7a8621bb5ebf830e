"""Image synthesis from trained models: relighting, environment composites,
turntables. The CLI and the render service both go through eval_image, so
their outputs are bit-identical for identical inputs.
"""

from __future__ import annotations

import numpy as np

from .dataset import Dataset, downsample_image
from .lighting import CompositeConfig, EnvironmentMap, composite_env
from .nets import LightConfig, SurfaceLightFieldModel
from .oracle import CameraModel, Scene, view_geometry


def eval_image(model: SurfaceLightFieldModel, camera: CameraModel,
               depth: np.ndarray, mask: np.ndarray, lighting,
               s=None, z=None, composite: CompositeConfig | None = None) -> np.ndarray:
    """Evaluate the field at every masked pixel; background stays black.

    ``lighting`` is a LightConfig, a list of them (multi-light renders
    average predictions, the plain-mean composite), or an EnvironmentMap
    handled per ``composite``.
    """
    out = np.zeros((camera.height, camera.width, 3))
    vs, us = np.nonzero(mask)
    if len(us) == 0:
        return out
    pts = camera.unproject(us.astype(np.float64), vs.astype(np.float64),
                           depth[vs, us].astype(np.float64))
    v = camera.center[None, :] - pts
    v /= np.linalg.norm(v, axis=1, keepdims=True)

    if isinstance(lighting, EnvironmentMap):
        colors = composite_env(model, pts, v, lighting, s, z,
                               composite or CompositeConfig())
    else:
        lights = [lighting] if isinstance(lighting, LightConfig) else list(lighting)
        if not lights:
            raise ValueError("no lights given")
        if model.config.kind == "two_step":
            feats = model.appearance_forward(pts, s, z)
            preds = [model.lighting_forward(feats, v, l, s) for l in lights]
        else:
            preds = [model.one_step_forward(pts, v, l, s, z) for l in lights]
        colors = preds[0] if len(preds) == 1 else np.mean(preds, axis=0)
    out[vs, us] = colors
    return out


def render_with_model(model, scene: Scene, camera: CameraModel, lighting,
                      s=None, z=None, composite=None) -> np.ndarray:
    depth, mask = view_geometry(scene, camera)
    return eval_image(model, camera, depth, mask, lighting, s, z, composite)


def turntable_cameras(n: int, elevation_deg: float = 30.0, radius: float = 1.5,
                      width: int = 128, height: int = 128, fov_deg: float = 50.0):
    """n cameras orbiting the origin at fixed elevation."""
    el = np.deg2rad(elevation_deg)
    cams = []
    for i in range(n):
        az = 2.0 * np.pi * i / n
        center = radius * np.array([np.cos(el) * np.cos(az),
                                    np.cos(el) * np.sin(az),
                                    np.sin(el)])
        cams.append(CameraModel.look_at(center, width=width, height=height,
                                        fov_deg=fov_deg))
    return cams


def evaluate(model: SurfaceLightFieldModel, data: Dataset, object_ids=None,
             split: str = "test", max_lights: int | None = None):
    """Render every (view, light) of the chosen split and score it against
    the stored ground truth. Yields one metrics row per evaluated image."""
    from . import metrics as mx

    object_ids = object_ids if object_ids is not None else (
        data.object_ids(split="test") or data.object_ids())
    for object_id in object_ids:
        s, z = codes_for_object(model, data, object_id)
        entries = data.view_entries(object_id, split=split)
        for entry in entries:
            view = data.load_view(object_id, entry)
            lights = view.lights[:max_lights] if max_lights else view.lights
            for li, light in enumerate(lights):
                pred = eval_image(model, view.camera, view.depth, view.mask,
                                  light, s=s, z=z)
                gt = view.images[li]
                yield {
                    "object": object_id,
                    "view": entry["dir"],
                    "light": li,
                    "l1_masked": mx.l1_masked(pred, gt, view.mask),
                    "psnr": mx.psnr(pred, gt, view.mask),
                    "ssim": mx.ssim(pred, gt),
                }


def codes_for_object(model: SurfaceLightFieldModel, data: Dataset, object_id: str,
                     input_view: int = 0, input_light: int = 0):
    """Geometry and image codes for one dataset object. The image code comes
    from the chosen (view, light) render, downsampled to the encoder size."""
    s = z = None
    if model.config.uses_s:
        s = model.pointnet_encode(data.load_cloud(object_id))
    if model.config.uses_z:
        entries = data.view_entries(object_id)
        view = data.load_view(object_id, entries[input_view])
        img = downsample_image(view.images[input_light], model.config.image_size)
        if model.config.generative:
            mu, _, _ = model.vae_encode(img, s, np.random.default_rng(0))
            z = mu  # posterior mean for deterministic evaluation
        else:
            z = model.image_encode(img)
    return s, z
