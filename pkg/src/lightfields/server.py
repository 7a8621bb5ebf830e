"""HTTP render service: expose trained checkpoints to interactive clients.

GET  /models        -> available checkpoints and what they condition on
POST /render        -> PNG for a (model, object, camera, lighting) request
POST /sample-latent -> image code drawn from the unit Gaussian

Rendering goes through the same library path as the CLI, so identical
requests produce bit-identical images. Models and per-object codes are
cached read-only; a bounded semaphore rejects excess concurrent renders
with 503 instead of queuing unboundedly.
"""

from __future__ import annotations

import threading
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response
from pydantic import BaseModel, Field

from . import rasters
from .dataset import Dataset
from .inference import codes_for_object, eval_image
from .lighting import CompositeConfig, load_envmap
from .nets import LightConfig
from .oracle import CameraModel, scene_from_spec, view_geometry
from .training import load_checkpoint

MAX_RENDER_DIM = 1024


class CameraSpec(BaseModel):
    position: list[float] = Field(min_length=3, max_length=3)
    look_at: list[float] = Field(default=[0.0, 0.0, 0.0], min_length=3, max_length=3)
    fov_deg: float = 50.0
    width: int = Field(default=128, ge=8, le=MAX_RENDER_DIM)
    height: int = Field(default=128, ge=8, le=MAX_RENDER_DIM)


class LightSpec(BaseModel):
    position: list[float] = Field(min_length=3, max_length=3)
    color: list[float] = Field(default=[1.0, 1.0, 1.0], min_length=3, max_length=3)


class LightingSpec(BaseModel):
    lights: list[LightSpec] | None = None
    envmap_id: str | None = None
    samples: int = Field(default=200, ge=1, le=20_000)
    mode: str = "exposure"


class LatentSpec(BaseModel):
    z: list[float] | None = None
    seed: int | None = None


class RenderRequest(BaseModel):
    model_id: str
    object_id: str
    camera: CameraSpec
    lighting: LightingSpec
    latent: LatentSpec | None = None


class SampleLatentRequest(BaseModel):
    model_id: str
    seed: int = 0


def request_from_dict(body: dict) -> RenderRequest:
    return RenderRequest.model_validate(body)


def _422(detail):
    raise HTTPException(status_code=422, detail=detail)


def _404(detail):
    raise HTTPException(status_code=404, detail=detail)


class RenderRegistry:
    """Checkpoints, dataset objects and environment maps behind the service.
    All caches are filled once and then read-only, so concurrent renders are
    safe."""

    def __init__(self, models_dir, data_root, envmap_dir=None):
        self.models_dir = Path(models_dir)
        if not self.models_dir.is_dir():
            raise ValueError(f"models dir {models_dir} does not exist")
        self.data = Dataset.load(data_root)
        self.envmap_dir = Path(envmap_dir) if envmap_dir else None
        self._lock = threading.Lock()
        self._models: dict = {}
        self._codes: dict = {}
        self._envmaps: dict = {}

    def model_ids(self):
        return sorted(p.stem for p in self.models_dir.glob("*.cslf"))

    def describe_models(self):
        rows = []
        for mid in self.model_ids():
            model, _ = self.model(mid)
            c = model.config
            rows.append({"model_id": mid, "kind": c.kind,
                         "conditioning": c.conditioning,
                         "generative": c.generative,
                         "resolution": c.image_size,
                         "z_dim": c.z_dim})
        return rows

    def model(self, model_id):
        with self._lock:
            if model_id not in self._models:
                path = self.models_dir / f"{model_id}.cslf"
                if not path.exists():
                    _404(f"unknown model {model_id!r}")
                self._models[model_id] = load_checkpoint(path)
            return self._models[model_id]

    def codes(self, model_id, object_id):
        key = (model_id, object_id)
        with self._lock:
            if key not in self._codes:
                model, _ = self._models[model_id]
                self._codes[key] = codes_for_object(model, self.data, object_id)
            return self._codes[key]

    def envmap(self, envmap_id, samples):
        if self.envmap_dir is None:
            _404("service started without an environment map directory")
        key = (envmap_id, samples)
        with self._lock:
            if key not in self._envmaps:
                path = self.envmap_dir / f"{envmap_id}.png"
                if not path.exists():
                    _404(f"unknown environment map {envmap_id!r}")
                self._envmaps[key] = load_envmap(path, samples)
            return self._envmaps[key]

    def _lighting_for(self, model, req: RenderRequest):
        spec = req.lighting
        if spec.lights is not None:
            if len(spec.lights) == 0:
                _422("lighting.lights must not be empty")
            try:
                return [LightConfig(position=l.position, color=l.color)
                        for l in spec.lights], None
            except ValueError as e:
                _422(f"lighting.lights: {e}")
        if spec.envmap_id is not None:
            mode = {"eq4": "eq4_mean", "exposure": "exposure_normalized"}.get(spec.mode)
            if mode is None:
                _422(f"lighting.mode {spec.mode!r} must be 'eq4' or 'exposure'")
            return (self.envmap(spec.envmap_id, spec.samples),
                    CompositeConfig(mode=mode))
        _422("lighting needs either lights or envmap_id")

    def render(self, req: RenderRequest) -> np.ndarray:
        model, _ = self.model(req.model_id)
        if req.object_id not in self.data.object_ids():
            _404(f"unknown object {req.object_id!r}")
        lighting, composite = self._lighting_for(model, req)
        if isinstance(lighting, list) and len(lighting) == 1:
            lighting = lighting[0]

        s, z = self.codes(req.model_id, req.object_id)
        if req.latent is not None and (req.latent.z is not None or req.latent.seed is not None):
            if not model.config.uses_z:
                _422("latent given, but the model has no image code input")
            if req.latent.z is not None:
                z = np.asarray(req.latent.z, dtype=np.float64)
                if z.shape != (model.config.z_dim,):
                    _422(f"latent.z must have dimension {model.config.z_dim}")
            else:
                z = np.random.default_rng(req.latent.seed).standard_normal(
                    model.config.z_dim)

        try:
            camera = CameraModel.look_at(
                np.asarray(req.camera.position, dtype=np.float64),
                target=np.asarray(req.camera.look_at, dtype=np.float64),
                fov_deg=req.camera.fov_deg,
                width=req.camera.width, height=req.camera.height)
        except ValueError as e:
            _422(f"camera: {e}")
        scene = scene_from_spec(self.data.scene_spec(req.object_id))
        depth, mask = view_geometry(scene, camera)
        return eval_image(model, camera, depth, mask, lighting, s=s, z=z,
                          composite=composite)


def build_app(models_dir, data_root, envmap_dir=None, queue_size: int = 4) -> FastAPI:
    registry = RenderRegistry(models_dir, data_root, envmap_dir)
    slots = threading.BoundedSemaphore(queue_size)
    app = FastAPI(title="lightfields render service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.registry = registry

    @app.get("/models")
    def models():
        return registry.describe_models()

    @app.get("/objects")
    def objects():
        return {"objects": registry.data.object_ids(),
                "envmaps": (sorted(p.stem for p in registry.envmap_dir.glob("*.png"))
                            if registry.envmap_dir else [])}

    @app.post("/render")
    def render_endpoint(req: RenderRequest):
        if not slots.acquire(blocking=False):
            raise HTTPException(status_code=503, detail="render queue full")
        try:
            t0 = time.perf_counter()
            img = registry.render(req)
            millis = (time.perf_counter() - t0) * 1000.0
            return Response(content=rasters.png_bytes(img), media_type="image/png",
                            headers={"X-Render-Millis": f"{millis:.1f}"})
        finally:
            slots.release()

    @app.post("/sample-latent")
    def sample_latent(req: SampleLatentRequest):
        model, _ = registry.model(req.model_id)
        z = np.random.default_rng(req.seed).standard_normal(model.config.z_dim)
        return {"z": z.tolist()}

    return app
