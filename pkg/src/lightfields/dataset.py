"""On-disk datasets: generation presets, manifests, pixel sampling.

Layout per object:
    <root>/dataset.json                global generation manifest
    <root>/<object_id>/meta.json       cameras, lights, file references
    <root>/<object_id>/cloud.f32       surface point cloud (f32 triples)
    <root>/<object_id>/view_<i>/light_<j>.png
    <root>/<object_id>/view_<i>/depth.dpth
    <root>/<object_id>/view_<i>/mask.png

Generation is a pure function of (preset, seed): every camera, light, jitter
and sample derives from one SeedSequence tree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from . import oracle, rasters
from .nets import LightConfig
from .oracle import CameraModel, SoftShadowConfig


class DatasetError(ValueError):
    """Missing files, mismatched counts, or malformed manifests."""


@dataclass
class SceneSample:
    """One supervised example: surface point, unit view direction, sRGB target."""

    p: np.ndarray
    v: np.ndarray
    rgb: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if abs(np.linalg.norm(self.v) - 1.0) > 1e-6:
            raise ValueError("view direction must be unit-norm")


@dataclass
class SampleBatch:
    """Row-stacked SceneSamples."""

    p: np.ndarray
    v: np.ndarray
    rgb: np.ndarray

    def __len__(self):
        return len(self.p)

    def __getitem__(self, i) -> SceneSample:
        return SceneSample(self.p[i], self.v[i], self.rgb[i])


@dataclass
class GenConfig:
    """Resolved dataset generation settings (written to dataset.json)."""

    preset: str
    scene_kind: str
    n_objects: int = 1
    n_train_objects: int = 1
    n_views: int = 2
    n_lights: int = 2
    n_test_views: int = 0
    n_test_lights: int = 1
    resolution: int = 128
    fov_deg: float = 50.0
    colored_lights: bool = False
    with_ground: bool = False
    n_cloud_points: int = 2048
    default_pixels: int = 2048
    shadow_radius: float = 0.3
    shadow_samples: int = 16
    ambient: float = 0.2

    def replace(self, **kw):
        return replace(self, **kw)


PRESETS = {
    # Single-object protocol: 50 views with 30 lighting conditions each.
    "single-object": GenConfig(preset="single-object", scene_kind="chair",
                               n_views=50, n_lights=30, n_test_views=5,
                               with_ground=True, default_pixels=2048),
    # Multi-object single-view protocol: 10 viewpoints x 4 lights per object.
    "single-view": GenConfig(preset="single-view", scene_kind="procedural",
                             n_objects=80, n_train_objects=64,
                             n_views=10, n_lights=4, n_test_views=2,
                             default_pixels=500),
    # Shadow study scene: chair with armrests over a ground plane.
    "shadow": GenConfig(preset="shadow", scene_kind="chair",
                        n_views=20, n_lights=8, n_test_views=5,
                        with_ground=True, default_pixels=2048),
    # Reflection study scene: highly specular sphere, colored lights,
    # full single-object protocol counts.
    "reflection": GenConfig(preset="reflection", scene_kind="sphere",
                            n_views=50, n_lights=30, n_test_views=10,
                            colored_lights=True, default_pixels=2048),
}


def preset_config(name: str) -> GenConfig:
    if name not in PRESETS:
        raise DatasetError(f"unknown preset {name!r} (have {sorted(PRESETS)})")
    return PRESETS[name]


def _scene_for(cfg: GenConfig, object_seed: int):
    if cfg.scene_kind == "chair":
        return oracle.chair_scene(object_seed, with_armrests=True, with_ground=cfg.with_ground)
    if cfg.scene_kind == "sphere":
        return oracle.sphere_scene(object_seed, specular=True, with_ground=cfg.with_ground)
    if cfg.scene_kind == "procedural":
        return oracle.procedural_scene(object_seed, with_ground=cfg.with_ground)
    raise DatasetError(f"unknown scene kind {cfg.scene_kind!r}")


def generate(root, cfg: GenConfig, seed: int = 0, progress=None) -> "Dataset":
    """Render a dataset to ``root``. Deterministic in (cfg, seed)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    master = np.random.SeedSequence(seed)
    object_seqs = master.spawn(cfg.n_objects)

    object_ids = []
    for oi, oseq in enumerate(object_seqs):
        object_id = f"obj_{oi:04d}"
        object_ids.append(object_id)
        odir = root / object_id
        odir.mkdir(exist_ok=True)
        orng = np.random.default_rng(oseq)
        object_seed = int(orng.integers(1 << 31))
        scene = _scene_for(cfg, object_seed)

        cloud = oracle.sample_surface_points(scene, cfg.n_cloud_points,
                                             seed=int(orng.integers(1 << 31)))
        rasters.write_cloud(odir / "cloud.f32", cloud)

        views = []
        n_total = cfg.n_views + cfg.n_test_views
        for vi in range(n_total):
            split = "train" if vi < cfg.n_views else "test"
            n_lights = cfg.n_lights if split == "train" else cfg.n_test_lights
            camera, lights = oracle.sample_view_and_lights(
                orng, n_lights, colored_lights=cfg.colored_lights,
                width=cfg.resolution, height=cfg.resolution, fov_deg=cfg.fov_deg)
            shadow = SoftShadowConfig(radius=cfg.shadow_radius,
                                      n_samples=cfg.shadow_samples)
            images, depth, mask = oracle.render_per_light(
                scene, camera, lights, ambient=cfg.ambient, shadow=shadow,
                shadow_seed=int(orng.integers(1 << 31)))
            vdir = odir / f"view_{vi}"
            vdir.mkdir(exist_ok=True)
            image_paths = []
            for li, img in enumerate(images):
                rel = f"view_{vi}/light_{li}.png"
                rasters.write_png(odir / rel, img)
                image_paths.append(rel)
            rasters.write_depth(vdir / "depth.dpth", depth)
            rasters.write_png(vdir / "mask.png", mask.astype(np.uint8) * 255)
            views.append({
                "dir": f"view_{vi}",
                "split": split,
                "camera": camera.to_dict(),
                "lights": [{"position": l.position.tolist(), "color": l.color.tolist()}
                           for l in lights],
                "images": image_paths,
                "depth": f"view_{vi}/depth.dpth",
                "mask": f"view_{vi}/mask.png",
            })
            if progress:
                progress(object_id, vi, n_total)

        meta = {
            "object_id": object_id,
            "split": "train" if oi < cfg.n_train_objects else "test",
            "scene": scene.spec,
            "cloud": "cloud.f32",
            "n_cloud_points": cfg.n_cloud_points,
            "views": views,
        }
        (odir / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")

    (root / "dataset.json").write_text(json.dumps({
        "preset": cfg.preset,
        "seed": seed,
        "objects": object_ids,
        "config": asdict(cfg),
    }, indent=1) + "\n")
    return Dataset.load(root)


@dataclass
class ViewData:
    """One fully loaded view: rasters plus camera and lights."""

    camera: CameraModel
    lights: list
    images: list          # per light, (H, W, 3) float sRGB
    depth: np.ndarray
    mask: np.ndarray
    split: str

    def n_masked(self):
        return int(self.mask.sum())


class Dataset:
    def __init__(self, root: Path, manifest: dict, metas: dict):
        self.root = Path(root)
        self.manifest = manifest
        self.metas = metas

    @classmethod
    def load(cls, root) -> "Dataset":
        root = Path(root)
        mpath = root / "dataset.json"
        if not mpath.exists():
            raise DatasetError(f"{mpath} does not exist")
        manifest = json.loads(mpath.read_text())
        metas = {}
        for object_id in manifest["objects"]:
            meta_path = root / object_id / "meta.json"
            if not meta_path.exists():
                raise DatasetError(f"missing {meta_path}")
            meta = json.loads(meta_path.read_text())
            for view in meta["views"]:
                want = len(view["lights"])
                if len(view["images"]) != want:
                    raise DatasetError(
                        f"{object_id}/{view['dir']}: {len(view['images'])} images for {want} lights")
                for rel in view["images"] + [view["depth"], view["mask"]]:
                    if not (root / object_id / rel).exists():
                        raise DatasetError(f"missing file {root / object_id / rel}")
            if not (root / object_id / meta["cloud"]).exists():
                raise DatasetError(f"missing cloud for {object_id}")
            metas[object_id] = meta
        return cls(root, manifest, metas)

    @property
    def config(self) -> GenConfig:
        return GenConfig(**self.manifest["config"])

    def object_ids(self, split=None):
        ids = self.manifest["objects"]
        if split is None:
            return list(ids)
        return [i for i in ids if self.metas[i]["split"] == split]

    def scene_spec(self, object_id):
        return self.metas[object_id]["scene"]

    def load_cloud(self, object_id) -> np.ndarray:
        cloud = rasters.read_cloud(self.root / object_id / self.metas[object_id]["cloud"])
        want = self.metas[object_id]["n_cloud_points"]
        if len(cloud) != want:
            raise DatasetError(f"{object_id}: cloud has {len(cloud)} points, expected {want}")
        return cloud

    def view_entries(self, object_id, split=None):
        views = self.metas[object_id]["views"]
        if split is None:
            return list(views)
        return [v for v in views if v["split"] == split]

    def load_view(self, object_id, view: dict) -> ViewData:
        odir = self.root / object_id
        camera = CameraModel.from_dict(view["camera"])
        lights = [LightConfig(position=np.asarray(l["position"]),
                              color=np.asarray(l["color"])) for l in view["lights"]]
        images = [rasters.read_png(odir / rel) for rel in view["images"]]
        depth = rasters.read_depth(odir / view["depth"])
        mask = rasters.read_png_u8(odir / view["mask"]) > 127
        return ViewData(camera=camera, lights=lights, images=images,
                        depth=depth, mask=mask, split=view["split"])


def unproject(pixel, depth, camera: CameraModel) -> np.ndarray:
    """3D point of a pixel at the given ray depth. Index convention: the ray
    passes through the pixel center (u+0.5, v+0.5)."""
    u, v = float(pixel[0]), float(pixel[1])
    if not np.isfinite(depth) or depth <= 0:
        raise ValueError("cannot unproject a masked-out pixel (non-finite depth)")
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise ValueError(f"pixel ({u}, {v}) out of bounds")
    return camera.unproject(np.array([u]), np.array([v]), np.array([float(depth)]))[0]


def sample_training_pixels(view: ViewData, n: int, seed, light_index: int = 0) -> SampleBatch:
    """n masked pixels, uniform without replacement, unprojected to surface
    points with view directions toward the camera center and sRGB targets
    from the chosen light's image."""
    vs, us = np.nonzero(view.mask)
    if len(us) < n:
        raise DatasetError(f"view has {len(us)} masked pixels, need {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sel = rng.choice(len(us), size=n, replace=False)
    us, vs = us[sel], vs[sel]
    depth = view.depth[vs, us].astype(np.float64)
    pts = view.camera.unproject(us.astype(np.float64), vs.astype(np.float64), depth)
    v = view.camera.center[None, :] - pts
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    rgb = view.images[light_index][vs, us]
    return SampleBatch(p=pts, v=v, rgb=rgb)


def downsample_image(image: np.ndarray, size: int) -> np.ndarray:
    """Box-filter an (H, W, 3) image down to (size, size, 3). The source must
    be an integer multiple of the target."""
    h, w = image.shape[:2]
    if h == size and w == size:
        return image
    if h % size or w % size:
        raise ValueError(f"cannot box-filter {h}x{w} to {size}x{size}")
    f = h // size
    return image.reshape(size, f, size, f, 3).mean(axis=(1, 3))
