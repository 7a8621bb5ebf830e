"""Command-line entry points.

Every command resolves its settings from defaults, then an optional flat
key-value JSON config file, then explicit flags, and writes a run manifest
next to its main artifact so the run can be reproduced exactly.

Exit codes: 0 success, 1 user error, 2 internal failure.
Logs go to stderr; artifacts only to the paths given by flags.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as ds
from . import rasters
from .inference import (
    codes_for_object,
    eval_image,
    evaluate,
    render_with_model,
    turntable_cameras,
)
from .lighting import CompositeConfig, load_envmap
from .nets import LightConfig
from .oracle import CameraModel, scene_from_spec, view_geometry
from .training import (
    CheckpointError,
    Trainer,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
)


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


def _log(msg):
    print(msg, file=sys.stderr)


def _load_config_file(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UserError(f"config file {p} does not exist")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise UserError(f"config file {p} is not valid JSON: {e}")
    if not isinstance(cfg, dict):
        raise UserError(f"config file {p} must hold a flat JSON object")
    return cfg


def _resolve(args, config_file_values, defaults):
    """defaults < config file < explicit flags (flags parse to None when unset)."""
    resolved = dict(defaults)
    for key, value in config_file_values.items():
        if key not in resolved:
            raise UserError(f"unknown config key {key!r}")
        resolved[key] = value
    for key in defaults:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = flag_val
    return resolved


def _write_manifest(path, command, resolved):
    manifest = {"command": command, "version": __version__, "resolved": resolved}
    Path(path).write_text(json.dumps(manifest, indent=1, default=str) + "\n")


def _parse_light(spec: str) -> LightConfig:
    parts = spec.split(",")
    if len(parts) != 6:
        raise UserError(f"light spec must be x,y,z,r,g,b (got {spec!r})")
    try:
        vals = [float(x) for x in parts]
    except ValueError:
        raise UserError(f"light spec must be numeric: {spec!r}")
    try:
        return LightConfig(position=vals[:3], color=vals[3:])
    except ValueError as e:
        raise UserError(str(e))


def _load_model(path):
    p = Path(path)
    if not p.exists():
        raise UserError(f"checkpoint {p} does not exist")
    try:
        return load_checkpoint(p)
    except CheckpointError as e:
        raise UserError(str(e))


def _load_dataset(path):
    try:
        return ds.Dataset.load(path)
    except ds.DatasetError as e:
        raise UserError(str(e))


def _camera_from_flags(resolved):
    az = np.deg2rad(resolved["azimuth"])
    el = np.deg2rad(resolved["elevation"])
    r = resolved["distance"]
    center = r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    return CameraModel.look_at(center, width=resolved["width"],
                               height=resolved["height"], fov_deg=resolved["fov"])


def _geometry_for(resolved, data, model, object_id):
    """Camera, depth, mask: stored view when --view-index given, else a fresh
    orbit camera ray-cast against the object's scene."""
    if resolved["view_index"] is not None:
        entries = data.view_entries(object_id)
        vi = resolved["view_index"]
        if not (0 <= vi < len(entries)):
            raise UserError(f"view index {vi} out of range (object has {len(entries)})")
        view = data.load_view(object_id, entries[vi])
        return view.camera, view.depth, view.mask
    camera = _camera_from_flags(resolved)
    scene = scene_from_spec(data.scene_spec(object_id))
    depth, mask = view_geometry(scene, camera)
    return camera, depth, mask


def _require_object(data, object_id):
    if object_id not in data.object_ids():
        raise UserError(f"object {object_id!r} not in dataset "
                        f"(have {data.object_ids()[:8]}...)")


_CAMERA_DEFAULTS = dict(azimuth=30.0, elevation=35.0, distance=1.5,
                        width=128, height=128, fov=50.0, view_index=None)


def _add_camera_flags(p):
    p.add_argument("--view-index", type=int, help="render from a stored dataset view")
    p.add_argument("--azimuth", type=float, help="orbit azimuth in degrees")
    p.add_argument("--elevation", type=float, help="orbit elevation in degrees")
    p.add_argument("--distance", type=float,
                   help="camera distance [protocol default 1.5]")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--fov", type=float)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args):
    defaults = dict(preset="shadow", out=None, seed=0, objects=None, views=None,
                    lights=None, test_views=None, resolution=None, shadow_samples=None)
    resolved = _resolve(args, _load_config_file(args.config), defaults)
    if resolved["out"] is None:
        raise UserError("--out is required")
    cfg = ds.preset_config(resolved["preset"])
    overrides = {}
    if resolved["objects"] is not None:
        overrides["n_objects"] = resolved["objects"]
        overrides["n_train_objects"] = max(1, int(resolved["objects"] * 0.8)) \
            if cfg.n_objects > 1 else 1
    for key, field in (("views", "n_views"), ("lights", "n_lights"),
                       ("test_views", "n_test_views"), ("resolution", "resolution"),
                       ("shadow_samples", "shadow_samples")):
        if resolved[key] is not None:
            overrides[field] = resolved[key]
    cfg = cfg.replace(**overrides)
    out = Path(resolved["out"])
    _log(f"generating preset {cfg.preset!r} into {out}")
    ds.generate(out, cfg, seed=resolved["seed"],
                progress=lambda oid, vi, n: vi + 1 == n and _log(f"  {oid}: {n} views done"))
    _write_manifest(out / "run.json", "gen-data", resolved)
    _log("done")


def cmd_train(args):
    defaults = dict(data=None, out=None, kind="two_step", conditioning="none",
                    generative=False, steps=1000, seed=0, pixels=None, batch=16,
                    lr=1e-4, beta=1e-3, hidden=128, s_dim=128, z_dim=128,
                    image_size=64, pointnet_hidden=128, pointnet_blocks=4,
                    max_train_views=None, max_lights_per_view=None,
                    sampling=None, log_every=100)
    resolved = _resolve(args, _load_config_file(args.config), defaults)
    if resolved["data"] is None or resolved["out"] is None:
        raise UserError("--data and --out are required")
    data = _load_dataset(resolved["data"])
    if resolved["pixels"] is None:
        resolved["pixels"] = data.config.default_pixels
    tc = TrainConfig(
        kind=resolved["kind"], conditioning=resolved["conditioning"],
        generative=resolved["generative"], n_pixels=resolved["pixels"],
        batch_size=resolved["batch"], learning_rate=resolved["lr"],
        beta=resolved["beta"], steps=resolved["steps"], seed=resolved["seed"],
        hidden_dim=resolved["hidden"], s_dim=resolved["s_dim"],
        z_dim=resolved["z_dim"], image_size=resolved["image_size"],
        pointnet_hidden=resolved["pointnet_hidden"],
        pointnet_blocks=resolved["pointnet_blocks"],
        max_train_views=resolved["max_train_views"],
        max_lights_per_view=resolved["max_lights_per_view"],
        sampling=resolved["sampling"] or "shuffle")
    trainer = Trainer(data, tc)
    _log(f"training {tc.kind} ({tc.conditioning}) for {tc.steps} steps "
         f"on {len(trainer.object_ids)} objects")
    trainer.run(log_every=resolved["log_every"], log=_log)
    out = Path(resolved["out"])
    meta = {"dataset": str(resolved["data"]), "train_config": tc.to_dict(),
            "final_loss": trainer.history[-1] if trainer.history else None}
    save_checkpoint(out, trainer.model, meta=meta)
    _write_manifest(out.with_suffix(out.suffix + ".run.json"), "train", resolved)
    _log(f"saved {out}")


def cmd_eval(args):
    defaults = dict(model=None, data=None, out=None, split="test", max_lights=None)
    resolved = _resolve(args, _load_config_file(args.config), defaults)
    if not all(resolved[k] for k in ("model", "data", "out")):
        raise UserError("--model, --data and --out are required")
    model, _ = _load_model(resolved["model"])
    data = _load_dataset(resolved["data"])
    rows = list(evaluate(model, data, split=resolved["split"],
                         max_lights=resolved["max_lights"]))
    out = Path(resolved["out"])
    with open(out, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    _write_manifest(out.with_suffix(out.suffix + ".run.json"), "eval", resolved)
    if rows:
        mean_l1 = float(np.mean([r["l1_masked"] for r in rows]))
        mean_ssim = float(np.mean([r["ssim"] for r in rows]))
        _log(f"{len(rows)} views: mean masked L1 {mean_l1:.4f}, mean SSIM {mean_ssim:.4f}")


def cmd_relight(args):
    defaults = dict(model=None, data=None, object="obj_0000", light=None, out=None,
                    **_CAMERA_DEFAULTS)
    resolved = _resolve(args, _load_config_file(args.config), defaults)
    if not all(resolved[k] for k in ("model", "data", "light", "out")):
        raise UserError("--model, --data, --light and --out are required")
    model, _ = _load_model(resolved["model"])
    data = _load_dataset(resolved["data"])
    _require_object(data, resolved["object"])
    light = _parse_light(resolved["light"])
    s, z = codes_for_object(model, data, resolved["object"])
    camera, depth, mask = _geometry_for(resolved, data, model, resolved["object"])
    img = eval_image(model, camera, depth, mask, light, s=s, z=z)
    rasters.write_png(resolved["out"], img)
    _write_manifest(Path(resolved["out"]).with_suffix(".run.json"), "relight", resolved)
    _log(f"wrote {resolved['out']}")


def cmd_env_render(args):
    defaults = dict(model=None, data=None, object="obj_0000", envmap=None,
                    samples=200, mode="exposure", out=None, **_CAMERA_DEFAULTS)
    resolved = _resolve(args, _load_config_file(args.config), defaults)
    if not all(resolved[k] for k in ("model", "data", "envmap", "out")):
        raise UserError("--model, --data, --envmap and --out are required")
    mode = {"eq4": "eq4_mean", "exposure": "exposure_normalized"}.get(resolved["mode"])
    if mode is None:
        raise UserError(f"unknown mode {resolved['mode']!r} (eq4 | exposure)")
    model, _ = _load_model(resolved["model"])
    data = _load_dataset(resolved["data"])
    _require_object(data, resolved["object"])
    env = load_envmap(resolved["envmap"], resolved["samples"])
    s, z = codes_for_object(model, data, resolved["object"])
    camera, depth, mask = _geometry_for(resolved, data, model, resolved["object"])
    img = eval_image(model, camera, depth, mask, env, s=s, z=z,
                     composite=CompositeConfig(mode=mode))
    rasters.write_png(resolved["out"], img)
    _write_manifest(Path(resolved["out"]).with_suffix(".run.json"), "env-render", resolved)
    _log(f"wrote {resolved['out']} ({len(env)} light samples, {mode})")


def cmd_render(args):
    defaults = dict(model=None, data=None, object="obj_0000", orbit=12, light=None,
                    out=None, request=None, **_CAMERA_DEFAULTS)
    resolved = _resolve(args, _load_config_file(args.config), defaults)
    if resolved["request"] is not None:
        return _render_request(resolved)
    if not all(resolved[k] for k in ("model", "data", "out")):
        raise UserError("--model, --data and --out are required")
    model, _ = _load_model(resolved["model"])
    data = _load_dataset(resolved["data"])
    _require_object(data, resolved["object"])
    light = _parse_light(resolved["light"]) if resolved["light"] else \
        LightConfig(position=[5.0, -5.0, 7.1], color=[1, 1, 1])
    s, z = codes_for_object(model, data, resolved["object"])
    scene = scene_from_spec(data.scene_spec(resolved["object"]))
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    cams = turntable_cameras(resolved["orbit"], elevation_deg=resolved["elevation"],
                             radius=resolved["distance"], width=resolved["width"],
                             height=resolved["height"], fov_deg=resolved["fov"])
    for i, cam in enumerate(cams):
        img = render_with_model(model, scene, cam, light, s=s, z=z)
        rasters.write_png(out / f"frame_{i:03d}.png", img)
    _write_manifest(out / "run.json", "render", resolved)
    _log(f"wrote {resolved['orbit']} frames to {out}")


def _render_request(resolved):
    """Replay a render-service request body through the library code path."""
    from .server import RenderRegistry, request_from_dict

    if not resolved["out"]:
        raise UserError("--out is required")
    body = json.loads(Path(resolved["request"]).read_text())
    if resolved["model"] is None or resolved["data"] is None:
        raise UserError("--request replay needs --model-dir via --model and --data")
    registry = RenderRegistry(models_dir=resolved["model"], data_root=resolved["data"],
                              envmap_dir=None)
    img = registry.render(request_from_dict(body))
    rasters.write_png(resolved["out"], img)
    _log(f"wrote {resolved['out']}")


def cmd_serve(args):
    defaults = dict(models=None, data=None, envmaps=None, host="127.0.0.1",
                    port=8000, queue=4)
    resolved = _resolve(args, _load_config_file(args.config), defaults)
    if resolved["models"] is None or resolved["data"] is None:
        raise UserError("--models and --data are required")
    import uvicorn

    from .server import build_app

    app = build_app(models_dir=resolved["models"], data_root=resolved["data"],
                    envmap_dir=resolved["envmaps"], queue_size=resolved["queue"])
    _log(f"serving on {resolved['host']}:{resolved['port']}")
    uvicorn.run(app, host=resolved["host"], port=resolved["port"], log_level="warning")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="lightfields",
                     description="Train, evaluate and render surface light fields.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", help="render a procedural dataset")
    p.add_argument("--preset", choices=sorted(ds.PRESETS),
                   help="single-object: 50 views x 30 lights; "
                        "single-view: 10 views x 4 lights [protocol defaults]")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--objects", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--lights", type=int)
    p.add_argument("--test-views", dest="test_views", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--shadow-samples", dest="shadow_samples", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a model to a dataset")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--kind", choices=["one_step", "two_step"])
    p.add_argument("--conditioning", choices=["none", "s", "z", "s+z"])
    p.add_argument("--generative", action="store_const", const=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--pixels", type=int,
                   help="pixels per view: 2048 single-object / 500 single-view "
                        "[protocol defaults]")
    p.add_argument("--batch", type=int, help="batch size [protocol default 16]")
    p.add_argument("--lr", type=float, help="Adam learning rate [protocol default 1e-4]")
    p.add_argument("--beta", type=float, help="VAE KL weight")
    p.add_argument("--hidden", type=int, help="residual width [protocol default 128]")
    p.add_argument("--s-dim", dest="s_dim", type=int)
    p.add_argument("--z-dim", dest="z_dim", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--pointnet-hidden", dest="pointnet_hidden", type=int)
    p.add_argument("--pointnet-blocks", dest="pointnet_blocks", type=int)
    p.add_argument("--max-train-views", dest="max_train_views", type=int,
                   help="limit training views (2-view ablation)")
    p.add_argument("--max-lights-per-view", dest="max_lights_per_view", type=int)
    p.add_argument("--sampling", choices=["shuffle", "iid"],
                   help="batch draw order: epoch shuffle or iid")
    p.add_argument("--log-every", dest="log_every", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model against a dataset split")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--out", help="metrics JSONL path")
    p.add_argument("--split", choices=["train", "test"])
    p.add_argument("--max-lights", dest="max_lights", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("relight", help="render one view under one light")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--object")
    p.add_argument("--light", help="x,y,z,r,g,b")
    p.add_argument("--out")
    _add_camera_flags(p)
    p.set_defaults(func=cmd_relight)

    p = sub.add_parser("env-render", help="composite an environment map")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--object")
    p.add_argument("--envmap", help="equirectangular 8-bit sRGB PNG")
    p.add_argument("--samples", type=int, help="light samples on the sphere")
    p.add_argument("--mode", choices=["eq4", "exposure"],
                   help="eq4: plain prediction mean; exposure: linear sum "
                        "scaled to mean intensity 0.35 [protocol default]")
    p.add_argument("--out")
    _add_camera_flags(p)
    p.set_defaults(func=cmd_env_render)

    p = sub.add_parser("render", help="turntable frames, or replay a service request")
    p.add_argument("--model", help="checkpoint path (or models dir with --request)")
    p.add_argument("--data")
    p.add_argument("--object")
    p.add_argument("--orbit", type=int, help="number of turntable frames")
    p.add_argument("--light", help="x,y,z,r,g,b")
    p.add_argument("--out")
    p.add_argument("--request", help="render-service JSON body to replay")
    _add_camera_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("serve", help="start the HTTP render service")
    p.add_argument("--models", help="directory of .cslf checkpoints")
    p.add_argument("--data", help="dataset root providing objects")
    p.add_argument("--envmaps", help="directory of environment PNGs")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--queue", type=int, help="max concurrent renders")
    p.set_defaults(func=cmd_serve)

    for sp in sub.choices.values():
        sp.add_argument("--config", help="flat key-value JSON config file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_help(sys.stderr)
            return 1
        args.func(args)
        return 0
    except UserError as e:
        _log(f"error: {e}")
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
