import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from lightfields import dataset as ds
from lightfields import rasters
from lightfields.cli import main
from lightfields.nets import SurfaceLightFieldModel
from lightfields.server import build_app, request_from_dict
from lightfields.training import save_checkpoint, Trainer, TrainConfig

from test_nets import tiny_config


@pytest.fixture(scope="module")
def stack(tmp_path_factory):
    """Dataset + two checkpoints (plain and s+z) + envmap dir + app."""
    ws = tmp_path_factory.mktemp("srv")
    data_root = ws / "data"
    cfg = ds.GenConfig(preset="mini", scene_kind="chair", n_views=1, n_lights=1,
                       n_test_views=0, resolution=40, n_cloud_points=16,
                       shadow_samples=1)
    data = ds.generate(data_root, cfg, seed=9)

    models = ws / "models"
    models.mkdir()
    tc = TrainConfig(kind="two_step", conditioning="none", n_pixels=24, batch_size=2,
                     steps=2, seed=4, hidden_dim=16, feature_dim=6,
                     appearance_blocks=2, lighting_blocks=2)
    tr = Trainer(data, tc)
    tr.run()
    save_checkpoint(models / "plain.cslf", tr.model)
    cond = SurfaceLightFieldModel(tiny_config(conditioning="s+z", image_size=40,
                                              encoder_channels=(4, 8)), seed=8)
    save_checkpoint(models / "cond.cslf", cond)

    envs = ws / "envs"
    envs.mkdir()
    rng = np.random.default_rng(1)
    rasters.write_png(envs / "studio.png", rng.uniform(0.1, 1.0, size=(8, 16, 3)))

    app = build_app(models_dir=models, data_root=data_root, envmap_dir=envs,
                    queue_size=4)
    return {"ws": ws, "models": models, "data": data_root,
            "client": TestClient(app), "app": app}


def body(model_id="plain", lights=None, envmap=None, **kw):
    b = {
        "model_id": model_id,
        "object_id": "obj_0000",
        "camera": {"position": [1.0, 0.6, 0.9], "look_at": [0, 0, 0],
                   "fov_deg": 50.0, "width": 40, "height": 40},
        "lighting": {},
    }
    if lights is not None:
        b["lighting"]["lights"] = lights
    if envmap is not None:
        b["lighting"].update(envmap)
    b.update(kw)
    return b


WHITE = {"position": [2.0, 1.0, 9.0], "color": [1.0, 1.0, 1.0]}
BLUE = {"position": [-3.0, 2.0, 8.0], "color": [0.2, 0.3, 1.0]}


def test_models_listing(stack):
    rows = stack["client"].get("/models").json()
    ids = {r["model_id"] for r in rows}
    assert ids == {"plain", "cond"}
    plain = next(r for r in rows if r["model_id"] == "plain")
    assert plain["kind"] == "two_step"
    assert plain["conditioning"] == "none"


def test_objects_listing(stack):
    out = stack["client"].get("/objects").json()
    assert out["objects"] == ["obj_0000"]
    assert out["envmaps"] == ["studio"]


def test_render_returns_png_with_timing_header(stack):
    r = stack["client"].post("/render", json=body(lights=[WHITE]))
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    assert float(r.headers["x-render-millis"]) > 0
    import io
    from PIL import Image
    arr = np.asarray(Image.open(io.BytesIO(r.content)))
    assert arr.shape == (40, 40, 3)


def test_render_deterministic(stack):
    a = stack["client"].post("/render", json=body(lights=[WHITE]))
    b = stack["client"].post("/render", json=body(lights=[WHITE]))
    assert a.content == b.content


def test_two_lights_equal_mean_composite(stack):
    registry = stack["app"].state.registry
    two = stack["client"].post("/render", json=body(lights=[WHITE, BLUE]))
    single_a = registry.render(request_from_dict(body(lights=[WHITE])))
    single_b = registry.render(request_from_dict(body(lights=[BLUE])))
    expected = rasters.png_bytes(np.mean([single_a, single_b], axis=0))
    assert two.content == expected


def test_cli_replay_is_bit_identical(stack, tmp_path):
    req = body(lights=[WHITE, BLUE])
    served = stack["client"].post("/render", json=req)
    req_path = tmp_path / "req.json"
    req_path.write_text(json.dumps(req))
    out = tmp_path / "replay.png"
    assert main(["render", "--request", str(req_path),
                 "--model", str(stack["models"]), "--data", str(stack["data"]),
                 "--out", str(out)]) == 0
    assert out.read_bytes() == served.content


def test_empty_lights_is_422(stack):
    r = stack["client"].post("/render", json=body(lights=[]))
    assert r.status_code == 422
    assert "lights" in r.json()["detail"]


def test_missing_lighting_is_422(stack):
    r = stack["client"].post("/render", json=body())
    assert r.status_code == 422


def test_unknown_model_and_object_404(stack):
    assert stack["client"].post(
        "/render", json=body(model_id="ghost", lights=[WHITE])).status_code == 404
    assert stack["client"].post(
        "/render", json=body(lights=[WHITE], object_id="obj_9999")).status_code == 404


def test_invalid_body_names_field(stack):
    bad = body(lights=[WHITE])
    bad["camera"]["position"] = [1.0]  # wrong arity
    r = stack["client"].post("/render", json=bad)
    assert r.status_code == 422
    assert any("position" in str(err.get("loc")) for err in r.json()["detail"])


def test_envmap_render_and_unknown_envmap(stack):
    ok = stack["client"].post("/render", json=body(
        envmap={"envmap_id": "studio", "samples": 16, "mode": "eq4"}))
    assert ok.status_code == 200
    missing = stack["client"].post("/render", json=body(
        envmap={"envmap_id": "void", "samples": 16, "mode": "eq4"}))
    assert missing.status_code == 404


def test_sample_latent_and_conditioned_render(stack):
    client = stack["client"]
    za = client.post("/sample-latent", json={"model_id": "cond", "seed": 5}).json()["z"]
    zb = client.post("/sample-latent", json={"model_id": "cond", "seed": 5}).json()["z"]
    assert za == zb
    assert len(za) == 8

    r = client.post("/render", json=body(model_id="cond", lights=[WHITE],
                                         latent={"z": za}))
    assert r.status_code == 200
    import io
    from PIL import Image
    arr = np.asarray(Image.open(io.BytesIO(r.content))).astype(np.float64) / 255.0
    assert np.all(arr >= 0) and np.all(arr <= 1)

    seeded = client.post("/render", json=body(model_id="cond", lights=[WHITE],
                                              latent={"seed": 5}))
    assert seeded.status_code == 200
    assert seeded.content == r.content  # same z either way


def test_latent_on_unconditioned_model_is_422(stack):
    r = stack["client"].post("/render", json=body(lights=[WHITE], latent={"seed": 1}))
    assert r.status_code == 422


def test_latent_wrong_dim_is_422(stack):
    r = stack["client"].post("/render", json=body(model_id="cond", lights=[WHITE],
                                                  latent={"z": [0.0, 1.0]}))
    assert r.status_code == 422


def test_queue_exhaustion_gives_503(stack):
    app = build_app(models_dir=stack["models"], data_root=stack["data"],
                    queue_size=0)
    client = TestClient(app)
    r = client.post("/render", json=body(lights=[WHITE]))
    assert r.status_code == 503
