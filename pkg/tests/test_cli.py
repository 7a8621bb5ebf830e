import json
from pathlib import Path

import numpy as np
import pytest

from lightfields import rasters
from lightfields.cli import main


TINY_GEN = ["gen-data", "--preset", "single-object", "--views", "1", "--lights", "1",
            "--test-views", "1", "--resolution", "40", "--shadow-samples", "1",
            "--seed", "3"]

TINY_TRAIN = ["train", "--kind", "two_step", "--conditioning", "none",
              "--steps", "2", "--pixels", "24", "--batch", "2", "--lr", "1e-3",
              "--hidden", "16", "--seed", "1"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    data = ws / "data"
    assert main(TINY_GEN + ["--out", str(data)]) == 0
    model = ws / "model.cslf"
    assert main(TINY_TRAIN + ["--data", str(data), "--out", str(model)]) == 0
    return ws


def test_gen_data_writes_manifests(workspace):
    data = workspace / "data"
    assert (data / "dataset.json").exists()
    assert (data / "run.json").exists()
    assert (data / "obj_0000" / "view_0" / "light_0.png").exists()
    run = json.loads((data / "run.json").read_text())
    assert run["command"] == "gen-data"
    assert run["resolved"]["seed"] == 3


def test_gen_data_unknown_preset_is_user_error(tmp_path, capsys):
    assert main(["gen-data", "--preset", "nope", "--out", str(tmp_path / "x")]) == 1


def test_gen_data_requires_out():
    assert main(["gen-data", "--preset", "shadow"]) == 1


def test_train_writes_checkpoint_and_manifest(workspace):
    assert (workspace / "model.cslf").exists()
    run = json.loads((workspace / "model.cslf.run.json").read_text())
    assert run["command"] == "train"
    assert run["resolved"]["steps"] == 2


def test_config_file_merging(workspace, tmp_path):
    cfg = tmp_path / "train.json"
    cfg.write_text(json.dumps({"steps": 1, "pixels": 16, "batch": 2,
                               "hidden": 16, "lr": 1e-3}))
    out = tmp_path / "m.cslf"
    code = main(["train", "--data", str(workspace / "data"), "--out", str(out),
                 "--config", str(cfg), "--steps", "2"])  # flag beats config
    assert code == 0
    run = json.loads(Path(str(out) + ".run.json").read_text())
    assert run["resolved"]["steps"] == 2
    assert run["resolved"]["pixels"] == 16


def test_config_file_unknown_key(workspace, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"stepz": 5}))
    assert main(["train", "--data", str(workspace / "data"),
                 "--out", str(tmp_path / "m.cslf"), "--config", str(cfg)]) == 1


def test_relight_deterministic(workspace, tmp_path):
    args = ["relight", "--model", str(workspace / "model.cslf"),
            "--data", str(workspace / "data"), "--object", "obj_0000",
            "--view-index", "0", "--light", "2,1,9,1,1,1"]
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    img = rasters.read_png(a)
    assert img.shape == (40, 40, 3)


def test_relight_bad_light_spec(workspace, tmp_path):
    assert main(["relight", "--model", str(workspace / "model.cslf"),
                 "--data", str(workspace / "data"), "--light", "1,2,3",
                 "--out", str(tmp_path / "x.png")]) == 1


def test_relight_orbit_camera(workspace, tmp_path):
    out = tmp_path / "orbit.png"
    assert main(["relight", "--model", str(workspace / "model.cslf"),
                 "--data", str(workspace / "data"), "--object", "obj_0000",
                 "--light", "0,0,10,1,1,1", "--azimuth", "45", "--elevation", "40",
                 "--width", "32", "--height", "32", "--out", str(out)]) == 0
    assert rasters.read_png(out).shape == (32, 32, 3)


def test_eval_writes_jsonl(workspace, tmp_path):
    out = tmp_path / "metrics.jsonl"
    assert main(["eval", "--model", str(workspace / "model.cslf"),
                 "--data", str(workspace / "data"), "--out", str(out)]) == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 1
    assert rows[0]["object"] == "obj_0000"
    assert "l1_masked" in rows[0]


def test_env_render_modes_differ(workspace, tmp_path):
    env_png = tmp_path / "env.png"
    rng = np.random.default_rng(0)
    rasters.write_png(env_png, rng.uniform(0.2, 1.0, size=(8, 16, 3)))
    outs = {}
    for mode in ("eq4", "exposure"):
        out = tmp_path / f"{mode}.png"
        assert main(["env-render", "--model", str(workspace / "model.cslf"),
                     "--data", str(workspace / "data"), "--object", "obj_0000",
                     "--envmap", str(env_png), "--samples", "20", "--mode", mode,
                     "--view-index", "0", "--out", str(out)]) == 0
        outs[mode] = out.read_bytes()
    assert outs["eq4"] != outs["exposure"]


def test_env_render_unknown_mode(workspace, tmp_path):
    assert main(["env-render", "--model", str(workspace / "model.cslf"),
                 "--data", str(workspace / "data"), "--envmap", "x.png",
                 "--mode", "nope", "--out", str(tmp_path / "x.png")]) == 1


def test_render_turntable(workspace, tmp_path):
    out = tmp_path / "turn"
    assert main(["render", "--model", str(workspace / "model.cslf"),
                 "--data", str(workspace / "data"), "--object", "obj_0000",
                 "--orbit", "3", "--width", "32", "--height", "32",
                 "--out", str(out)]) == 0
    frames = sorted(out.glob("frame_*.png"))
    assert len(frames) == 3
    assert (out / "run.json").exists()


def test_missing_checkpoint_is_user_error(workspace, tmp_path):
    assert main(["eval", "--model", str(tmp_path / "none.cslf"),
                 "--data", str(workspace / "data"),
                 "--out", str(tmp_path / "m.jsonl")]) == 1


def test_corrupt_checkpoint_is_user_error(workspace, tmp_path):
    bad = tmp_path / "bad.cslf"
    bad.write_bytes((workspace / "model.cslf").read_bytes()[:-16])
    assert main(["eval", "--model", str(bad), "--data", str(workspace / "data"),
                 "--out", str(tmp_path / "m.jsonl")]) == 1


def test_no_command_prints_help():
    assert main([]) == 1


def test_unknown_flag_is_user_error():
    assert main(["train", "--frobnicate"]) == 1
