import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as nps

from vcube.cli import EXIT_CONFIG, EXIT_OK, EXIT_VALIDATION, build_parser, main
from vcube.config import INVENTED, OUTPUT_ENV, ScenarioConfig, leaves
from vcube.errors import CodecError, ConfigError
from vcube.imageio import (read_pfm, read_pgm, read_png, read_portrait, read_ppm, read_volume, write_pfm, write_pgm,
                           write_png, write_portrait, write_ppm, write_volume)
from vcube.lumi_render import PortraitFrame

SMALL = Path(__file__).parent.parent / "configs" / "small.json"

# ---------------------------------------------------------------- file formats


@given(nps.arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9), st.just(3))))
def test_ppm_round_trip(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("ppm") / "a.ppm"
    write_ppm(p, img)
    assert np.array_equal(read_ppm(p), img)


def test_pgm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (7, 5), dtype=np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)
    write_pgm(tmp_path / "m.pgm", img > 100)
    assert set(np.unique(read_pgm(tmp_path / "m.pgm"))) <= {0, 255}


def test_pfm_round_trip_and_row_order(tmp_path, rng):
    d = rng.uniform(0, 5, (6, 4)).astype(np.float32)
    write_pfm(tmp_path / "d.pfm", d)
    assert np.array_equal(read_pfm(tmp_path / "d.pfm"), d)
    raw = (tmp_path / "d.pfm").read_bytes()
    assert raw.startswith(b"Pf\n4 6\n-1.0\n")
    # the first stored row is the bottom image row
    assert np.frombuffer(raw[-16:], "<f4").tolist() == d[0].tolist()


def test_truncated_pfm_is_rejected(tmp_path):
    write_pfm(tmp_path / "d.pfm", np.ones((3, 3)))
    (tmp_path / "t.pfm").write_bytes((tmp_path / "d.pfm").read_bytes()[:-4])
    with pytest.raises(CodecError):
        read_pfm(tmp_path / "t.pfm")
    with pytest.raises(CodecError):
        read_pfm(SMALL)


def test_png_is_byte_stable(tmp_path, rng):
    img = rng.integers(0, 256, (9, 11, 3), dtype=np.uint8)
    write_png(tmp_path / "a.png", img)
    write_png(tmp_path / "b.png", img)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    assert np.array_equal(read_png(tmp_path / "a.png"), img)


def test_portrait_round_trip(tmp_path, rng):
    alpha = np.round(rng.random((5, 6)) * 255) / 255
    color = np.round(rng.uniform(0, 255, (5, 6, 3)) * alpha[..., None])
    write_portrait(tmp_path / "p", PortraitFrame(color, alpha))
    back = read_portrait(tmp_path / "p")
    assert np.array_equal(back.color, color) and np.allclose(back.alpha, alpha, atol=1e-12)


def test_volume_round_trip(tmp_path, rng):
    v = rng.random((4, 3, 5)).astype(np.float32)
    write_volume(tmp_path / "v.bin", v)
    raw = (tmp_path / "v.bin").read_bytes()
    assert raw[:4] == b"VCVL" and len(raw) == 16 + 4 * v.size
    assert np.array_equal(read_volume(tmp_path / "v.bin"), v)
    (tmp_path / "w.bin").write_bytes(raw[:-1])
    with pytest.raises(CodecError):
        read_volume(tmp_path / "w.bin")

# ---------------------------------------------------------------- config


def test_config_json_round_trip():
    cfg = ScenarioConfig.load(SMALL)
    assert cfg.layout.width == 320 and cfg.run.screen_frames == [0, 1]
    back = ScenarioConfig.from_json(cfg.to_json())
    assert back.to_dict() == cfg.to_dict() and back.digest() == cfg.digest()


@pytest.mark.parametrize("doc", [
    {"layout": {"widht": 320}},
    {"bogus": {}},
    {"schema": 99},
    {"pipeline": {"quality": 0}},
    {"pipeline": {"count": "many"}},
    {"scene": {"kind": "teapot"}},
    {"noise": {"dropout": 2.0}},
])
def test_bad_config_is_rejected(doc):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(doc)


def test_override_coerces_to_default_type():
    cfg = ScenarioConfig()
    cfg.set("pipeline.quality", "70")
    cfg.set("scene.animate", "false")
    cfg.set("layout.seat", "[0, 1.1, 1.0]")
    assert cfg.pipeline.quality == 70 and cfg.scene.animate is False and cfg.layout.seat == [0, 1.1, 1.0]
    with pytest.raises(ConfigError):
        cfg.set("pipeline.nothing", "1")


def test_every_leaf_is_a_flag():
    paths = {p for p, _ in leaves()}
    assert INVENTED <= paths
    help_text = build_parser()._subparsers._group_actions[0].choices["simulate"].format_help()
    for p in paths:
        assert f"--{p}" in help_text
    assert "[invented]" in help_text


def test_output_dir_precedence(monkeypatch):
    cfg = ScenarioConfig()
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert str(cfg.output_dir()) == "vcube_out"
    monkeypatch.setenv(OUTPUT_ENV, "/tmp/env_dir")
    assert str(cfg.output_dir()) == "/tmp/env_dir"
    assert str(cfg.output_dir("/tmp/flag_dir")) == "/tmp/flag_dir"

# ---------------------------------------------------------------- command line


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_validate_ok(tmp_path, capsys):
    code, out, _ = _run(["validate", "--output-dir", str(tmp_path)], capsys)
    assert code == EXIT_OK and json.loads(out)["violations"] == []
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "validate" and "validate.json" in manifest["outputs"]
    assert ScenarioConfig.load(tmp_path / "config.json").digest() == manifest["config_sha256"]


def test_validate_reports_overlap(tmp_path, capsys):
    same = {"rotation": np.eye(3).tolist(), "translation": [0.0, 0.0, 0.0]}
    code, _, err = _run(["validate", "--output-dir", str(tmp_path), "--layout.placements", json.dumps([same, same])],
                        capsys)
    assert code == EXIT_VALIDATION
    assert json.loads(err)["exit_code"] == EXIT_VALIDATION


@pytest.mark.parametrize("argv", [
    ["simulate", "--pipeline.quality", "500"],
    ["simulate", "--config", "/nonexistent.json"],
    ["teleport"],
    ["simulate", "--layout.topology", '"pyramid"'],
])
def test_config_errors_exit_2(tmp_path, capsys, argv):
    code, _, err = _run(argv + ["--output-dir", str(tmp_path)], capsys)
    assert code == EXIT_CONFIG
    assert json.loads(err.strip().splitlines()[-1])["exit_code"] == EXIT_CONFIG


def test_capture_writes_all_cameras(tmp_path, capsys):
    code, out, _ = _run(["capture", "--config", str(SMALL), "--output-dir", str(tmp_path)], capsys)
    assert code == EXIT_OK and json.loads(out)["viewpoint_valid"]
    for i in range(6):
        assert read_ppm(tmp_path / f"cam{i}_color.ppm").shape == (240, 320, 3)
        assert read_pfm(tmp_path / f"cam{i}_depth.pfm").shape == (240, 320)


def test_render_then_metrics(tmp_path, capsys):
    code, _, _ = _run(["render", "--config", str(SMALL), "--output-dir", str(tmp_path / "r"), "--exact-depth"],
                      capsys)
    assert code == EXIT_OK
    files = json.loads((tmp_path / "r" / "manifest.json").read_text())["outputs"]
    stem = next(k for k in files if k.endswith("_color.png"))[: -len("_color.png")]
    code, out, _ = _run(["metrics", "--output-dir", str(tmp_path / "m"), "--portrait", str(tmp_path / "r" / stem)],
                        capsys)
    assert code == EXIT_OK and "psnr_foreground" in json.loads(out)


def test_simulate_small_config(tmp_path, capsys):
    code, out, _ = _run(["simulate", "--config", str(SMALL), "--output-dir", str(tmp_path), "--duration", "2",
                         "--run.screen_frames", "[0]", "--dump-screens"], capsys)
    assert code == EXIT_OK
    summary = json.loads(out)
    assert summary["stage_latency_sum_ms"] == 270.0
    assert all(v["fps"] == pytest.approx(30.0) for v in summary["streams"].values())
    assert len(list((tmp_path / "screens").glob("*.png"))) == 6
