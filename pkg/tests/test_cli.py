import json
import subprocess
import sys

import numpy as np
import pytest

from ledmarker.cli import main
from ledmarker.codec import Dictionary
from ledmarker.harness import preset_path
from ledmarker.optics import Frame, ScenePose
from ledmarker.pose import MarkerMap


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def frame_path(tmp_path, capsys):
    path = tmp_path / "f.pgm"
    code, _, _ = run(capsys, "render", "--id", 5, "--yaw", 20, "--roll", 90, "--out", path, "--seed", 3)
    assert code == 0
    return path


def test_dict_generate_and_show(tmp_path, capsys):
    path = tmp_path / "d.json"
    code, _, _ = run(capsys, "dict", "generate", "--seed", 7, "--out", path)
    assert code == 0
    d = Dictionary.load(path)
    assert (len(d), d.min_hamming, d.seed) == (16, 4, 7)
    code, out, _ = run(capsys, "dict", "show", "--dict", path, "--id", 0)
    assert code == 0
    assert "id 0: 1111111000011001" in out
    assert out.splitlines()[-4:] == ["####", "###.", "...#", "#..#"]


def test_dict_generate_to_stdout(capsys):
    code, out, _ = run(capsys, "dict", "generate", "--seed", 0, "--count", 2, "--min-hamming", 3)
    assert code == 0
    assert len(json.loads(out)["patterns"]) == 2


def test_dict_generate_infeasible(capsys):
    code, _, err = run(capsys, "dict", "generate", "--seed", 0, "--grid-size", 2, "--max-attempts", 200)
    assert code == 2
    assert "GenerationExhausted" in err


def test_encode(capsys):
    code, out, _ = run(capsys, "encode", "--id", 0)
    doc = json.loads(out)
    assert code == 0
    assert doc["pattern"] == "1110000001111111"
    assert doc["frequencies"][0] == [2000.0, 2000.0, 2000.0, 500.0]


def test_encode_unknown_id(capsys):
    code, _, err = run(capsys, "encode", "--id", 99)
    assert code == 2
    assert "UnknownId" in err and "99" in err


def test_render_then_detect(frame_path, capsys, tmp_path):
    code, out, _ = run(capsys, "detect", "--frame", frame_path, "--debug-dir", tmp_path / "dbg")
    assert code == 0
    doc = json.loads(out)
    assert (doc["id"], doc["rotation"]) == (5, 90)
    assert doc["pose"]["distance"] == pytest.approx(0.6, rel=0.02)
    assert doc["pose"]["yaw"] == pytest.approx(20, abs=2)
    assert len(list((tmp_path / "dbg").glob("*.pgm"))) == 6


def test_render_is_seeded(tmp_path, capsys):
    paths = [tmp_path / f"{k}.pgm" for k in range(3)]
    for path, seed in zip(paths, (1, 1, 2)):
        run(capsys, "render", "--id", 0, "--out", path, "--seed", seed)
    assert paths[0].read_bytes() == paths[1].read_bytes() != paths[2].read_bytes()


def test_render_with_json_configs(tmp_path, capsys):
    (tmp_path / "pose.json").write_text(json.dumps({"distance": 0.5, "yaw": -10}))
    (tmp_path / "noise.json").write_text(json.dumps({"gaussian_sigma": 4, "ambient": 6}))
    (tmp_path / "cam.json").write_text(json.dumps({"width": 800, "height": 480}))
    out = tmp_path / "f.pgm"
    code, _, _ = run(
        capsys, "render", "--id", 2, "--out", out, "--pose", tmp_path / "pose.json",
        "--noise", tmp_path / "noise.json", "--camera", tmp_path / "cam.json", "--t0", 0.001,
    )
    assert code == 0
    assert Frame.load(out).width == 800


def test_detect_blank_frame_is_recognition_failure(tmp_path, capsys):
    path = tmp_path / "blank.pgm"
    Frame(np.zeros((480, 640))).save(path)
    code, _, err = run(capsys, "detect", "--frame", path)
    assert code == 1
    assert "find_quad" in err


def test_detect_missing_file_is_config_error(tmp_path, capsys):
    code, _, _ = run(capsys, "detect", "--frame", tmp_path / "nope.pgm")
    assert code == 2


def test_localize(frame_path, tmp_path, capsys):
    pose = ScenePose(0.6, 20, roll=90)
    m = MarkerMap()
    m.add(5, pose.translation(), pose.rotation(), 0.16)  # camera at the world origin
    m.save(tmp_path / "map.json")
    code, out, _ = run(capsys, "localize", "--frame", frame_path, "--map", tmp_path / "map.json")
    assert code == 0
    assert np.linalg.norm(json.loads(out)["camera_position"]) < 5e-3


def test_localize_unknown_marker(frame_path, tmp_path, capsys):
    MarkerMap().save(tmp_path / "map.json")
    code, _, err = run(capsys, "localize", "--frame", frame_path, "--map", tmp_path / "map.json")
    assert code == 2
    assert "UnknownMarker" in err


def test_sweep_writes_nine_rows(tmp_path, capsys):
    csv_path, svg_path = tmp_path / "rates.csv", tmp_path / "rates.svg"
    code, out, _ = run(
        capsys, "sweep", "--spec", preset_path("paper_distance.json"), "--trials", 1,
        "--out", csv_path, "--out", svg_path,
    )
    assert code == 0
    lines = csv_path.read_text().splitlines()
    assert len(lines) == 10
    assert [float(line.split(",")[0]) for line in lines[1:]] == [0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0]
    assert svg_path.read_text().startswith("<svg")
    assert "distance=0.4" in out


def test_sweep_with_fixed_seed_is_repeatable(tmp_path, capsys):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"variable": "distance", "values": [1.0], "trials_per_value": 12,
                                "noise": {"gaussian_sigma": 20, "ambient": 10, "blur_radius": 1}}))
    texts = []
    for seed in (1, 1):
        run(capsys, "sweep", "--spec", spec, "--seed", seed, "--out", tmp_path / "r.csv")
        texts.append((tmp_path / "r.csv").read_text())
    assert texts[0] == texts[1]


def test_bad_spec_is_config_error(tmp_path, capsys):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"variable": "distance", "values": []}))
    code, _, err = run(capsys, "sweep", "--spec", spec)
    assert code == 2
    assert "ConfigError" in err


@pytest.mark.parametrize("argv", [[], ["detect"], ["dict"], ["bogus"], ["encode", "--id", "x"]])
def test_usage_errors_exit_2(capsys, argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ledmarker", "encode", "--id", "99"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "UnknownId" in proc.stderr
