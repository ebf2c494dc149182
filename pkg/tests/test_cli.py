import csv
import json

import pytest

from rlgs2d.cli import run
from rlgs2d.splat2d import SplatScene, read_ppm

SMALL = {
    "data.views": 10,
    "data.height": 32,
    "data.width": 32,
    "data.gt_splats": 600,
    "train.total_iters": 100,
    "train.densify_start": 40,
    "train.densify_interval": 40,
    "train.budget": 400,
    "train.init_grid": 8,
    "search.n_trials": 2,
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return p


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_fit_outputs(tmp_path, cfg_file):
    out = tmp_path / "fit"
    assert run(["fit", "--config", str(cfg_file), "--seed", "1", "--out", str(out)]) == 0
    metrics = rows(out / "metrics.csv")
    assert list(metrics[0]) == ["iteration", "train_loss", "test_psnr", "test_ssim", "splats"]
    assert len(metrics) == 100 // 50 + 1
    renders = sorted((out / "renders").glob("*.ppm"))
    assert [p.name for p in renders] == ["test_000.ppm", "test_008.ppm"]
    assert read_ppm(renders[0]).shape == (32, 32, 3)
    assert len(SplatScene.load(out / "scene.txt")) == int(metrics[-1]["splats"])
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["seed"] == 1 and resolved["train.total_iters"] == 100


def test_fit_is_deterministic_and_config_roundtrips(tmp_path, cfg_file):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run(["fit", "--config", str(cfg_file), "--seed", "1", "--out", str(a)]) == 0
    assert run(["fit", "--config", str(cfg_file), "--seed", "1", "--out", str(b)]) == 0
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert run(["fit", "--config", str(a / "config.resolved.json"), "--out", str(c)]) == 0
    assert (a / "metrics.csv").read_bytes() == (c / "metrics.csv").read_bytes()
    assert (a / "scene.txt").read_bytes() == (c / "scene.txt").read_bytes()


def test_flags_override_config(tmp_path, cfg_file):
    out = tmp_path / "o"
    assert run(["fit", "--config", str(cfg_file), "--train.log_interval", "25", "--hp.lr_color=0.03", "--out", str(out)]) == 0
    assert len(rows(out / "metrics.csv")) == 5
    assert json.loads((out / "config.resolved.json").read_text())["hp.lr_color"] == 0.03


def test_tune_rlgs_writes_phase_log(tmp_path, cfg_file):
    out = tmp_path / "rl"
    assert run(["tune-rlgs", "--config", str(cfg_file), "--out", str(out)]) == 0
    phases = rows(out / "phases.csv")
    assert len(phases) == 100 // 20
    assert {"phase", "lr_rewards", "chosen", "test_psnr"} <= set(phases[0])


@pytest.mark.parametrize("cmd", ["tune-rs", "tune-tpe"])
def test_search_writes_trials(tmp_path, cfg_file, cmd):
    out = tmp_path / cmd
    assert run([cmd, "--config", str(cfg_file), "--out", str(out)]) == 0
    trials = rows(out / "trials.csv")
    assert len(trials) == 2
    assert list(trials[0]) == [
        "trial", "lr_position", "lr_scale", "lr_rotation", "lr_opacity", "lr_color",
        "density_threshold", "split_factor", "objective", "test_psnr", "test_ssim", "seconds",
    ]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["trials"] == 2 and summary["train_steps"] == 200


def test_synth_writes_views(tmp_path, cfg_file):
    out = tmp_path / "s"
    assert run(["synth", "--config", str(cfg_file), "--out", str(out)]) == 0
    meta = json.loads((out / "views.json").read_text())
    assert [m["label"] for m in meta].count("test") == 2
    assert len(list((out / "views").glob("*.ppm"))) == 10
    assert (out / "gt_scene.txt").exists()


def test_report(tmp_path, cfg_file, capsys):
    assert run(["fit", "--config", str(cfg_file), "--out", str(tmp_path / "runs" / "fit")]) == 0
    assert run(["report", str(tmp_path / "runs"), "--out", str(tmp_path / "r.csv")]) == 0
    assert "w/o RLLR and RLDS" in capsys.readouterr().out
    assert rows(tmp_path / "r.csv")[0]["run"] == "fit"


def test_report_on_empty_directory(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert run(["report", str(tmp_path / "empty")]) == 2
    assert "no run summaries" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [[], ["bogus"], ["fit", "--nope", "1"], ["fit", "stray"], ["fit", "--seed"], ["fit", "--seed", "x"]],
)
def test_usage_errors_exit_one(argv, capsys):
    assert run(argv) == 1
    assert "usage:" in capsys.readouterr().err


def test_config_error_exits_one(tmp_path, cfg_file, capsys):
    assert run(["fit", "--config", str(cfg_file), "--rlgs.K", "7"]) == 1
    assert "must divide" in capsys.readouterr().err
    assert run(["fit", "--config", str(tmp_path / "missing.json")]) == 1


def test_runtime_failure_exits_two(tmp_path, cfg_file, capsys):
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"nope")
    assert run(["fit", "--config", str(cfg_file), "--data.source_image", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "failed" in capsys.readouterr().err
