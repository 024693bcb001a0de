import filecmp
import json

import pytest
import yaml

from foga import __version__
from foga.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_RUNTIME, run

TINY = [
    "--set", "model.image_size=32",
    "--set", "model.channel_plan=[8,16,24,32]",
    "--set", "synth.size=32",
    "--set", "synth.frames_per_video=30",
    "--set", "synth.num_train=2",
    "--set", "synth.num_test=2",
    "--set", "synth.anomaly_length=[8,10]",
    "--set", "train.batch_size=8",
    "--set", "train.epochs=1",
]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run(["synth", "--out", str(out), "--seed", "0", *TINY]) == EXIT_OK
    return out


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(same_tree(a / d, b / d) for d in cmp.common_dirs)


def test_synth_is_byte_identical(data_dir, tmp_path):
    assert run(["synth", "--out", str(tmp_path), "--seed", "0", *TINY]) == EXIT_OK
    assert same_tree(data_dir, tmp_path)
    assert (data_dir / "testing" / "labels").is_dir()
    intervals = json.loads((data_dir / "intervals.json").read_text())
    assert len(intervals) == 2


def test_snapshot_written(data_dir):
    snap = yaml.safe_load((data_dir / "config.yaml").read_text())
    assert snap["model"]["image_size"] == 32 and snap["synth"]["seed"] == 0
    assert (data_dir / "VERSION").read_text().strip() == f"foga {__version__}"


def test_train_score_eval(data_dir, tmp_path):
    run_dir = tmp_path / "run"
    assert run(["train", "--data", str(data_dir), "--out", str(run_dir), *TINY]) == EXIT_OK
    ckpt = run_dir / "checkpoint.pt"
    assert ckpt.is_file()

    score_dir = tmp_path / "score"
    code = run(["score", "--data", str(data_dir), "--checkpoint", str(ckpt), "--out", str(score_dir),
                "--maps", "--attention", *TINY])
    assert code == EXIT_OK
    csvs = sorted((score_dir / "scores").glob("*.csv"))
    assert len(csvs) == 2
    assert csvs[0].read_text().splitlines()[0] == "frame_index,raw_psnr,normalized,anomaly_score,label"
    assert len(list((score_dir / "error_maps").glob("*.npz"))) == 2
    assert len(list((score_dir / "attention").glob("*.npz"))) == 2

    eval_dir = tmp_path / "eval"
    assert run(["eval", "--data", str(data_dir), "--checkpoint", str(ckpt), "--out", str(eval_dir),
                "--mode", "plain", *TINY]) == EXIT_OK
    report = json.loads((eval_dir / "report.json").read_text())
    assert 0 <= report["auc"] <= 1
    assert report["config"]["scoring"]["mode"] == "plain"


def test_data_root_from_environment(data_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("FOGA_DATA_ROOT", str(data_dir))
    assert run(["eval", "--out", str(tmp_path), *TINY]) == EXIT_OK


def test_bench_record(tmp_path):
    assert run(["bench", "--out", str(tmp_path), "--frames", "5", *TINY]) == EXIT_OK
    rec = json.loads((tmp_path / "bench.json").read_text())
    assert {"params", "flops", "fps_plain", "fps_pyramid"} <= set(rec)


def test_ablate_with_sweep(data_dir, tmp_path):
    sweep = tmp_path / "sweep.yaml"
    sweep.write_text("gcam: [[false, false]]\nloss: [con]\n")
    out = tmp_path / "abl"
    assert run(["ablate", "--data", str(data_dir), "--out", str(out), "--sweep", str(sweep), *TINY]) == EXIT_OK
    rows = json.loads((out / "ablation.json").read_text())
    assert [r["run"] for r in rows] == ["cfa0_ega0", "wo_con"]
    assert (out / "ablation.txt").is_file()


@pytest.mark.parametrize("argv", [
    ["bench", "--out", "{tmp}", "--set", "model.nope=1"],
    ["bench", "--out", "{tmp}", "--set", "scoring.lam=-1"],
    ["bench", "--out", "{tmp}", "--config", "{tmp}/missing.yaml"],
    ["bench", "--out", "{tmp}", "--device", "cuda"],
    ["frobnicate", "--out", "{tmp}"],
    ["eval"],
])
def test_config_errors_exit_2(argv, tmp_path, capsys):
    argv = [a.replace("{tmp}", str(tmp_path)) for a in argv]
    assert run(argv) == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_missing_data_exits_3(tmp_path, monkeypatch):
    monkeypatch.delenv("FOGA_DATA_ROOT", raising=False)
    assert run(["eval", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert run(["train", "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_corrupt_frame_exits_3(data_dir, tmp_path):
    import shutil

    copy = tmp_path / "data"
    shutil.copytree(data_dir, copy)
    victim = sorted((copy / "testing").glob("test_*/*.png"))[3]
    victim.write_bytes(b"not a png")
    code = run(["eval", "--data", str(copy), "--out", str(tmp_path / "o"), *TINY])
    assert code == EXIT_DATA


def test_checkpoint_mismatch_exits_4(data_dir, tmp_path, capsys):
    run_dir = tmp_path / "run"
    assert run(["train", "--data", str(data_dir), "--out", str(run_dir), *TINY,
                "--set", "train.epochs=1"]) == EXIT_OK
    code = run(["eval", "--data", str(data_dir), "--checkpoint", str(run_dir / "checkpoint.pt"),
                "--out", str(tmp_path / "e"), *TINY, "--set", "model.use_ega=false"])
    assert code == EXIT_RUNTIME
    assert "use_ega" in capsys.readouterr().err
