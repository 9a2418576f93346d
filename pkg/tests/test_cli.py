import subprocess
import sys

import pytest

from sclab import cli, config

FAST = ["--set", "run.steps=3", "--set", "run.batch_size=4", "--set", "run.n_per_class=5"]
SMALL_IMU = FAST + ["--set", "encoder.channels=8,8"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    pairs = dict(line.split("=", 1) for line in out.splitlines() if "=" in line)
    return code, pairs, err


def test_synth_writes_identical_csvs(tmp_path, capsys):
    for name in ("a", "b"):
        code, pairs, _ = run(capsys, "synth", "--family", "IMU_LIKE", "--seed", "2", "--out", str(tmp_path / name),
                             "--set", "run.n_per_class=5")
        assert code == 0
    for f in ("train.csv", "test.csv", "manifest.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    manifest = dict(l.split(" = ") for l in (tmp_path / "a" / "manifest.txt").read_text().splitlines())
    for split in ("train", "test"):
        lines = (tmp_path / "a" / f"{split}.csv").read_text().splitlines()
        assert int(manifest[f"{split}_rows"]) == len(lines) - 1
    assert manifest["seed"] == "2"


def test_synth_rejects_unknown_family(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["synth", "--family", "EEG", "--out", str(tmp_path / "x")])
    assert info.value.code == 2
    assert "ECG_LIKE" in capsys.readouterr().err


def test_train_mode_named_run_dirs_and_snapshot_rerun(tmp_path, capsys):
    dirs = {}
    for mode in ("BASELINE", "STRUCTURED"):
        code, pairs, _ = run(capsys, "train", "--family", "IMU_LIKE", *SMALL_IMU, "--set", f"hp.mode={mode}",
                             "--out", str(tmp_path))
        assert code == 0 and pairs["mode"] == mode
        dirs[mode] = pairs
    assert dirs["BASELINE"]["run_dir"] != dirs["STRUCTURED"]["run_dir"]
    assert "baseline" in dirs["BASELINE"]["run_dir"]

    snap = f"{dirs['STRUCTURED']['run_dir']}/config.txt"
    code, again, _ = run(capsys, "train", "--config", snap, "--out", str(tmp_path / "rerun"))
    assert code == 0
    assert again["checkpoint_hash"] == dirs["STRUCTURED"]["checkpoint_hash"]


def test_existing_run_dir_is_not_overwritten(tmp_path, capsys):
    args = ["train", "--family", "IMU_LIKE", *SMALL_IMU, "--out", str(tmp_path)]
    assert run(capsys, *args)[0] == 0
    code, _, err = run(capsys, *args)
    assert code == 1 and "already exists" in err


def test_conflicting_partition_fails_before_training(tmp_path, capsys):
    code, _, err = run(capsys, "train", *FAST, "--set", "partition.d_var=8", "--out", str(tmp_path))
    assert code == 1 and "partition" in err
    assert not any(tmp_path.iterdir())


def test_finetune_and_eval(tmp_path, capsys):
    _, base, _ = run(capsys, "train", *FAST, "--set", "hp.mode=BASELINE", "--set", "encoder.channels=4,4",
                     "--out", str(tmp_path))
    code, ft, _ = run(capsys, "finetune", "--base", f"{base['run_dir']}/model.ckpt", *FAST,
                      "--set", "encoder.channels=4,4", "--out", str(tmp_path))
    assert code == 0 and ft["steps"] == "6"

    ckpt = f"{ft['run_dir']}/model.ckpt"
    code, pairs, _ = run(capsys, "eval", ckpt, "--metric", "phase", "--svg", "--out", str(tmp_path / "r1"))
    assert code == 0 and pairs["metric"] == "phase"
    assert sorted(p.suffix for p in (tmp_path / "r1").iterdir()) == [".csv", ".svg"]
    run(capsys, "eval", ckpt, "--metric", "phase", "--out", str(tmp_path / "r2"))
    assert (tmp_path / "r1" / "eval_phase.csv").read_bytes() == (tmp_path / "r2" / "eval_phase.csv").read_bytes()


def test_phase_metric_rejected_for_imu(tmp_path, capsys):
    _, pairs, _ = run(capsys, "train", "--family", "IMU_LIKE", *SMALL_IMU, "--out", str(tmp_path))
    code, _, err = run(capsys, "eval", f"{pairs['run_dir']}/model.ckpt", "--metric", "phase")
    assert code == 1 and "single-channel" in err


def test_sweep_rejects_bad_axis_and_empty_values(tmp_path, capsys):
    code, _, err = run(capsys, "sweep", *FAST, "--axis", "run.steps", "--values", "1,2", "--out", str(tmp_path / "s"))
    assert code == 1 and "not sweepable" in err
    code, _, err = run(capsys, "sweep", *FAST, "--axis", "hp.beta", "--values", "", "--out", str(tmp_path / "t"))
    assert code == 1 and "empty" in err


def test_beta_zero_row_matches_standard_contrastive():
    base = config.imu_config(**{"run.steps": 4, "run.batch_size": 4, "run.n_per_class": 5,
                                "encoder.channels": "8,8"})
    beta0 = cli.sweep_row(config.apply_overrides(base, {"hp.beta": 0.0}))
    std = cli.sweep_row(config.apply_overrides(base, {"hp.mode": "STANDARD_CONTRASTIVE"}))
    beta0.pop("checkpoint_hash"), std.pop("checkpoint_hash")
    assert beta0 == std


def test_d_inv_sweep_table(tmp_path, capsys):
    code, pairs, _ = run(capsys, "sweep", "--family", "IMU_LIKE", *SMALL_IMU, "--axis", "partition.d_inv",
                         "--values", "0,8,16,24,32", "--out", str(tmp_path / "sw"))
    assert code == 0 and pairs["rows"] == "5"
    lines = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("partition.d_inv,final_total,X,Y,Z,COMBINED,consistency")
    assert [l.split(",")[0] for l in lines[1:]] == ["0", "8", "16", "24", "32"]


def test_report_groups_and_is_deterministic(tmp_path, capsys):
    _, a, _ = run(capsys, "train", "--family", "IMU_LIKE", *SMALL_IMU, "--out", str(tmp_path))
    _, b, _ = run(capsys, "train", *FAST, "--set", "encoder.channels=4,4", "--out", str(tmp_path))
    code, _, _ = run(capsys, "report", a["run_dir"], "--out", str(tmp_path / "one.md"))
    one = (tmp_path / "one.md").read_text()
    assert code == 0 and sum(l.startswith("| ") for l in one.splitlines()) == 2
    run(capsys, "report", a["run_dir"], b["run_dir"], "--out", str(tmp_path / "r1.md"))
    run(capsys, "report", a["run_dir"], b["run_dir"], "--out", str(tmp_path / "r2.md"))
    text = (tmp_path / "r1.md").read_text()
    assert "## ECG_LIKE" in text and "## IMU_LIKE" in text
    assert text == (tmp_path / "r2.md").read_text()


def test_report_names_missing_metrics(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code, _, err = run(capsys, "report", str(tmp_path / "empty"))
    assert code == 1 and "empty" in err and "metrics.csv" in err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "sclab", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "sweep" in out.stdout
