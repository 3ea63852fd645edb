"""End-to-end command tests: exit codes, file layout, and rerun determinism."""

import json

import numpy as np
import pytest
import yaml

import myopinn.signal as sig
from myopinn.cli import main

SMALL_DOC = {
    "subject": {"body_mass": 70.0, "hand_length": 0.18},
    "muscles": [
        {"name": "FLX", "f0m": 407.0, "l0m": 0.062, "lst": 0.24,
         "phi0": 0.05, "mt_length_poly": [0.3051, -0.015]},
        {"name": "EXT", "f0m": 337.0, "l0m": 0.062, "lst": 0.24,
         "phi0": 0.0, "mt_length_poly": [0.3113, 0.015]},
    ],
    "generator": {"duration": 1.2, "n_trials": 2},
    "train": {"epochs": 2, "hidden": 16, "block_size": 100},
}


def write_config(tmp_path, out_dir, **overrides):
    doc = json.loads(json.dumps(SMALL_DOC))  # deep copy
    for key, val in overrides.items():
        block, _, field = key.partition(".")
        if field:
            doc.setdefault(block, {})[field] = val
        else:
            doc[block] = val
    doc["out_dir"] = str(out_dir)
    path = tmp_path / "run.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh)
    return path


def read_csv_lines(path):
    return path.read_text().strip().split("\n")


# -- synth ----------------------------------------------------------------------------


def test_synth_default_config_shape(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "run")]) == 0
    out = capsys.readouterr().out
    assert "wrote 2 trials x 15001 samples" in out
    trials = sorted((tmp_path / "run" / "trials").glob("trial_*.csv"))
    assert [p.name for p in trials] == ["trial_01.csv", "trial_02.csv"]
    lines = read_csv_lines(trials[0])
    assert lines[0] == "t,emg_FLX,emg_EXT,q,force_FLX,force_EXT"
    assert len(lines) == 1 + 15001
    truth = json.loads((tmp_path / "run" / "trials" / "ground_truth.json").read_text())
    assert truth["a_shape"] == -2.29 and set(truth["muscles"]) == {"FLX", "EXT"}


def test_synth_seed_rerun_is_byte_identical(tmp_path):
    cfg_path = write_config(tmp_path, tmp_path / "ignored")
    for d in ("a", "b"):
        assert main(["synth", "--config", str(cfg_path), "--seed", "7",
                     "--out", str(tmp_path / d)]) == 0
    for name in ("trial_01.csv", "trial_02.csv", "ground_truth.json"):
        assert ((tmp_path / "a" / "trials" / name).read_bytes()
                == (tmp_path / "b" / "trials" / name).read_bytes())


def test_synth_missing_body_mass_exits_2(tmp_path, capsys):
    cfg_path = write_config(tmp_path, tmp_path / "run")
    doc = yaml.safe_load(cfg_path.read_text())
    del doc["subject"]["body_mass"]
    with open(cfg_path, "w") as fh:
        yaml.safe_dump(doc, fh)
    assert main(["synth", "--config", str(cfg_path)]) == 2
    assert "subject.body_mass" in capsys.readouterr().err


# -- preprocess -----------------------------------------------------------------------


def make_raw(tmp_path, with_q=True):
    fs = 2000.0
    t = np.arange(int(2.0 * fs)) / fs
    rng = np.random.default_rng(11)
    cols = {"t": t,
            "FLX": np.sin(2 * np.pi * 90.0 * t) * (1.2 + np.sin(2 * np.pi * 0.8 * t)),
            "EXT": rng.normal(scale=0.4, size=t.size)}
    if with_q:
        cols["q"] = -0.3 + 0.2 * np.sin(2 * np.pi * 0.5 * t)
    path = tmp_path / "raw.csv"
    np.savetxt(path, np.column_stack(list(cols.values())), fmt="%.17g",
               delimiter=",", header=",".join(cols), comments="")
    return path


def test_preprocess_round_trip(tmp_path, capsys):
    raw = make_raw(tmp_path)
    cfg_path = write_config(tmp_path, tmp_path / "run")
    out = tmp_path / "processed.csv"
    assert main(["preprocess", str(raw), "--config", str(cfg_path),
                 "--out", str(out)]) == 0
    trial = sig.load_trial(out)
    assert trial.muscle_names == ("FLX", "EXT")
    assert trial.dt == pytest.approx(1e-3)
    assert trial.emg.min() >= 0.0 and trial.emg.max() <= 1.0
    assert trial.q.max() == pytest.approx(-0.1, abs=0.02)
    # deterministic bytes on rerun
    out2 = tmp_path / "processed2.csv"
    assert main(["preprocess", str(raw), "--config", str(cfg_path),
                 "--out", str(out2)]) == 0
    assert out.read_bytes() == out2.read_bytes()


def test_preprocess_missing_q_exits_2(tmp_path, capsys):
    raw = make_raw(tmp_path, with_q=False)
    assert main(["preprocess", str(raw)]) == 2
    assert "'q' channel" in capsys.readouterr().err


def test_preprocess_missing_emg_channel_exits_2(tmp_path, capsys):
    fs = 2000.0
    t = np.arange(int(fs)) / fs
    path = tmp_path / "raw.csv"
    np.savetxt(path, np.column_stack([t, np.sin(400.0 * t), t * 0.0]),
               fmt="%.17g", delimiter=",", header="t,FLX,q", comments="")
    assert main(["preprocess", str(path)]) == 2
    assert "EXT" in capsys.readouterr().err


# -- train / eval / plot --------------------------------------------------------------


@pytest.fixture()
def completed_run(tmp_path):
    run = tmp_path / "run"
    cfg_path = write_config(tmp_path, run)
    assert main(["synth", "--config", str(cfg_path)]) == 0
    assert main(["train", "--config", str(cfg_path)]) == 0
    return cfg_path, run


def test_train_writes_run_artifacts(completed_run):
    _, run = completed_run
    for name in ("checkpoint.npz", "checkpoint.json", "training_log.csv",
                 "metrics.csv", "params_report.csv", "config_used.yaml",
                 "run_info.json"):
        assert (run / name).exists(), name


def test_train_without_data_exits_2(tmp_path, capsys):
    cfg_path = write_config(tmp_path, tmp_path / "empty_run")
    assert main(["train", "--config", str(cfg_path)]) == 2
    assert "missing trial directory" in capsys.readouterr().err


def test_train_weight_flag_zeroes_physics_columns(tmp_path):
    run = tmp_path / "run"
    cfg_path = write_config(tmp_path, run)
    assert main(["synth", "--config", str(cfg_path)]) == 0
    assert main(["train", "--config", str(cfg_path), "--weights", "1,0,0"]) == 0
    lines = read_csv_lines(run / "training_log.csv")
    for line in lines[1:]:
        cells = line.split(",")
        assert float(cells[2]) == 0.0 and float(cells[3]) == 0.0
        assert float(cells[4]) == float(cells[1])
    info = json.loads((run / "run_info.json").read_text())
    assert info["weights"] == [1.0, 0.0, 0.0]


def test_train_rejects_malformed_weights(tmp_path, capsys):
    cfg_path = write_config(tmp_path, tmp_path / "run")
    assert main(["synth", "--config", str(cfg_path)]) == 0
    assert main(["train", "--config", str(cfg_path), "--weights", "1,0"]) == 2
    assert "--weights" in capsys.readouterr().err


def test_eval_writes_metrics_and_prints_rows(completed_run, capsys):
    cfg_path, run = completed_run
    assert main(["eval", "--config", str(cfg_path),
                 "--checkpoint", str(run / "checkpoint.npz")]) == 0
    out = capsys.readouterr().out
    assert "force_FLX" in out and "force_EXT" in out
    lines = read_csv_lines(run / "eval_metrics.csv")
    assert lines[0] == "series,rmse,r_squared"
    assert len(lines) == 1 + 3


def test_eval_channel_mismatch_exits_2(completed_run, tmp_path, capsys):
    cfg_path, run = completed_run
    import myopinn.network as nn
    solo = nn.NetworkParams(1, hidden=8, dropout=0.0, seed=0)
    nn.save_checkpoint(tmp_path / "solo.npz", solo, epoch=0)
    assert main(["eval", "--config", str(cfg_path),
                 "--checkpoint", str(tmp_path / "solo.npz")]) == 2
    assert "emg" in capsys.readouterr().err.lower()


def test_plot_emits_three_families(completed_run, capsys):
    _, run = completed_run
    assert main(["plot", str(run)]) == 0
    plots_dir = run / "plots"
    svgs = sorted(p.name for p in plots_dir.glob("*.svg"))
    assert svgs == ["force_overlay_trial_01.svg", "force_overlay_trial_02.svg",
                    "loss_curves.svg", "param_evolution.svg"]
    for name in ("loss_curves.csv", "param_evolution.csv", "force_overlays.csv"):
        assert (plots_dir / name).exists()
    header = read_csv_lines(plots_dir / "force_overlays.csv")[0]
    assert header == "trial,muscle,t,reference,predicted"


def test_plot_names_missing_artifacts(tmp_path, capsys):
    bare = tmp_path / "bare"
    bare.mkdir()
    assert main(["plot", str(bare)]) == 2
    assert "training_log.csv" in capsys.readouterr().err


def test_full_pipeline_rerun_is_byte_identical(tmp_path):
    paths = {}
    for d in ("a", "b"):
        run = tmp_path / d
        cfg_path = write_config(tmp_path, run)
        assert main(["synth", "--config", str(cfg_path)]) == 0
        assert main(["train", "--config", str(cfg_path)]) == 0
        assert main(["eval", "--config", str(cfg_path),
                     "--checkpoint", str(run / "checkpoint.npz")]) == 0
        assert main(["plot", str(run)]) == 0
        paths[d] = run
    for rel in ("trials/trial_01.csv", "training_log.csv", "metrics.csv",
                "params_report.csv", "eval_metrics.csv",
                "plots/loss_curves.csv", "plots/param_evolution.csv",
                "plots/force_overlays.csv"):
        assert (paths["a"] / rel).read_bytes() == (paths["b"] / rel).read_bytes(), rel
