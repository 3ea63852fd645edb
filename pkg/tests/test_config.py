"""Configuration parsing: defaults, dotted-path errors, and round-trips."""

import dataclasses

import numpy as np
import pytest
import yaml

import myopinn.config as cfg
import myopinn.dynamics as dyn
from myopinn.train import TrainConfig


def write_doc(tmp_path, doc, name="run.yaml"):
    path = tmp_path / name
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh)
    return path


# -- defaults and round-trips ---------------------------------------------------------


def test_default_config_fills_reference_hyperparameters():
    c = cfg.default_config()
    assert [m["name"] for m in c.muscles] == ["FLX", "EXT"]
    assert c.generator["duration"] == 15.0 and c.generator["n_trials"] == 2
    assert c.generator["dt"] == 1e-3
    assert c.train["epochs"] == 1000 and c.train["lr"] == 1e-3
    assert c.train["batch_size"] == 1 and c.train["dropout"] == 0.3
    assert c.train["hidden"] == 128 and c.train["weights"] == [1.0, 1.0, 1.0]
    assert c.train["train_fraction"] == 0.7


def test_parse_serialize_parse_is_a_fixed_point(tmp_path):
    first = cfg.default_config()
    p1 = cfg.save_config(first, tmp_path / "a.yaml")
    second = cfg.load_config(p1)
    assert second == first
    p2 = cfg.save_config(second, tmp_path / "b.yaml")
    assert p1.read_bytes() == p2.read_bytes()


def test_shipped_configs_load_and_build():
    for name, n_muscles in (("configs/wrist_default.yaml", 2),
                            ("configs/wrist_five_muscle.yaml", 5)):
        c = cfg.load_config(name)
        muscles = cfg.build_muscles(c)
        assert len(muscles) == n_muscles
        joint = cfg.build_joint(c)
        assert joint.inertia > 0.0
        spec = cfg.build_generator(c)
        assert spec.duration == 15.0


def test_optional_muscle_fields_survive_round_trip(tmp_path):
    doc = cfg.default_doc()
    doc["muscles"][0]["v0"] = 0.5
    doc["muscles"][0]["moment_arm_poly"] = [0.015, 0.001]
    c = cfg.RunConfig.from_doc(doc)
    again = cfg.load_config(cfg.save_config(c, tmp_path / "r.yaml"))
    assert again == c
    m = cfg.build_muscles(again)[0]
    assert m.v0 == 0.5 and m.moment_arm_poly == (0.015, 0.001)
    # and absence keeps the 10 * l0m rule
    assert cfg.build_muscles(again)[1].v0 == pytest.approx(0.62)


# -- validation errors carry field paths ----------------------------------------------


def test_missing_body_mass_names_the_field():
    doc = cfg.default_doc()
    del doc["subject"]["body_mass"]
    with pytest.raises(cfg.ConfigError, match=r"subject\.body_mass"):
        cfg.RunConfig.from_doc(doc)


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d["subject"].update(body_mass=0.0), r"subject\.body_mass"),
    (lambda d: d["subject"].update(body_mass="heavy"), r"subject\.body_mass"),
    (lambda d: d["joint"].update(q_range=[1.0, -1.0]), r"joint\.q_range"),
    (lambda d: d["joint"].update(gravity_sign=2.0), r"joint\.gravity_sign"),
    (lambda d: d["muscles"][1].update(f0m=-5.0), r"muscles\[1\]\.f0m"),
    (lambda d: d["muscles"][0].update(mt_length_poly=[0.3]), r"muscles\[0\]\.mt_length_poly"),
    (lambda d: d["muscles"][0].pop("name"), r"muscles\[0\]\.name"),
    (lambda d: d["generator"].update(a_shape=0.5), r"generator\.a_shape"),
    (lambda d: d["generator"].update(q0=5.0), r"generator\.q0"),
    (lambda d: d["generator"].update(waveforms=["triangle"]), r"generator\.waveforms"),
    (lambda d: d["train"].update(dropout=1.0), r"train\.dropout"),
    (lambda d: d["train"].update(weights=[1.0, 1.0]), r"train\.weights"),
    (lambda d: d["train"].update(train_fraction=0.0), r"train\.train_fraction"),
    (lambda d: d["train"].update(epochs=2.5), r"train\.epochs"),
    (lambda d: d.update(out_dir=""), r"out_dir"),
    (lambda d: d.update(typo_block={}), r"typo_block"),
    (lambda d: d["train"].update(learning_rate=0.1), r"train\.learning_rate"),
])
def test_field_errors_name_their_paths(mutate, path):
    doc = cfg.default_doc()
    mutate(doc)
    with pytest.raises(cfg.ConfigError, match=path):
        cfg.RunConfig.from_doc(doc)


def test_duplicate_muscle_names_rejected():
    doc = cfg.default_doc()
    doc["muscles"][1]["name"] = "FLX"
    with pytest.raises(cfg.ConfigError, match="duplicate name 'FLX'"):
        cfg.RunConfig.from_doc(doc)


def test_structural_errors(tmp_path):
    with pytest.raises(cfg.ConfigError, match="must be a mapping"):
        cfg.RunConfig.from_doc(["not", "a", "mapping"])
    with pytest.raises(cfg.ConfigError, match="muscles"):
        cfg.RunConfig.from_doc({**cfg.default_doc(), "muscles": []})
    with pytest.raises(cfg.ConfigError, match="not found"):
        cfg.load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("subject: [unclosed\n")
    with pytest.raises(cfg.ConfigError, match="not valid YAML"):
        cfg.load_config(bad)


# -- builders -------------------------------------------------------------------------


def test_builders_map_onto_domain_objects():
    c = cfg.default_config()
    muscles = cfg.build_muscles(c)
    assert muscles[0].name == "FLX" and muscles[0].f0m == 407.0
    assert muscles[0].mt_length_poly == (0.3051, -0.015)
    joint = cfg.build_joint(c)
    ref = dyn.wrist_joint(body_mass=70.0, hand_length=0.18)
    assert joint.inertia == pytest.approx(ref.inertia)
    assert joint.grav_coeff == pytest.approx(ref.grav_coeff)
    spec = cfg.build_generator(c)
    assert spec.a_shape == -2.29 and spec.n_trials == 2
    assert spec.waveforms == cfg.WAVEFORM_KINDS
    tc = cfg.build_train_config(c, out_dir="elsewhere", data_dir="d",
                                config_path="c.yaml")
    assert isinstance(tc, TrainConfig)
    assert tc.out_dir == "elsewhere" and tc.epochs == 1000
    assert tc.weights == (1.0, 1.0, 1.0)
    assert cfg.build_train_config(c).out_dir == "runs/wrist"


def test_five_muscle_config_synthesizes_stably():
    c = cfg.load_config("configs/wrist_five_muscle.yaml")
    spec = dataclasses.replace(cfg.build_generator(c), duration=1.5, n_trials=1)
    trials, truth = dyn.synth_dataset(spec)
    q = trials[0].q
    lo, hi = spec.joint.q_range
    assert lo < q.min() and q.max() < hi
    assert np.isfinite(trials[0].forces).all()
    assert set(truth["muscles"]) == {"FCR", "FCU", "ECRL", "ECRB", "ECU"}
