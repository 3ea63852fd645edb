"""Run configuration: one YAML file describing subject, muscles, and runs.

The file has five sections plus an output directory::

    subject:    body_mass [kg], hand_length [m]
    joint:      damping, q_range, gravity_sign
    muscles:    list of initial musculotendon parameter sets
    generator:  synthetic-dataset recipe (true a_shape, duration, trials, ...)
    train:      optimizer hyperparameters (reference defaults)
    out_dir:    where run artifacts land

Validation reports dotted field paths ("subject.body_mass: missing required
field") and normalization fills every omitted field with its default, so
parse -> serialize -> parse is a fixed point.
"""

import pathlib
from dataclasses import dataclass

import yaml

from . import dynamics as dyn
from . import hill
from .train import TrainConfig

WAVEFORM_KINDS = ("sine", "sum_of_sines", "chirp", "bursts", "ramp_hold")

_MISSING = object()


class ConfigError(ValueError):
    """Invalid or missing configuration field; the message carries its path."""


def _block(doc, key, path=""):
    v = doc.get(key, {})
    where = f"{path}.{key}" if path else key
    if not isinstance(v, dict):
        raise ConfigError(f"{where}: expected a mapping")
    return v


def _reject_unknown(block, path, known):
    for key in block:
        if key not in known:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"{where}: unrecognized field")


def _raw(block, path, key, default):
    if key in block:
        return block[key]
    if default is _MISSING:
        raise ConfigError(f"{path}.{key}: missing required field")
    return default


def _float(block, path, key, default=_MISSING, minimum=None, exclusive=False,
           maximum=None):
    v = _raw(block, path, key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number")
    v = float(v)
    if minimum is not None and (v <= minimum if exclusive else v < minimum):
        op = ">" if exclusive else ">="
        raise ConfigError(f"{path}.{key}: must be {op} {minimum}")
    if maximum is not None and v > maximum:
        raise ConfigError(f"{path}.{key}: must be <= {maximum}")
    return v


def _int(block, path, key, default=_MISSING, minimum=None):
    v = _raw(block, path, key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}.{key}: expected an integer")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}.{key}: must be >= {minimum}")
    return int(v)


def _numbers(block, path, key, default=_MISSING, length=None, min_length=None):
    v = _raw(block, path, key, default)
    if not isinstance(v, (list, tuple)) or any(
            isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        raise ConfigError(f"{path}.{key}: expected a list of numbers")
    if length is not None and len(v) != length:
        raise ConfigError(f"{path}.{key}: expected {length} entries")
    if min_length is not None and len(v) < min_length:
        raise ConfigError(f"{path}.{key}: expected at least {min_length} entries")
    return [float(x) for x in v]


def _normalize_subject(doc):
    block = _block(doc, "subject")
    _reject_unknown(block, "subject", ("body_mass", "hand_length"))
    return {"body_mass": _float(block, "subject", "body_mass", minimum=0.0, exclusive=True),
            "hand_length": _float(block, "subject", "hand_length", minimum=0.0, exclusive=True)}


def _normalize_joint(doc):
    block = _block(doc, "joint")
    _reject_unknown(block, "joint", ("damping", "q_range", "gravity_sign"))
    q_range = _numbers(block, "joint", "q_range", default=[-2.0, 2.0], length=2)
    if not q_range[0] < q_range[1]:
        raise ConfigError("joint.q_range: lower bound must be below upper bound")
    sign = _float(block, "joint", "gravity_sign", default=1.0)
    if sign not in (-1.0, 1.0):
        raise ConfigError("joint.gravity_sign: must be +1 or -1")
    return {"damping": _float(block, "joint", "damping", default=0.05, minimum=0.0),
            "q_range": q_range, "gravity_sign": sign}


def _normalize_muscle(entry, path):
    if not isinstance(entry, dict):
        raise ConfigError(f"{path}: expected a mapping")
    _reject_unknown(entry, path, ("name", "f0m", "l0m", "lst", "phi0",
                                  "mt_length_poly", "v0", "moment_arm_poly",
                                  "mvc"))
    name = _raw(entry, path, "name", _MISSING)
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{path}.name: expected a nonempty string")
    out = {
        "name": name,
        "f0m": _float(entry, path, "f0m", minimum=0.0, exclusive=True),
        "l0m": _float(entry, path, "l0m", minimum=0.0, exclusive=True),
        "lst": _float(entry, path, "lst", minimum=0.0),
        "phi0": _float(entry, path, "phi0", minimum=0.0, maximum=1.5),
        "mt_length_poly": _numbers(entry, path, "mt_length_poly", min_length=2),
    }
    if "v0" in entry:
        out["v0"] = _float(entry, path, "v0", minimum=0.0, exclusive=True)
    if "moment_arm_poly" in entry:
        out["moment_arm_poly"] = _numbers(entry, path, "moment_arm_poly", min_length=1)
    if "mvc" in entry:
        out["mvc"] = _float(entry, path, "mvc", minimum=0.0, exclusive=True)
    return out


def _normalize_muscles(doc):
    entries = doc.get("muscles", None)
    if not isinstance(entries, (list, tuple)) or not entries:
        raise ConfigError("muscles: expected a nonempty list")
    out = [_normalize_muscle(e, f"muscles[{i}]") for i, e in enumerate(entries)]
    seen = set()
    for m in out:
        if m["name"] in seen:
            raise ConfigError(f"muscles: duplicate name {m['name']!r}")
        seen.add(m["name"])
    return out


def _normalize_generator(doc, q_range):
    block = _block(doc, "generator")
    _reject_unknown(block, "generator", ("a_shape", "dt", "duration", "n_trials",
                                         "noise_std", "seed", "q0", "qdot0",
                                         "waveforms"))
    a = _float(block, "generator", "a_shape", default=-2.29)
    if not hill.A_SHAPE_MIN <= a <= hill.A_SHAPE_MAX:
        raise ConfigError(f"generator.a_shape: must lie in "
                          f"[{hill.A_SHAPE_MIN}, {hill.A_SHAPE_MAX}]")
    q0 = _float(block, "generator", "q0", default=-0.35)
    if not q_range[0] <= q0 <= q_range[1]:
        raise ConfigError("generator.q0: outside joint.q_range")
    waveforms = _raw(block, "generator", "waveforms", list(WAVEFORM_KINDS))
    if (not isinstance(waveforms, (list, tuple)) or not waveforms
            or any(w not in WAVEFORM_KINDS for w in waveforms)):
        raise ConfigError(f"generator.waveforms: expected a nonempty subset of "
                          f"{list(WAVEFORM_KINDS)}")
    return {
        "a_shape": a,
        "dt": _float(block, "generator", "dt", default=1e-3, minimum=0.0, exclusive=True),
        "duration": _float(block, "generator", "duration", default=15.0,
                           minimum=0.0, exclusive=True),
        "n_trials": _int(block, "generator", "n_trials", default=2, minimum=1),
        "noise_std": _float(block, "generator", "noise_std", default=0.0, minimum=0.0),
        "seed": _int(block, "generator", "seed", default=0),
        "q0": q0,
        "qdot0": _float(block, "generator", "qdot0", default=0.0),
        "waveforms": list(waveforms),
    }


def _normalize_train(doc):
    block = _block(doc, "train")
    _reject_unknown(block, "train", ("epochs", "lr", "physics_lr", "batch_size",
                                     "dropout", "hidden", "seed", "weights",
                                     "train_fraction", "block_size"))
    out = {
        "epochs": _int(block, "train", "epochs", default=1000, minimum=0),
        "lr": _float(block, "train", "lr", default=1e-3, minimum=0.0, exclusive=True),
        "physics_lr": _float(block, "train", "physics_lr", default=0.02,
                             minimum=0.0, exclusive=True),
        "batch_size": _int(block, "train", "batch_size", default=1, minimum=1),
        "dropout": _float(block, "train", "dropout", default=0.3, minimum=0.0),
        "hidden": _int(block, "train", "hidden", default=128, minimum=1),
        "seed": _int(block, "train", "seed", default=0),
        "weights": _numbers(block, "train", "weights", default=[1.0, 1.0, 1.0],
                            length=3),
        "train_fraction": _float(block, "train", "train_fraction", default=0.7),
        "block_size": _int(block, "train", "block_size", default=500, minimum=3),
    }
    if not out["dropout"] < 1.0:
        raise ConfigError("train.dropout: must lie in [0, 1)")
    if any(w < 0.0 for w in out["weights"]):
        raise ConfigError("train.weights: must be nonnegative")
    if not 0.0 < out["train_fraction"] < 1.0:
        raise ConfigError("train.train_fraction: must lie in (0, 1)")
    return out


@dataclass(frozen=True)
class RunConfig:
    """Validated, fully defaulted configuration of one pipeline run."""

    subject: dict
    joint: dict
    muscles: tuple
    generator: dict
    train: dict
    out_dir: str

    @classmethod
    def from_doc(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a mapping")
        _reject_unknown(doc, "", ("subject", "joint", "muscles", "generator",
                                  "train", "out_dir"))
        joint = _normalize_joint(doc)
        out_dir = doc.get("out_dir", "runs/wrist")
        if not isinstance(out_dir, str) or not out_dir:
            raise ConfigError("out_dir: expected a nonempty string")
        return cls(subject=_normalize_subject(doc), joint=joint,
                   muscles=tuple(_normalize_muscles(doc)),
                   generator=_normalize_generator(doc, joint["q_range"]),
                   train=_normalize_train(doc), out_dir=out_dir)

    def to_doc(self):
        """Plain nested dict (YAML-native types only), ready to serialize."""
        return {"subject": dict(self.subject), "joint": dict(self.joint),
                "muscles": [dict(m) for m in self.muscles],
                "generator": dict(self.generator), "train": dict(self.train),
                "out_dir": self.out_dir}


def load_config(path):
    path = pathlib.Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"config is not valid YAML: {err}") from err
    return RunConfig.from_doc(doc)


def save_config(cfg, path):
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_doc(), fh, sort_keys=False, default_flow_style=False)
    return path


def default_doc():
    """Built-in two-muscle wrist recipe (used when no config file is given)."""
    return {
        "subject": {"body_mass": 70.0, "hand_length": 0.18},
        "joint": {"damping": 0.05, "q_range": [-2.0, 2.0], "gravity_sign": 1.0},
        "muscles": [
            {"name": "FLX", "f0m": 407.0, "l0m": 0.062, "lst": 0.24,
             "phi0": 0.05, "mt_length_poly": [0.3051, -0.015]},
            {"name": "EXT", "f0m": 337.0, "l0m": 0.062, "lst": 0.24,
             "phi0": 0.0, "mt_length_poly": [0.3113, 0.015]},
        ],
        "generator": {},
        "train": {},
        "out_dir": "runs/wrist",
    }


def default_config():
    return RunConfig.from_doc(default_doc())


# -- object builders ----------------------------------------------------------------


def build_muscles(cfg):
    return tuple(hill.MuscleTendonParams(
        name=m["name"], f0m=m["f0m"], l0m=m["l0m"], lst=m["lst"],
        phi0=m["phi0"], mt_length_poly=tuple(m["mt_length_poly"]),
        v0=m.get("v0"), moment_arm_poly=(tuple(m["moment_arm_poly"])
                                         if "moment_arm_poly" in m else None))
        for m in cfg.muscles)


def mvc_levels(cfg):
    """Per-muscle MVC normalization level, None where unset (peak-normalize)."""
    return tuple(m.get("mvc") for m in cfg.muscles)


def build_joint(cfg):
    return dyn.wrist_joint(body_mass=cfg.subject["body_mass"],
                           hand_length=cfg.subject["hand_length"],
                           damping=cfg.joint["damping"],
                           q_range=tuple(cfg.joint["q_range"]),
                           gravity_sign=cfg.joint["gravity_sign"])


def build_generator(cfg):
    g = cfg.generator
    return dyn.GeneratorSpec(muscles=build_muscles(cfg), joint=build_joint(cfg),
                             a_shape=g["a_shape"], dt=g["dt"],
                             duration=g["duration"], n_trials=g["n_trials"],
                             noise_std=g["noise_std"], seed=g["seed"],
                             q0=g["q0"], qdot0=g["qdot0"],
                             waveforms=tuple(g["waveforms"]))


def build_train_config(cfg, out_dir=None, data_dir=None, config_path=None):
    t = cfg.train
    try:
        return TrainConfig(epochs=t["epochs"], lr=t["lr"],
                           physics_lr=t["physics_lr"], batch_size=t["batch_size"],
                           dropout=t["dropout"], hidden=t["hidden"],
                           seed=t["seed"], weights=tuple(t["weights"]),
                           train_fraction=t["train_fraction"],
                           block_size=t["block_size"],
                           out_dir=str(out_dir if out_dir is not None else cfg.out_dir),
                           data_dir=data_dir, config_path=config_path)
    except ValueError as err:
        raise ConfigError(f"train: {err}") from err
