"""Command-line entry point: synth, preprocess, train, eval, plot.

Every command is driven by one YAML run configuration (built-in two-muscle
wrist default when ``--config`` is omitted) and is deterministic given the
config and seeds.  Dataset convention: trial CSVs live in
``<out_dir>/trials/`` next to the generator's ``ground_truth.json``; run
artifacts land in ``<out_dir>`` itself.

Exit codes: 0 success, 2 validation/config/schema error, 3 numerical failure.
"""

import argparse
import dataclasses
import json
import pathlib
import sys

import numpy as np

from . import config as cfgmod
from . import dynamics as dyn
from . import hill
from . import network as nn
from . import plots
from . import signal as sig
from . import train as tr

TRIALS_SUBDIR = "trials"
TRUTH_NAME = "ground_truth.json"
CONFIG_COPY_NAME = "config_used.yaml"


def _load_config(args):
    if args.config is None:
        return cfgmod.default_config()
    return cfgmod.load_config(args.config)


def _parse_weights(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise cfgmod.ConfigError("--weights: expected three comma-separated numbers")
    try:
        w = tuple(float(p) for p in parts)
    except ValueError:
        raise cfgmod.ConfigError("--weights: expected three comma-separated numbers") from None
    if any(x < 0.0 for x in w):
        raise cfgmod.ConfigError("--weights: must be nonnegative")
    return w


def _trial_paths(data_dir):
    data_dir = pathlib.Path(data_dir)
    if not data_dir.exists():
        raise FileNotFoundError(f"missing trial directory: {data_dir}")
    paths = sorted(data_dir.glob("trial_*.csv"))
    if not paths:
        raise FileNotFoundError(f"missing trial CSVs: no trial_*.csv under {data_dir}")
    return paths


def _load_trials(data_dir):
    return [sig.load_trial(p) for p in _trial_paths(data_dir)]


# -- commands ------------------------------------------------------------------------


def cmd_synth(args):
    cfg = _load_config(args)
    spec = cfgmod.build_generator(cfg)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    out_dir = pathlib.Path(args.out if args.out else cfg.out_dir)
    trials_dir = out_dir / TRIALS_SUBDIR
    trials_dir.mkdir(parents=True, exist_ok=True)

    trials, truth = dyn.synth_dataset(spec)
    for i, trial in enumerate(trials):
        sig.save_trial(trial, trials_dir / f"trial_{i + 1:02d}.csv")
    truth_path = trials_dir / TRUTH_NAME
    with open(truth_path, "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")

    tau_lo, tau_hi = np.inf, -np.inf
    for trial in trials:
        tau = np.zeros(trial.q.size)
        for i, m in enumerate(spec.muscles):
            tau += trial.forces[:, i] * hill.moment_arm(trial.q, m)
        tau_lo, tau_hi = min(tau_lo, tau.min()), max(tau_hi, tau.max())

    print(f"wrote {len(trials)} trials x {trials[0].q.size} samples to {trials_dir}")
    print(f"joint torque range [{tau_lo:.3f}, {tau_hi:.3f}] N m")
    print(f"ground truth: {truth_path}")
    return 0


def cmd_preprocess(args):
    cfg = _load_config(args)
    t, data, channels = sig.load_raw(args.raw)
    fs = (t.size - 1) / (t[-1] - t[0])
    if "q" not in channels:
        raise ValueError(f"{args.raw}: missing 'q' channel (joint angle is required)")
    names = [m["name"] for m in cfg.muscles]
    missing = [n for n in names if n not in channels]
    if missing:
        raise ValueError(f"{args.raw}: missing EMG channels {missing} "
                         f"(config muscles: {names})")

    raw_emg = np.column_stack([data[:, channels.index(n)] for n in names])
    mvcs = cfgmod.mvc_levels(cfg)
    env = np.column_stack([
        sig.preprocess_emg(raw_emg[:, i], fs, mvc=mvcs[i]) for i in range(len(names))])
    q = sig.resample(data[:, channels.index("q")], fs, sig.TARGET_FS)
    dt = 1.0 / sig.TARGET_FS
    trial = dyn.Trial(dt=dt, time=t[0] + np.arange(q.size) * dt, emg=env, q=q,
                      muscle_names=tuple(names))

    raw_path = pathlib.Path(args.raw)
    out = pathlib.Path(args.out) if args.out else (
        raw_path.parent / (raw_path.stem + "_trial.csv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    sig.save_trial(trial, out)
    print(f"wrote {q.size} samples x {len(names)} channels at "
          f"{sig.TARGET_FS:.0f} Hz to {out}")
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    out_dir = pathlib.Path(args.out if args.out else cfg.out_dir)
    data_dir = out_dir / TRIALS_SUBDIR
    trials = _load_trials(data_dir)
    truth = None
    truth_path = data_dir / TRUTH_NAME
    if truth_path.exists():
        with open(truth_path) as fh:
            truth = json.load(fh)

    tc = cfgmod.build_train_config(cfg, out_dir=out_dir, data_dir=str(data_dir),
                                   config_path=args.config)
    if args.seed is not None:
        tc = dataclasses.replace(tc, seed=args.seed)
    if args.weights is not None:
        tc = dataclasses.replace(tc, weights=_parse_weights(args.weights))

    out_dir.mkdir(parents=True, exist_ok=True)
    doc = cfg.to_doc()
    doc["out_dir"] = str(out_dir)
    doc["train"]["seed"] = tc.seed
    doc["train"]["weights"] = list(tc.weights)
    cfgmod.save_config(cfgmod.RunConfig.from_doc(doc), out_dir / CONFIG_COPY_NAME)
    with open(out_dir / plots.RUN_INFO_NAME, "w") as fh:
        json.dump({"data_dir": str(data_dir), "config": CONFIG_COPY_NAME,
                   "seed": tc.seed, "weights": list(tc.weights)}, fh, indent=2)
        fh.write("\n")

    art = tr.fit(tc, trials, cfgmod.build_muscles(cfg), cfgmod.build_joint(cfg),
                 truth=truth)
    sidecar = nn.load_checkpoint(art.checkpoint)[2]
    print(f"trained {tc.epochs} epochs on {sum(t.q.size for t in trials)} samples "
          f"({len(trials)} trials)")
    if sidecar.get("l_total") is not None:
        print(f"best epoch {sidecar['epoch']}: L_total = {sidecar['l_total']:.6g}")
    for label, path in (("checkpoint", art.checkpoint), ("log", art.log),
                        ("metrics", art.metrics), ("params", art.params_report)):
        print(f"{label}: {path}")
    return 0


def cmd_eval(args):
    cfg = _load_config(args)
    out_dir = pathlib.Path(args.out if args.out else cfg.out_dir)
    net = nn.load_checkpoint(args.checkpoint)[0]
    trials = _load_trials(out_dir / TRIALS_SUBDIR)
    rows = tr.evaluate(net, trials)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "eval_metrics.csv"
    tr._write_metrics(metrics_path, rows)
    width = max(len(r[0]) for r in rows)
    for name, r, r2 in rows:
        print(f"{name:<{width}}  rmse {r:12.6g}  r2 {r2:8.4f}")
    print(f"metrics: {metrics_path}")
    return 0


def cmd_plot(args):
    written = plots.render_run(args.run_dir)
    for path in written:
        print(path)
    return 0


# -- argument parsing ----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="myopinn",
        description="EMG-driven muscle-force estimation with simultaneous "
                    "musculotendon parameter identification.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, func):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="run configuration YAML (built-in wrist default if omitted)")
        p.set_defaults(func=func)
        return p

    p = add("synth", "simulate a synthetic dataset with known parameters", cmd_synth)
    p.add_argument("--seed", type=int, default=None, help="override generator seed")
    p.add_argument("--out", default=None, help="override output directory")

    p = add("preprocess", "raw sEMG recording -> normalized 1 kHz trial CSV",
            cmd_preprocess)
    p.add_argument("raw", help="raw recording CSV (t, one column per channel, q)")
    p.add_argument("--out", default=None, help="output trial CSV path")

    p = add("train", "fit network weights and identify muscle parameters", cmd_train)
    p.add_argument("--seed", type=int, default=None, help="override training seed")
    p.add_argument("--out", default=None, help="override run directory")
    p.add_argument("--weights", default=None,
                   help="loss weights w_q,w_fd,w_f (e.g. 1,0,0 for data-only)")

    p = add("eval", "score a checkpoint against reference trials", cmd_eval)
    p.add_argument("--checkpoint", required=True, help="checkpoint .npz to evaluate")
    p.add_argument("--out", default=None, help="override run directory")

    p = add("plot", "emit SVG charts + tidy CSVs for a completed run", cmd_plot)
    p.add_argument("run_dir", help="run directory with training artifacts")

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (tr.TrainingDiverged, dyn.InstabilityError, ArithmeticError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (cfgmod.ConfigError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
