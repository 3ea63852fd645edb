"""Plot-data emission for completed runs: three chart families as SVG + CSV.

(a) loss curves over epochs, (b) identified-parameter trajectories with
their bound bands, (c) predicted-vs-reference force overlays per muscle.
Every figure gets a tidy CSV twin with the exact plotted series, and all
outputs avoid timestamps/random ids so reruns are comparable.
"""

import csv
import json
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import network as nn
from . import signal as sig
from .train import CHECKPOINT_NAME, LOG_NAME, PARAMS_NAME, FLOAT_FMT, _t_norm

plt.rcParams["svg.hashsalt"] = "wrist-id"
_SVG_KW = dict(format="svg", metadata={"Date": None})

RUN_INFO_NAME = "run_info.json"


def _require(path, what="run artifact"):
    path = pathlib.Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing {what}: {path}")
    return path


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _write_tidy(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt(x):
    return FLOAT_FMT % x


def plot_loss_curves(log_path, out_dir):
    """Loss components per epoch -> loss_curves.{csv,svg}."""
    header, body = _read_csv(_require(log_path))
    components = header[1:5]
    epochs = [int(float(r[0])) for r in body]
    series = {c: [float(r[1 + i]) for r in body] for i, c in enumerate(components)}

    rows = [(e, c, _fmt(series[c][k]))
            for k, e in enumerate(epochs) for c in components]
    csv_path = _write_tidy(out_dir / "loss_curves.csv",
                           ["epoch", "component", "value"], rows)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for c in components:
        ax.plot(epochs, series[c], label=c, linewidth=1.2)
    positive = all(v > 0.0 for vs in series.values() for v in vs)
    if epochs and positive:
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    svg_path = out_dir / "loss_curves.svg"
    fig.savefig(svg_path, **_SVG_KW)
    plt.close(fig)
    return [csv_path, svg_path]


def plot_param_evolution(log_path, report_path, out_dir):
    """Identified values per epoch inside their bound bands -> param_evolution.*"""
    header, body = _read_csv(_require(log_path))
    names = header[5:]
    rep_header, rep_body = _read_csv(_require(report_path))
    bounds = {}
    truth = {}
    for row in rep_body:
        bounds[row[0]] = (float(row[2]), float(row[3]))
        if row[4] != "":
            truth[row[0]] = float(row[4])

    epochs = [int(float(r[0])) for r in body]
    series = {n: [float(r[5 + i]) for r in body] for i, n in enumerate(names)}
    rows = [(e, n, _fmt(series[n][k]), _fmt(bounds[n][0]), _fmt(bounds[n][1]))
            for k, e in enumerate(epochs) for n in names]
    csv_path = _write_tidy(out_dir / "param_evolution.csv",
                           ["epoch", "name", "value", "lower", "upper"], rows)

    fig, axes = plt.subplots(len(names), 1, sharex=True,
                             figsize=(6.0, 1.6 * len(names)), squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        lo, hi = bounds[name]
        ax.axhspan(lo, hi, color="0.85", zorder=0)
        ax.plot(epochs, series[name], linewidth=1.2, zorder=2)
        if name in truth:
            ax.axhline(truth[name], linestyle="--", linewidth=0.9,
                       color="k", zorder=1)
        ax.set_ylabel(name, fontsize=8)
        ax.margins(y=0.25)
    axes[-1, 0].set_xlabel("epoch")
    fig.tight_layout()
    svg_path = out_dir / "param_evolution.svg"
    fig.savefig(svg_path, **_SVG_KW)
    plt.close(fig)
    return [csv_path, svg_path]


def plot_force_overlays(checkpoint_path, trial_paths, out_dir):
    """Predicted vs reference muscle forces per trial -> force_overlay_*.svg."""
    net = nn.load_checkpoint(_require(checkpoint_path, "checkpoint"))[0]
    rows = []
    written = []
    for trial_path in trial_paths:
        trial = sig.load_trial(trial_path)
        if trial.forces is None:
            raise ValueError(f"{trial_path}: no force columns; cannot draw overlays")
        names = trial.muscle_names
        _, f_hat = nn.predict(net, trial.emg, _t_norm(trial))
        stem = pathlib.Path(trial_path).stem
        for i, name in enumerate(names):
            rows += [(stem, name, _fmt(t), _fmt(ft), _fmt(fp))
                     for t, ft, fp in zip(trial.time, trial.forces[:, i], f_hat[:, i])]

        fig, axes = plt.subplots(len(names), 1, sharex=True,
                                 figsize=(6.0, 1.8 * len(names)), squeeze=False)
        for ax, name in zip(axes[:, 0], names):
            i = names.index(name)
            ax.plot(trial.time, trial.forces[:, i], linewidth=1.0, label="reference")
            ax.plot(trial.time, f_hat[:, i], linewidth=1.0, linestyle="--",
                    label="predicted")
            ax.set_ylabel(f"{name} [N]", fontsize=8)
        axes[0, 0].legend(loc="upper right", fontsize=8)
        axes[-1, 0].set_xlabel("time [s]")
        fig.tight_layout()
        svg_path = out_dir / f"force_overlay_{stem}.svg"
        fig.savefig(svg_path, **_SVG_KW)
        plt.close(fig)
        written.append(svg_path)

    csv_path = _write_tidy(out_dir / "force_overlays.csv",
                           ["trial", "muscle", "t", "reference", "predicted"], rows)
    return [csv_path] + written


def render_run(run_dir, data_dir=None):
    """Emit all three chart families for a completed run directory.

    ``data_dir`` overrides the trial location recorded in run_info.json.
    Returns the list of written paths.
    """
    run_dir = pathlib.Path(run_dir)
    _require(run_dir, "run directory")
    out_dir = run_dir / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)

    log_path = _require(run_dir / LOG_NAME)
    report_path = _require(run_dir / PARAMS_NAME)
    written = plot_loss_curves(log_path, out_dir)
    written += plot_param_evolution(log_path, report_path, out_dir)

    if data_dir is None:
        info_path = _require(run_dir / RUN_INFO_NAME)
        with open(info_path) as fh:
            data_dir = json.load(fh)["data_dir"]
    data_dir = _require(pathlib.Path(data_dir), "trial directory")
    trial_paths = sorted(data_dir.glob("trial_*.csv"))
    if not trial_paths:
        raise FileNotFoundError(f"missing trial CSVs: no trial_*.csv under {data_dir}")
    written += plot_force_overlays(run_dir / CHECKPOINT_NAME, trial_paths, out_dir)
    return written
