"""Training loop for the physics-informed regression network.

Each epoch runs two phases over the training samples:

1. *data pass* -- one Adam step per sample (batch size 1 by default) on the
   squared angle error, following the reference training recipe;
2. *physics pass* -- one shared train-mode forward over all training samples
   (reusing the epoch's dropout masks), from which the trajectory-level
   equation-of-motion and force-matching losses are assembled per contiguous
   run; a single aggregated Adam step then updates the network again and the
   identified parameters theta.

The trajectory losses need contiguous time series for their stencils, so the
train/test split assigns whole blocks of consecutive samples per trial
(random block choice, adjacent train blocks merged into runs).

A completed run writes four artifacts into ``out_dir``: the best-by-L_total
checkpoint, the per-epoch training log, the test-split metrics report, and
the identified-parameter report.
"""

import csv
import pathlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import hill, loss
from . import network as nn
from .autodiff import value_of

CHECKPOINT_NAME = "checkpoint.npz"
LOG_NAME = "training_log.csv"
METRICS_NAME = "metrics.csv"
PARAMS_NAME = "params_report.csv"

FLOAT_FMT = "%.12g"


class TrainingDiverged(RuntimeError):
    """Optimization hit a non-finite loss/gradient; last good checkpoint kept."""


@dataclass
class TrainConfig:
    """Hyperparameters of one optimization run (reference defaults)."""

    epochs: int = 1000
    lr: float = 1e-3
    physics_lr: float = 0.02
    batch_size: int = 1
    dropout: float = 0.3
    hidden: int = 128
    seed: int = 0
    weights: tuple = (1.0, 1.0, 1.0)
    train_fraction: float = 0.7
    block_size: int = 500
    out_dir: str = "run"
    data_dir: str = None      # provenance only
    config_path: str = None   # provenance only

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0.0 or self.physics_lr <= 0.0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.hidden < 1:
            raise ValueError("hidden width must be >= 1")
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != 3 or any(w < 0.0 for w in self.weights):
            raise ValueError("weights must be three nonnegative numbers")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.block_size < 3:
            raise ValueError("block_size must be >= 3 (stencil support)")


@dataclass
class RunArtifacts:
    """Paths of the four files every completed run writes."""

    checkpoint: pathlib.Path
    log: pathlib.Path
    metrics: pathlib.Path
    params_report: pathlib.Path


@dataclass
class _Split:
    """Per-trial sample assignment: contiguous train runs plus a test mask."""

    runs: list                      # (trial_idx, slice) in concatenation order
    test_masks: list                # boolean mask per trial
    n_train: int
    n_test: int


def split_samples(trials, fraction, block_size, rng):
    """Blockwise train/test split keeping train samples in contiguous runs.

    Every trial is cut into blocks of ``block_size`` consecutive samples
    (remainder attached to the last block); blocks are drawn at random until
    at least ``fraction`` of the trial is in the training set, and adjacent
    picks merge into maximal contiguous runs.
    """
    runs = []
    test_masks = []
    n_train = 0
    for ti, trial in enumerate(trials):
        T = trial.q.size
        n_blocks = max(1, T // block_size)
        edges = [b * block_size for b in range(n_blocks)] + [T]
        order = rng.permutation(n_blocks)
        want = fraction * T
        chosen = set()
        got = 0
        for b in order:
            if got >= want:
                break
            chosen.add(int(b))
            got += edges[b + 1] - edges[b]
        mask = np.ones(T, dtype=bool)  # True = test
        for b in sorted(chosen):
            start, stop = edges[b], edges[b + 1]
            mask[start:stop] = False
            if runs and runs[-1][0] == ti and runs[-1][1].stop == start:
                runs[-1] = (ti, slice(runs[-1][1].start, stop))
            else:
                runs.append((ti, slice(start, stop)))
        n_train += got
        test_masks.append(mask)
    n_test = sum(int(m.sum()) for m in test_masks)
    if n_train == 0 or n_test == 0:
        raise ValueError("degenerate split: need both train and test samples")
    return _Split(runs=runs, test_masks=test_masks, n_train=n_train, n_test=n_test)


def _t_norm(trial):
    t = trial.time
    return (t - t[0]) / (t[-1] - t[0])


def _check_trials(trials):
    trials = list(trials)
    if not trials:
        raise ValueError("need at least one trial")
    n = trials[0].n_muscles
    names = trials[0].muscle_names
    dt = trials[0].dt
    for tr in trials[1:]:
        if tr.n_muscles != n or tr.muscle_names != names:
            raise ValueError("trials disagree on muscle channels")
        if abs(tr.dt - dt) > 1e-12:
            raise ValueError("trials disagree on sample rate")
    return trials


def evaluate(net, trials, sample_masks=None):
    """Angle and per-muscle force metrics of a network over trials.

    ``sample_masks`` (optional, one boolean array per trial) restricts the
    evaluation to masked samples.  Returns rows ``(series, rmse, r2)`` —
    the angle first, then one row per muscle — pooling samples over trials.
    Force rows need reference forces on every trial; without them only the
    angle row is reported.
    """
    trials = _check_trials(trials)
    names = trials[0].muscle_names or tuple(f"m{i + 1}" for i in range(trials[0].n_muscles))
    scored = all(tr.forces is not None for tr in trials)
    q_true, q_pred = [], []
    f_true, f_pred = [], []
    for k, trial in enumerate(trials):
        qs, fs = nn.predict(net, trial.emg, _t_norm(trial))
        mask = slice(None) if sample_masks is None else sample_masks[k]
        q_true.append(trial.q[mask])
        q_pred.append(qs[mask])
        if scored:
            f_true.append(trial.forces[mask])
            f_pred.append(fs[mask])
    q_true = np.concatenate(q_true)
    q_pred = np.concatenate(q_pred)
    rows = [("q", loss.rmse(q_true, q_pred), loss.r_squared(q_true, q_pred))]
    if scored:
        f_true = np.vstack(f_true)
        f_pred = np.vstack(f_pred)
        for i, name in enumerate(names):
            rows.append((f"force_{name}", loss.rmse(f_true[:, i], f_pred[:, i]),
                         loss.r_squared(f_true[:, i], f_pred[:, i])))
    return rows


def _write_log(path, names, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "l_q", "l_fd", "l_f", "l_total"] + list(names))
        for row in rows:
            w.writerow([row[0]] + [FLOAT_FMT % v for v in row[1:]])


def _write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "rmse", "r_squared"])
        for name, r, r2 in rows:
            w.writerow([name, FLOAT_FMT % r, FLOAT_FMT % r2])


def _write_params_report(path, tp, theta, truth=None):
    vals = tp.realized_values(theta)
    truth = truth or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "estimate", "lower", "upper", "truth", "rel_error"])
        for i, name in enumerate(tp.names):
            est = vals[name]
            row = [name, FLOAT_FMT % est, FLOAT_FMT % tp.lo[i], FLOAT_FMT % tp.hi[i]]
            if name in truth:
                tv = float(truth[name])
                rel = abs(est - tv) / abs(tv) if tv != 0.0 else abs(est - tv)
                row += [FLOAT_FMT % tv, FLOAT_FMT % rel]
            else:
                row += ["", ""]
            w.writerow(row)


def _truth_by_name(tp, truth):
    """Flatten a generator ground-truth dict onto the identified-name layout."""
    if not truth:
        return {}
    out = {}
    muscles = truth.get("muscles", {})
    for m in tp.muscles:
        if m.name in muscles:
            out[f"f0m_{m.name}"] = muscles[m.name]["f0m"]
            out[f"l0m_{m.name}"] = muscles[m.name]["l0m"]
    if "a_shape" in truth:
        out["a_shape"] = truth["a_shape"]
    return out


def fit(config, trials, muscles, joint, truth=None):
    """Optimize network weights and identified parameters; returns RunArtifacts.

    ``muscles`` are the initial parameter guesses (they also pin the
    identification bounds); ``truth`` is an optional generator ground-truth
    dict recorded in the parameter report.  Deterministic given
    ``config.seed``.  On a non-finite loss or gradient the run stops, keeps
    the last best checkpoint plus the log rows so far, and raises
    :class:`TrainingDiverged`.
    """
    trials = _check_trials(trials)
    muscles = tuple(muscles)
    if trials[0].n_muscles != len(muscles):
        raise ValueError(f"{len(muscles)} muscles configured but trials carry "
                         f"{trials[0].n_muscles} EMG channels")
    out_dir = pathlib.Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = RunArtifacts(checkpoint=out_dir / CHECKPOINT_NAME, log=out_dir / LOG_NAME,
                         metrics=out_dir / METRICS_NAME,
                         params_report=out_dir / PARAMS_NAME)

    seqs = np.random.SeedSequence(config.seed).spawn(3)
    split_rng = np.random.default_rng(seqs[0])
    shuffle_rng = np.random.default_rng(seqs[1])
    mask_rng = np.random.default_rng(seqs[2])

    split = split_samples(trials, config.train_fraction, config.block_size, split_rng)
    dt = trials[0].dt
    tp = loss.TrainableParams.from_initial(muscles)
    net = nn.NetworkParams(len(muscles), hidden=config.hidden,
                           dropout=config.dropout, seed=config.seed)

    # training samples in run-concatenation order, so the physics pass can
    # slice contiguous segments straight out of the prediction series
    t_norms = [_t_norm(tr) for tr in trials]
    x_rows, q_rows, run_slices = [], [], []
    offset = 0
    for ti, sl in split.runs:
        tr = trials[ti]
        x_rows.append(np.column_stack([tr.emg[sl], t_norms[ti][sl]]))
        q_rows.append(tr.q[sl])
        run_slices.append(slice(offset, offset + sl.stop - sl.start))
        offset += sl.stop - sl.start
    x_train = np.vstack(x_rows)
    q_train = np.concatenate(q_rows)
    n_train = q_train.size

    adam_data = nn.AdamState(net.n_params, lr=config.lr, blocks=net.blocks)
    # the physics update runs once per epoch (vs. one data step per sample), so
    # it shares the physical parameters' larger step size; the force head is
    # trained by this step alone and has to cover an O(100 N) output range
    adam_phys_net = nn.AdamState(net.n_params, lr=config.physics_lr, blocks=net.blocks)
    adam_theta = nn.AdamState(tp.theta.size, lr=config.physics_lr,
                              blocks=[(n, slice(i, i + 1)) for i, n in enumerate(tp.names)])
    grad_buf = np.zeros(net.n_params)
    gw, gb = net.views_of(grad_buf)
    batch_buf = np.zeros(net.n_params) if config.batch_size > 1 else None

    w_q, w_fd, w_f = config.weights
    physics_on = (w_fd > 0.0 or w_f > 0.0)
    log_rows = []
    best = {"l_total": np.inf, "epoch": 0}

    def save_best(epoch, l_total):
        best["l_total"] = l_total
        best["epoch"] = epoch
        nn.save_checkpoint(paths.checkpoint, net, epoch,
                           extras={"theta_raw": tp.theta},
                           meta={"muscle_names": [m.name for m in muscles],
                                 "dt": float(dt),
                                 "l_total": None if not np.isfinite(l_total) else float(l_total),
                                 "weights": list(config.weights)})

    save_best(0, np.inf)  # initial state: epochs=0 still leaves a checkpoint

    def physics_pass():
        """Trajectory-level forward over all training runs; one (lambda, theta) step.

        Dropout stays confined to the data path, so this forward runs the full
        network.  A thinned forward would do double damage here: per-sample
        masks inject sample-to-sample noise that the difference stencils
        amplify by 4/dt^2, and even an epoch-constant mask keeps the force
        head chasing a target that jumps with every mask draw.
        """
        tape = ad.Tape()
        q_hat, f_hat, leaves = nn.forward_on_tape(tape, x_train, net, masks=None)
        theta_var = tape.var(tp.theta)
        realized, a_shape = tp.realize(theta_var)
        acc_fd, acc_f = loss.physics_losses_runs(
            q_hat, f_hat, dt, run_slices, realized, a_shape,
            x_train[:, :-1], joint)
        l_fd_val = float(value_of(acc_fd))
        l_f_val = float(value_of(acc_f))
        objective = w_fd * acc_fd + w_f * acc_f
        tape.backward(objective)
        nn.gather_leaf_grads(tape, leaves, net, grad_buf)
        nn.adam_step(grad_buf, net.flat, adam_phys_net)
        nn.adam_step(tape.grad(theta_var), tp.theta, adam_theta)
        return l_fd_val, l_f_val

    def finalize():
        best_net, extras, _ = nn.load_checkpoint(paths.checkpoint)
        _write_log(paths.log, tp.names, log_rows)
        _write_params_report(paths.params_report, tp, extras["theta_raw"],
                             _truth_by_name(tp, truth))
        _write_metrics(paths.metrics,
                       evaluate(best_net, trials, sample_masks=split.test_masks))

    try:
        for epoch in range(1, config.epochs + 1):
            # clear the previous physics-pass gradient (it fills the force-head
            # entries that the data pass never writes)
            grad_buf[:] = 0.0
            order = shuffle_rng.permutation(n_train)
            masks_data = nn.epoch_masks(mask_rng, n_train, net)
            sq_sum = 0.0
            if config.batch_size == 1:
                for j in order:
                    m_j = None if masks_data is None else masks_data[j]
                    _, sq = nn.lq_sample_step(net, x_train[j], q_train[j], m_j, gw, gb)
                    sq_sum += sq
                    nn.adam_step(grad_buf, net.flat, adam_data)
            else:
                for start in range(0, n_train, config.batch_size):
                    chunk = order[start:start + config.batch_size]
                    batch_buf[:] = 0.0
                    for j in chunk:
                        m_j = None if masks_data is None else masks_data[j]
                        _, sq = nn.lq_sample_step(net, x_train[j], q_train[j], m_j, gw, gb)
                        sq_sum += sq
                        batch_buf += grad_buf
                    batch_buf /= chunk.size
                    nn.adam_step(batch_buf, net.flat, adam_data)
            l_q_val = sq_sum / n_train

            if physics_on:
                l_fd_val, l_f_val = physics_pass()
            else:
                l_fd_val, l_f_val = 0.0, 0.0

            if not np.isfinite(l_q_val + l_fd_val + l_f_val):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            _, bd = loss.loss_total(l_q_val, l_fd_val, l_f_val, config.weights)
            vals = tp.realized_values()
            log_rows.append((epoch, bd.l_q, bd.l_fd, bd.l_f, bd.l_total)
                            + tuple(vals[n] for n in tp.names))
            if bd.l_total < best["l_total"]:
                save_best(epoch, bd.l_total)
    except (ArithmeticError, hill.GeometryError) as err:
        finalize()
        raise TrainingDiverged(f"{err} -- best checkpoint from epoch "
                               f"{best['epoch']} retained") from err

    finalize()
    return paths
