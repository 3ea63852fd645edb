"""Training-loop tests: splits, artifacts, determinism, and failure handling.

The closed-loop accuracy of the full recipe is covered by the acceptance
suite; here we keep runs tiny (sub-second trials, narrow network) and test
the orchestration around them.
"""

import csv

import numpy as np
import pytest

import myopinn.dynamics as dyn
import myopinn.loss as loss
import myopinn.network as nn
import myopinn.train as tr
from myopinn.hill import MuscleTendonParams

A_TRUE = -2.29


def wrist_pair():
    flx = MuscleTendonParams(name="FLX", f0m=407.0, l0m=0.062, lst=0.24, phi0=0.05,
                             mt_length_poly=(0.24 + 1.05 * 0.062, -0.015))
    ext = MuscleTendonParams(name="EXT", f0m=337.0, l0m=0.062, lst=0.24, phi0=0.0,
                             mt_length_poly=(0.24 + 1.15 * 0.062, 0.015))
    return (flx, ext)


@pytest.fixture(scope="module")
def dataset():
    """Two short simulated trials with known parameters."""
    muscles = wrist_pair()
    joint = dyn.wrist_joint()
    spec = dyn.GeneratorSpec(muscles=muscles, joint=joint, a_shape=A_TRUE,
                             dt=1e-3, duration=0.8, n_trials=2, seed=7)
    trials, truth = dyn.synth_dataset(spec)
    return muscles, joint, trials, truth


def quick_config(out_dir, **overrides):
    kw = dict(epochs=3, lr=1e-3, physics_lr=0.05, dropout=0.3, hidden=16,
              seed=3, train_fraction=0.7, block_size=100, out_dir=str(out_dir))
    kw.update(overrides)
    return tr.TrainConfig(**kw)


def read_log(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return header, [[float(x) for x in row] for row in body]


# -- configuration and split ---------------------------------------------------------


def test_config_validation():
    for bad in (dict(epochs=-1), dict(lr=0.0), dict(physics_lr=-1.0),
                dict(batch_size=0), dict(dropout=1.0), dict(hidden=0),
                dict(weights=(1.0, 1.0)), dict(weights=(1.0, -1.0, 1.0)),
                dict(train_fraction=1.0), dict(block_size=2)):
        with pytest.raises(ValueError):
            tr.TrainConfig(**bad)


def test_split_blocks_are_contiguous_and_cover_fraction(dataset):
    _, _, trials, _ = dataset
    split = tr.split_samples(trials, 0.7, 100, np.random.default_rng(0))
    rebuilt = [np.ones(trial.q.size, dtype=bool) for trial in trials]
    last_stop = {}
    for ti, sl in split.runs:
        assert sl.stop > sl.start >= 0 and sl.stop <= trials[ti].q.size
        assert sl.stop - sl.start >= 3
        if ti in last_stop:  # runs are maximal: gaps between same-trial runs
            assert sl.start > last_stop[ti]
        last_stop[ti] = sl.stop
        assert rebuilt[ti][sl.start:sl.stop].all(), "runs overlap"
        rebuilt[ti][sl.start:sl.stop] = False
    for mask, want in zip(rebuilt, split.test_masks):
        np.testing.assert_array_equal(mask, want)
    for trial, mask in zip(trials, split.test_masks):
        n_train = int((~mask).sum())
        assert n_train >= 0.7 * trial.q.size
    assert split.n_train + split.n_test == sum(t.q.size for t in trials)


def test_split_is_deterministic_per_seed(dataset):
    _, _, trials, _ = dataset
    a = tr.split_samples(trials, 0.7, 100, np.random.default_rng(5))
    b = tr.split_samples(trials, 0.7, 100, np.random.default_rng(5))
    assert a.runs == b.runs
    for ma, mb in zip(a.test_masks, b.test_masks):
        np.testing.assert_array_equal(ma, mb)


# -- artifacts -----------------------------------------------------------------------


def test_zero_epochs_still_writes_all_artifacts(dataset, tmp_path):
    muscles, joint, trials, _ = dataset
    cfg = quick_config(tmp_path, epochs=0)
    art = tr.fit(cfg, trials, muscles, joint)
    for path in (art.checkpoint, art.log, art.metrics, art.params_report):
        assert path.exists(), path
    net, extras, sidecar = nn.load_checkpoint(art.checkpoint)
    assert sidecar["epoch"] == 0
    np.testing.assert_array_equal(extras["theta_raw"], np.zeros(5))
    header, body = read_log(art.log)
    assert header[:5] == ["epoch", "l_q", "l_fd", "l_f", "l_total"]
    assert header[5:] == ["f0m_FLX", "f0m_EXT", "l0m_FLX", "l0m_EXT", "a_shape"]
    assert body == []
    with open(art.params_report, newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 5
    # theta = 0 reports the interval midpoints
    assert float(rows[1][1]) == pytest.approx(407.0)
    assert float(rows[5][1]) == pytest.approx(-1.495)


def test_metrics_report_schema(dataset, tmp_path):
    muscles, joint, trials, _ = dataset
    art = tr.fit(quick_config(tmp_path, epochs=1), trials, muscles, joint)
    with open(art.metrics, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["series", "rmse", "r_squared"]
    assert [r[0] for r in rows[1:]] == ["q", "force_FLX", "force_EXT"]
    for row in rows[1:]:
        assert np.isfinite(float(row[1])) and float(row[2]) <= 1.0


def test_truth_lands_in_params_report(dataset, tmp_path):
    muscles, joint, trials, truth = dataset
    art = tr.fit(quick_config(tmp_path, epochs=1), trials, muscles, joint, truth=truth)
    with open(art.params_report, newline="") as fh:
        rows = {r[0]: r for r in csv.reader(fh)}
    assert float(rows["f0m_FLX"][4]) == 407.0
    assert float(rows["l0m_EXT"][4]) == 0.062
    assert float(rows["a_shape"][4]) == A_TRUE
    est, tv, rel = (float(rows["f0m_FLX"][k]) for k in (1, 4, 5))
    assert rel == pytest.approx(abs(est - tv) / tv)


# -- training behaviour --------------------------------------------------------------


def test_training_is_deterministic(dataset, tmp_path):
    muscles, joint, trials, _ = dataset
    art1 = tr.fit(quick_config(tmp_path / "a"), trials, muscles, joint)
    art2 = tr.fit(quick_config(tmp_path / "b"), trials, muscles, joint)
    assert art1.log.read_bytes() == art2.log.read_bytes()
    assert art1.metrics.read_bytes() == art2.metrics.read_bytes()
    n1, e1, _ = nn.load_checkpoint(art1.checkpoint)
    n2, e2, _ = nn.load_checkpoint(art2.checkpoint)
    np.testing.assert_array_equal(n1.flat, n2.flat)
    np.testing.assert_array_equal(e1["theta_raw"], e2["theta_raw"])


def test_physics_off_keeps_physics_columns_at_zero(dataset, tmp_path):
    muscles, joint, trials, _ = dataset
    cfg = quick_config(tmp_path, weights=(1.0, 0.0, 0.0))
    art = tr.fit(cfg, trials, muscles, joint)
    header, body = read_log(art.log)
    assert len(body) == 3
    for row in body:
        _, l_q, l_fd, l_f, l_total = row[:5]
        assert l_fd == 0.0 and l_f == 0.0
        assert l_total == l_q
        # identified parameters never move without a physics gradient
        assert row[5:] == [407.0, 337.0, 0.062, 0.062, -1.495]


def test_loss_decreases_on_smooth_data(dataset, tmp_path):
    muscles, joint, trials, _ = dataset
    cfg = quick_config(tmp_path, epochs=8)
    art = tr.fit(cfg, trials, muscles, joint)
    _, body = read_log(art.log)
    assert len(body) == 8
    assert body[-1][4] < body[0][4]      # l_total
    assert body[-1][1] < body[0][1]      # l_q
    ckpt_meta = nn.load_checkpoint(art.checkpoint)[2]
    # the log rounds to %.12g; the sidecar keeps full precision
    assert ckpt_meta["l_total"] == pytest.approx(min(row[4] for row in body), rel=1e-11)


def test_identified_values_stay_inside_bounds(dataset, tmp_path):
    muscles, joint, trials, _ = dataset
    art = tr.fit(quick_config(tmp_path, epochs=5, physics_lr=0.5), trials,
                 muscles, joint)
    tp = loss.TrainableParams.from_initial(muscles)
    _, body = read_log(art.log)
    for row in body:
        for k in range(tp.theta.size):
            assert tp.lo[k] <= row[5 + k] <= tp.hi[k]


def test_batched_data_pass(dataset, tmp_path):
    muscles, joint, trials, _ = dataset
    cfg = quick_config(tmp_path, epochs=2, batch_size=16, weights=(1.0, 0.0, 0.0),
                       dropout=0.0)
    art = tr.fit(cfg, trials, muscles, joint)
    _, body = read_log(art.log)
    assert len(body) == 2 and body[1][1] < body[0][1]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_and_keeps_last_good_checkpoint(dataset, tmp_path):
    muscles, joint, trials, _ = dataset
    cfg = quick_config(tmp_path, epochs=3, lr=1e10, dropout=0.0, hidden=8)
    with pytest.raises(tr.TrainingDiverged):
        tr.fit(cfg, trials, muscles, joint)
    net, extras, sidecar = nn.load_checkpoint(tmp_path / tr.CHECKPOINT_NAME)
    assert np.isfinite(net.flat).all()
    assert np.isfinite(extras["theta_raw"]).all()
    assert (tmp_path / tr.LOG_NAME).exists()
    assert (tmp_path / tr.METRICS_NAME).exists()


# -- evaluation ----------------------------------------------------------------------


def test_evaluate_zero_network_matches_hand_metrics(dataset):
    muscles, _, trials, _ = dataset
    net = nn.NetworkParams(2, hidden=4, dropout=0.0, seed=0)
    net.flat[:] = 0.0
    rows = tr.evaluate(net, trials)
    q_all = np.concatenate([t.q for t in trials])
    f_all = np.vstack([t.forces for t in trials])
    assert rows[0][0] == "q"
    assert rows[0][1] == pytest.approx(loss.rmse(q_all, np.zeros_like(q_all)))
    assert rows[1][1] == pytest.approx(loss.rmse(f_all[:, 0], np.zeros(f_all.shape[0])))
    assert rows[0][2] <= 0.0  # constant predictor cannot beat the mean


def test_evaluate_honours_sample_masks(dataset):
    muscles, _, trials, _ = dataset
    net = nn.NetworkParams(2, hidden=4, dropout=0.0, seed=1)
    net.flat[:] = 0.0
    masks = [np.zeros(t.q.size, dtype=bool) for t in trials]
    for m in masks:
        m[: m.size // 3] = True
    rows = tr.evaluate(net, trials, sample_masks=masks)
    q_sel = np.concatenate([t.q[m] for t, m in zip(trials, masks)])
    assert rows[0][1] == pytest.approx(loss.rmse(q_sel, np.zeros_like(q_sel)))


def test_evaluate_without_forces_reports_angle_only(dataset):
    _, _, trials, _ = dataset
    bare = [dyn.Trial(dt=t.dt, time=t.time, emg=t.emg, q=t.q,
                      muscle_names=t.muscle_names) for t in trials]
    net = nn.NetworkParams(2, hidden=4, dropout=0.0, seed=1)
    rows = tr.evaluate(net, bare)
    assert [r[0] for r in rows] == ["q"]


def test_mismatched_trials_are_rejected(dataset, tmp_path):
    muscles, joint, trials, _ = dataset
    solo = dyn.Trial(dt=trials[0].dt, time=trials[0].time,
                     emg=trials[0].emg[:, :1], q=trials[0].q,
                     muscle_names=("FLX",))
    with pytest.raises(ValueError, match="EMG channels"):
        tr.fit(quick_config(tmp_path, epochs=1), [solo], muscles, joint)
    with pytest.raises(ValueError, match="muscle channels"):
        tr.evaluate(nn.NetworkParams(2, hidden=4), [trials[0], solo])
