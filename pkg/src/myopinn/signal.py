"""sEMG conditioning chain and trial file I/O.

The envelope recipe is the community-standard one: zero-phase Butterworth
band-pass 20-450 Hz (order 4), full-wave rectification, zero-phase
Butterworth low-pass at 6 Hz (order 2), MVC normalization, clip to [0, 1],
and linear-interpolation resampling to the 1 kHz analysis rate.  Zero-phase
(forward-backward) application keeps envelope peaks aligned with the raw
signal, which matters because the losses difference the series in time.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, filtfilt

from .dynamics import Trial

TARGET_FS = 1000.0
BAND_PASS_CORNERS = (20.0, 450.0)
BAND_PASS_ORDER = 4
ENVELOPE_CORNER = 6.0
ENVELOPE_ORDER = 2

_DT_TOL = 1e-9


@dataclass(frozen=True)
class FilterSpec:
    """One zero-phase Butterworth stage."""

    kind: str            # "band-pass" | "low-pass"
    corners: tuple       # Hz; two entries for band-pass, one for low-pass
    order: int
    fs: float            # sample rate the stage runs at [Hz]

    def __post_init__(self):
        if self.kind not in ("band-pass", "low-pass"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        object.__setattr__(self, "corners", tuple(float(c) for c in self.corners))
        if self.order not in (2, 4):
            raise ValueError(f"filter order must be 2 or 4, got {self.order}")
        if self.fs <= 0.0:
            raise ValueError("sample rate must be positive")
        want = 2 if self.kind == "band-pass" else 1
        if len(self.corners) != want:
            raise ValueError(f"{self.kind} needs {want} corner(s), got {len(self.corners)}")
        nyq = self.fs / 2.0
        if any(not 0.0 < c < nyq for c in self.corners):
            raise ValueError(f"corners {self.corners} must lie inside (0, {nyq}) Hz")
        if want == 2 and self.corners[0] >= self.corners[1]:
            raise ValueError("band-pass corners must be ascending")

    def apply(self, x):
        """Forward-backward filter along axis 0 (no group delay)."""
        x = np.asarray(x, dtype=np.float64)
        wn = np.asarray(self.corners) / (self.fs / 2.0)
        btype = "bandpass" if self.kind == "band-pass" else "lowpass"
        b, a = butter(self.order, wn if wn.size > 1 else wn[0], btype=btype)
        return filtfilt(b, a, x, axis=0)


def preprocess_emg(raw, fs, mvc=None):
    """Condition raw sEMG into a normalized envelope sampled at 1 kHz.

    ``raw`` is (T,) or (T, C) at sample rate ``fs`` (>= 1000 Hz); ``mvc`` is
    the maximum-voluntary-contraction reference (same units as ``raw``).
    With ``mvc=None`` each channel is normalized by its own envelope peak
    instead (for recordings without a calibration contraction).  Returns the
    envelope(s) in [0, 1] on the 1 kHz grid.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim not in (1, 2) or raw.shape[0] < 2:
        raise ValueError("raw series must be 1-D or 2-D with at least 2 samples")
    if not np.isfinite(raw).all():
        raise ValueError("raw series contains non-finite samples")
    if fs < TARGET_FS:
        raise ValueError(f"sample rate {fs} Hz below the {TARGET_FS:.0f} Hz analysis rate")
    if mvc is not None and not mvc > 0.0:
        raise ValueError("mvc must be positive")

    band = FilterSpec("band-pass", BAND_PASS_CORNERS, BAND_PASS_ORDER, fs).apply(raw)
    envelope = FilterSpec("low-pass", (ENVELOPE_CORNER,), ENVELOPE_ORDER, fs).apply(np.abs(band))
    if mvc is None:
        # no calibration contraction: normalize the final envelope by its peak
        out = resample(envelope, fs, TARGET_FS)
        peak = np.max(out, axis=0)
        return np.clip(out / np.where(peak > 0.0, peak, 1.0), 0.0, 1.0)
    envelope = np.clip(envelope / mvc, 0.0, 1.0)
    return resample(envelope, fs, TARGET_FS)


def resample(series, fs_in, fs_out):
    """Linear-interpolation resampling along axis 0; endpoints preserved."""
    series = np.asarray(series, dtype=np.float64)
    if series.shape[0] == 0:
        raise ValueError("cannot resample an empty series")
    if fs_in <= 0.0 or fs_out <= 0.0:
        raise ValueError("sample rates must be positive")
    n_in = series.shape[0]
    t_in = np.arange(n_in) / fs_in
    n_out = int(np.floor(t_in[-1] * fs_out + 0.5 * _DT_TOL)) + 1
    t_out = np.arange(n_out) / fs_out
    if series.ndim == 1:
        return np.interp(t_out, t_in, series)
    return np.column_stack([np.interp(t_out, t_in, series[:, j])
                            for j in range(series.shape[1])])


# -- trial CSV I/O -----------------------------------------------------------------


def save_trial(trial, path):
    """Write a Trial as CSV: header ``t,emg_<name>...,q[,force_<name>...]``.

    Floats are printed with 17 significant digits so a load restores the
    exact binary values.  Unnamed trials get generic channel names m1..mN.
    """
    names = trial.muscle_names or tuple(f"m{i + 1}" for i in range(trial.n_muscles))
    cols = [trial.time] + [trial.emg[:, i] for i in range(trial.n_muscles)] + [trial.q]
    header = ["t"] + [f"emg_{n}" for n in names] + ["q"]
    if trial.forces is not None:
        cols += [trial.forces[:, i] for i in range(trial.n_muscles)]
        header += [f"force_{n}" for n in names]
    np.savetxt(path, np.column_stack(cols), fmt="%.17g", delimiter=",",
               header=",".join(header), comments="")
    return path


def _schema_error(path, msg):
    return ValueError(f"{path}: {msg}")


def load_table(path):
    """Read a headed CSV into (column names, float matrix); NaN cells are errors."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header:
            raise _schema_error(path, "empty file")
        names = [c.strip() for c in header.split(",")]
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as err:
            raise _schema_error(path, f"malformed CSV ({err})") from None
    if data.shape[0] == 0:
        raise _schema_error(path, "no data rows")
    if data.shape[1] != len(names):
        raise _schema_error(path, f"{len(names)} header fields but {data.shape[1]} columns")
    if len(set(names)) != len(names):
        raise _schema_error(path, "duplicate column names")
    if np.isnan(data).any():
        rows = np.unique(np.where(np.isnan(data))[0])[:5]
        raise _schema_error(path, f"NaN cells in rows {rows.tolist()}")
    return names, data


def load_trial(path):
    """Read a Trial CSV (schema as written by :func:`save_trial`)."""
    names, data = load_table(path)
    col = {n: data[:, i] for i, n in enumerate(names)}
    if "t" not in col:
        raise _schema_error(path, "missing column 't'")
    if "q" not in col:
        raise _schema_error(path, "missing column 'q'")
    muscles = [n[len("emg_"):] for n in names if n.startswith("emg_")]
    if not muscles:
        raise _schema_error(path, "no emg_<name> columns")
    force_cols = [n for n in names if n.startswith("force_")]
    forces = None
    if force_cols:
        missing = [m for m in muscles if f"force_{m}" not in col]
        extra = [n for n in force_cols if n[len("force_"):] not in muscles]
        if missing or extra:
            raise _schema_error(path, f"force columns must match emg names; "
                                      f"missing {missing}, unmatched {extra}")
        forces = np.column_stack([col[f"force_{m}"] for m in muscles])
    known = {"t", "q"} | {f"emg_{m}" for m in muscles} | set(force_cols)
    unknown = [n for n in names if n not in known]
    if unknown:
        raise _schema_error(path, f"unrecognized columns {unknown}")

    t = col["t"]
    if t.size < 3:
        raise _schema_error(path, "need at least 3 samples")
    dt = float(t[1] - t[0])
    steps = np.diff(t)
    if np.any(np.abs(steps - dt) > _DT_TOL):
        raise _schema_error(path, f"non-uniform sampling (dt varies by "
                                  f"{np.max(np.abs(steps - dt)):.3g} s)")
    emg = np.column_stack([col[f"emg_{m}"] for m in muscles])
    return Trial(dt=dt, time=t, emg=emg, q=col["q"], forces=forces,
                 muscle_names=tuple(muscles), meta={"source": str(path)})


def load_raw(path):
    """Read a raw recording CSV (``t`` plus one column per electrode).

    Returns ``(time, data (T, C), channel names)``; sampling must be uniform.
    """
    names, data = load_table(path)
    if "t" not in names:
        raise _schema_error(path, "missing column 't'")
    t = data[:, names.index("t")]
    if t.size < 2:
        raise _schema_error(path, "need at least 2 samples")
    dt = float(t[1] - t[0])
    if dt <= 0.0 or np.any(np.abs(np.diff(t) - dt) > _DT_TOL):
        raise _schema_error(path, "non-uniform or non-increasing time column")
    channels = [n for n in names if n != "t"]
    if not channels:
        raise _schema_error(path, "no electrode columns besides 't'")
    mat = np.column_stack([data[:, names.index(c)] for c in channels])
    return t, mat, tuple(channels)
