"""1-DOF joint dynamics: torque aggregation, RK4 simulation, synthetic trials.

The joint obeys

    I qddot + c qdot + s * g_c * cos(q) = tau(q, qdot, a)

with inertia ``I``, viscous damping ``c`` (the Coriolis term of a single DOF
is identically zero), gravitational coefficient ``g_c = m_h * g * l_c`` and a
sign ``s`` encoding the angle convention (q measured from the horizontal,
flexion positive, stable hanging equilibrium at q = -pi/2 for s = +1).

``simulate`` integrates the equation with classical fixed-step RK4 at the
sampling rate of the excitation series (optionally subdivided; sub-steps stay
aligned with the sample grid so the piecewise-linear excitation is the same
forcing function at every resolution, which keeps the integrator at its
formal fourth order).  ``synth_dataset`` builds physically consistent trials
with known muscle parameters, used as ground-truth oracles.
"""

from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np
from scipy import signal as sps

from . import hill
from .autodiff import cos, value_of

GRAVITY = 9.81  # m/s^2

# Winter-style anthropometric fractions for the hand segment.
HAND_MASS_FRACTION = 0.006   # of body mass
HAND_COM_FRACTION = 0.5      # of hand length


class InstabilityError(RuntimeError):
    """The simulated joint left its configured range by a wide margin."""


@dataclass(frozen=True)
class JointModel:
    """Rigid 1-DOF joint (wrist flexion/extension by default).

    ``inertia`` [kg m^2], ``grav_coeff`` [N m] (peak gravitational torque),
    ``damping`` [N m s/rad], ``q_range`` [rad] admissible angles,
    ``gravity_sign`` +1/-1 for the angle-origin convention.
    """

    inertia: float
    grav_coeff: float
    damping: float = 0.05
    q_range: tuple = (-2.0, 2.0)
    gravity_sign: float = 1.0

    def __post_init__(self):
        if not self.inertia > 0.0:
            raise ValueError("inertia must be positive")
        if self.damping < 0.0:
            raise ValueError("damping must be nonnegative")
        if not self.q_range[0] < self.q_range[1]:
            raise ValueError("q_range must be a nonempty interval")
        if self.gravity_sign not in (-1.0, 1.0):
            raise ValueError("gravity_sign must be +1 or -1")


def wrist_joint(body_mass=70.0, hand_length=0.18, damping=0.05,
                q_range=(-2.0, 2.0), gravity_sign=1.0):
    """Joint model from anthropometry: uniform-rod hand segment.

    m_h = HAND_MASS_FRACTION * body_mass, I = m_h L^2 / 3,
    g_c = m_h * g * (L / 2).
    """
    m_h = HAND_MASS_FRACTION * body_mass
    return JointModel(inertia=m_h * hand_length ** 2 / 3.0,
                      grav_coeff=m_h * GRAVITY * hand_length * HAND_COM_FRACTION,
                      damping=damping, q_range=tuple(q_range),
                      gravity_sign=gravity_sign)


@dataclass
class Trial:
    """One recorded or simulated trial at a uniform sampling interval.

    ``time`` (T,) seconds, ``emg`` (T, N) envelopes in [0, 1], ``q`` (T,)
    joint angle [rad], ``forces`` optional (T, N) musculotendon forces [N]
    (kept only for oracle/evaluation purposes — training never sees them).
    """

    dt: float
    time: np.ndarray
    emg: np.ndarray
    q: np.ndarray
    forces: np.ndarray = None
    muscle_names: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=np.float64)
        self.emg = np.asarray(self.emg, dtype=np.float64)
        if self.emg.ndim == 1:
            self.emg = self.emg[:, None]
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=np.float64)
            if self.forces.ndim == 1:
                self.forces = self.forces[:, None]
        self.muscle_names = tuple(self.muscle_names)

        T = self.time.size
        if T < 3:
            raise ValueError("trial needs at least 3 samples")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.q.shape != (T,) or self.emg.shape[0] != T:
            raise ValueError("time, emg and q must have equal length")
        if self.forces is not None and self.forces.shape != self.emg.shape:
            raise ValueError("forces must match emg layout")
        if np.max(np.abs(np.diff(self.time) - self.dt)) > 1e-9:
            raise ValueError("time axis is not uniform at dt")
        if np.any(self.emg < -1e-9) or np.any(self.emg > 1.0 + 1e-9):
            raise ValueError("emg envelopes must lie in [0, 1]")
        if self.muscle_names and len(self.muscle_names) != self.emg.shape[1]:
            raise ValueError("muscle_names must match emg channel count")

    @property
    def n_muscles(self):
        return self.emg.shape[1]


# -- torque and residual ---------------------------------------------------------

def _per_muscle(activations, n):
    """Normalize activations to a list with one entry per muscle."""
    if isinstance(activations, np.ndarray) and activations.ndim == 2:
        items = [activations[:, i] for i in range(activations.shape[1])]
    else:
        items = list(activations)
    if len(items) != n:
        raise ValueError(f"expected {n} activation channels, got {len(items)}")
    return items


def joint_torque(q, qdot, activations, muscles):
    """Net joint torque tau = sum_n F_n(q, qdot, a_n) * r_n(q)  [N m]."""
    acts = _per_muscle(activations, len(muscles))
    tau = 0.0
    for a, m in zip(acts, muscles):
        tau = tau + hill.muscle_force(q, qdot, a, m) * hill.moment_arm(q, m)
    return tau


def eom_residual(q, qdot, qddot, tau, joint):
    """Equation-of-motion residual M qddot + C + G - tau  [N m].

    Zero exactly when the motion satisfies the joint dynamics; the term
    C = damping * qdot stands in for the (vacuous) 1-DOF Coriolis force and
    G = gravity_sign * grav_coeff * cos(q).
    """
    return (joint.inertia * qddot + joint.damping * qdot
            + joint.gravity_sign * joint.grav_coeff * cos(q) - tau)


def mechanical_energy(q, qdot, joint):
    """Kinetic plus gravitational potential energy of the bare joint [J]."""
    return (0.5 * joint.inertia * np.square(qdot)
            + joint.gravity_sign * joint.grav_coeff * np.sin(q))


# -- forward simulation -----------------------------------------------------------

def _stack_muscles(muscles):
    """Array-of-structs view of a muscle list so one force call covers all.

    Polynomials are zero-padded to a common degree.  Falls back to None when
    any muscle carries an explicit moment-arm override (the override path is
    handled per muscle).
    """
    if not muscles or any(m.moment_arm_poly is not None for m in muscles):
        return None
    deg = max(len(m.mt_length_poly) for m in muscles)
    poly = tuple(np.array([m.mt_length_poly[k] if k < len(m.mt_length_poly) else 0.0
                           for m in muscles]) for k in range(deg))
    return SimpleNamespace(
        name="+".join(m.name for m in muscles),
        f0m=np.array([m.f0m for m in muscles]),
        l0m=np.array([m.l0m for m in muscles]),
        lst=np.array([m.lst for m in muscles]),
        phi0=np.array([m.phi0 for m in muscles]),
        v0=np.array([m.v0 for m in muscles]),
        mt_length_poly=poly,
        moment_arm_poly=None,
    )


def _name_geometry_offender(q, muscles, err):
    """Re-raise a stacked-path geometry error naming the offending muscle."""
    for m in muscles:
        try:
            hill.fiber_geometry(q, m)
        except hill.GeometryError as named:
            raise named from err
    raise err


def simulate(excitations, q0, qdot0, A, muscles, joint, dt, substeps=1):
    """Integrate the joint EOM under given excitations; returns a Trial.

    ``excitations`` is (T, N) sampled at ``dt``; between samples the
    excitation is interpolated linearly (RK4 half-steps use the midpoint
    value).  ``substeps`` subdivides each sampling interval for the
    integrator only — the returned Trial is always at the data rate.
    Raises InstabilityError when q leaves ``joint.q_range`` by > 0.5 rad.
    """
    e = np.asarray(excitations, dtype=np.float64)
    if e.ndim == 1:
        e = e[:, None]
    T, n = e.shape
    if len(muscles) != n:
        raise ValueError(f"{n} excitation channels for {len(muscles)} muscles")
    if not joint.q_range[0] <= q0 <= joint.q_range[1]:
        raise ValueError("q0 outside joint range")
    stacked = _stack_muscles(muscles)

    def accel(qq, qqdot, act):
        if n == 0:
            tau = 0.0
        elif stacked is not None:
            try:
                F = hill.muscle_force(qq, qqdot, act, stacked)
            except hill.GeometryError as err:
                _name_geometry_offender(qq, muscles, err)
            tau = np.sum(F * hill.moment_arm(qq, stacked))
        else:
            tau = joint_torque(qq, qqdot, act, muscles)
        return (tau - joint.damping * qqdot
                - joint.gravity_sign * joint.grav_coeff * np.cos(qq)) / joint.inertia

    q = np.empty(T)
    qdot = np.empty(T)
    q[0], qdot[0] = q0, qdot0
    substeps = int(substeps)
    h = dt / substeps
    lo, hi = joint.q_range
    # Precompute activations at every half-substep offset of every interval:
    # stage s of interval k needs offsets s/S, (s+.5)/S, (s+1)/S of e[k]..e[k+1].
    de = e[1:] - e[:-1]
    acts = [value_of(hill.activation(e[:-1] + (j / (2.0 * substeps)) * de, A))
            for j in range(2 * substeps + 1)]
    for k in range(T - 1):
        y_q, y_qd = q[k], qdot[k]
        for s in range(int(substeps)):
            a0 = acts[2 * s][k]
            am = acts[2 * s + 1][k]
            a1 = acts[2 * s + 2][k]
            k1q, k1v = y_qd, accel(y_q, y_qd, a0)
            k2q, k2v = y_qd + 0.5 * h * k1v, accel(y_q + 0.5 * h * k1q,
                                                   y_qd + 0.5 * h * k1v, am)
            k3q, k3v = y_qd + 0.5 * h * k2v, accel(y_q + 0.5 * h * k2q,
                                                   y_qd + 0.5 * h * k2v, am)
            k4q, k4v = y_qd + h * k3v, accel(y_q + h * k3q, y_qd + h * k3v, a1)
            y_q = y_q + h * (k1q + 2.0 * k2q + 2.0 * k3q + k4q) / 6.0
            y_qd = y_qd + h * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
        q[k + 1], qdot[k + 1] = y_q, y_qd
        if y_q < lo - 0.5 or y_q > hi + 0.5:
            raise InstabilityError(
                f"q = {y_q:.3f} rad left range [{lo}, {hi}] at t = {(k + 1) * dt:.3f} s")

    forces = np.empty((T, n))
    for i, m in enumerate(muscles):
        forces[:, i] = value_of(
            hill.muscle_force(q, qdot, hill.activation(e[:, i], A), m))
    names = tuple(m.name for m in muscles)
    return Trial(dt=dt, time=np.arange(T) * dt, emg=e, q=q, forces=forces,
                 muscle_names=names, meta={"q0": q0, "qdot0": qdot0})


# -- synthetic datasets -------------------------------------------------------------

@dataclass
class GeneratorSpec:
    """Recipe for a synthetic dataset with known ('ground truth') muscles.

    ``muscles``/``a_shape`` are the hidden true parameters the identification
    is later scored against.  One excitation waveform family per trial,
    cycling through ``waveforms``.  ``noise_std`` is the per-channel standard
    deviation of band-limited noise added to the emg envelopes only.
    """

    muscles: tuple
    joint: JointModel
    a_shape: float
    dt: float = 1e-3
    duration: float = 5.0
    n_trials: int = 3
    noise_std: float = 0.0
    seed: int = 0
    q0: float = -0.35
    qdot0: float = 0.0
    waveforms: tuple = ("sine", "sum_of_sines", "chirp", "bursts", "ramp_hold")


def _make_pattern(kind, t, rng):
    """One excitation pattern per trial; returns pattern(phase) -> series in [0, 1].

    Antagonist groups call the same pattern half a cycle apart, so the drawn
    frequencies/landmarks are shared within a trial.
    """
    D = float(t[-1]) if t.size else 1.0
    if kind == "sine":
        f = rng.uniform(0.25, 0.5)
        return lambda ph: 0.5 * (1.0 + np.sin(2.0 * np.pi * f * t + ph))
    if kind == "sum_of_sines":
        comps = [(rng.uniform(0.15, 0.25), 1.0),
                 (rng.uniform(0.3, 0.45), 0.6),
                 (rng.uniform(0.55, 0.75), 0.35)]
        offsets = [rng.uniform(-0.4, 0.4) for _ in comps]
        total = sum(s for _, s in comps)

        def pattern(ph):
            w = sum(s * np.sin(2.0 * np.pi * f * t + ph + o)
                    for (f, s), o in zip(comps, offsets))
            return 0.5 * (1.0 + w / total)

        return pattern
    if kind == "chirp":
        f0 = rng.uniform(0.1, 0.18)
        f1 = rng.uniform(0.5, 0.7)
        rate = (f1 - f0) / (2.0 * D)
        return lambda ph: 0.5 * (1.0 + np.sin(2.0 * np.pi * (f0 + rate * t) * t + ph))
    if kind == "bursts":
        period = rng.uniform(3.5, 5.5)
        width = 0.4 * period

        def pattern(ph):
            tm = np.mod(t - ph / (2.0 * np.pi) * period, period)
            u = (tm - 0.5 * (period - width)) / width
            return np.where((u >= 0.0) & (u <= 1.0),
                            0.5 * (1.0 - np.cos(2.0 * np.pi * np.clip(u, 0.0, 1.0))),
                            0.0)

        return pattern
    if kind == "ramp_hold":
        knots = np.array([0.0, 0.1, 0.3, 0.55, 0.75, 1.0])
        levels = np.array([0.0, 0.0, 1.0, 1.0, 0.0, 0.0])

        def pattern(ph):
            s = np.mod(t / D + ph / (2.0 * np.pi), 1.0)
            return np.interp(s, knots, levels)

        return pattern
    raise ValueError(f"unknown waveform kind '{kind}'")


def _band_limited_noise(shape, dt, rng):
    """Unit-variance Gaussian noise low-passed to the envelope band (6 Hz)."""
    white = rng.standard_normal(shape)
    b, a = sps.butter(2, 6.0 / (0.5 / dt), btype="low")
    out = sps.filtfilt(b, a, white, axis=0)
    return out / np.std(out, axis=0, keepdims=True)


def synth_dataset(spec):
    """Generate ``spec.n_trials`` simulated trials plus a truth record.

    Returns (list of Trial, dict) where the dict freezes the hidden
    parameters (per-muscle f0m/l0m plus the activation shape factor) the
    trials were produced with.
    """
    rng = np.random.default_rng(spec.seed)
    T = int(round(spec.duration / spec.dt)) + 1
    t = np.arange(T) * spec.dt
    A = hill.ActivationCoeff(spec.a_shape)
    flexor = np.array([float(value_of(hill.moment_arm(0.0, m))) > 0.0
                       for m in spec.muscles])

    trials = []
    for i in range(spec.n_trials):
        kind = spec.waveforms[i % len(spec.waveforms)]
        pattern = _make_pattern(kind, t, rng)
        e = np.empty((T, len(spec.muscles)))
        for j in range(len(spec.muscles)):
            base = rng.uniform(0.04, 0.12)
            amp = rng.uniform(0.25, 0.45)
            phase = (0.0 if flexor[j] else np.pi) + rng.uniform(-0.25, 0.25)
            e[:, j] = np.clip(base + amp * pattern(phase), 0.0, 1.0)
        trial = simulate(e, spec.q0, spec.qdot0, A, spec.muscles,
                         spec.joint, spec.dt)
        if spec.noise_std > 0.0:
            noisy = e + spec.noise_std * _band_limited_noise(e.shape, spec.dt, rng)
            trial = Trial(dt=trial.dt, time=trial.time,
                          emg=np.clip(noisy, 0.0, 1.0), q=trial.q,
                          forces=trial.forces, muscle_names=trial.muscle_names,
                          meta=dict(trial.meta))
        trial.meta.update(waveform=kind, trial=i, noise_std=spec.noise_std)
        trials.append(trial)

    truth = {
        "a_shape": float(spec.a_shape),
        "seed": int(spec.seed),
        "noise_std": float(spec.noise_std),
        "muscles": {
            m.name: {"f0m": float(m.f0m), "l0m": float(m.l0m),
                     "lst": float(m.lst), "phi0": float(m.phi0),
                     "v0": float(m.v0)}
            for m in spec.muscles
        },
    }
    return trials, truth

