"""Composite training loss and bounded parameter identification.

The training objective is the sum of three terms evaluated on a predicted
trajectory:

* ``loss_q``     -- mean squared error between predicted and measured angle,
* ``loss_fd``    -- mean squared equation-of-motion residual, with the joint
  torque produced by the Hill model from the *predicted* kinematics and the
  identified parameters,
* ``loss_force`` -- mean squared gap between the network's force outputs and
  the Hill-model forces along the same predicted states.

Identified quantities (per-muscle F0m and l0m, plus the shared activation
shape factor A) are optimized as raw unconstrained values ``theta`` and
realized through a sigmoid onto fixed intervals, so every realized value sits
strictly inside its bounds at every step.  Bounds follow the identification
setup: F0m within +/-50% of the initial guess, l0m within +/-0.01 m, and A in
[-3, 0.01].
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import dynamics, hill
from .autodiff import value_of

F0M_REL_BOUND = 0.5
L0M_ABS_BOUND = 0.01
THETA_CLIP = 50.0  # sigmoid is saturated flat beyond this; keeps exp() finite

DEFAULT_WEIGHTS = (1.0, 1.0, 1.0)


def _sigmoid(theta):
    theta = ad.clip(theta, -THETA_CLIP, THETA_CLIP)
    return 1.0 / (1.0 + ad.exp(-theta))


@dataclass
class TrainableParams:
    """Raw identification vector plus its bound table.

    ``theta`` has layout ``[f0m_0..f0m_{N-1}, l0m_0..l0m_{N-1}, a_shape]``
    (length 2N+1) and starts at zero, which realizes every quantity at the
    midpoint of its interval.  ``names`` gives one report/log label per
    entry in the same order.
    """

    muscles: tuple
    theta: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    names: tuple

    @classmethod
    def from_initial(cls, muscles):
        muscles = tuple(muscles)
        if not muscles:
            raise ValueError("need at least one muscle")
        f0m = np.array([hill._scalar(m.f0m) for m in muscles])
        l0m = np.array([hill._scalar(m.l0m) for m in muscles])
        lo = np.concatenate([(1.0 - F0M_REL_BOUND) * f0m, l0m - L0M_ABS_BOUND,
                             [hill.A_SHAPE_MIN]])
        hi = np.concatenate([(1.0 + F0M_REL_BOUND) * f0m, l0m + L0M_ABS_BOUND,
                             [hill.A_SHAPE_MAX]])
        if np.any(lo >= hi) or np.any(lo[len(muscles):2 * len(muscles)] <= 0.0):
            raise ValueError("degenerate identification bounds (check initial l0m)")
        names = tuple([f"f0m_{m.name}" for m in muscles]
                      + [f"l0m_{m.name}" for m in muscles] + ["a_shape"])
        return cls(muscles=muscles, theta=np.zeros(2 * len(muscles) + 1),
                   lo=lo, hi=hi, names=names)

    @property
    def n_muscles(self):
        return len(self.muscles)

    def realize(self, theta=None):
        """Map raw values onto their intervals: lo + (hi - lo) * sigmoid(theta).

        ``theta`` may be a tape variable (gradients flow into the realized
        muscle parameters and shape factor) or None to use the stored plain
        vector.  Returns ``(muscles, a_shape)`` where each muscle is the
        initial parameter set with f0m/l0m replaced by realized values.
        """
        if theta is None:
            theta = self.theta
        if value_of(theta).shape != self.theta.shape:
            raise ValueError(f"theta must have length {self.theta.size}")
        n = self.n_muscles
        s = _sigmoid(theta)
        realized = self.lo + (self.hi - self.lo) * s
        muscles = tuple(replace(m, f0m=realized[i], l0m=realized[n + i])
                        for i, m in enumerate(self.muscles))
        return muscles, realized[2 * n]

    def realized_values(self, theta=None):
        """Plain floats of every identified quantity, keyed by ``names``."""
        if theta is None:
            theta = self.theta
        vals = self.lo + (self.hi - self.lo) * value_of(_sigmoid(np.asarray(theta, dtype=np.float64)))
        return dict(zip(self.names, vals.tolist()))


# -- finite-difference stencils -----------------------------------------------------


def fd_derivatives(q, dt):
    """Velocity and acceleration of a uniformly sampled series, both O(dt^2).

    Central differences in the interior, second-order one-sided stencils at
    the endpoints (the three-point curvature is reused at the edges of
    length-3 series, where the four-point stencil does not fit).  Works on
    plain arrays and on tape variables; exact for quadratics everywhere.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if not isinstance(q, ad.Var):
        q = np.asarray(q, dtype=np.float64)
    n = value_of(q).shape[0]
    if n < 3:
        raise ValueError("finite-difference stencils need at least 3 samples")

    half = 0.5 / dt
    v_mid = (q[2:] - q[:-2]) * half
    v_left = (-3.0 * q[0:1] + 4.0 * q[1:2] - q[2:3]) * half
    v_right = (3.0 * q[-1:] - 4.0 * q[-2:-1] + q[-3:-2]) * half
    qdot = ad.concat([v_left, v_mid, v_right])

    inv2 = 1.0 / (dt * dt)
    a_mid = (q[2:] - 2.0 * q[1:-1] + q[:-2]) * inv2
    if n >= 4:
        a_left = (2.0 * q[0:1] - 5.0 * q[1:2] + 4.0 * q[2:3] - q[3:4]) * inv2
        a_right = (2.0 * q[-1:] - 5.0 * q[-2:-1] + 4.0 * q[-3:-2] - q[-4:-3]) * inv2
    else:
        a_left, a_right = a_mid[0:1], a_mid[-1:]
    qddot = ad.concat([a_left, a_mid, a_right])
    return qdot, qddot


# -- loss terms ----------------------------------------------------------------------


def _check_emg(emg, n_muscles, n_samples):
    emg = np.asarray(emg, dtype=np.float64)
    if emg.shape != (n_samples, n_muscles):
        raise ValueError(f"emg must be ({n_samples}, {n_muscles}), got {emg.shape}")
    return emg


def loss_q(q_hat, q):
    """Mean squared angle error over a series."""
    q = np.asarray(q, dtype=np.float64)
    if value_of(q_hat).shape != q.shape:
        raise ValueError("predicted and measured angle series differ in length")
    return ad.mean(ad.square(q_hat - q))


def _hill_forces(q_hat, qdot, muscles, a_shape, emg):
    """Hill force and moment arm of every muscle along a predicted trajectory."""
    forces, arms = [], []
    for i, m in enumerate(muscles):
        a = hill.activation(emg[:, i], a_shape)
        forces.append(hill.muscle_force(q_hat, qdot, a, m))
        arms.append(hill.moment_arm(q_hat, m))
    return forces, arms


def _physics_terms(q_hat, qdot, qddot, f_hat, muscles, a_shape, emg, joint):
    """Both trajectory losses from precomputed kinematic derivatives."""
    n = value_of(q_hat).shape[0]
    emg = _check_emg(emg, len(muscles), n)
    forces, _arms = _hill_forces(q_hat, qdot, muscles, a_shape, emg)

    l_fd = None
    if joint is not None:
        tau = forces[0] * _arms[0]
        for f, r in zip(forces[1:], _arms[1:]):
            tau = tau + f * r
        res = dynamics.eom_residual(q_hat, qdot, qddot, tau, joint)
        l_fd = ad.mean(ad.square(res))

    l_force = None
    if f_hat is not None:
        if value_of(f_hat).shape != (n, len(muscles)):
            raise ValueError(f"f_hat must be ({n}, {len(muscles)})")
        acc = ad.vsum(ad.square(f_hat[:, 0] - forces[0]))
        for i in range(1, len(muscles)):
            acc = acc + ad.vsum(ad.square(f_hat[:, i] - forces[i]))
        l_force = acc / (n * len(muscles))
    return l_fd, l_force


def physics_losses(q_hat, f_hat, dt, muscles, a_shape, emg, joint=None):
    """Forward-dynamics and force-matching losses sharing one set of states.

    Differentiates the predicted angle once, evaluates every Hill force once,
    and feeds both the equation-of-motion residual and the force mismatch
    from the shared results.  Returns ``(l_fd, l_force)``; either is None when
    its inputs (``joint`` / ``f_hat``) are omitted.
    """
    qdot, qddot = fd_derivatives(q_hat, dt)
    return _physics_terms(q_hat, qdot, qddot, f_hat, muscles, a_shape, emg, joint)


def physics_losses_runs(q_hat, f_hat, dt, runs, muscles, a_shape, emg, joint=None):
    """Physics losses over a series made of contiguous runs.

    ``runs`` are slices that tile the sample axis in order (each at least 3
    samples); difference stencils are evaluated within each run, so they never
    straddle a boundary, while the Hill pipeline and both means run once over
    the whole series.  The results equal the per-sample average of the
    per-run losses, i.e. ``sum_r physics_losses(run_r) * n_r / n``.
    """
    n = value_of(q_hat).shape[0]
    stop = 0
    for sl in runs:
        if sl.start != stop or sl.step not in (None, 1):
            raise ValueError("runs must tile the series contiguously and in order")
        stop = sl.stop
    if stop != n:
        raise ValueError(f"runs cover {stop} of {n} samples")
    parts = [fd_derivatives(q_hat[sl], dt) for sl in runs]
    qdot = ad.concat([p[0] for p in parts])
    qddot = ad.concat([p[1] for p in parts])
    return _physics_terms(q_hat, qdot, qddot, f_hat, muscles, a_shape, emg, joint)


def loss_fd(q_hat, dt, muscles, a_shape, emg, joint):
    """Mean squared equation-of-motion residual along the predicted angle."""
    l_fd, _ = physics_losses(q_hat, None, dt, muscles, a_shape, emg, joint)
    return l_fd


def loss_force(f_hat, q_hat, dt, muscles, a_shape, emg):
    """Mean squared gap between predicted forces and Hill forces (over t and muscles)."""
    _, l_f = physics_losses(q_hat, f_hat, dt, muscles, a_shape, emg)
    return l_f


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted loss components of one epoch; ``l_total`` is their exact sum."""

    l_q: float
    l_fd: float
    l_f: float
    l_total: float

    def __post_init__(self):
        for field_name in ("l_q", "l_fd", "l_f", "l_total"):
            v = getattr(self, field_name)
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"{field_name} must be finite and nonnegative, got {v}")


def loss_total(l_q_term, l_fd_term, l_f_term, weights=DEFAULT_WEIGHTS):
    """Weighted sum of the three loss terms (defaults to the bare sum).

    Returns ``(total, breakdown)``: ``total`` keeps whatever tape structure
    the inputs carry, while the breakdown stores the weighted components as
    plain floats with ``l_total`` their rounding-exact sum.
    """
    w = tuple(float(x) for x in weights)
    if len(w) != 3 or any(x < 0.0 for x in w):
        raise ValueError("weights must be three nonnegative numbers")
    terms = [wi * term for wi, term in zip(w, (l_q_term, l_fd_term, l_f_term))]
    total = terms[0] + terms[1] + terms[2]
    parts = [float(value_of(t)) for t in terms]
    return total, LossBreakdown(parts[0], parts[1], parts[2], parts[0] + parts[1] + parts[2])


# -- metrics -------------------------------------------------------------------------


def rmse(y, y_hat):
    """Root mean squared error between two equal-length series."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError("series shapes differ")
    if y.size == 0:
        raise ValueError("empty series")
    return float(np.sqrt(np.mean(np.square(y - y_hat))))


def r_squared(y, y_hat):
    """Coefficient of determination 1 - SS_res / SS_tot."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError("series shapes differ")
    ss_tot = float(np.sum(np.square(y - y.mean())))
    if ss_tot == 0.0:
        raise ValueError("reference series has zero variance; R^2 undefined")
    ss_res = float(np.sum(np.square(y - y_hat)))
    return 1.0 - ss_res / ss_tot
