"""Hill-type musculotendon model with a rigid tendon.

Every function in this module is pure and written against the dispatching
primitives in :mod:`myopinn.autodiff`, so the same code path evaluates on
plain floats / ndarrays (fast, for simulation) and on tape variables
(differentiable, for parameter identification).  Muscle conventions:

* joint angles ``q`` in radians, musculotendon lengths in meters,
* fiber shortening gives negative fiber velocity,
* EMG envelopes ``e`` and activations ``a`` live in [0, 1].

The musculotendon length is a polynomial in the joint angle,
``lmt(q) = c0 + c1*q + ... + cK*q**K``, and the moment arm follows from the
tendon-excursion principle ``r = -d lmt / d q`` unless an explicit moment-arm
polynomial is supplied.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    asin_clamped,
    clip,
    clip_lower,
    exp,
    sin,
    sqrt,
    value_of,
    where,
)

# Force-length / force-velocity curve constants.  The active curve is a
# Gaussian of width F_A_WIDTH around the optimal length; the passive curve is
# a normalized exponential reaching 1.0 at a stretch of EPS_PASSIVE; the
# velocity curve is the classic shortening hyperbola (shape factor A_F) with
# a rational lengthening branch that saturates at F_LEN and matches the
# shortening slope at v = 0.
F_A_WIDTH = 0.45
K_PASSIVE = 4.0
EPS_PASSIVE = 0.6
A_F = 0.25
F_LEN = 1.4

# C1 continuity of the velocity curve at v = 0: both one-sided slopes equal
# 1 + 1/A_F, which fixes the lengthening-branch offset.
_V_SLOPE0 = 1.0 + 1.0 / A_F
_B_LEN = (F_LEN - 1.0) / _V_SLOPE0

# Below this magnitude the EMG-to-activation nonlinearity is replaced by its
# analytic A -> 0 limit (identity) to avoid 0/0.
A_EPS = 1e-6

# Physiological range of the activation shape factor.
A_SHAPE_MIN = -3.0
A_SHAPE_MAX = 0.01

_E_TOL = 1e-9


class GeometryError(ValueError):
    """Musculotendon geometry is unsolvable (path shorter than the tendon)."""


def _scalar(x):
    v = value_of(x)
    return float(v.reshape(()) if np.ndim(v) else v)


@dataclass(frozen=True)
class MuscleTendonParams:
    """Constant (or identified) parameters of one musculotendon actuator.

    ``f0m`` maximum isometric force [N], ``l0m`` optimal fiber length [m],
    ``lst`` tendon slack length [m], ``phi0`` pennation angle at optimal
    fiber length [rad], ``v0`` maximum contraction velocity [m/s]
    (defaults to 10 optimal lengths per second), ``mt_length_poly``
    coefficients c0..cK of lmt(q).  ``f0m``, ``l0m`` may carry tape
    variables during identification.
    """

    name: str
    f0m: float
    l0m: float
    lst: float
    phi0: float
    mt_length_poly: tuple
    v0: float = None
    moment_arm_poly: tuple = None

    def __post_init__(self):
        if self.v0 is None:
            object.__setattr__(self, "v0", 10.0 * _scalar(self.l0m))
        object.__setattr__(self, "mt_length_poly", tuple(float(c) for c in self.mt_length_poly))
        if self.moment_arm_poly is not None:
            object.__setattr__(self, "moment_arm_poly", tuple(float(c) for c in self.moment_arm_poly))
        for fname in ("f0m", "l0m", "v0"):
            if not _scalar(getattr(self, fname)) > 0.0:
                raise ValueError(f"{self.name}: {fname} must be positive")
        if _scalar(self.lst) < 0.0:
            raise ValueError(f"{self.name}: lst must be nonnegative")
        if not 0.0 <= _scalar(self.phi0) < np.pi / 2:
            raise ValueError(f"{self.name}: phi0 must lie in [0, pi/2)")
        if len(self.mt_length_poly) < 2:
            raise ValueError(f"{self.name}: mt_length_poly needs degree >= 1")


@dataclass(frozen=True)
class ActivationCoeff:
    """EMG-to-activation shape factor A (dimensionless, in [-3, 0.01])."""

    a_shape: float

    def __post_init__(self):
        v = _scalar(self.a_shape)
        if not A_SHAPE_MIN - 1e-12 <= v <= A_SHAPE_MAX + 1e-12:
            raise ValueError(f"a_shape={v} outside [{A_SHAPE_MIN}, {A_SHAPE_MAX}]")


@dataclass(frozen=True)
class MuscleState:
    """Instantaneous kinematic/activation state of one muscle."""

    lm: float
    phi: float
    vm: float
    activation: float

    def __post_init__(self):
        if not _scalar(self.lm) > 0.0:
            raise ValueError("lm must be positive")
        if not 0.0 <= _scalar(self.phi) < np.pi / 2:
            raise ValueError("phi must lie in [0, pi/2)")
        if not -_E_TOL <= _scalar(self.activation) <= 1.0 + _E_TOL:
            raise ValueError("activation must lie in [0, 1]")


# -- polynomials ---------------------------------------------------------------

def poly_val(coeffs, q):
    """Evaluate c0 + c1*q + ... + cK*q**K by Horner's rule."""
    acc = coeffs[-1]
    for c in coeffs[-2::-1]:
        acc = acc * q + c
    return acc


def poly_der_val(coeffs, q):
    """Evaluate the analytic derivative of ``poly_val(coeffs, .)`` at q."""
    dcoeffs = [k * c for k, c in enumerate(coeffs)][1:]
    if not dcoeffs:
        return 0.0
    return poly_val(dcoeffs, q)


# -- activation ----------------------------------------------------------------

def activation(e, A):
    """Map an EMG envelope e in [0, 1] to activation via a = (exp(A e) - 1)/(exp(A) - 1).

    ``A`` may be a raw number, a tape variable, or an :class:`ActivationCoeff`.
    For |A| below ``A_EPS`` the analytic limit a = e is used.  Values of e
    outside [0, 1] by more than 1e-9 raise ``ValueError``; tiny excursions
    are clipped so the output is exactly within [0, 1].
    """
    ev = value_of(e)
    if np.any(ev < -_E_TOL) or np.any(ev > 1.0 + _E_TOL):
        bad = ev[(ev < -_E_TOL) | (ev > 1.0 + _E_TOL)] if np.ndim(ev) else ev
        raise ValueError(f"EMG envelope outside [0, 1]: {np.min(bad):g}..{np.max(bad):g}")
    if isinstance(A, ActivationCoeff):
        A = A.a_shape
    e = clip(e, 0.0, 1.0)
    small = np.abs(value_of(A)) < A_EPS
    a_safe = where(small, 1.0, A)  # keep the dead branch away from 0/0
    full = (exp(a_safe * e) - 1.0) / (exp(a_safe) - 1.0)
    return where(small, e, full)


# -- rigid-tendon geometry -------------------------------------------------------

def _fiber_length_from_lmt(lmt, params):
    """Closed-form rigid-tendon fiber length, with the slack-margin check.

    Constant muscle thickness w = l0m sin(phi0) and an inextensible tendon
    (lt = lst) give lm = sqrt((lmt - lst)^2 + w^2).
    """
    margin = value_of(lmt) - value_of(params.lst)
    if np.any(margin <= 0.0):
        raise GeometryError(
            f"{params.name}: musculotendon length <= tendon slack length "
            f"(worst margin {np.min(margin):.6g} m)"
        )
    w = params.l0m * sin(params.phi0)
    return sqrt((lmt - params.lst) ** 2 + w * w)


def _geometry_from_lmt(lmt, params):
    """(lm, phi) from a musculotendon length; phi = asin(w / lm)."""
    lm = _fiber_length_from_lmt(lmt, params)
    w = params.l0m * sin(params.phi0)
    phi = asin_clamped(w / lm)
    return lm, phi


def fiber_geometry(q, params):
    """Return (lm, phi) at joint angle q [rad]; raises GeometryError if lmt(q) <= lst."""
    return _geometry_from_lmt(poly_val(params.mt_length_poly, q), params)


def fiber_velocity(q, qdot, params):
    """Fiber lengthening velocity [m/s] (shortening negative).

    Chain rule on the closed-form fiber length:
    vm = (lmt - lst) * (d lmt / d q) * qdot / lm.
    """
    lmt = poly_val(params.mt_length_poly, q)
    lm, _ = _geometry_from_lmt(lmt, params)
    dlmt = poly_der_val(params.mt_length_poly, q)
    return (lmt - params.lst) * dlmt * qdot / lm


# -- force-length / force-velocity curves ----------------------------------------

def force_length_active(lbar):
    """Active force-length curve: Gaussian around the optimal length."""
    return exp(-((lbar - 1.0) ** 2) / F_A_WIDTH)


def force_length_passive(lbar):
    """Passive force-length curve: zero when slack, normalized exponential in stretch."""
    stretched = value_of(lbar) > 1.0
    # Evaluate the exponential on the stretched branch only; it is finite
    # everywhere but the gradient must not leak into the slack branch.
    lb = clip_lower(lbar, 1.0)
    f = (exp(K_PASSIVE * (lb - 1.0) / EPS_PASSIVE) - 1.0) / (np.exp(K_PASSIVE) - 1.0)
    return where(stretched, f, 0.0)


def force_velocity(vbar):
    """Force-velocity curve of the contractile element.

    Shortening hyperbola (zero at vbar = -1, one at vbar = 0) and a rational
    lengthening branch saturating at F_LEN, C1-matched at vbar = 0.  Each
    branch is evaluated on inputs clipped to its own domain so the dead
    branch cannot produce singular values.
    """
    lengthening = value_of(vbar) >= 0.0
    v_short = clip(vbar, -1.0, 0.0)
    f_short = (1.0 + v_short) / (1.0 - v_short / A_F)
    v_len = clip_lower(vbar, 0.0)
    f_len = (F_LEN * v_len + _B_LEN) / (v_len + _B_LEN)
    return where(lengthening, f_len, f_short)


# -- assembled musculotendon force ------------------------------------------------

def muscle_force(q, qdot, a, params):
    """Musculotendon force [N] along the tendon at (q, qdot) with activation a.

    F = f0m * (a * fv(vbar) * fa(lbar) + fp(lbar)) * cos(phi).  The pennation
    cosine comes from the projection identity cos(phi) = (lmt - lst) / lm,
    which equals cos(asin(w / lm)) without the two transcendental calls.
    """
    lmt = poly_val(params.mt_length_poly, q)
    lm = _fiber_length_from_lmt(lmt, params)
    stretch = (lmt - params.lst) / lm
    lbar = lm / params.l0m
    vbar = stretch * poly_der_val(params.mt_length_poly, q) * qdot / params.v0
    active = a * force_velocity(vbar) * force_length_active(lbar)
    return params.f0m * (active + force_length_passive(lbar)) * stretch


def moment_arm(q, params):
    """Moment arm r(q) [m] about the joint.

    Tendon-excursion principle r = -d lmt / d q, which keeps the torque
    consistent with the geometry; an explicit ``moment_arm_poly`` on the
    params takes precedence when provided.
    """
    if params.moment_arm_poly is not None:
        return poly_val(params.moment_arm_poly, q)
    return -poly_der_val(params.mt_length_poly, q)


def muscle_state(q, qdot, e, A, params):
    """Convenience bundle of the instantaneous muscle state (plain numbers only)."""
    lm, phi = fiber_geometry(q, params)
    vm = fiber_velocity(q, qdot, params)
    return MuscleState(
        lm=_scalar(lm),
        phi=_scalar(phi),
        vm=_scalar(vm),
        activation=_scalar(activation(e, A)),
    )
