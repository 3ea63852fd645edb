"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records every operation applied to its ``Var`` nodes; ``Tape.backward``
replays the records in reverse creation order (which is a reverse topological
order by construction) and accumulates gradients into per-node buffers.

The math functions in this module (``exp``, ``sin``, ``where`` ...) dispatch on
their argument: a ``Var`` produces a recorded tape node, anything else falls
through to plain numpy. Physics code written against these functions therefore
runs both as fast numpy (simulation) and as a differentiable graph (training).

Rank <= 2 arrays, float64 only, single scalar root per backward pass.
"""

from __future__ import annotations

import builtins

import numpy as np

DIV_GUARD = 1e-12
ASIN_CLAMP = 1.0 - 1e-12


class NumericalDomainError(ArithmeticError):
    """Raised when an operand leaves the numerically safe domain of a primitive."""


class Tape:
    """Operation recorder. One tape per differentiation; confined to one thread."""

    def __init__(self):
        self._records = []  # (out_id, ((in_id, pullback), ...))
        self._grads = {}
        self._next_id = 0

    def var(self, value) -> "Var":
        """Create a leaf variable on this tape."""
        return Var(self, value)

    def _new_id(self) -> int:
        i = self._next_id
        self._next_id = i + 1
        return i

    def _record(self, out_id, inputs):
        self._records.append((out_id, inputs))

    def backward(self, loss: "Var") -> None:
        """Accumulate d(loss)/d(node) for every node reachable from ``loss``.

        ``loss`` must be scalar. Re-running on an unmodified tape recomputes
        the same gradients from scratch (deterministic, idempotent).
        """
        if loss.tape is not self:
            raise ValueError("loss does not belong to this tape")
        if loss.value.size != 1:
            raise ValueError("backward requires a scalar loss")
        grads = {loss._id: np.ones_like(loss.value)}
        for out_id, inputs in reversed(self._records):
            g = grads.get(out_id)
            if g is None:
                continue
            for in_id, pull in inputs:
                contrib = pull(g)
                acc = grads.get(in_id)
                grads[in_id] = contrib if acc is None else acc + contrib
        self._grads = grads

    def grad(self, v: "Var") -> np.ndarray:
        """Gradient of the last backward() root w.r.t. ``v`` (zeros if unreached)."""
        g = self._grads.get(v._id)
        if g is None:
            return np.zeros_like(v.value)
        return _unbroadcast(g, v.value.shape)


class Var:
    """A node in a recording tape: immutable shape, float64 value."""

    __slots__ = ("tape", "value", "_id")

    # Make every ndarray-left expression (``array * var`` etc.) defer to the
    # reflected operators below instead of building an object array.
    __array_ufunc__ = None

    def __init__(self, tape: Tape, value):
        self.tape = tape
        self.value = np.asarray(value, dtype=np.float64)
        if self.value.ndim > 2:
            raise ValueError(f"rank {self.value.ndim} > 2 not supported")
        self._id = tape._new_id()

    @property
    def grad(self) -> np.ndarray:
        return self.tape.grad(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(id={self._id}, value={self.value!r})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, lambda a, b: a + b,
                       lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, lambda a, b: a - b,
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return _binary(self, other, lambda a, b: b - a,
                       lambda g, a, b: -g, lambda g, a, b: g)

    def __mul__(self, other):
        return _binary(self, other, lambda a, b: a * b,
                       lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        _check_divisor(value_of(other))
        return _binary(self, other, lambda a, b: a / b,
                       lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b))

    def __rtruediv__(self, other):
        _check_divisor(self.value)
        return _binary(self, other, lambda a, b: b / a,
                       lambda g, a, b: -g * b / (a * a), lambda g, a, b: g / a)

    def __neg__(self):
        return _unary(self, -self.value, lambda g: -g)

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("exponent must be a plain number")
        p = float(p)
        x = self.value
        return _unary(self, x ** p, lambda g: g * p * x ** (p - 1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        x = self.value
        out = x[idx]

        def pull(g):
            buf = np.zeros_like(x)
            buf[idx] = g
            return buf

        v = Var(self.tape, out)
        self.tape._record(v._id, ((self._id, pull),))
        return v

    # Comparisons act on values: handy for invariant checks on realized params.
    def __lt__(self, other):
        return self.value < value_of(other)

    def __le__(self, other):
        return self.value <= value_of(other)

    def __gt__(self, other):
        return self.value > value_of(other)

    def __ge__(self, other):
        return self.value >= value_of(other)

    def __float__(self):
        return float(self.value)


# -- plumbing ----------------------------------------------------------------

def value_of(x):
    """Underlying ndarray of a Var, or the input coerced to float64."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverses numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_divisor(b):
    if np.min(np.abs(b)) < DIV_GUARD:
        raise NumericalDomainError(
            f"division by magnitude < {DIV_GUARD} (min |denominator| = {np.min(np.abs(b)):.3e})")


def _unary(x: Var, out_value, pull):
    v = Var(x.tape, out_value)
    sh = x.value.shape
    x.tape._record(v._id, ((x._id, lambda g: _unbroadcast(pull(g), sh)),))
    return v


def _binary(x, y, fwd, pull_x, pull_y):
    xv, yv = value_of(x), value_of(y)
    tape = x.tape if isinstance(x, Var) else y.tape
    v = Var(tape, fwd(xv, yv))
    inputs = []
    if isinstance(x, Var):
        inputs.append((x._id, lambda g: _unbroadcast(pull_x(g, xv, yv), xv.shape)))
    if isinstance(y, Var):
        inputs.append((y._id, lambda g: _unbroadcast(pull_y(g, xv, yv), yv.shape)))
    tape._record(v._id, tuple(inputs))
    return v


# -- primitive set -------------------------------------------------------------

def exp(x):
    if isinstance(x, Var):
        out = np.exp(x.value)
        return _unary(x, out, lambda g: g * out)
    return np.exp(x)


def sin(x):
    if isinstance(x, Var):
        xv = x.value
        return _unary(x, np.sin(xv), lambda g: g * np.cos(xv))
    return np.sin(x)


def cos(x):
    if isinstance(x, Var):
        xv = x.value
        return _unary(x, np.cos(xv), lambda g: -g * np.sin(xv))
    return np.cos(x)


def sqrt(x):
    if isinstance(x, Var):
        if np.any(x.value < 0.0):
            raise NumericalDomainError("sqrt of negative value")
        out = np.sqrt(x.value)
        _check_divisor(np.maximum(out, 0.0) * 2.0)
        return _unary(x, out, lambda g: g / (2.0 * out))
    return np.sqrt(x)


def asin_clamped(x):
    """arcsin with the argument clipped to +/-(1 - 1e-12); zero gradient when clipped."""
    if isinstance(x, Var):
        arg = np.clip(x.value, -ASIN_CLAMP, ASIN_CLAMP)
        inside = (x.value > -ASIN_CLAMP) & (x.value < ASIN_CLAMP)
        d = inside / np.sqrt(1.0 - arg * arg)
        return _unary(x, np.arcsin(arg), lambda g: g * d)
    return np.arcsin(np.clip(x, -ASIN_CLAMP, ASIN_CLAMP))


def relu(x):
    """max(x, 0); subgradient at 0 is 0."""
    if isinstance(x, Var):
        mask = x.value > 0.0
        return _unary(x, x.value * mask, lambda g: g * mask)
    return np.maximum(x, 0.0)


def clip_lower(x, lo):
    """max(x, lo); zero gradient at and below the floor."""
    if isinstance(x, Var):
        mask = x.value > lo
        return _unary(x, np.maximum(x.value, lo), lambda g: g * mask)
    return np.maximum(x, lo)


def clip(x, lo, hi):
    """Two-sided clamp; gradient 1 strictly inside, 0 outside."""
    if isinstance(x, Var):
        mask = (x.value > lo) & (x.value < hi)
        return _unary(x, np.clip(x.value, lo, hi), lambda g: g * mask)
    return np.clip(x, lo, hi)


def square(x):
    if isinstance(x, Var):
        xv = x.value
        return _unary(x, xv * xv, lambda g: g * (2.0 * xv))
    return np.square(x)


def where(mask, a, b):
    """Select by a plain boolean mask; gradient flows only into the taken branch."""
    mask = np.asarray(mask, dtype=bool)
    av, bv = value_of(a), value_of(b)
    out = np.where(mask, av, bv)
    if not isinstance(a, Var) and not isinstance(b, Var):
        return out
    tape = a.tape if isinstance(a, Var) else b.tape
    v = Var(tape, out)
    inputs = []
    if isinstance(a, Var):
        inputs.append((a._id, lambda g: _unbroadcast(g * mask, av.shape)))
    if isinstance(b, Var):
        inputs.append((b._id, lambda g: _unbroadcast(g * ~mask, bv.shape)))
    tape._record(v._id, tuple(inputs))
    return v


def vsum(x):
    """Sum of all elements, as a scalar."""
    if isinstance(x, Var):
        sh = x.value.shape
        return _unary(x, np.asarray(x.value.sum()), lambda g: np.broadcast_to(g, sh))
    return np.asarray(x, dtype=np.float64).sum()


def mean(x):
    if isinstance(x, Var):
        n = x.value.size
        sh = x.value.shape
        return _unary(x, np.asarray(x.value.mean()),
                      lambda g: np.broadcast_to(g / n, sh))
    return np.asarray(x, dtype=np.float64).mean()


def matmul(a, b):
    """2-D @ 2-D matrix product."""
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul requires rank-2 operands")
    if not isinstance(a, Var) and not isinstance(b, Var):
        return av @ bv
    tape = a.tape if isinstance(a, Var) else b.tape
    v = Var(tape, av @ bv)
    inputs = []
    if isinstance(a, Var):
        inputs.append((a._id, lambda g: g @ bv.T))
    if isinstance(b, Var):
        inputs.append((b._id, lambda g: av.T @ g))
    tape._record(v._id, tuple(inputs))
    return v


def concat(parts, axis=0):
    """Concatenate a sequence of Vars/arrays along ``axis``."""
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if not builtins.any(isinstance(p, Var) for p in parts):
        return out
    tape = next(p.tape for p in parts if isinstance(p, Var))
    v = Var(tape, out)
    inputs = []
    offset = 0
    for p, pv in zip(parts, vals):
        n = pv.shape[axis]
        if isinstance(p, Var):
            sl = [slice(None)] * pv.ndim
            sl[axis] = slice(offset, offset + n)
            sl = tuple(sl)
            inputs.append((p._id, lambda g, sl=sl: g[sl]))
        offset += n
    tape._record(v._id, tuple(inputs))
    return v
