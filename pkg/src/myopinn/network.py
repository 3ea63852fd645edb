"""Feed-forward network, Adam optimizer, and checkpoint I/O.

The regression network maps one sample ``(emg_1..emg_N, t_norm)`` to
``(q_hat, F_hat_1..F_hat_N)``: four fully connected blocks (linear -> ReLU ->
inverted dropout) feed a linear head whose N force outputs pass through a
final ReLU (forces cannot be negative); the angle output stays linear.

All parameters live in one contiguous float64 vector (``NetworkParams.flat``)
with per-layer views, so the optimizer and the per-sample gradient path work
on flat buffers without repacking.  Three forward implementations share the
same arithmetic:

* :func:`forward`       -- reference single-sample path (train or eval),
* :func:`predict`       -- vectorized eval over a whole series,
* :func:`forward_on_tape` -- tape-recorded batched pass for physics losses.
"""

import json
import math
import pathlib

import numpy as np
from scipy.linalg.blas import daxpy as _axpy

from . import autodiff as ad

N_HIDDEN_BLOCKS = 4
HIDDEN_DEFAULT = 128
DROPOUT_DEFAULT = 0.3

CHECKPOINT_VERSION = 1


class NetworkParams:
    """Weights and biases of the regression network, in one flat vector.

    ``weights[i]`` is stored ``(fan_in, fan_out)`` so a forward step is
    ``x @ W + b``.  Weight entries are initialized uniform on
    ``+/- sqrt(6 / fan_in)`` from ``numpy.random.default_rng(seed)``
    (layer by layer, in order); biases start at zero.
    """

    def __init__(self, n_muscles, hidden=HIDDEN_DEFAULT, dropout=DROPOUT_DEFAULT, seed=0):
        if n_muscles < 1:
            raise ValueError("n_muscles must be >= 1")
        if hidden < 1:
            raise ValueError("hidden width must be >= 1")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self.n_muscles = int(n_muscles)
        self.hidden = int(hidden)
        self.dropout = float(dropout)
        self.seed = int(seed)
        d = self.n_muscles + 1
        self.layer_sizes = (d,) + (self.hidden,) * N_HIDDEN_BLOCKS + (d,)

        blocks = []
        offset = 0
        for i in range(N_HIDDEN_BLOCKS + 1):
            fan_in, fan_out = self.layer_sizes[i], self.layer_sizes[i + 1]
            blocks.append((f"W{i}", slice(offset, offset + fan_in * fan_out), (fan_in, fan_out)))
            offset += fan_in * fan_out
            blocks.append((f"b{i}", slice(offset, offset + fan_out), (fan_out,)))
            offset += fan_out
        self.blocks = tuple(blocks)
        self.flat = np.zeros(offset)
        self.weights, self.biases = self.views_of(self.flat)

        rng = np.random.default_rng(self.seed)
        for i, w in enumerate(self.weights):
            lim = np.sqrt(6.0 / self.layer_sizes[i])
            w[:] = rng.uniform(-lim, lim, size=w.shape)

    @property
    def n_params(self):
        return self.flat.size

    def views_of(self, buf):
        """Per-layer (weights, biases) views into a buffer shaped like ``flat``."""
        if buf.shape != self.flat.shape:
            raise ValueError(f"buffer length {buf.size} != parameter count {self.flat.size}")
        ws, bs = [], []
        for name, sl, shape in self.blocks:
            view = buf[sl].reshape(shape)
            (ws if name.startswith("W") else bs).append(view)
        return ws, bs

    def copy(self):
        """Deep copy (same architecture, duplicated parameter storage)."""
        dup = NetworkParams(self.n_muscles, self.hidden, self.dropout, self.seed)
        dup.flat[:] = self.flat
        return dup


def _assemble_input(emg_t, t_norm, params):
    emg_t = np.asarray(emg_t, dtype=np.float64)
    if emg_t.shape != (params.n_muscles,):
        raise ValueError(f"expected {params.n_muscles} EMG channels, got shape {emg_t.shape}")
    x = np.empty(params.n_muscles + 1)
    x[:-1] = emg_t
    x[-1] = t_norm
    if not np.isfinite(x).all():
        raise ValueError("non-finite network input")
    return x


def forward(emg_t, t_norm, params, mode="eval", rng=None):
    """One sample through the network; returns ``(q_hat, f_hat)``.

    ``mode="train"`` applies inverted dropout after every hidden ReLU and
    needs ``rng`` (four ``rng.random(hidden)`` draws, one per block, in
    order).  ``mode="eval"`` is a pure deterministic map.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode needs an rng for dropout")
    x = _assemble_input(emg_t, t_norm, params)
    keep_scale = 1.0 / (1.0 - params.dropout)
    a = x
    for i in range(N_HIDDEN_BLOCKS):
        a = np.maximum(a @ params.weights[i] + params.biases[i], 0.0)
        if mode == "train" and params.dropout > 0.0:
            a = a * (rng.random(a.shape) >= params.dropout) * keep_scale
    y = a @ params.weights[-1] + params.biases[-1]
    return float(y[0]), np.maximum(y[1:], 0.0)


def predict(params, emg, t_norm):
    """Vectorized eval-mode forward over a series.

    ``emg`` is (T, N), ``t_norm`` is (T,); returns ``(q_hat (T,), f_hat (T, N))``.
    """
    emg = np.asarray(emg, dtype=np.float64)
    t_norm = np.asarray(t_norm, dtype=np.float64)
    if emg.ndim != 2 or emg.shape[1] != params.n_muscles:
        raise ValueError(f"emg must be (T, {params.n_muscles}), got {emg.shape}")
    if t_norm.shape != (emg.shape[0],):
        raise ValueError("t_norm length must match emg rows")
    a = np.column_stack([emg, t_norm])
    for i in range(N_HIDDEN_BLOCKS):
        a = np.maximum(a @ params.weights[i] + params.biases[i], 0.0)
    y = a @ params.weights[-1] + params.biases[-1]
    return y[:, 0], np.maximum(y[:, 1:], 0.0)


def epoch_masks(rng, n_samples, params):
    """Pre-scaled dropout masks for ``n_samples`` rows: (T, 4, hidden) floats.

    Entries are 0 (dropped) or 1/(1-p) (kept), ready to multiply onto hidden
    activations.  Returns None when dropout is disabled.
    """
    if params.dropout <= 0.0:
        return None
    keep = rng.random((n_samples, N_HIDDEN_BLOCKS, params.hidden)) >= params.dropout
    return keep * (1.0 / (1.0 - params.dropout))


def forward_on_tape(tape, x_batch, params, masks=None):
    """Batched train/eval forward with the weights as tape leaves.

    ``x_batch`` is a constant (T, N+1) input block; ``masks`` is the
    (T, 4, hidden) array from :func:`epoch_masks` (or None for eval).
    Returns ``(q_hat, f_hat, leaves)`` where ``q_hat``/``f_hat`` are tape
    variables of shape (T,) / (T, N) and ``leaves`` lists one Var per
    parameter block in ``params.blocks`` order (W0, b0, ..., W4, b4).
    """
    x_batch = np.asarray(x_batch, dtype=np.float64)
    if x_batch.ndim != 2 or x_batch.shape[1] != params.n_muscles + 1:
        raise ValueError(f"x_batch must be (T, {params.n_muscles + 1}), got {x_batch.shape}")
    if masks is not None and masks.shape != (x_batch.shape[0], N_HIDDEN_BLOCKS, params.hidden):
        raise ValueError("mask block does not match batch shape")
    leaves = []
    for i in range(N_HIDDEN_BLOCKS + 1):
        leaves.append(tape.var(params.weights[i]))
        leaves.append(tape.var(params.biases[i]))
    a = x_batch
    for i in range(N_HIDDEN_BLOCKS):
        a = ad.relu(ad.matmul(a, leaves[2 * i]) + leaves[2 * i + 1])
        if masks is not None:
            a = a * masks[:, i, :]
    y = ad.matmul(a, leaves[-2]) + leaves[-1]
    return y[:, 0], ad.relu(y[:, 1:]), leaves


def gather_leaf_grads(tape, leaves, params, out):
    """Scatter tape gradients of ``leaves`` into a flat buffer laid out like ``params.flat``."""
    if out.shape != params.flat.shape:
        raise ValueError("gradient buffer has the wrong length")
    for (name, sl, shape), leaf in zip(params.blocks, leaves):
        out[sl] = tape.grad(leaf).ravel()
    return out


def lq_sample_step(params, x, q_target, masks_t, grad_weights, grad_biases):
    """Train-mode forward plus backward of ``(q_hat - q)^2`` for one sample.

    The squared angle error touches only the first head column, so the
    backward pass skips the force head entirely; the caller must hand in
    gradient views (from ``params.views_of``) over a buffer whose force-head
    entries are already zero -- they are never written here.

    ``masks_t`` is the (4, hidden) pre-scaled dropout slice for this sample
    (or None).  Returns ``(q_hat, squared_error)``.
    """
    W, b = params.weights, params.biases
    pre = []
    post = [x]
    a = x
    for i in range(N_HIDDEN_BLOCKS):
        h = a @ W[i] + b[i]
        a = np.maximum(h, 0.0)
        if masks_t is not None:
            a = a * masks_t[i]
        pre.append(h)
        post.append(a)
    w_head = W[-1][:, 0]
    q_hat = float(a @ w_head) + b[-1][0]
    err = q_hat - q_target

    d = 2.0 * err
    grad_biases[-1][0] = d
    np.multiply(post[-1], d, out=grad_weights[-1][:, 0])
    da = d * w_head
    for i in range(N_HIDDEN_BLOCKS - 1, -1, -1):
        if masks_t is not None:
            da = da * masks_t[i]
        dh = da * (pre[i] > 0.0)
        grad_biases[i][:] = dh
        np.multiply.outer(post[i], dh, out=grad_weights[i])
        if i:
            da = W[i] @ dh
    return q_hat, err * err


# -- Adam ------------------------------------------------------------------------


class AdamState:
    """First/second moment accumulators for one flat parameter vector.

    ``blocks`` (optional) is a sequence of ``(name, slice)`` pairs used to
    name the offending parameter block when a non-finite gradient aborts
    the run.
    """

    def __init__(self, n, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, blocks=None):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if lr <= 0.0 or eps <= 0.0:
            raise ValueError("lr and eps must be positive")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.blocks = tuple((name, sl) for name, sl, *_ in blocks) if blocks else None
        self._buf = np.empty(n)

    def describe_nonfinite(self, g):
        bad = ~np.isfinite(g)
        if self.blocks:
            for name, sl in self.blocks:
                if bad[sl].any():
                    return f"block {name}"
        return f"{int(bad.sum())} gradient entries"


def adam_step(grads, params, state):
    """One Adam update with bias correction, in place on ``params``.

    ``params`` is the flat parameter vector, mutated and returned together
    with the advanced state.  A non-finite gradient raises
    ``FloatingPointError`` naming the parameter block before any state is
    touched.

    This sits on the per-sample hot path (one call per training sample), so
    the update is written as a fixed number of allocation-free passes:
    ``g @ g`` doubles as the finiteness screen (NaN/inf propagate into the
    dot product; the exact elementwise check runs only on that slow path)
    and the scaled additions go through BLAS ``axpy``.
    """
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != params.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {params.shape}")
    if not np.isfinite(np.dot(g, g)) and not np.isfinite(g).all():
        raise FloatingPointError(
            f"non-finite gradient in {state.describe_nonfinite(g)} at step {state.t + 1}")
    state.t += 1
    m, v, buf = state.m, state.v, state._buf
    beta1, beta2 = state.beta1, state.beta2
    v *= beta2
    np.multiply(g, g, out=buf)
    _axpy(buf, v, a=1.0 - beta2)
    m *= beta1
    _axpy(g, m, a=1.0 - beta1)
    corr2 = math.sqrt(1.0 - beta2 ** state.t)
    np.sqrt(v, out=buf)
    buf += state.eps * corr2
    np.divide(m, buf, out=buf)
    _axpy(buf, params, a=-state.lr * corr2 / (1.0 - beta1 ** state.t))
    return params, state


# -- checkpointing ----------------------------------------------------------------


def _sidecar_path(path):
    path = pathlib.Path(path)
    return path.with_suffix(".json") if path.suffix == ".npz" else path.parent / (path.name + ".json")


def save_checkpoint(path, params, epoch, extras=None, meta=None):
    """Write the network to ``path`` (.npz) plus a JSON sidecar.

    ``extras`` maps names to additional float arrays stored alongside the
    weights (e.g. raw identified-parameter vectors); ``meta`` merges extra
    JSON-serializable fields into the sidecar.
    """
    path = pathlib.Path(path)
    arrays = {"flat": params.flat}
    for name, arr in (extras or {}).items():
        arrays[f"extra_{name}"] = np.asarray(arr, dtype=np.float64)
    np.savez(path, version=np.asarray(CHECKPOINT_VERSION), **arrays)
    sidecar = {
        "format_version": CHECKPOINT_VERSION,
        "layer_sizes": list(params.layer_sizes),
        "n_muscles": params.n_muscles,
        "hidden": params.hidden,
        "dropout": params.dropout,
        "seed": params.seed,
        "epoch": int(epoch),
        "normalization": {"time": "t / t_end per trial", "emg": "mvc fraction in [0, 1]"},
    }
    sidecar.update(meta or {})
    with open(_sidecar_path(path), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_checkpoint(path):
    """Read a checkpoint; returns ``(params, extras, sidecar)``.

    Raises ``ValueError`` when the binary payload does not match the sidecar
    architecture.
    """
    path = pathlib.Path(path)
    sidecar_file = _sidecar_path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    if not sidecar_file.exists():
        raise FileNotFoundError(f"checkpoint sidecar not found: {sidecar_file}")
    with open(sidecar_file) as fh:
        sidecar = json.load(fh)
    if sidecar.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {sidecar.get('format_version')}")
    with np.load(path) as payload:
        flat = payload["flat"].copy()
        extras = {k[len("extra_"):]: payload[k].copy() for k in payload.files
                  if k.startswith("extra_")}
    params = NetworkParams(sidecar["n_muscles"], sidecar["hidden"],
                           sidecar["dropout"], sidecar["seed"])
    if list(params.layer_sizes) != list(sidecar["layer_sizes"]):
        raise ValueError("sidecar layer_sizes are inconsistent with n_muscles/hidden")
    if flat.shape != params.flat.shape:
        raise ValueError(f"checkpoint holds {flat.size} parameters, "
                         f"architecture needs {params.flat.size}")
    params.flat[:] = flat
    return params, extras, sidecar
