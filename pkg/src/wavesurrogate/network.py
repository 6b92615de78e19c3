"""Fully connected tanh network with exact input derivatives up to second order.

The network maps ``x = (t, xi)`` to a scalar.  Besides the value, the forward
pass propagates first and second derivatives with respect to ``t`` and ``xi``
through every layer (a truncated Taylor / hyper-dual style propagation); the
backward pass accumulates parameter gradients of any linear combination of
those five output scalars.  The mixed derivative is never formed.

Parameters live in one flat vector ``theta``; per layer the weight matrix
(``fan_out x fan_in``, row-major) is followed by the bias vector.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np

DEFAULT_LAYER_SIZES = (2, 20, 20, 20, 20, 20, 1)

# value, d/dt, d/dxi, d2/dt2, d2/dxi2
CHANNELS = ("value", "d_t", "d_xi", "d_tt", "d_xixi")


def n_parameters(layer_sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass
class NetworkParams:
    theta: np.ndarray
    layer_sizes: tuple = DEFAULT_LAYER_SIZES

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if len(self.layer_sizes) < 2 or self.layer_sizes[0] != 2 or self.layer_sizes[-1] != 1:
            raise ValueError(f"layer sizes must map 2 inputs to 1 output, got {self.layer_sizes}")
        expected = n_parameters(self.layer_sizes)
        if self.theta.shape != (expected,):
            raise ValueError(f"theta must have {expected} entries, got shape {self.theta.shape}")

    @property
    def n_theta(self) -> int:
        return self.theta.size

    def layers(self):
        """Return ``[(W, b), ...]`` as views into ``theta``."""
        out = []
        offset = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = self.theta[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
            offset += fan_in * fan_out
            b = self.theta[offset:offset + fan_out]
            offset += fan_out
            out.append((w, b))
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.theta.copy(), self.layer_sizes)


def init(seed: int, layer_sizes: Sequence[int] = DEFAULT_LAYER_SIZES) -> NetworkParams:
    """Truncated Xavier initialization: normal weights, redrawn beyond 2 std; zero biases."""
    rng = np.random.default_rng(seed)
    layer_sizes = tuple(layer_sizes)
    theta = np.zeros(n_parameters(layer_sizes))
    offset = 0
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        w = rng.standard_normal(fan_in * fan_out)
        bad = np.abs(w) > 2.0
        while bad.any():
            w[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(w) > 2.0
        theta[offset:offset + w.size] = std * w
        offset += fan_in * fan_out + fan_out
    return NetworkParams(theta, layer_sizes)


@dataclass
class EvalResult:
    value: np.ndarray
    d_t: np.ndarray
    d_xi: np.ndarray
    d_tt: np.ndarray
    d_xixi: np.ndarray
    # channel name -> (n_points, n_theta) parameter Jacobian
    param_grads: Optional[dict] = None

    def __getitem__(self, i) -> "EvalResult":
        grads = None
        if self.param_grads is not None:
            grads = {k: v[i] for k, v in self.param_grads.items()}
        return EvalResult(self.value[i], self.d_t[i], self.d_xi[i], self.d_tt[i],
                          self.d_xixi[i], grads)


class Workspace:
    """Preallocated buffers for repeated passes over batches of ``n`` points.

    Reusing one workspace keeps the training loop free of large allocations.
    A cache produced with a workspace is only valid until the next forward
    pass that uses the same workspace.
    """

    def __init__(self, layer_sizes: Sequence[int], n: int, derivatives: bool = True):
        self.layer_sizes = tuple(layer_sizes)
        self.n = n
        self.derivatives = derivatives
        widths = self.layer_sizes[1:]
        self.z = [np.empty((w, n)) for w in widths]
        self.A = [np.empty((w, n)) for w in widths[:-1]]
        self.S1 = [np.empty((w, n)) for w in widths[:-1]]
        self.x = np.empty((2, n))
        if derivatives:
            self.zT = [np.empty((w, 4, n)) for w in widths]
            self.S2 = [np.empty((w, n)) for w in widths[:-1]]
            self.T = [np.empty((w, 4, n)) for w in widths[:-1]]
            self.input_tangents = _input_tangents(n)
        wmax = max(self.layer_sizes)
        # two ping-pong sets of adjoint buffers for the backward sweep
        self.g = [np.empty((wmax, n)) for _ in range(2)]
        self.gT = [np.empty((wmax, 4, n)) for _ in range(2)] if derivatives else None
        self.gs = [np.empty((wmax, n)) for _ in range(2)]
        self.gsT = [np.empty((wmax, 4, n)) for _ in range(2)] if derivatives else None


class _Cache:
    """Forward intermediates of one batch, stored feature-major: ``(width, n)``.

    Tangent channels (d_t, d_xi, d_tt, d_xixi) are stacked as ``(width, 4, n)``.
    """

    __slots__ = ("inputs", "hidden", "outputs", "derivatives", "n", "workspace")

    def __init__(self):
        self.inputs = []    # per layer: (a, tangents) fed into that layer
        self.hidden = []    # per hidden layer: (A, S1, S2, zT)
        self.outputs = None
        self.derivatives = True
        self.n = 0
        self.workspace = None


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, 2)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {x.shape}")
    return x


def _input_tangents(n: int) -> np.ndarray:
    tangents = np.zeros((2, 4, n))
    tangents[0, 0] = 1.0
    tangents[1, 1] = 1.0
    return tangents


def forward(params: NetworkParams, x, derivatives: bool = True,
            workspace: Optional[Workspace] = None) -> _Cache:
    """Run the network on ``x`` of shape ``(n, 2)`` and keep what the backward pass needs.

    With ``derivatives=False`` only the value channel is propagated.
    """
    x = _as_points(x)
    n = x.shape[0]
    if workspace is None:
        workspace = Workspace(params.layer_sizes, n, derivatives)
    elif (workspace.n != n or workspace.layer_sizes != params.layer_sizes
          or (derivatives and not workspace.derivatives)):
        raise ValueError("workspace does not match the batch or network")
    ws = workspace
    layers = params.layers()
    cache = _Cache()
    cache.derivatives = derivatives
    cache.n = n
    cache.workspace = ws
    a = ws.x
    a[...] = x.T
    tangents = ws.input_tangents if derivatives else None
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        cache.inputs.append((a, tangents))
        z = np.matmul(w, a, out=ws.z[k])
        z += b[:, None]
        if derivatives:
            zT = ws.zT[k]
            np.matmul(w, tangents.reshape(w.shape[1], 4 * n), out=zT.reshape(w.shape[0], 4 * n))
        if k == last:
            if derivatives:
                cache.outputs = (z[0], zT[0, 0], zT[0, 1], zT[0, 2], zT[0, 3])
            else:
                cache.outputs = (z[0],)
            break
        A = np.tanh(z, out=ws.A[k])
        if derivatives:
            _tanh_tangents(A, zT, ws.S1[k], ws.S2[k], ws.T[k])
            tangents = ws.T[k]
            cache.hidden.append((A, ws.S1[k], ws.S2[k], zT))
        else:
            S1 = ws.S1[k]
            np.multiply(A, A, out=S1)
            np.subtract(1.0, S1, out=S1)
            cache.hidden.append((A, S1, None, None))
        a = A
    return cache


def backward(params: NetworkParams, cache: _Cache, seeds: dict, per_sample: bool = False) -> np.ndarray:
    """Gradient w.r.t. ``theta`` of ``sum_c sum_n seeds[c][n] * channel_c(x_n)``.

    ``seeds`` maps channel names to per-point adjoints (missing channels are
    zero).  With ``per_sample=True`` the result has shape ``(n, n_theta)`` and
    holds the per-point Jacobian rows instead of their sum.
    """
    layers = params.layers()
    n = cache.n
    ws = cache.workspace
    if not cache.derivatives and any(seeds.get(c) is not None for c in CHANNELS[1:]):
        raise ValueError("derivative seeds need a forward pass with derivatives=True")

    def seed(c, out):
        s = seeds.get(c)
        if s is None:
            out[...] = 0.0
        else:
            out[...] = s

    gz = ws.g[0][:1]
    seed("value", gz[0])
    gzT = None
    if cache.derivatives:
        gzT = ws.gT[0][:1]
        for c, name in enumerate(CHANNELS[1:]):
            seed(name, gzT[0, c])

    grad = np.zeros((n, params.n_theta) if per_sample else params.n_theta)
    offset = params.n_theta
    for k in range(len(layers) - 1, -1, -1):
        w, b = layers[k]
        a, tangents = cache.inputs[k]
        fan_out, fan_in = w.shape
        offset -= w.size + b.size
        if per_sample:
            gw = gz.T[:, :, None] * a.T[:, None, :]
            if gzT is not None:
                gw = gw + np.einsum("ocn,icn->noi", gzT, tangents)
            grad[:, offset:offset + w.size] = gw.reshape(n, -1)
            grad[:, offset + w.size:offset + w.size + b.size] = gz.T
        else:
            gw = gz @ a.T
            if gzT is not None:
                gw += gzT.reshape(fan_out, 4 * n) @ tangents.reshape(fan_in, 4 * n).T
            grad[offset:offset + w.size] = gw.ravel()
            grad[offset + w.size:offset + w.size + b.size] = gz.sum(axis=1)
        if k == 0:
            break
        slot = k % 2
        gA = np.matmul(w.T, gz, out=ws.gs[slot][:fan_in])
        gT = None
        if gzT is not None:
            gT = ws.gsT[slot][:fan_in]
            np.matmul(w.T, gzT.reshape(fan_out, 4 * n), out=gT.reshape(fan_in, 4 * n))
        out = ws.g[slot][:fan_in]
        outT = None if gT is None else ws.gT[slot][:fan_in]
        gz, gzT = _tanh_backward(cache.hidden[k - 1], gA, gT, out, outT)
    return grad


def _tanh_backward(hidden, gA, gT, out, outT):
    A, S1, S2, zT = hidden
    if gT is None:
        return np.multiply(gA, S1, out=out), None
    _tanh_tangents_adjoint(A, S1, S2, zT, gA, gT, out, outT)
    return out, outT


# The two kernels below fuse the elementwise work of one tanh layer; numpy's
# tanh stays outside since it is vectorised and much faster than libm's.

@numba.njit(cache=True)
def _tanh_tangents(A, zT, S1, S2, T):
    width, n = A.shape
    for i in range(width):
        for j in range(n):
            a = A[i, j]
            s1 = 1.0 - a * a
            s2 = -2.0 * a * s1
            S1[i, j] = s1
            S2[i, j] = s2
            zt = zT[i, 0, j]
            zx = zT[i, 1, j]
            T[i, 0, j] = s1 * zt
            T[i, 1, j] = s1 * zx
            T[i, 2, j] = s1 * zT[i, 2, j] + s2 * (zt * zt)
            T[i, 3, j] = s1 * zT[i, 3, j] + s2 * (zx * zx)


@numba.njit(cache=True)
def _tanh_tangents_adjoint(A, S1, S2, zT, gA, gT, gz, gzT):
    width, n = A.shape
    for i in range(width):
        for j in range(n):
            a = A[i, j]
            s1 = S1[i, j]
            s2 = S2[i, j]
            zt = zT[i, 0, j]
            zx = zT[i, 1, j]
            gt = gT[i, 0, j]
            gx = gT[i, 1, j]
            gtt = gT[i, 2, j]
            gxx = gT[i, 3, j]
            gzT[i, 0, j] = s1 * gt + 2.0 * s2 * zt * gtt
            gzT[i, 1, j] = s1 * gx + 2.0 * s2 * zx * gxx
            gzT[i, 2, j] = s1 * gtt
            gzT[i, 3, j] = s1 * gxx
            gs1 = gt * zt + gx * zx + gtt * zT[i, 2, j] + gxx * zT[i, 3, j]
            gs2 = gtt * zt * zt + gxx * zx * zx
            # dS1/dz = S2, dS2/dz = (6 a^2 - 2) S1
            gz[i, j] = gA[i, j] * s1 + gs1 * s2 + gs2 * (6.0 * a * a - 2.0) * s1


def predict(params: NetworkParams, x) -> np.ndarray:
    """Network value only, shape ``(n,)``."""
    return forward(params, x, derivatives=False).outputs[0]


def evaluate_batch(params: NetworkParams, x, need_param_grads: bool = False) -> EvalResult:
    cache = forward(params, x, derivatives=True)
    value, d_t, d_xi, d_tt, d_xixi = (np.array(c) for c in cache.outputs)
    grads = None
    if need_param_grads:
        grads = {c: backward(params, cache, {c: 1.0}, per_sample=True) for c in CHANNELS}
    return EvalResult(value, d_t, d_xi, d_tt, d_xixi, grads)


def evaluate(params: NetworkParams, x, need_param_grads: bool = False) -> EvalResult:
    """Single point ``x = (t, xi)``; fields are scalars (gradients are 1-D)."""
    return evaluate_batch(params, np.reshape(np.asarray(x, dtype=np.float64), (1, 2)),
                          need_param_grads)[0]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n_theta: int, learning_rate: float = 1e-3) -> "AdamState":
        return cls(np.zeros(n_theta), np.zeros(n_theta), 0, learning_rate)


def adam_step(state: AdamState, params: NetworkParams, grad) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected ADAM update; returns new params and state (inputs untouched)."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.theta.shape:
        raise ValueError(f"gradient has shape {grad.shape}, expected {params.theta.shape}")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise FloatingPointError(f"non-finite gradient entry at index {bad[0]}")
    step = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    theta = params.theta - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, step, state.learning_rate, state.beta1, state.beta2, state.eps)
    return NetworkParams(theta, params.layer_sizes), new_state


_CKPT_MAGIC = b"WVNN"
_CKPT_VERSION = 1


def save_checkpoint(path, params: NetworkParams, state: Optional[AdamState] = None) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC + bytes([_CKPT_VERSION]))
        fh.write(struct.pack("<Q", len(params.layer_sizes)))
        fh.write(struct.pack(f"<{len(params.layer_sizes)}Q", *params.layer_sizes))
        fh.write(params.theta.astype("<f8").tobytes())
        if state is not None:
            fh.write(state.m.astype("<f8").tobytes())
            fh.write(state.v.astype("<f8").tobytes())
            fh.write(struct.pack("<Q", state.step_count))


def load_checkpoint(path) -> tuple[NetworkParams, Optional[AdamState]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _CKPT_MAGIC or data[4] != _CKPT_VERSION:
        raise ValueError(f"{path}: not a version-{_CKPT_VERSION} WVNN checkpoint")
    pos = 5
    (n_layers,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    sizes = struct.unpack_from(f"<{n_layers}Q", data, pos)
    pos += 8 * n_layers
    n = n_parameters(sizes)
    theta = np.frombuffer(data, "<f8", n, pos).astype(np.float64)
    pos += 8 * n
    params = NetworkParams(theta, sizes)
    state = None
    if pos < len(data):
        m = np.frombuffer(data, "<f8", n, pos).astype(np.float64)
        v = np.frombuffer(data, "<f8", n, pos + 8 * n).astype(np.float64)
        (step,) = struct.unpack_from("<Q", data, pos + 16 * n)
        state = AdamState(m, v, int(step))
    return params, state
