"""Independent finite-difference oracles shared by unit and acceptance tests."""
import numpy as np

from wavesurrogate import network as nw

STENCIL_1 = ((-2, 1 / 12), (-1, -2 / 3), (1, 2 / 3), (2, -1 / 12))
STENCIL_2 = ((-2, -1 / 12), (-1, 4 / 3), (0, -5 / 2), (1, 4 / 3), (2, -1 / 12))


def within(actual, expected, abs_tol=1e-6, rel_tol=1e-5):
    actual = np.asarray(actual)
    expected = np.asarray(expected)
    return np.abs(actual - expected) <= np.maximum(abs_tol, rel_tol * np.abs(expected))


def fd_input_derivatives(params, x, h=1e-4):
    """4th-order central differences of the network value in t and xi."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = {}
    for axis, (first, second) in enumerate((("d_t", "d_tt"), ("d_xi", "d_xixi"))):
        e = np.zeros(2)
        e[axis] = h
        f = {k: nw.predict(params, x + k * e) for k in (-2, -1, 0, 1, 2)}
        out[first] = sum(c * f[k] for k, c in STENCIL_1) / h
        out[second] = sum(c * f[k] for k, c in STENCIL_2) / h ** 2
    return out


def channels(params, x):
    r = nw.evaluate_batch(params, x)
    return np.stack([r.value, r.d_t, r.d_xi, r.d_tt, r.d_xixi])


def fd_param_jacobian(params, x, coords=None, h=1e-4):
    """``(5, n_points, len(coords))`` FD Jacobian of all five channels w.r.t. theta."""
    if coords is None:
        coords = range(params.n_theta)
    cols = []
    for j in coords:
        acc = 0.0
        for k, c in STENCIL_1:
            theta = params.theta.copy()
            theta[j] += k * h
            acc = acc + c * channels(nw.NetworkParams(theta, params.layer_sizes), x)
        cols.append(acc / h)
    return np.stack(cols, axis=-1)
