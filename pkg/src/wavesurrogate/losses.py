"""Loss terms, collocation sets and loss weighting schemes.

Every loss comes in two layers: an array-level kernel that maps network
outputs to ``(loss, adjoints)`` and a parameter-level wrapper that runs the
network.  The kernels are what the trainer uses; keeping them separate lets
tests inject synthetic outputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import network as nw
from .analytic import GridFunction, WaveProblem, sample_on_grid, trapezoid_weights

INITIAL_DISPLACEMENT = 0
INITIAL_VELOCITY = 1
LATERAL = 2
BOUNDARY_TAGS = (INITIAL_DISPLACEMENT, INITIAL_VELOCITY, LATERAL)

SCHEMES = ("EQUAL", "LRA", "OPT")
TERMS = ("data", "interior", "boundary")
# points per forward/backward pass; tangent buffers of this size stay in cache
CHUNK = 512


# --------------------------------------------------------------------------
# collocation sets

@dataclass
class BoundarySet:
    points: np.ndarray   # (n, 2) as (t, xi)
    tags: np.ndarray     # (n,) one of BOUNDARY_TAGS
    targets: np.ndarray  # (n,)

    def __len__(self):
        return self.points.shape[0]


@dataclass
class DataGrid:
    """Equidistant space-time data grid with targets and per-time error bounds."""

    t_nodes: np.ndarray
    xi_nodes: np.ndarray
    targets: np.ndarray                # (n_t, n_xi)
    epsilon: Optional[np.ndarray] = None  # (n_t,) L2(Omega_xi) bounds
    length_xi: float = 2.0

    def __post_init__(self):
        self.t_nodes = np.asarray(self.t_nodes, dtype=np.float64)
        self.xi_nodes = np.asarray(self.xi_nodes, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.targets.shape != (self.t_nodes.size, self.xi_nodes.size):
            raise ValueError("targets must have shape (n_t, n_xi)")
        if self.t_nodes.size > 1 and np.any(np.diff(self.t_nodes) <= 0):
            raise ValueError("data-grid times must be strictly increasing")
        if self.epsilon is not None:
            self.epsilon = np.asarray(self.epsilon, dtype=np.float64)
            if self.epsilon.shape != self.t_nodes.shape:
                raise ValueError("need one error bound per data-grid time")
            if np.any(self.epsilon < 0):
                raise ValueError("error bounds must be nonnegative")

    @property
    def size(self) -> int:
        return self.targets.size

    def points(self) -> np.ndarray:
        t, xi = np.meshgrid(self.t_nodes, self.xi_nodes, indexing="ij")
        return np.column_stack([t.ravel(), xi.ravel()])


@dataclass
class CollocationSets:
    interior: np.ndarray
    boundary: BoundarySet
    data: Optional[DataGrid] = None

    @property
    def n_interior(self) -> int:
        return self.interior.shape[0]

    @property
    def n_boundary(self) -> int:
        return len(self.boundary)

    @property
    def n_data(self) -> int:
        return 0 if self.data is None else self.data.size


def interior_points(n: int, rng: np.random.Generator, problem: WaveProblem = WaveProblem()) -> np.ndarray:
    t = rng.uniform(problem.t_min, problem.t_max, n)
    xi = rng.uniform(problem.xi_min, problem.xi_max, n)
    return np.column_stack([t, xi])


def _midpoints(a: float, b: float, n: int) -> np.ndarray:
    return a + (np.arange(n) + 0.5) * (b - a) / n


def boundary_points(n: int, problem: WaveProblem = WaveProblem()) -> BoundarySet:
    """Equidistant initial-displacement, initial-velocity and lateral points, split in thirds."""
    n_disp = n - 2 * (n // 3)
    n_vel = n // 3
    n_lat = n // 3
    xi_disp = _midpoints(problem.xi_min, problem.xi_max, n_disp)
    xi_vel = _midpoints(problem.xi_min, problem.xi_max, n_vel)
    n_left = n_lat - n_lat // 2
    t_left = _midpoints(problem.t_min, problem.t_max, n_left)
    t_right = _midpoints(problem.t_min, problem.t_max, n_lat // 2)
    points = np.concatenate([
        np.column_stack([np.full(n_disp, problem.t_min), xi_disp]),
        np.column_stack([np.full(n_vel, problem.t_min), xi_vel]),
        np.column_stack([t_left, np.full(n_left, problem.xi_min)]),
        np.column_stack([t_right, np.full(t_right.size, problem.xi_max)]),
    ]).reshape(-1, 2)
    tags = np.concatenate([np.full(n_disp, INITIAL_DISPLACEMENT), np.full(n_vel, INITIAL_VELOCITY),
                           np.full(n_lat, LATERAL)]).astype(np.int64)
    targets = np.zeros(n)
    targets[:n_disp] = problem.initial_displacement(xi_disp)
    return BoundarySet(points, tags, targets)


def data_grid_nodes(n_t: int, n_xi: int, problem: WaveProblem = WaveProblem()):
    """Interior data grid: ``t_i = i dt`` for ``i = 1..n_t`` and ``n_xi`` nodes strictly inside the walls."""
    t = problem.t_min + np.arange(1, n_t + 1) * problem.length_t / n_t
    xi = problem.xi_min + np.arange(1, n_xi + 1) * problem.length_xi / (n_xi + 1)
    return t, xi


# --------------------------------------------------------------------------
# array-level kernels

def data_terms(values, targets):
    """Mean of squared residuals over the grid, and its adjoint."""
    r = np.asarray(values, dtype=np.float64) - targets
    n = r.size
    slice_sq = np.mean(r * r, axis=-1) if r.ndim == 2 else r * r
    loss = float(np.mean(slice_sq))
    return loss, (2.0 / n) * r


def error_sensitive_terms(values, targets, epsilon, length_xi: float = 2.0):
    """``mean_i ReLU(i_xi(t_i) - eps_i / sqrt(|Omega_xi|))^2`` on an ``(n_t, n_xi)`` grid.

    ``i_xi(t_i)`` is the root-mean-square residual of time slice ``i``.  Slices
    with zero bound use the squared mean directly, so ``eps == 0`` reproduces
    :func:`data_terms` bit for bit.  The subgradient at the kink is zero.
    """
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if np.any(epsilon < 0):
        raise ValueError("error bounds must be nonnegative")
    r = np.asarray(values, dtype=np.float64) - targets
    n_t, n_xi = r.shape
    slice_sq = np.mean(r * r, axis=1)
    slice_rms = np.sqrt(slice_sq)
    radius = epsilon / np.sqrt(length_xi)
    excess = np.maximum(slice_rms - radius, 0.0)
    trusted = epsilon == 0.0
    contrib = np.where(trusted, slice_sq, excess * excess)
    loss = float(np.mean(contrib))
    # d/dr of excess^2 = 2 excess r / (n_xi rms); for eps = 0 this is 2 r / n_xi
    scale = np.zeros(n_t)
    active = (excess > 0.0) & ~trusted
    scale[active] = excess[active] / slice_rms[active]
    scale[trusted] = 1.0
    grad = (2.0 / (n_t * n_xi)) * scale[:, None] * r
    return loss, grad


def slice_rms(values, targets) -> np.ndarray:
    r = np.asarray(values, dtype=np.float64) - targets
    return np.sqrt(np.mean(r * r, axis=1))


def interior_terms(d_tt, d_xixi):
    """PDE residual ``d_tt - d_xixi``: mean square and adjoints w.r.t. both inputs."""
    res = np.asarray(d_tt, dtype=np.float64) - d_xixi
    n = res.size
    loss = float(np.mean(res * res))
    g = (2.0 / n) * res
    return loss, g, -g


def boundary_residuals(value, d_t, tags, targets):
    """Value residual (displacement and lateral points) and velocity residual, zero elsewhere."""
    tags = np.asarray(tags)
    unknown = ~np.isin(tags, BOUNDARY_TAGS)
    if unknown.any():
        raise ValueError(f"unknown boundary tag {tags[unknown][0]!r}")
    value = np.asarray(value, dtype=np.float64)
    d_t = np.asarray(d_t, dtype=np.float64)
    vel = tags == INITIAL_VELOCITY
    return np.where(vel, 0.0, value - targets), np.where(vel, d_t - targets, 0.0)


def boundary_terms(value, d_t, tags, targets):
    """Tag-wise squared residuals averaged over all boundary points."""
    res_value, res_dt = boundary_residuals(value, d_t, tags, targets)
    n = res_value.size
    loss = float(np.mean(res_value * res_value + res_dt * res_dt))
    return loss, (2.0 / n) * res_value, (2.0 / n) * res_dt


# --------------------------------------------------------------------------
# parameter-level wrappers

def data_loss(params: nw.NetworkParams, data: DataGrid) -> float:
    values = nw.predict(params, data.points()).reshape(data.targets.shape)
    return data_terms(values, data.targets)[0]


def error_sensitive_data_loss(params: nw.NetworkParams, data: DataGrid) -> float:
    if data.epsilon is None:
        raise ValueError("the error-sensitive loss needs error bounds on the data grid")
    values = nw.predict(params, data.points()).reshape(data.targets.shape)
    return error_sensitive_terms(values, data.targets, data.epsilon, data.length_xi)[0]


def interior_loss(params: nw.NetworkParams, points) -> float:
    r = nw.evaluate_batch(params, points)
    return interior_terms(r.d_tt, r.d_xixi)[0]


def boundary_loss(params: nw.NetworkParams, boundary: BoundarySet) -> float:
    r = nw.evaluate_batch(params, boundary.points)
    return boundary_terms(r.value, r.d_t, boundary.tags, boundary.targets)[0]


# --------------------------------------------------------------------------
# weights

@dataclass(frozen=True)
class LossWeights:
    data: float = 1.0
    interior: float = 1.0
    boundary: float = 1.0
    scheme: str = "EQUAL"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown weighting scheme {self.scheme!r}")
        for name in TERMS:
            value = getattr(self, name)
            if not (value >= 0.0 and np.isfinite(value)):
                raise ValueError(f"weight {name} must be finite and nonnegative, got {value}")

    def __getitem__(self, term: str) -> float:
        return getattr(self, term)

    def as_tuple(self):
        return self.data, self.interior, self.boundary


def opt_weights(m_data: float, m_interior: float, m_boundary: float) -> LossWeights:
    """``lambda_j = (sum_k M_j / M_k)^-1``, i.e. ``lambda_j`` proportional to ``1/M_j``, summing to 1."""
    m = np.array([m_data, m_interior, m_boundary], dtype=np.float64)
    if np.any(~(m > 0.0)) or not np.all(np.isfinite(m)):
        raise ValueError(f"characteristic magnitudes must be positive and finite, got {m}")
    lam = [float(1.0 / np.sum(mj / m)) for mj in m]
    return LossWeights(*lam, scheme="OPT")


def _second_derivative(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order finite-difference second derivative along ``axis``."""
    u = np.moveaxis(values, axis, 0)
    n = u.shape[0]
    if n < 6:
        raise ValueError("need at least 6 nodes for fourth-order differences")
    d = np.empty_like(u)
    d[2:-2] = (-u[:-4] + 16 * u[1:-3] - 30 * u[2:-2] + 16 * u[3:-1] - u[4:]) / 12.0
    edge0 = np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / 12.0
    edge1 = np.array([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]) / 12.0
    d[0] = np.tensordot(edge0, u[:6], axes=1)
    d[1] = np.tensordot(edge1, u[:6], axes=1)
    d[-1] = np.tensordot(edge0, u[::-1][:6], axes=1)
    d[-2] = np.tensordot(edge1, u[::-1][:6], axes=1)
    return np.moveaxis(d / (h * h), 0, axis)


def characteristic_magnitudes(reference: Union[GridFunction, WaveProblem],
                              boundary_targets=None, grid_size: int = 513):
    """Characteristic sizes ``(M_D, M_I, M_B)`` of the three loss terms.

    ``reference`` is a sampled solution (exact or inexact) or a problem whose
    exact solution is sampled on a ``grid_size`` square grid.  ``M_I`` sums
    the mean squares of both operator terms; ``M_B`` is the mean squared
    boundary target.  Each value is floored at ``1e-12`` of the largest.
    """
    if isinstance(reference, WaveProblem):
        if boundary_targets is None:
            boundary_targets = boundary_points(3000, reference).targets
        reference = sample_on_grid(reference, grid_size, grid_size)
    u = reference.values
    t, xi = reference.t_nodes, reference.xi_nodes
    wt, wx = trapezoid_weights(t), trapezoid_weights(xi)
    volume = (t[-1] - t[0]) * (xi[-1] - xi[0])
    u_tt = _second_derivative(u, t[1] - t[0], axis=0)
    u_xx = _second_derivative(u, xi[1] - xi[0], axis=1)
    m_data = float(wt @ (u * u) @ wx) / volume
    m_interior = float(wt @ (u_tt * u_tt + u_xx * u_xx) @ wx) / volume
    if boundary_targets is None or np.size(boundary_targets) == 0:
        m_boundary = 0.0
    else:
        m_boundary = float(np.mean(np.square(boundary_targets)))
    m = np.array([m_data, m_interior, m_boundary])
    floor = 1e-12 * m.max()
    m = np.maximum(m, floor)
    return float(m[0]), float(m[1]), float(m[2])


def lra_update(current: LossWeights, grads: dict, rate: float = 0.9) -> LossWeights:
    """Learning-rate-annealing step; the interior weight stays pinned at 1.

    ``grads`` maps term names to parameter gradients of the *unweighted* terms.
    """
    g_int = grads.get("interior")
    if g_int is None:
        return current
    g_max = float(np.max(np.abs(g_int)))
    new = {"data": current.data, "boundary": current.boundary}
    for term in ("data", "boundary"):
        g = grads.get(term)
        if g is None:
            continue
        mean = float(np.mean(np.abs(current[term] * g)))
        if mean == 0.0 or not np.isfinite(mean):
            continue
        new[term] = (1.0 - rate) * current[term] + rate * g_max / mean
    return LossWeights(new["data"], 1.0, new["boundary"], scheme=current.scheme)


# --------------------------------------------------------------------------
# total loss

@dataclass
class LossEvaluation:
    total: float
    terms: dict      # term -> unweighted loss value
    term_grads: dict  # term -> unweighted gradient (only for evaluated terms)
    grad: np.ndarray


class Objective:
    """Weighted PINN loss over fixed collocation sets, with reusable workspaces."""

    def __init__(self, sets: CollocationSets, mode: str = "plain"):
        if mode not in ("plain", "error_sensitive"):
            raise ValueError(f"unknown data-loss mode {mode!r}")
        if mode == "error_sensitive" and (sets.data is None or sets.data.epsilon is None):
            raise ValueError("error-sensitive mode needs error bounds on the data grid")
        self.sets = sets
        self.mode = mode
        self._data_points = None if sets.data is None else sets.data.points()
        self._ws = {}

    def _workspace(self, key, params, n, derivatives):
        ws = self._ws.get(key)
        if ws is None or ws.layer_sizes != params.layer_sizes:
            ws = nw.Workspace(params.layer_sizes, n, derivatives)
            self._ws[key] = ws
        return ws

    def _chunked(self, key, params, points, residuals):
        """Mean squared residual and its gradient, one cache-sized block at a time.

        ``residuals(cache, block)`` returns the block's residuals and a function
        turning adjoint scale ``2 / n`` into backward seeds.
        """
        n = points.shape[0]
        sum_sq = 0.0
        grad = np.zeros(params.n_theta)
        for start in range(0, n, CHUNK):
            block = slice(start, min(start + CHUNK, n))
            x = points[block]
            cache = nw.forward(params, x, True, self._workspace((key, x.shape[0]), params, x.shape[0], True))
            res, seeds = residuals(cache, block)
            sum_sq += sum(float(r @ r) for r in res)
            grad += nw.backward(params, cache, seeds(2.0 / n))
        return sum_sq / n, grad

    @staticmethod
    def _interior_chunk(cache, block):
        _, _, _, d_tt, d_xx = cache.outputs
        res = d_tt - d_xx
        return (res,), lambda c: {"d_tt": c * res, "d_xixi": -c * res}

    def _boundary_chunk(self, cache, block):
        b = self.sets.boundary
        res_v, res_t = boundary_residuals(cache.outputs[0], cache.outputs[1], b.tags[block], b.targets[block])
        return (res_v, res_t), lambda c: {"value": c * res_v, "d_t": c * res_t}

    def evaluate(self, params: nw.NetworkParams, weights: LossWeights) -> LossEvaluation:
        sets = self.sets
        terms = {t: 0.0 for t in TERMS}
        grads = {}
        if sets.n_interior:
            terms["interior"], grads["interior"] = self._chunked(
                "interior", params, sets.interior, self._interior_chunk)
        if sets.n_boundary:
            b = sets.boundary
            terms["boundary"], grads["boundary"] = self._chunked(
                "boundary", params, b.points, self._boundary_chunk)
        if sets.n_data:
            d = sets.data
            cache = nw.forward(params, self._data_points, False,
                               self._workspace("data", params, sets.n_data, False))
            values = cache.outputs[0].reshape(d.targets.shape)
            if self.mode == "plain":
                loss, g = data_terms(values, d.targets)
            else:
                loss, g = error_sensitive_terms(values, d.targets, d.epsilon, d.length_xi)
            terms["data"] = loss
            if np.any(g):
                grads["data"] = nw.backward(params, cache, {"value": g.ravel()})
            else:
                grads["data"] = np.zeros(params.n_theta)
        total = 0.0
        grad = np.zeros(params.n_theta)
        # fixed summation order: interior, boundary, data
        for term in ("interior", "boundary", "data"):
            lam = weights[term]
            if term not in grads or lam == 0.0:
                continue
            total += lam * terms[term]
            if np.any(grads[term]):
                grad += lam * grads[term]
        return LossEvaluation(total, terms, grads, grad)


def total_loss(params: nw.NetworkParams, sets: CollocationSets, weights: LossWeights,
               mode: str = "plain") -> LossEvaluation:
    return Objective(sets, mode).evaluate(params, weights)
