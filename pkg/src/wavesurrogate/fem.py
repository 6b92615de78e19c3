"""P1 finite-element full-order model of the wave equation.

Linear elements on an equidistant mesh, Dirichlet nodes eliminated, and the
implicit midpoint rule on the first-order system ``u' = v, M v' = -K u``.
For this linear problem the midpoint rule conserves the discrete energy
``(v^T M v + u^T K u) / 2`` exactly (up to round-off).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import lapack

from .analytic import GridFunction, WaveProblem, trapezoid_weights


@dataclass(frozen=True)
class Tridiagonal:
    """Symmetric tridiagonal matrix stored by its diagonal and off-diagonal."""

    diag: np.ndarray
    off: np.ndarray

    @property
    def size(self) -> int:
        return self.diag.size

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[:-1] += self.off * x[1:]
        y[1:] += self.off * x[:-1]
        return y

    def toarray(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def __add__(self, other: "Tridiagonal") -> "Tridiagonal":
        return Tridiagonal(self.diag + other.diag, self.off + other.off)

    def scaled(self, c: float) -> "Tridiagonal":
        return Tridiagonal(c * self.diag, c * self.off)


class TridiagonalSolver:
    """LDL^T factorization of an SPD tridiagonal matrix, reused across solves."""

    def __init__(self, matrix: Tridiagonal):
        d, e, info = lapack.dpttrf(matrix.diag.copy(), matrix.off.copy())
        if info != 0:
            raise np.linalg.LinAlgError(
                f"tridiagonal factorization failed (info={info}); matrix is not SPD")
        self._d, self._e = d, e

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = lapack.dpttrs(self._d, self._e, rhs)
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal solve failed (info={info})")
        return x


@dataclass(frozen=True)
class FemDiscretization:
    n_nodes: int
    n_steps: int
    mass: Tridiagonal
    stiffness: Tridiagonal
    xi_nodes: np.ndarray
    t_nodes: np.ndarray

    @property
    def h(self) -> float:
        return float(self.xi_nodes[1] - self.xi_nodes[0])

    @property
    def dt(self) -> float:
        return float(self.t_nodes[1] - self.t_nodes[0])

    @property
    def n_interior(self) -> int:
        return self.n_nodes - 2


def assemble(n_nodes: int, n_steps: Optional[int] = None,
             problem: WaveProblem = WaveProblem()) -> FemDiscretization:
    """Assemble P1 mass and stiffness matrices restricted to interior nodes.

    ``n_steps`` is the number of time levels including ``t = 0`` (defaults to
    ``n_nodes``).
    """
    if n_nodes < 3:
        raise ValueError(f"need at least 3 nodes, got {n_nodes}")
    if n_steps is None:
        n_steps = n_nodes
    if n_steps < 2:
        raise ValueError(f"need at least 2 time levels, got {n_steps}")
    xi = np.linspace(problem.xi_min, problem.xi_max, n_nodes)
    t = np.linspace(problem.t_min, problem.t_max, n_steps)
    h = problem.length_xi / (n_nodes - 1)
    n = n_nodes - 2
    mass = Tridiagonal(np.full(n, 2.0 * h / 3.0), np.full(n - 1, h / 6.0))
    stiffness = Tridiagonal(np.full(n, 2.0 / h), np.full(n - 1, -1.0 / h))
    return FemDiscretization(n_nodes, n_steps, mass, stiffness, xi, t)


def implicit_midpoint(apply_mass: Callable, apply_stiffness: Callable, solve_shifted: Callable,
                      u0: np.ndarray, v0: np.ndarray, dt: float, n_steps: int,
                      energy: bool = False):
    """Integrate ``M u'' + K u = 0`` with the implicit midpoint rule.

    ``solve_shifted`` solves with ``M + dt^2/4 K``.  Returns the displacement
    at every time level, shape ``(n_steps, n)``, and optionally the discrete
    energy per level.
    """
    u = np.array(u0, dtype=np.float64)
    v = np.array(v0, dtype=np.float64)
    out = np.empty((n_steps, u.size))
    out[0] = u
    energies = np.empty(n_steps) if energy else None
    c = 0.25 * dt * dt

    def _energy(u, v):
        return 0.5 * (v @ apply_mass(v) + u @ apply_stiffness(u))

    if energy:
        energies[0] = _energy(u, v)
    for k in range(1, n_steps):
        Ku = apply_stiffness(u)
        # (M + c K) v+ = (M - c K) v - dt K u
        rhs = apply_mass(v) - c * apply_stiffness(v) - dt * Ku
        v_new = solve_shifted(rhs)
        u = u + 0.5 * dt * (v + v_new)
        v = v_new
        out[k] = u
        if energy:
            energies[k] = _energy(u, v)
    return (out, energies) if energy else out


def solve_fom(disc: FemDiscretization, problem: WaveProblem = WaveProblem(),
              u0: Optional[np.ndarray] = None, return_energy: bool = False):
    """Full-order snapshots on all time levels, boundary columns pinned to zero.

    ``u0`` overrides the interior initial displacement (default: nodal
    interpolation of the bump).  Initial velocity is zero.
    """
    if u0 is None:
        u0 = problem.initial_displacement(disc.xi_nodes[1:-1])
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (disc.n_interior,):
        raise ValueError(f"u0 must have {disc.n_interior} interior entries")
    dt = disc.dt
    solver = TridiagonalSolver(disc.mass + disc.stiffness.scaled(0.25 * dt * dt))
    result = implicit_midpoint(disc.mass.matvec, disc.stiffness.matvec, solver.solve,
                               u0, np.zeros_like(u0), dt, disc.n_steps, energy=return_energy)
    interior, energies = result if return_energy else (result, None)
    values = np.zeros((disc.n_steps, disc.n_nodes))
    values[:, 1:-1] = interior
    grid = GridFunction(disc.t_nodes, disc.xi_nodes, values)
    return (grid, energies) if return_energy else grid


def l2_squared(grid: GridFunction) -> float:
    """Trapezoidal ``||values||^2`` over the space-time grid."""
    wt = trapezoid_weights(grid.t_nodes)
    wx = trapezoid_weights(grid.xi_nodes)
    return float(wt @ (grid.values ** 2) @ wx)


def fom_mse(fom: GridFunction, problem: WaveProblem = WaveProblem()) -> float:
    """``||u - u_h||^2_{L2(Omega)} / |Omega|`` against the exact solution, trapezoidal rule."""
    exact = problem.solution(fom.t_nodes[:, None], fom.xi_nodes[None, :])
    diff = GridFunction(fom.t_nodes, fom.xi_nodes, exact - fom.values)
    volume = (fom.t_nodes[-1] - fom.t_nodes[0]) * (fom.xi_nodes[-1] - fom.xi_nodes[0])
    return l2_squared(diff) / volume


_SNAPSHOT_MAGIC = b"WVSN"
_SNAPSHOT_VERSION = 1
_SNAPSHOT_HEADER = struct.Struct("<4sBQQdddd")


def write_snapshots(path, grid: GridFunction) -> None:
    """Write ``grid`` in the WVSN format (values time-major, little-endian f64)."""
    nt, nx = grid.values.shape
    header = _SNAPSHOT_HEADER.pack(_SNAPSHOT_MAGIC, _SNAPSHOT_VERSION, nt, nx,
                                   grid.t_nodes[0], grid.t_nodes[-1],
                                   grid.xi_nodes[0], grid.xi_nodes[-1])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def read_snapshots(path) -> GridFunction:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _SNAPSHOT_HEADER.size:
        raise ValueError(f"{path}: truncated WVSN header")
    magic, version, nt, nx, t0, t1, x0, x1 = _SNAPSHOT_HEADER.unpack_from(data)
    if magic != _SNAPSHOT_MAGIC or version != _SNAPSHOT_VERSION:
        raise ValueError(f"{path}: not a version-{_SNAPSHOT_VERSION} WVSN file")
    expected = _SNAPSHOT_HEADER.size + 8 * nt * nx
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, "<f8", nt * nx, _SNAPSHOT_HEADER.size).reshape(nt, nx)
    return GridFunction(np.linspace(t0, t1, nt), np.linspace(x0, x1, nx), values.astype(np.float64))
