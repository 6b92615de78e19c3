"""Exact solution of the 1-D wave problem used for validation.

The initial displacement is a smooth compactly supported bump centred at
``xi = 0``; with zero initial velocity and homogeneous Dirichlet walls the
solution is d'Alembert's formula applied to the odd, 4-periodic extension of
the bump (method of images).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WaveProblem:
    xi_min: float = -1.0
    xi_max: float = 1.0
    t_min: float = 0.0
    t_max: float = 2.0
    wave_speed: float = 1.0
    bump_halfwidth: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.bump_halfwidth < 1.0:
            raise ValueError(f"bump_halfwidth must lie in (0, 1), got {self.bump_halfwidth}")
        if self.wave_speed != 1.0:
            raise ValueError("only unit wave speed is supported")
        if (self.xi_min, self.xi_max) != (-1.0, 1.0):
            raise ValueError("the image construction assumes the spatial domain (-1, 1)")

    @property
    def length_xi(self) -> float:
        return self.xi_max - self.xi_min

    @property
    def length_t(self) -> float:
        return self.t_max - self.t_min

    @property
    def volume(self) -> float:
        return self.length_xi * self.length_t

    def initial_displacement(self, xi):
        return initial_bump(xi, self.bump_halfwidth)

    def solution(self, t, xi):
        return exact_solution(t, xi, self.bump_halfwidth)


@dataclass
class GridFunction:
    """Values on a tensor grid, ``values[i, j]`` at ``(t_nodes[i], xi_nodes[j])``."""

    t_nodes: np.ndarray
    xi_nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.t_nodes = np.asarray(self.t_nodes, dtype=np.float64)
        self.xi_nodes = np.asarray(self.xi_nodes, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        nt, nx = self.t_nodes.size, self.xi_nodes.size
        if nt < 2 or nx < 2:
            raise ValueError("a grid function needs at least two nodes per axis")
        if np.any(np.diff(self.t_nodes) <= 0) or np.any(np.diff(self.xi_nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if self.values.shape != (nt, nx):
            raise ValueError(f"values must have shape {(nt, nx)}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @property
    def shape(self):
        return self.values.shape

    def same_grid(self, other: "GridFunction") -> bool:
        return (self.t_nodes.shape == other.t_nodes.shape
                and self.xi_nodes.shape == other.xi_nodes.shape
                and np.array_equal(self.t_nodes, other.t_nodes)
                and np.array_equal(self.xi_nodes, other.xi_nodes))


def initial_bump(xi, halfwidth: float = 0.5):
    """``exp(1 - 1/(1 - (xi/w)^2))`` inside ``|xi| < w``, zero outside."""
    xi = np.asarray(xi, dtype=np.float64)
    s = xi / halfwidth
    inside = np.abs(s) < 1.0
    out = np.zeros_like(s)
    s_in = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s_in * s_in))
    return out if out.ndim else float(out)


def _odd_periodic_extension(xi, halfwidth):
    # fold into [-1, 3): the bump on [-1, 1], its negated mirror on [1, 3)
    y = np.mod(np.asarray(xi, dtype=np.float64) + 1.0, 4.0) - 1.0
    mirrored = y > 1.0
    y = np.where(mirrored, 2.0 - y, y)
    return np.where(mirrored, -1.0, 1.0) * initial_bump(y, halfwidth)


def exact_solution(t, xi, halfwidth: float = 0.5):
    """d'Alembert solution with zero initial velocity; broadcasts ``t`` against ``xi``."""
    t = np.asarray(t, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    u = 0.5 * (_odd_periodic_extension(xi - t, halfwidth)
               + _odd_periodic_extension(xi + t, halfwidth))
    return u if u.ndim else float(u)


def sample_on_grid(problem: WaveProblem, n_t: int, n_xi: int) -> GridFunction:
    """Sample the exact solution on an equidistant grid including the endpoints."""
    if n_t < 2 or n_xi < 2:
        raise ValueError("n_t and n_xi must be at least 2")
    t = np.linspace(problem.t_min, problem.t_max, n_t)
    xi = np.linspace(problem.xi_min, problem.xi_max, n_xi)
    values = problem.solution(t[:, None], xi[None, :])
    # the image construction is exact at the walls; remove round-off residue
    values[:, 0] = 0.0
    values[:, -1] = 0.0
    return GridFunction(t, xi, values)


def trapezoid_weights(nodes) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=np.float64)
    h = np.diff(nodes)
    w = np.zeros_like(nodes)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w
