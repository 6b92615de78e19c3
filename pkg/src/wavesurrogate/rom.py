"""POD-Galerkin reduced-order models with a per-time error certificate."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.interpolate import RegularGridInterpolator
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .analytic import GridFunction, WaveProblem, trapezoid_weights
from .fem import FemDiscretization, implicit_midpoint


class RankError(ValueError):
    """Requested more POD modes than the snapshots support."""


def numerical_rank(singular_values: np.ndarray, shape) -> int:
    if singular_values.size == 0 or singular_values[0] == 0.0:
        return 0
    tol = singular_values[0] * max(shape) * np.finfo(np.float64).eps
    return int(np.count_nonzero(singular_values > tol))


class PODBasis(TransformerMixin, BaseEstimator):
    """Proper orthogonal decomposition of a snapshot matrix.

    Rows of ``X`` are snapshots (one per time level), columns are degrees of
    freedom.  ``transform`` returns reduced coordinates, ``inverse_transform``
    lifts them back.  No centering is applied, so the basis spans the
    snapshots themselves.

    Parameters
    ----------
    n_components : int
        Number of leading left singular vectors kept.
    """

    def __init__(self, n_components: int = 12):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        # columns of X.T are snapshots; its left singular vectors live in dof space
        U, s, _ = scipy.linalg.svd(X.T, full_matrices=False, lapack_driver="gesdd")
        self.singular_values_ = s
        self.rank_ = numerical_rank(s, X.shape)
        n = int(self.n_components)
        if n < 1:
            raise ValueError(f"n_components must be positive, got {n}")
        if n > self.rank_:
            raise RankError(f"requested {n} modes but the snapshot matrix has numerical rank {self.rank_}")
        self.components_ = np.ascontiguousarray(U[:, :n].T)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        return X @ self.components_.T

    def inverse_transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        return X @ self.components_

    def projection_error(self, X) -> float:
        """Sum of squared residuals of the snapshots outside the span."""
        X = check_array(X, dtype=np.float64)
        R = X - self.inverse_transform(self.transform(X))
        return float(np.sum(R * R))


@dataclass
class RomModel:
    basis: np.ndarray             # (n_interior, n), orthonormal columns
    reduced_mass: np.ndarray      # V^T M V
    reduced_stiffness: np.ndarray  # V^T K V
    singular_values: Optional[np.ndarray] = None
    epsilon: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.basis.shape[1]

    @property
    def n_interior(self) -> int:
        return self.basis.shape[0]


def _galerkin(disc: FemDiscretization, V: np.ndarray):
    MV = np.column_stack([disc.mass.matvec(V[:, k]) for k in range(V.shape[1])])
    KV = np.column_stack([disc.stiffness.matvec(V[:, k]) for k in range(V.shape[1])])
    Mr = V.T @ MV
    Kr = V.T @ KV
    # exact symmetry; products above are symmetric up to round-off
    return 0.5 * (Mr + Mr.T), 0.5 * (Kr + Kr.T)


def pod_basis(snapshots: GridFunction, n: int, disc: FemDiscretization,
              pod: Optional[PODBasis] = None) -> RomModel:
    """Keep the first ``n`` POD modes of the interior snapshots and project the operators.

    ``pod`` may be a basis already fitted to the same snapshots with at least
    ``n`` components; the SVD is then not repeated.
    """
    interior = snapshots.values[:, 1:-1]
    if interior.shape[1] != disc.n_interior:
        raise ValueError("snapshots and discretization disagree on the number of nodes")
    if pod is None:
        pod = PODBasis(n_components=n).fit(interior)
    elif n > pod.components_.shape[0]:
        raise ValueError(f"fitted basis has {pod.components_.shape[0]} modes, {n} requested")
    V = np.ascontiguousarray(pod.components_[:n].T)
    Mr, Kr = _galerkin(disc, V)
    return RomModel(V, Mr, Kr, pod.singular_values_)


def solve_rom(model: RomModel, disc: FemDiscretization, problem: WaveProblem = WaveProblem(),
              return_energy: bool = False):
    """Integrate the reduced system with the FOM time stepper and lift to the full grid."""
    if model.n_interior != disc.n_interior:
        raise ValueError("ROM basis does not match the discretization")
    V = model.basis
    q0 = V.T @ problem.initial_displacement(disc.xi_nodes[1:-1])
    dt = disc.dt
    Mr, Kr = model.reduced_mass, model.reduced_stiffness
    factor = scipy.linalg.cho_factor(Mr + 0.25 * dt * dt * Kr)
    result = implicit_midpoint(lambda x: Mr @ x, lambda x: Kr @ x,
                               lambda r: scipy.linalg.cho_solve(factor, r),
                               q0, np.zeros_like(q0), dt, disc.n_steps, energy=return_energy)
    Q, energies = result if return_energy else (result, None)
    values = np.zeros((disc.n_steps, disc.n_nodes))
    values[:, 1:-1] = Q @ V.T
    grid = GridFunction(disc.t_nodes, disc.xi_nodes, values)
    return (grid, energies) if return_energy else grid


@dataclass
class CertifiedSurrogate:
    rom_solution: GridFunction
    epsilon: np.ndarray  # bound on ||u(t_i) - u_rom(t_i)||_{L2(Omega_xi)}

    def __post_init__(self):
        self.epsilon = np.asarray(self.epsilon, dtype=np.float64)
        if self.epsilon.shape != self.rom_solution.t_nodes.shape:
            raise ValueError("need one error bound per time level")
        if np.any(self.epsilon < 0) or not np.all(np.isfinite(self.epsilon)):
            raise ValueError("error bounds must be finite and nonnegative")

    def epsilon_at(self, t) -> np.ndarray:
        """Bound at arbitrary times by linear interpolation between time levels."""
        return np.interp(t, self.rom_solution.t_nodes, self.epsilon)

    def values_at(self, t, xi) -> np.ndarray:
        """Bilinear interpolation of the surrogate (exact for P1 in space)."""
        grid = self.rom_solution
        interp = RegularGridInterpolator((grid.t_nodes, grid.xi_nodes), grid.values)
        t, xi = np.broadcast_arrays(np.asarray(t, float), np.asarray(xi, float))
        return interp(np.column_stack([t.ravel(), xi.ravel()])).reshape(t.shape)


def slice_l2_norms(values: np.ndarray, xi_nodes: np.ndarray) -> np.ndarray:
    """Per-row ``L2(Omega_xi)`` norms by the trapezoidal rule."""
    w = trapezoid_weights(xi_nodes)
    return np.sqrt((values * values) @ w)


def certify(rom_solution: GridFunction, fom_solution: GridFunction, safety: float = 1.0) -> CertifiedSurrogate:
    """Error certificate against the FOM, scaled by ``safety >= 1``."""
    if safety < 1.0:
        raise ValueError(f"safety factor must be at least 1, got {safety}")
    if not rom_solution.same_grid(fom_solution):
        raise ValueError("ROM and FOM solutions live on different grids")
    err = slice_l2_norms(fom_solution.values - rom_solution.values, fom_solution.xi_nodes)
    return CertifiedSurrogate(rom_solution, safety * err)


_ROM_MAGIC = b"WVRM"
_ROM_VERSION = 1


def write_rom(path, model: RomModel, epsilon) -> None:
    epsilon = np.asarray(epsilon, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_ROM_MAGIC + bytes([_ROM_VERSION]))
        fh.write(struct.pack("<QQ", model.n_interior, model.n))
        fh.write(np.asfortranarray(model.basis, dtype="<f8").tobytes(order="F"))
        fh.write(np.ascontiguousarray(model.reduced_mass, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.reduced_stiffness, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", epsilon.size))
        fh.write(epsilon.tobytes())


def read_rom(path) -> RomModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _ROM_MAGIC or len(data) < 5 or data[4] != _ROM_VERSION:
        raise ValueError(f"{path}: not a version-{_ROM_VERSION} WVRM file")
    pos = 5
    n_int, n = struct.unpack_from("<QQ", data, pos)
    pos += 16
    V = np.frombuffer(data, "<f8", n_int * n, pos).reshape(n, n_int).T.copy()
    pos += 8 * n_int * n
    Mr = np.frombuffer(data, "<f8", n * n, pos).reshape(n, n).copy()
    pos += 8 * n * n
    Kr = np.frombuffer(data, "<f8", n * n, pos).reshape(n, n).copy()
    pos += 8 * n * n
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    eps = np.frombuffer(data, "<f8", count, pos).copy()
    if pos + 8 * count != len(data):
        raise ValueError(f"{path}: trailing or missing bytes")
    return RomModel(V, Mr, Kr, None, eps)
