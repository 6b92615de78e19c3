"""scikit-learn style front end for training a wave-equation PINN."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import losses as L
from . import network as nw
from . import trainer as T
from .analytic import WaveProblem


def _tensor_grid(X: np.ndarray, y: np.ndarray):
    """Reshape scattered ``(t, xi)`` samples that cover a full tensor grid."""
    t = np.unique(X[:, 0])
    xi = np.unique(X[:, 1])
    if t.size * xi.size != X.shape[0]:
        raise ValueError(f"samples must form a full tensor grid; got {X.shape[0]} points "
                         f"for {t.size} times x {xi.size} positions")
    it = np.searchsorted(t, X[:, 0])
    ix = np.searchsorted(xi, X[:, 1])
    targets = np.full((t.size, xi.size), np.nan)
    targets[it, ix] = y
    if np.isnan(targets).any():
        raise ValueError("samples must form a full tensor grid without duplicates")
    return t, xi, targets


class WavePINNRegressor(RegressorMixin, BaseEstimator):
    """PINN for the 1-D wave equation, optionally enriched with grid data.

    ``fit()`` without data trains on the PDE residual and boundary terms only.
    Given ``X`` of ``(t, xi)`` rows covering a tensor grid and targets ``y``,
    a data term is added; passing ``epsilon`` (one L2 bound per distinct time)
    makes that term error-sensitive.
    """

    def __init__(self, weighting: str = "OPT", epochs: int = 2000, learning_rate: float = 1e-3,
                 n_interior: Optional[int] = None, n_boundary: int = 3000,
                 layer_sizes: tuple = nw.DEFAULT_LAYER_SIZES, log_stride: int = 10,
                 validation_grid: int = 256, random_state: int = 0):
        self.weighting = weighting
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.n_interior = n_interior
        self.n_boundary = n_boundary
        self.layer_sizes = layer_sizes
        self.log_stride = log_stride
        self.validation_grid = validation_grid
        self.random_state = random_state

    def _config(self, experiment: str) -> T.RunConfig:
        return T.RunConfig(experiment=experiment, weighting=self.weighting, epochs=self.epochs,
                           seed=int(self.random_state), repetitions=1,
                           validation_grid=self.validation_grid, learning_rate=self.learning_rate,
                           n_interior=self.n_interior, n_boundary=self.n_boundary,
                           log_stride=self.log_stride, layer_sizes=tuple(self.layer_sizes))

    def fit(self, X=None, y=None, epsilon=None):
        problem = WaveProblem()
        data = None
        if X is None:
            if y is not None or epsilon is not None:
                raise ValueError("targets or error bounds given without sample points")
            experiment = "baseline"
        else:
            X = check_array(X, dtype=np.float64)
            if X.shape[1] != 2:
                raise ValueError(f"X must have two columns (t, xi), got {X.shape[1]}")
            if y is None:
                raise ValueError("X given without targets y")
            y = check_array(y, ensure_2d=False, dtype=np.float64).ravel()
            if y.shape[0] != X.shape[0]:
                raise ValueError("X and y have inconsistent lengths")
            t, xi, targets = _tensor_grid(X, y)
            if epsilon is None:
                experiment = "exact_data"
                eps = np.zeros(t.size)
            else:
                experiment = "rom_data_es"
                eps = np.broadcast_to(np.asarray(epsilon, dtype=np.float64), t.shape).copy()
            data = L.DataGrid(t, xi, targets, eps, problem.length_xi)
        config = self._config(experiment)
        rng = T.point_rng(config.seed)
        sets = L.CollocationSets(L.interior_points(config.interior_count, rng, problem),
                                 L.boundary_points(config.n_boundary, problem), data)
        self.weights_ = T.initial_weights(config, sets, problem)
        self.record_ = T.train_single(config, sets, problem)
        self.params_ = self.record_.params
        self.n_features_in_ = 2
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 2:
            raise ValueError(f"X must have two columns (t, xi), got {X.shape[1]}")
        return nw.predict(self.params_, X)

    def validation_mse(self) -> float:
        check_is_fitted(self, "params_")
        return T.validation_mse(self.params_, T.ValidationGrid.build(WaveProblem(), self.validation_grid))
