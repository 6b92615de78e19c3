"""Seeded PINN training runs, validation and aggregation over repetitions."""
from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import losses as L
from . import network as nw
from .analytic import WaveProblem, trapezoid_weights
from .rom import CertifiedSurrogate

logger = logging.getLogger(__name__)

EXPERIMENTS = ("baseline", "exact_data", "rom_data", "rom_data_es")
CSV_HEADER = ("epoch", "loss_data", "loss_interior", "loss_boundary", "loss_total",
              "lambda_data", "lambda_interior", "lambda_boundary", "val_mse")
DIVERGENCE_THRESHOLD = 1e12


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "baseline"
    weighting: str = "OPT"
    rom_size: int = 12
    epochs: int = 20000
    seed: int = 0
    repetitions: int = 30
    validation_grid: int = 256
    learning_rate: float = 1e-3
    n_interior: Optional[int] = None   # None: 30000 without data, 15000 with data
    n_boundary: int = 3000
    n_data_t: int = 150
    n_data_xi: int = 100
    log_stride: int = 10
    lra_rate: float = 0.9
    lra_every: int = 10
    opt_reference: str = "exact"       # or "surrogate"
    layer_sizes: tuple = nw.DEFAULT_LAYER_SIZES

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.weighting not in L.SCHEMES:
            raise ValueError(f"unknown weighting {self.weighting!r}; expected one of {L.SCHEMES}")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.log_stride < 1 or self.validation_grid < 2:
            raise ValueError("log_stride must be >= 1 and validation_grid >= 2")
        if self.opt_reference not in ("exact", "surrogate"):
            raise ValueError(f"unknown OPT reference {self.opt_reference!r}")
        if self.opt_reference == "surrogate" and self.experiment not in ("rom_data", "rom_data_es"):
            raise ValueError("a surrogate OPT reference needs a ROM experiment")

    @property
    def uses_data(self) -> bool:
        return self.experiment != "baseline"

    @property
    def uses_rom(self) -> bool:
        return self.experiment in ("rom_data", "rom_data_es")

    @property
    def interior_count(self) -> int:
        if self.n_interior is not None:
            return self.n_interior
        return 15000 if self.uses_data else 30000

    @property
    def data_mode(self) -> str:
        return "error_sensitive" if self.experiment == "rom_data_es" else "plain"


@dataclass
class TrainRecord:
    seed: int
    epochs: list = field(default_factory=list)
    rows: list = field(default_factory=list)   # one tuple per logged epoch, CSV_HEADER order
    diverged: bool = False
    diverged_at: Optional[int] = None
    params: Optional[nw.NetworkParams] = None

    def column(self, name: str) -> np.ndarray:
        k = CSV_HEADER.index(name)
        return np.array([row[k] for row in self.rows], dtype=np.float64)

    @property
    def final_val_mse(self) -> float:
        return float(self.rows[-1][-1]) if self.rows else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_HEADER) + "\n")
        for row in self.rows:
            buf.write(str(int(row[0])) + "," + ",".join(f"{v:.17g}" for v in row[1:]) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path, seed: int = 0) -> "TrainRecord":
        record = cls(seed)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != CSV_HEADER:
                raise ValueError(f"{path}: row 1: expected header {','.join(CSV_HEADER)}")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(CSV_HEADER):
                    raise ValueError(f"{path}: row {lineno}: expected {len(CSV_HEADER)} fields")
                try:
                    values = (int(row[0]),) + tuple(float(v) for v in row[1:])
                except ValueError as exc:
                    raise ValueError(f"{path}: row {lineno}: {exc}") from None
                record.epochs.append(values[0])
                record.rows.append(values)
        return record


# --------------------------------------------------------------------------
# validation

@dataclass
class ValidationGrid:
    points: np.ndarray
    exact: np.ndarray
    weights: np.ndarray   # trapezoidal weights divided by |Omega|

    @classmethod
    def build(cls, problem: WaveProblem = WaveProblem(), size: int = 256) -> "ValidationGrid":
        t = np.linspace(problem.t_min, problem.t_max, size)
        xi = np.linspace(problem.xi_min, problem.xi_max, size)
        T, X = np.meshgrid(t, xi, indexing="ij")
        exact = problem.solution(T, X)
        exact[:, 0] = exact[:, -1] = 0.0
        weights = np.outer(trapezoid_weights(t), trapezoid_weights(xi)) / problem.volume
        return cls(np.column_stack([T.ravel(), X.ravel()]), exact.ravel(), weights.ravel())


def validation_mse(params: nw.NetworkParams, grid: Optional[ValidationGrid] = None,
                   workspace: Optional[nw.Workspace] = None) -> float:
    """``||u - Phi||^2 / |Omega|`` by the trapezoidal rule on the validation grid."""
    if grid is None:
        grid = ValidationGrid.build()
    values = nw.forward(params, grid.points, False, workspace).outputs[0]
    r = values - grid.exact
    return float(grid.weights @ (r * r))


# --------------------------------------------------------------------------
# collocation sets

def point_rng(seed: int) -> np.random.Generator:
    # separate stream from the network initialization
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))


def build_sets(config: RunConfig, problem: WaveProblem = WaveProblem(),
               surrogate: Optional[CertifiedSurrogate] = None) -> L.CollocationSets:
    interior = L.interior_points(config.interior_count, point_rng(config.seed), problem)
    boundary = L.boundary_points(config.n_boundary, problem)
    data = None
    if config.uses_data:
        t, xi = L.data_grid_nodes(config.n_data_t, config.n_data_xi, problem)
        if config.uses_rom:
            if surrogate is None:
                raise ValueError(f"experiment {config.experiment!r} needs a certified surrogate")
            targets = surrogate.values_at(t[:, None], xi[None, :])
            epsilon = surrogate.epsilon_at(t)
        else:
            targets = problem.solution(t[:, None], xi[None, :])
            epsilon = np.zeros_like(t)
        data = L.DataGrid(t, xi, targets, epsilon, problem.length_xi)
    return L.CollocationSets(interior, boundary, data)


def initial_weights(config: RunConfig, sets: L.CollocationSets, problem: WaveProblem = WaveProblem(),
                    surrogate: Optional[CertifiedSurrogate] = None) -> L.LossWeights:
    if config.weighting == "OPT":
        if config.opt_reference == "surrogate":
            reference = surrogate.rom_solution
        else:
            reference = problem
        m = L.characteristic_magnitudes(reference, sets.boundary.targets)
        return L.opt_weights(*m)
    return L.LossWeights(1.0, 1.0, 1.0, scheme=config.weighting)


# --------------------------------------------------------------------------
# training

def train_single(config: RunConfig, data: L.CollocationSets, problem: WaveProblem = WaveProblem(),
                 surrogate: Optional[CertifiedSurrogate] = None,
                 validation: Optional[ValidationGrid] = None) -> TrainRecord:
    """Full-batch ADAM training from ``network.init(config.seed)``.

    Logged losses and weights are those used for the update of that epoch;
    the validation MSE is evaluated after the update.
    """
    if validation is None:
        validation = ValidationGrid.build(problem, config.validation_grid)
    objective = L.Objective(data, config.data_mode if data.data is not None else "plain")
    weights = initial_weights(config, data, problem, surrogate)
    params = nw.init(config.seed, config.layer_sizes)
    state = nw.AdamState.zeros(params.n_theta, config.learning_rate)
    val_ws = nw.Workspace(params.layer_sizes, validation.points.shape[0], derivatives=False)
    record = TrainRecord(config.seed)
    for epoch in range(1, config.epochs + 1):
        ev = objective.evaluate(params, weights)
        if not np.isfinite(ev.total) or ev.total > DIVERGENCE_THRESHOLD or not np.all(np.isfinite(ev.grad)):
            record.diverged = True
            record.diverged_at = epoch
            logger.warning("seed %d diverged at epoch %d (loss %r)", config.seed, epoch, ev.total)
            break
        used = weights
        params, state = nw.adam_step(state, params, ev.grad)
        if config.weighting == "LRA" and epoch % config.lra_every == 0:
            weights = L.lra_update(weights, ev.term_grads, config.lra_rate)
        if epoch == 1 or epoch % config.log_stride == 0 or epoch == config.epochs:
            val = validation_mse(params, validation, val_ws)
            if not np.isfinite(val):
                record.diverged = True
                record.diverged_at = epoch
                break
            t = ev.terms
            record.epochs.append(epoch)
            record.rows.append((epoch, t["data"], t["interior"], t["boundary"], ev.total,
                                used.data, used.interior, used.boundary, val))
    record.params = params
    return record


def _run_one(args):
    config, problem, surrogate = args
    sets = build_sets(config, problem, surrogate)
    record = train_single(config, sets, problem, surrogate)
    return record


def worker_count(repetitions: int, requested: Optional[int] = None) -> int:
    cap = os.environ.get("WAVESURROGATE_THREADS")
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, min(n, repetitions))


def run_repetitions(config: RunConfig, problem: WaveProblem = WaveProblem(),
                    surrogate: Optional[CertifiedSurrogate] = None,
                    workers: Optional[int] = None) -> list:
    """``config.repetitions`` runs with seeds ``seed + k``, optionally across processes."""
    configs = [replace(config, seed=config.seed + k) for k in range(config.repetitions)]
    jobs = [(c, problem, surrogate) for c in configs]
    n_workers = worker_count(len(jobs), workers)
    if n_workers == 1:
        return [_run_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_run_one, jobs))


# --------------------------------------------------------------------------
# aggregation

@dataclass
class Aggregate:
    epochs: np.ndarray
    mean: np.ndarray
    median: np.ndarray
    geomean: np.ndarray
    n_diverged: int
    n_runs: int

    def to_csv(self) -> str:
        lines = ["epoch,mean,median,geomean,n_diverged"]
        for e, a, b, c in zip(self.epochs, self.mean, self.median, self.geomean):
            lines.append(f"{int(e)},{a:.17g},{b:.17g},{c:.17g},{self.n_diverged}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def aggregate(records: Sequence[TrainRecord]) -> Aggregate:
    """Per-epoch mean, median and geometric mean of the validation MSE.

    Diverged runs are left out of mean and geometric mean; for the median
    their missing epochs count as ``+inf``.
    """
    if not records:
        raise ValueError("cannot aggregate an empty list of records")
    finished = [r for r in records if not r.diverged]
    reference = max(records, key=lambda r: len(r.epochs))
    epochs = np.array(reference.epochs if not finished else finished[0].epochs, dtype=np.int64)
    for r in finished:
        if list(r.epochs) != list(epochs):
            raise ValueError("records have different epoch grids")
    table = np.full((len(records), epochs.size), np.inf)
    for i, r in enumerate(records):
        vals = r.column("val_mse")
        n = min(vals.size, epochs.size)
        table[i, :n] = vals[:n]
    ok = np.array([not r.diverged for r in records])
    if ok.any():
        # sorted per epoch so the result does not depend on record order
        good = np.sort(table[ok], axis=0)
        mean = good.mean(axis=0)
        with np.errstate(divide="ignore"):
            geomean = np.exp(np.log(good).mean(axis=0))
    else:
        mean = np.full(epochs.size, np.nan)
        geomean = np.full(epochs.size, np.nan)
    median = np.median(table, axis=0)
    return Aggregate(epochs, mean, median, geomean, int((~ok).sum()), len(records))
