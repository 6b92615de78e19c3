"""PINN surrogates for the 1-D wave equation with FEM/ROM data enrichment."""
from .analytic import GridFunction, WaveProblem, exact_solution
from .estimator import WavePINNRegressor
from .fem import assemble, solve_fom
from .rom import CertifiedSurrogate, PODBasis, certify, pod_basis, solve_rom

__version__ = "0.1.0"

__all__ = [
    "CertifiedSurrogate", "GridFunction", "PODBasis", "WavePINNRegressor", "WaveProblem",
    "assemble", "certify", "exact_solution", "pod_basis", "solve_fom", "solve_rom",
]
