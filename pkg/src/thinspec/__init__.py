"""Two-scale spectral asymptotics for Dirichlet eigenproblems in thin
periodic domains: cell problems, effective oscillator model and direct
validation."""

from .cell import CellGrid, first_eigenpair
from .coefficients import CoefficientMatrix
from .direct import ThinGrid, convergence_report, solve_thin
from .effective import build_model, oscillator, predict
from .expr import parse
from .profile import analyse_profile

__all__ = ["CellGrid", "CoefficientMatrix", "ThinGrid", "analyse_profile", "build_model",
           "convergence_report", "first_eigenpair", "oscillator", "parse", "predict",
           "solve_thin"]
__version__ = "0.1.0"
