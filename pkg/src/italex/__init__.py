"""Level-set expansion (ITALEX) for simple convex bilevel problems.

Minimize an outer function ``omega`` over the minimizers of an inner composite
problem ``phi = f + g``.
"""

from .baselines import BaselineConfig, run_baseline
from .errors import (BudgetExhausted, InvalidArgument, ItalexError, NumericalInconsistency,
                     UnsupportedConfiguration)
from .geometry import ElasticNet, EllipsoidNorm, L1Norm, SquaredQNorm, validate_error_bound
from .oracles import OracleOutcome, approximation_oracle, expansion_oracle
from .problem import (BilevelInstance, Box, LeastSquares, LiftedPoint, NonNegative, Zero,
                      load_instance, save_instance, toy_instance)
from .solver import SolveReport, italex_ct, italex_ft, italex_smooth, iteration_budget

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig", "BilevelInstance", "Box", "BudgetExhausted", "ElasticNet",
    "EllipsoidNorm", "InvalidArgument", "ItalexError", "L1Norm", "LeastSquares",
    "LiftedPoint", "NonNegative", "NumericalInconsistency", "OracleOutcome", "SolveReport",
    "SquaredQNorm", "UnsupportedConfiguration", "Zero", "approximation_oracle",
    "expansion_oracle", "italex_ct", "italex_ft", "italex_smooth", "iteration_budget",
    "load_instance", "run_baseline", "save_instance", "toy_instance", "validate_error_bound",
]
