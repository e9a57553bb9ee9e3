"""transferlab: a numerical workbench for transfer-learning experiments.

Two-layer predictors with exact gradients, synthetic source/target task
generators, the standard transfer baselines, a bi-level meta representation
trainer with exact hypergradients, closed-form population-loss oracles for
the quadratic-net theory setting, and a config-driven CLI.
"""

from . import (acceptance, bilevel, configs, datasets, metrics, nets, optim,
               population, reports, semisynthetic, sweeps, theorems, trainers)
from .errors import ContractViolation, NumericsError

__version__ = "0.1.0"

__all__ = [
    "acceptance", "bilevel", "configs", "datasets", "metrics", "nets", "optim",
    "population", "reports", "semisynthetic", "sweeps", "theorems", "trainers",
    "ContractViolation", "NumericsError", "__version__",
]
