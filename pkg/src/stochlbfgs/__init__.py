"""Stochastic L-BFGS with Hessian or Gauss-Newton curvature pairs.

The main entry points are re-exported here; see the submodules for the rest.
"""

from .distributed import CommLedger, distributed_recursion_round, shard_batch
from .memory import CurvaturePair, LbfgsMemory
from .optimizer import (
    DivergedError,
    OptimizerConfig,
    RunRecord,
    StochasticLBFGS,
    make_optimizer,
    run,
    solve_full_batch,
)
from .preconditioner import AdamState, DiagonalH0, ScalarH0
from .problems import (
    LeastSquares,
    LogisticRegression,
    MLPClassifier,
    make_problem,
    sample_batch,
    synth_dataset,
)
from .two_loop import classic_two_loop, vector_free_two_loop

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CommLedger",
    "CurvaturePair",
    "DiagonalH0",
    "DivergedError",
    "LbfgsMemory",
    "LeastSquares",
    "LogisticRegression",
    "MLPClassifier",
    "OptimizerConfig",
    "RunRecord",
    "ScalarH0",
    "StochasticLBFGS",
    "classic_two_loop",
    "distributed_recursion_round",
    "make_optimizer",
    "make_problem",
    "run",
    "sample_batch",
    "shard_batch",
    "solve_full_batch",
    "synth_dataset",
    "vector_free_two_loop",
]
