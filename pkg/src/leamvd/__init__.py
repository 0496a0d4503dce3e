"""Linear-memory evolutionary optimizer with RBM/DBN pretraining harness."""

from leamvd.objectives import ObjectiveFn, ellipsoid, rosenbrock, sphere
from leamvd.optimizer import (
    GaussianAroundSeed,
    OptimizerConfig,
    RunResult,
    UniformBounds,
    run,
)

__all__ = [
    "GaussianAroundSeed",
    "ObjectiveFn",
    "OptimizerConfig",
    "RunResult",
    "UniformBounds",
    "ellipsoid",
    "rosenbrock",
    "run",
    "sphere",
]
