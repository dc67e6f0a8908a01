"""Data-enabled economic predictive control with learned liftings.

Builds Hankel representations from input/output trajectories, trains
lifting networks and a quadratic economic-cost surrogate, and runs a
regularized convex-QP receding-horizon controller on simulated plants.
"""

from deeepc.errors import (
    DeeepcError,
    DepthExceedsLength,
    DimensionMismatch,
    InsufficientHistory,
    LengthMismatch,
)
from deeepc.trajectory import Dataset, Normalizer, Trajectory

__all__ = [
    "DeeepcError",
    "DepthExceedsLength",
    "DimensionMismatch",
    "InsufficientHistory",
    "LengthMismatch",
    "Trajectory",
    "Dataset",
    "Normalizer",
]
