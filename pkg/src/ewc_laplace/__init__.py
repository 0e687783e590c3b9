"""Sequential consolidation of quadratic (Laplace) penalties for continual learning."""

from .net import Architecture, TaskDataset
from .consolidate import (ConsolidatedPosterior, Hyperparams, PenaltyBank,
                          QuadraticPenalty)
from .tasks import TaskSpec

__version__ = "0.1.0"

__all__ = ["Architecture", "TaskDataset", "ConsolidatedPosterior", "Hyperparams",
           "PenaltyBank", "QuadraticPenalty", "TaskSpec"]
