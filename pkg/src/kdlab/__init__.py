"""kdlab: a desk-scale knowledge distillation laboratory.

Builds student classifiers against frozen teachers under a family of
distillation criteria unified by a gradient-weighted quadratic divergence,
runs the model-compression and task-incremental protocols, and numerically
verifies the Taylor/Fisher derivations the criteria rest on.
"""

from . import autodiff, criteria, data, nets, theory
from .autodiff import Tensor
from .criteria import KdCriterion, KdVariant

__all__ = [
    "autodiff",
    "criteria",
    "data",
    "nets",
    "theory",
    "Tensor",
    "KdCriterion",
    "KdVariant",
]

__version__ = "0.1.0"
