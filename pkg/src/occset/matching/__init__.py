"""Set-to-set matching kernels: Chamfer distance, label assignment, Hungarian baseline."""

from .chamfer import (
    MatchReport,
    WeightFn,
    assign_labels,
    chamfer_distance,
    chamfer_distance_reweighted,
    chamfer_gradient,
    finite_difference_gradient,
    gradient_margin,
    point_margins,
)
from .hungarian import Assignment, hungarian_match, pairwise_cost
from .nn_index import L1, L2, NnIndex, auto_cell_size, build_nn_index

__all__ = [
    "Assignment", "L1", "L2", "MatchReport", "NnIndex", "WeightFn",
    "assign_labels", "auto_cell_size", "build_nn_index", "chamfer_distance",
    "chamfer_distance_reweighted", "chamfer_gradient", "finite_difference_gradient",
    "gradient_margin", "point_margins",
    "hungarian_match", "pairwise_cost",
]
