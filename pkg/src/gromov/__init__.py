"""Gromov matrices of weighted trees and their use in network inference."""

from .tolerance import EPS
from .tree import (
    Base,
    UnknownNodeError,
    WeightedTree,
    gromov_matrix,
    gromov_product,
    restrict_to_span,
    tree_distance,
)
from .matrix import (
    BuildProgram,
    DirectSum,
    ExtensionI,
    ExtensionII,
    GromovMatrix,
    Init,
    InvalidGromovMatrix,
    ProgramError,
    StructuralError,
    Violation,
    apply_program,
    decompose,
    gv_adjacency,
    is_gromov,
    lambda_min,
    lambda_min_bound,
    on_path,
    on_path_from_base,
    reconstruct_tree,
    validate,
)
from .combination import (
    CombinationWeights,
    convex,
    g_convex,
    g_convex_fixpoint,
    gromovize,
    maxmin_closure,
    trace_path,
)

__version__ = "0.1.0"
