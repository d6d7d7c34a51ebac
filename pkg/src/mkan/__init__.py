"""mkan: Kolmogorov-Arnold networks with two interchangeable B-spline backends.

The recursive backend evaluates basis functions with the Cox-De Boor
recurrence (cost grows with spline degree); the matrix backend evaluates the
same functions through precomputed per-degree basis matrices (cost nearly
degree-independent).  Both are exposed uniformly through the network layer,
so they can be swapped per call and cross-checked numerically.
"""

from .basis_matrix import BasisMatrix, cached_basis_matrix, compute_basis_matrix, poly_mul_toeplitz
from .datasets import Dataset, gen_feynman, gen_hellokan, normalize_inputs
from .kan import (
    Model,
    NetworkSpec,
    forward,
    init_network,
    layer_forward,
    load_model,
    refine_grid,
    save_model,
    update_grid_from_samples,
)
from .splines import KnotGrid, basis_row, basis_row_derivative, cox_de_boor, make_uniform_grid
from .training import TrainConfig, StepLog, adam_step, backward, rmse, train

__version__ = "0.1.0"

__all__ = [
    "BasisMatrix",
    "Dataset",
    "KnotGrid",
    "Model",
    "NetworkSpec",
    "StepLog",
    "TrainConfig",
    "adam_step",
    "backward",
    "basis_row",
    "basis_row_derivative",
    "cached_basis_matrix",
    "compute_basis_matrix",
    "cox_de_boor",
    "forward",
    "gen_feynman",
    "gen_hellokan",
    "init_network",
    "layer_forward",
    "load_model",
    "make_uniform_grid",
    "normalize_inputs",
    "poly_mul_toeplitz",
    "refine_grid",
    "rmse",
    "save_model",
    "train",
    "update_grid_from_samples",
    "__version__",
]
