"""Recovery of governing equations with tensor-train coefficient models."""

from .basis import Basis, DictionaryStack, basis_change_matrix, build_dictionary, make_basis
from .models import (
    LocalSystem,
    SelectionModel,
    build_selection_maps,
    equation_tt,
    evaluate_model,
    evaluate_tt,
    fput_ground_truth,
    fput_rhs,
    independent_model,
    local_system_model,
    local_system_rhs,
    model_relative_error,
    random_local_system,
    to_single_tt,
)
from .tt import (
    TensorTrain,
    TTError,
    change_physical_basis,
    tt_add,
    tt_from_dense,
    tt_inner,
    tt_orthogonalize,
    tt_round,
    tt_scale,
    tt_to_dense,
    unfolding_ranks,
)

__all__ = [
    "Basis",
    "DictionaryStack",
    "LocalSystem",
    "SelectionModel",
    "TensorTrain",
    "TTError",
    "basis_change_matrix",
    "build_dictionary",
    "build_selection_maps",
    "change_physical_basis",
    "equation_tt",
    "evaluate_model",
    "evaluate_tt",
    "fput_ground_truth",
    "fput_rhs",
    "independent_model",
    "local_system_model",
    "local_system_rhs",
    "make_basis",
    "model_relative_error",
    "random_local_system",
    "to_single_tt",
    "tt_add",
    "tt_from_dense",
    "tt_inner",
    "tt_orthogonalize",
    "tt_round",
    "tt_scale",
    "tt_to_dense",
    "unfolding_ranks",
]

__version__ = "0.1.0"
