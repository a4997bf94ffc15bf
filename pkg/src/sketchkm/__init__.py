"""Sketched kernel machines with p-sparsified sketches and Lipschitz losses."""
from ._backend import BACKEND
from .kernels import (KernelSpec, OutputMatrix, cross_gram, gram, gram_rows,
                      kernel_eval, kernel_expansion, output_matrix)
from .losses import LossSpec, loss_subgradient, loss_value, metric
from .sketch import (SketchOperator, expected_active_columns, generate_sketch,
                     optimal_sparsity, rff_features, sketch_gram, sketch_gram_both,
                     sketch_gram_left)
from .solver import (AdamConfig, FittedModel, build_feature_maps, featurize,
                     fit_exact, fit_multioutput_sketched, fit_scalar_sketched,
                     load_model, predict, save_model, solve_krr_exact,
                     solve_krr_sketched)
from .spectrum import k_satisfiable, spectral_profile, theorem_c

__version__ = "0.1.0"
