"""Numerical machinery for McKean-Vlasov SDEs.

Mean-field particle simulation, frozen-coefficient Gaussian kernels, the
parametrix series for decoupled transition densities, Bismut-formula
gradients, intrinsic (Lions) derivative estimators along push-forward
perturbations, and variation-norm-vs-Wasserstein bound experiments.
"""

from .exceptions import (CloudSizeError, ConditioningError, ConfigError,
                         CoverageError, DivergenceError,
                         InvalidPerturbationError, MVParametrixError,
                         ModelValidationError, PairingError)
from .model import (BUILTIN_MODELS, MeasureFlow, ModelSpec, ParticleCloud,
                    PerturbationMap, builtin_model, cloud_cov, cloud_mean,
                    load_cloud, push_forward, save_cloud, validate_model)
from .kernels import (FrozenParams, ParametrixEngine, ParametrixResult,
                      QuadratureGrid, ReferenceKernel, beta_product_identity,
                      frozen_density, frozen_density_grad, frozen_density_hess,
                      frozen_params, parametrix_H, parametrix_H_m,
                      parametrix_density, reference_kernel)
from .solver import (DecoupledRun, MeanFieldVariationRun, SolverConfig,
                     sample_cloud, solve_decoupled, solve_mckean_vlasov,
                     substream, variation_frozen, variation_meanfield)
from .estimators import (DecompositionResult, GradientEstimate, SemigroupEval,
                         bismut_gradient, bound_check_est2,
                         derivative_decomposition, lions_derivative_fd,
                         semigroup_eval, var_distance, w2_distance)

__version__ = "0.1.0"

__all__ = [
    "MVParametrixError", "ModelValidationError", "InvalidPerturbationError",
    "DivergenceError", "PairingError", "CoverageError", "ConditioningError",
    "CloudSizeError", "ConfigError",
    "ModelSpec", "ParticleCloud", "MeasureFlow", "PerturbationMap",
    "push_forward", "cloud_mean", "cloud_cov", "builtin_model",
    "validate_model", "save_cloud", "load_cloud", "BUILTIN_MODELS",
    "FrozenParams", "ReferenceKernel", "QuadratureGrid", "ParametrixResult",
    "ParametrixEngine", "frozen_params", "frozen_density",
    "frozen_density_grad", "frozen_density_hess", "reference_kernel",
    "parametrix_H", "parametrix_H_m", "parametrix_density",
    "beta_product_identity",
    "SolverConfig", "DecoupledRun", "MeanFieldVariationRun", "substream",
    "sample_cloud", "solve_mckean_vlasov", "solve_decoupled",
    "variation_frozen", "variation_meanfield",
    "GradientEstimate", "SemigroupEval", "DecompositionResult",
    "bismut_gradient", "semigroup_eval", "lions_derivative_fd",
    "derivative_decomposition", "w2_distance", "var_distance",
    "bound_check_est2",
    "__version__",
]
