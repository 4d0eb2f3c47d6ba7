"""Discrete density estimation with mixtures of low-rank nonnegative tensors.

Categorical samples become a sparse normalized count tensor; the library
fits convex mixtures of CP / Tucker / tensor-train components (plus a
uniform background term) by alpha-divergence minimization with closed-form
updates at every step, and ships the evaluation protocols (density scoring,
conditional classification, grid search) plus a CLI on top.
"""

from .divergence import (
    alpha_divergence,
    cross_entropy,
    negative_log_likelihood,
    objective_L,
)
from .errors import DomainError, InternalError
from .fitting import ComponentSpec, FitConfig, FitTrace, fit, fit_tt_scalable, should_stop
from .manybody import (
    compute_responsibilities,
    manybody_oracle,
    mstep_cp,
    mstep_tt,
    mstep_tucker,
    update_weights,
)
from .models import (
    BackgroundComponent,
    CPComponent,
    MixtureModel,
    TTComponent,
    TuckerComponent,
    init_component,
    materialize_dense,
    tt_cumulants,
)
from .tensors import (
    DenseTensor,
    EmpiricalTensor,
    build_empirical,
    dense_to_empirical,
    log_cardinality,
    normalize_dense,
)

__version__ = "0.1.0"

__all__ = [
    "BackgroundComponent",
    "CPComponent",
    "ComponentSpec",
    "DenseTensor",
    "DomainError",
    "EmpiricalTensor",
    "FitConfig",
    "FitTrace",
    "InternalError",
    "MixtureModel",
    "TTComponent",
    "TuckerComponent",
    "alpha_divergence",
    "build_empirical",
    "compute_responsibilities",
    "cross_entropy",
    "dense_to_empirical",
    "fit",
    "fit_tt_scalable",
    "init_component",
    "log_cardinality",
    "manybody_oracle",
    "materialize_dense",
    "mstep_cp",
    "mstep_tt",
    "mstep_tucker",
    "negative_log_likelihood",
    "normalize_dense",
    "objective_L",
    "should_stop",
    "tt_cumulants",
    "update_weights",
]
