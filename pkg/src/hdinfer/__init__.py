"""Inference for high-dimensional linear and generalized linear models.

Per-variable p-values and confidence intervals from multi sample-splitting,
the desparsified Lasso and Ridge projection; group tests and top-down
cluster testing; stability selection; and a simulation harness.
"""

from .data import CoefficientEstimate, Dataset, NoiseEstimate
from .desparsified import (NodewiseComponents, desparsified_inference, despars_group_test,
                           nodewise_lasso)
from .errors import (ConfigurationError, ConvergenceError, DataError, DegenerateFitError,
                     HdiError, MethodFailure, RankError)
from .glm import GlmSpec, build_weighted_problem, glm_inference, glm_spec, l1_glm_fit
from .hierarchy import (ClusterTree, build_hierarchy, hierarchical_test,
                        simultaneous_group_pvalue)
from .lasso import (cv_lasso, estimate_noise, lasso_coordinate_descent, lasso_path,
                    lasso_path_cv, scaled_lasso_sigma)
from .methods import MethodOptions, group_test, run_method
from .multisplit import (AggregationConfig, aggregate, multi_split_ci, multi_split_inference,
                         single_split)
from .result import InferenceResult
from .ridge import ridge_components, ridge_group_test, ridge_inference
from .simulation import (ScenarioConfig, ScenarioResult, ci_coverage_protocol, generate_coefficients,
                         generate_design, run_scenario)
from .stability import StabilityResult, stability_select
from .stats import adjust_pvalues, ols_low_dim_inference

__version__ = "0.1.0"
