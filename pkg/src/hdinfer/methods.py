"""Uniform entry point for the three linear-model inference engines.

``run_method`` hides the per-method component objects behind one call so
that the GLM adapter, the simulation harness and the command line all run
the engines the same way.  Components depend on the design only and can be
passed back in to reuse them across responses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import CoefficientEstimate, Dataset, NoiseEstimate
from .desparsified import desparsified_inference, despars_group_test, nodewise_lasso
from .errors import ConfigurationError
from .lasso import estimate_noise, lasso_path_cv
from .multisplit import AggregationConfig, multi_split_inference, multi_split_result
from .result import InferenceResult
from .ridge import DEFAULT_XI, ridge_components, ridge_group_test, ridge_inference
from .stats import GroupTestResult

METHODS = ("multi-split", "ridge-proj", "lasso-proj")
ALIASES = {"despars-lasso": "lasso-proj", "desparsified": "lasso-proj",
           "ridge": "ridge-proj", "multisplit": "multi-split"}


def canonical_method(name: str) -> str:
    key = ALIASES.get(name, name)
    if key not in METHODS:
        raise ConfigurationError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return key


@dataclass
class MethodOptions:
    level: float = 0.95
    adjust: str = "holm"
    noise_method: str = "scaled-lasso"
    tuning: str = "zz"  # nodewise tuning for lasso-proj
    nodewise_lambdas: object = None
    lambda_ridge: float | None = None
    xi: float = DEFAULT_XI
    n_splits: int = 50
    gamma_min: float = 0.05
    with_ci: bool = True
    n_jobs: int = 1


@dataclass
class MethodRun:
    method: str
    result: InferenceResult
    components: object = None
    fit: CoefficientEstimate | None = None
    sigma: NoiseEstimate | None = None
    raw: object = None  # MultiSplitResult for multi-split
    extras: dict = field(default_factory=dict)


def make_components(data: Dataset, method: str, opts: MethodOptions | None = None, seed=0):
    """Design-only components (nodewise projections or the Ridge SVD); None for multi-split."""
    opts = opts or MethodOptions()
    method = canonical_method(method)
    if method == "lasso-proj":
        return nodewise_lasso(data, opts.tuning, seed=seed, lambdas=opts.nodewise_lambdas,
                              n_jobs=opts.n_jobs)
    if method == "ridge-proj":
        return ridge_components(data, opts.lambda_ridge, opts.xi)
    return None


def run_method(data: Dataset, method: str, opts: MethodOptions | None = None, seed=0,
               sigma: NoiseEstimate | None = None, fit: CoefficientEstimate | None = None,
               components=None) -> MethodRun:
    """Run one engine; ``fit`` and ``sigma`` default to the CV Lasso and ``opts.noise_method``."""
    opts = opts or MethodOptions()
    method = canonical_method(method)
    if method == "multi-split":
        cfg = AggregationConfig(opts.n_splits, opts.gamma_min)
        raw = multi_split_inference(data, cfg, seed=seed, n_jobs=opts.n_jobs)
        return MethodRun(method, multi_split_result(raw, data, opts.level, opts.with_ci),
                         raw=raw)
    if components is None:
        components = make_components(data, method, opts, seed)
    if fit is None:
        fit, _ = lasso_path_cv(data, seed=seed)
    if sigma is None:
        sigma = estimate_noise(data, opts.noise_method, seed=seed, fit=fit)
    if method == "lasso-proj":
        res = desparsified_inference(data, components, sigma, fit, opts.level, opts.adjust, seed)
    else:
        res = ridge_inference(data, components, sigma, fit, opts.level, opts.adjust, seed)
    return MethodRun(method, res, components, fit, sigma)


def group_test(run: MethodRun, group, n_mc=10_000, seed=0) -> GroupTestResult:
    """Monte-Carlo max-statistic group test for the projection methods."""
    if run.method == "lasso-proj":
        return despars_group_test(run.result, run.components, group, n_mc, seed)
    if run.method == "ridge-proj":
        return ridge_group_test(run.components, run.result, group, n_mc, seed)
    raise ConfigurationError("group tests are available for ridge-proj and lasso-proj only")
