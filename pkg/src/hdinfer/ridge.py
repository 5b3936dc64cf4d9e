"""Ridge projection inference with Lasso bias correction and a Δ-bound.

Ridge regression estimates the projection ``θ⁰ = P_R β⁰`` of the truth onto
the row space of X.  The projection bias ``Σ_{k≠j} P_jk β⁰_k / P_jj`` is
corrected with the Lasso; what remains is covered by the conservative bound
``max_{k≠j} |P_jk / P_jj| · (log p / n)^{1/2 − ξ}``, which is added to
interval half-widths and subtracted from |b̂| before computing p-values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import CoefficientEstimate, Dataset, NoiseEstimate
from .errors import ConfigurationError, DegenerateFitError
from .lasso import estimate_noise, lasso_path_cv
from .result import InferenceResult
from .stats import GroupTestResult, adjust_pvalues, max_statistic_pvalue, normal_pvalue

SVD_RTOL = 1e-10
UNDEFINED_PJJ = 1e-8
DEFAULT_XI = 0.05


@dataclass
class RidgeProjectionComponents:
    beta_ridge: np.ndarray  # for the response the components were built with
    p_r: np.ndarray  # (p, p) projector onto the row space of X
    omega_r: np.ndarray  # (p, p)
    lambda_ridge: float
    delta_bound: np.ndarray  # σ-free bound, standardized scale
    xi: float
    operator: np.ndarray  # (p, n), β̂_Ridge = operator @ y
    rank: int

    @property
    def p(self):
        return self.p_r.shape[0]


def ridge_components(data: Dataset, lambda_ridge=None, xi=DEFAULT_XI) -> RidgeProjectionComponents:
    """Projector, Ridge operator, covariance Ω_R and Δ-bounds from one SVD of X.

    ``lambda_ridge`` defaults to ``1/n``.  Singular values below
    ``1e-10·max`` are treated as zero in the generalized inverse.
    """
    n, p = data.n, data.p
    lam = 1.0 / n if lambda_ridge is None else float(lambda_ridge)
    if not (np.isfinite(lam) and lam > 0):
        raise ConfigurationError(f"lambda_ridge must be positive, got {lambda_ridge}")
    if not 0 < xi < 0.5:
        raise ConfigurationError(f"xi must lie in (0, 0.5), got {xi}")
    u, d, vt = np.linalg.svd(data.x, full_matrices=False)
    if d.size == 0 or d[0] <= 0:
        raise DegenerateFitError("design matrix is zero")
    r = int(np.sum(d > SVD_RTOL * d[0]))
    u, d, v = u[:, :r], d[:r], vt[:r].T
    p_r = v @ v.T
    ev = d ** 2 / n  # nonzero eigenvalues of Σ̂
    operator = (v * ((d / n) / (ev + lam))) @ u.T
    omega = (v * (ev / (ev + lam) ** 2)) @ v.T / n
    omega = 0.5 * (omega + omega.T)
    diag = np.diag(p_r)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(p_r / diag[:, None])
    np.fill_diagonal(ratio, 0.0)
    ratio = np.where(np.isfinite(ratio), ratio, 0.0)
    rate = (np.log(p) / n) ** (0.5 - xi) if p > 1 else 0.0
    delta = ratio.max(axis=1) * rate if p > 1 else np.zeros(1)
    return RidgeProjectionComponents(operator @ data.y, p_r, omega, lam, delta, xi, operator, r)


@dataclass
class RidgeResult(InferenceResult):
    b_std: np.ndarray = field(default_factory=lambda: np.zeros(0))
    se_std: np.ndarray = field(default_factory=lambda: np.zeros(0))
    delta_std: np.ndarray = field(default_factory=lambda: np.zeros(0))


def ridge_pvalues(b, se, delta):
    """``2(1 − Φ((|b| − Δ)₊ / se))``; ``se`` already includes the 1/|P_jj| factor."""
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, np.maximum(np.abs(b) - delta, 0.0) / np.where(se > 0, se, 1.0), 0.0)
    return normal_pvalue(z)


def ridge_inference(data: Dataset, comps: RidgeProjectionComponents,
                    sigma: NoiseEstimate | None = None, fit: CoefficientEstimate | None = None,
                    level=0.95, adjust="holm", seed=0, noise_method="scaled-lasso") -> RidgeResult:
    """Bias-corrected Ridge estimates, Δ-inflated p-values and intervals.

    The Δ-bound is expressed in units of the noise level, so it is scaled by
    ``σ̂`` here; this keeps the procedure equivariant under ``y ↦ c·y``.
    """
    if not 0 < level < 1:
        raise ConfigurationError("level must lie in (0, 1)")
    if fit is None:
        fit, _ = lasso_path_cv(data, seed=seed)
    if sigma is None:
        sigma = estimate_noise(data, noise_method, seed=seed, fit=fit)
    pr = comps.p_r
    diag = np.diag(pr)
    ok = np.abs(diag) >= UNDEFINED_PJJ
    safe = np.where(ok, diag, 1.0)
    beta_ridge = comps.operator @ data.y
    beta = fit.beta
    b = (beta_ridge - pr @ beta + diag * beta) / safe
    se = sigma.sigma * np.sqrt(np.clip(np.diag(comps.omega_r), 0.0, None)) / np.abs(safe)
    delta = sigma.sigma * comps.delta_bound
    p_raw = np.where(ok, ridge_pvalues(b, se, delta), 1.0)
    q = stats.norm.ppf(0.5 + level / 2.0)
    half = delta + q * se
    scale = data.column_scales
    est = np.where(ok, b / scale, np.nan)
    return RidgeResult(
        method="ridge-proj", estimate=est, se=np.where(ok, se / scale, np.nan), p_raw=p_raw,
        p_adjusted=adjust_pvalues(p_raw, adjust), ci_lower=est - half / scale,
        ci_upper=est + half / scale, level=level, sigma=sigma.sigma, defined=ok, adjust=adjust,
        family=data.family, names=list(data.names),
        extras={"noise_method": sigma.method, "lambda_ridge": comps.lambda_ridge,
                "xi": comps.xi, "lambda_lasso": fit.lam},
        b_std=b, se_std=se, delta_std=delta)


def ridge_group_test(comps: RidgeProjectionComponents, result: RidgeResult, group, n_mc=10_000,
                     seed=0) -> GroupTestResult:
    """Max-statistic test of ``H₀: βⱼ = 0 for all j in group``.

    Observed ``max_j σ̂⁻¹ Ω_jj^{-1/2} |b̂ⱼ|`` against the simulated upper
    bound ``max_j (Ω_jj^{-1/2}|Wⱼ|/|P_jj| + Ω_jj^{-1/2} Δⱼ)``,
    ``W ~ N(0, Ω_R,GG)``.
    """
    group = np.unique(np.asarray(group, dtype=int))
    if group.size == 0:
        raise ConfigurationError("group must be nonempty")
    if n_mc < 10_000:
        raise ConfigurationError("n_mc must be at least 10^4")
    keep = group[result.defined[group]]
    if keep.size < group.size:
        warnings.warn("undefined variables dropped from the group test", stacklevel=2)
    if keep.size == 0:
        return GroupTestResult(1.0, 0.0, n_mc)
    om = comps.omega_r[np.ix_(keep, keep)]
    root = np.sqrt(np.diag(om))
    pjj = np.abs(np.diag(comps.p_r)[keep])
    observed = float(np.max(np.abs(result.b_std[keep]) / (result.sigma * root)))
    res = max_statistic_pvalue(observed, om, 1.0 / (root * pjj), comps.delta_bound[keep] / root,
                               n_mc, seed)
    if res.covariance_repaired:
        warnings.warn(f"Ω_R restricted to the group is not PSD (min eigenvalue "
                      f"{res.min_eigenvalue:.3g}); negative eigenvalues clipped", stacklevel=2)
    return res
