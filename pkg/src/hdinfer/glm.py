"""ℓ1-penalized GLMs and their reduction to a weighted linear model.

At the penalized fit ``(â, β̂)`` with fitted means ``μ̂`` the working model is

    Y_adj = η̂ + g'(μ̂)(Y − μ̂),   W = diag(1 / (g'(μ̂)² V(μ̂))),

and the linear engines run on ``(√W·Y_adj, √W·X)`` with the noise level
fixed at one.  The intercept direction ``√W·1`` is projected out of both
sides before the engines see the data (Frisch–Waugh), so the engines need
no intercept handling of their own.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from .data import CoefficientEstimate, Dataset, NoiseEstimate
from .errors import ConfigurationError, DataError
from .lasso import (DEFAULT_FOLDS, DEFAULT_GRID_RATIO, DEFAULT_GRID_SIZE,
                    lasso_coordinate_descent, lasso_path_cv, lambda_grid, make_folds, solve_gram)
from .methods import MethodOptions, MethodRun, canonical_method, run_method

log = logging.getLogger(__name__)

FAMILIES = ("gaussian", "binomial", "poisson")
WEIGHT_CLAMP = 1e-10
DEVIANCE_RTOL = 1e-8
MAX_IRLS = 100
MAX_HALVINGS = 30


class GlmConvergenceWarning(UserWarning):
    """IRLS stopped early (separation or iteration limit); last iterate returned."""


@dataclass(frozen=True)
class GlmSpec:
    family: str
    link: Callable  # g(μ)
    inverse: Callable  # g⁻¹(η)
    link_deriv: Callable  # g'(μ)
    variance: Callable  # V(μ)
    deviance_terms: Callable  # unit deviances d(y, μ)

    def deviance(self, y, mu):
        return float(np.sum(self.deviance_terms(y, mu)))

    def weights(self, mu):
        return 1.0 / (self.link_deriv(mu) ** 2 * self.variance(mu))


def _binomial_dev(y, mu):
    return 2.0 * (special.xlogy(y, y / mu) + special.xlogy(1 - y, (1 - y) / (1 - mu)))


def _poisson_dev(y, mu):
    return 2.0 * (special.xlogy(y, y / mu) - (y - mu))


def glm_spec(family: str) -> GlmSpec:
    if family == "gaussian":
        return GlmSpec("gaussian", lambda m: m, lambda e: e, np.ones_like, np.ones_like,
                       lambda y, m: (y - m) ** 2)
    if family == "binomial":
        eps = 1e-15
        return GlmSpec("binomial", special.logit,
                       lambda e: np.clip(special.expit(e), eps, 1 - eps),
                       lambda m: 1.0 / (m * (1.0 - m)), lambda m: m * (1.0 - m), _binomial_dev)
    if family == "poisson":
        return GlmSpec("poisson", np.log, lambda e: np.exp(np.minimum(e, 700.0)),
                       lambda m: 1.0 / m, lambda m: m, _poisson_dev)
    raise ConfigurationError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")


def _as_spec(spec) -> GlmSpec:
    return glm_spec(spec) if isinstance(spec, str) else spec


def check_response(y, family):
    y = np.asarray(y, dtype=float)
    if family == "binomial" and not np.all((y == 0) | (y == 1)):
        raise DataError("binomial response must be coded 0/1")
    if family == "poisson" and not np.all((y >= 0) & (y == np.round(y))):
        raise DataError("poisson response must be nonnegative integers")


@dataclass
class _IrlsState:
    a: float
    beta: np.ndarray
    deviance: float
    iterations: int
    converged: bool
    clamped: int = 0


def _penalized(spec, x, y, a, beta, lam):
    mu = spec.inverse(a + x @ beta)
    dev = spec.deviance(y, mu)
    return dev / (2.0 * y.size) + lam * np.abs(beta).sum(), dev


def _irls(spec: GlmSpec, x, y, lam, a, beta, max_iter=MAX_IRLS, rtol=DEVIANCE_RTOL):
    """Penalized IRLS: each step solves a weighted Lasso on centered working data."""
    n = y.size
    obj, dev = _penalized(spec, x, y, a, beta, lam)
    clamped = 0
    for it in range(1, max_iter + 1):
        eta = a + x @ beta
        mu = spec.inverse(eta)
        w = spec.weights(mu)
        low = w < WEIGHT_CLAMP
        clamped = int(low.sum())
        w = np.where(low, WEIGHT_CLAMP, w)
        z = eta + spec.link_deriv(mu) * (y - mu)
        sw = w.sum()
        xm = w @ x / sw
        zm = w @ z / sw
        xc = x - xm
        zc = z - zm
        wx = xc * w[:, None]
        G = xc.T @ wx / n
        c = wx.T @ zc / n
        yy = float(w @ zc ** 2 / n)
        new_beta, _, _ = solve_gram(G, c, yy, lam, beta, check_kkt=False, n=n)
        new_a = zm - xm @ new_beta
        new_obj, new_dev = _penalized(spec, x, y, new_a, new_beta, lam)
        # step-halving keeps the penalized objective monotone
        for _ in range(MAX_HALVINGS):
            if np.isfinite(new_obj) and new_obj <= obj + 1e-12 * max(abs(obj), 1.0):
                break
            new_beta = 0.5 * (beta + new_beta)
            new_a = 0.5 * (a + new_a)
            new_obj, new_dev = _penalized(spec, x, y, new_a, new_beta, lam)
        done = abs(new_dev - dev) <= rtol * max(abs(new_dev), 0.1)
        a, beta, obj, dev = new_a, new_beta, new_obj, new_dev
        if done:
            return _IrlsState(a, beta, dev, it, True, clamped)
        if spec.family == "binomial" and dev < 1e-8 * n:
            break
    return _IrlsState(a, beta, dev, max_iter, False, clamped)


def _glm_lambda_max(spec, x, y):
    mu0 = float(np.mean(y))
    if spec.family == "poisson" and mu0 <= 0:
        raise DataError("poisson response is identically zero")
    # canonical links: the score at the intercept-only fit is Xᵀ(y − ȳ)/n
    return float(np.max(np.abs(x.T @ (y - mu0)))) / y.size


def _intercept_only(spec, y):
    return float(spec.link(np.clip(np.mean(y), 1e-10, None if spec.family == "poisson"
                                   else 1 - 1e-10)))


def _glm_path(spec, x, y, lams, max_active):
    """Warm-started path; stops once the fit saturates or the support exceeds ``max_active``."""
    n, p = x.shape
    a, beta = _intercept_only(spec, y), np.zeros(p)
    null_dev = spec.deviance(y, np.full(n, np.mean(y)))
    out = []
    for lam in lams:
        st = _irls(spec, x, y, lam, a, beta)
        a, beta = st.a, st.beta
        out.append((a, beta.copy(), st))
        if np.count_nonzero(beta) > max_active or st.deviance <= 1e-3 * null_dev:
            break
    return out


def l1_glm_fit(data: Dataset, spec, lam=None, n_folds=DEFAULT_FOLDS, seed=0,
               grid_size=DEFAULT_GRID_SIZE, grid_ratio=DEFAULT_GRID_RATIO) -> CoefficientEstimate:
    """ℓ1-penalized GLM on the standardized design with an unpenalized intercept.

    ``lam=None`` picks the penalty by K-fold cross-validated deviance.  The
    loss is ``deviance/(2n)``, so the Gaussian family coincides with the
    Lasso and is delegated to it.  The returned intercept is on the original
    scale of the design.
    """
    spec = _as_spec(spec)
    if spec.family == "gaussian":
        if lam is None:
            return lasso_path_cv(data, n_folds, grid_size, grid_ratio, seed)[0]
        return lasso_coordinate_descent(data, lam)
    if lam is not None and (not np.isfinite(lam) or lam < 0):
        raise ConfigurationError(f"lambda must be finite and nonnegative, got {lam}")
    y = data.raw_y
    check_response(y, spec.family)
    x, n = data.x, data.n
    if lam is None:
        lams = lambda_grid(_glm_lambda_max(spec, x, y), grid_size, grid_ratio)
        labels = make_folds(n, n_folds, seed)
        errs, length = [], len(lams)
        for k in range(n_folds):
            tr, te = labels != k, labels == k
            path = _glm_path(spec, x[tr], y[tr], lams, int(tr.sum()) - 1)
            length = min(length, len(path))
            errs.append([spec.deviance(y[te], spec.inverse(a + x[te] @ b)) for a, b, _ in path])
        err = np.array([e[:length] for e in errs]).sum(axis=0)
        idx = int(np.argmin(err))
        path = _glm_path(spec, x, y, lams[:idx + 1], n)
        a, beta, st = path[-1]
        lam = float(lams[len(path) - 1])
    else:
        st = _irls(spec, x, y, lam, _intercept_only(spec, y), np.zeros(data.p))
        a, beta = st.a, st.beta
    if not st.converged:
        warnings.warn(f"IRLS did not converge (deviance {st.deviance:.3g}); possible "
                      "separation, returning the last iterate", GlmConvergenceWarning,
                      stacklevel=2)
    intercept = float(a - data.column_means @ (beta / data.column_scales))
    return CoefficientEstimate(beta, intercept, float(lam), iterations=st.iterations,
                               gap=st.deviance)


@dataclass
class WeightedProblem:
    y_w: np.ndarray  # √W·Y_adj
    x_w: np.ndarray  # √W·X on the original column scale
    weights: np.ndarray
    mu: np.ndarray
    eta: np.ndarray
    beta_init: np.ndarray  # ℓ1 solution, original scale
    intercept: float
    n_clamped: int = 0
    family: str = "gaussian"
    names: list = field(default_factory=list)

    def dataset(self) -> Dataset:
        """Linear-model dataset with the intercept direction ``√W·1`` projected out."""
        u = np.sqrt(self.weights)
        u = u / np.linalg.norm(u)
        x = self.x_w - np.outer(u, u @ self.x_w)
        y = self.y_w - u * (u @ self.y_w)
        return Dataset(x, y, intercept=False, names=self.names, family=self.family)


def build_weighted_problem(data: Dataset, spec, fit: CoefficientEstimate) -> WeightedProblem:
    spec = _as_spec(spec)
    beta = fit.beta / data.column_scales
    eta = fit.intercept + data.raw_x @ beta
    mu = spec.inverse(eta)
    y = data.raw_y
    w = spec.weights(mu)
    low = w < WEIGHT_CLAMP
    if np.any(low):
        warnings.warn(f"{int(low.sum())} IRLS weights clamped at {WEIGHT_CLAMP:g}", stacklevel=2)
        w = np.where(low, WEIGHT_CLAMP, w)
    y_adj = eta + spec.link_deriv(mu) * (y - mu)
    sw = np.sqrt(w)
    return WeightedProblem(sw * y_adj, sw[:, None] * data.raw_x, w, mu, eta, beta,
                           fit.intercept, int(low.sum()), spec.family, list(data.names))


def glm_inference(data: Dataset, spec, method="lasso-proj", opts: MethodOptions | None = None,
                  seed=0, fit: CoefficientEstimate | None = None, lam=None) -> MethodRun:
    """Run a linear engine on the weighted reduction with the noise level fixed at one.

    The Gaussian family is passed to the engine unchanged, with its usual
    noise estimate, so results coincide with the linear-model call.
    """
    spec = _as_spec(spec)
    method = canonical_method(method)
    opts = opts or MethodOptions()
    if spec.family == "gaussian":
        return run_method(data, method, opts, seed)
    if fit is None:
        fit = l1_glm_fit(data, spec, lam, seed=seed)
    wp = build_weighted_problem(data, spec, fit)
    wd = wp.dataset()
    wfit = CoefficientEstimate(wp.beta_init * wd.column_scales, 0.0, fit.lam)
    run = run_method(wd, method, opts, seed, sigma=NoiseEstimate(1.0, "fixed"), fit=wfit)
    run.result.family = spec.family
    run.result.extras.update({"glm_lambda": fit.lam, "n_clamped": wp.n_clamped})
    run.extras["weighted_problem"] = wp
    return run
