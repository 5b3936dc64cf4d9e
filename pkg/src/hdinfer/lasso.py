"""Lasso solver, λ paths, cross-validation and noise-level estimation.

Objective convention: ``(2n)⁻¹‖y − Xβ‖₂² + λ‖β‖₁`` on the standardized
design, so that ``λ_max = maxⱼ |Xⱼᵀy|/n`` zeroes every coefficient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _cd
from .data import CoefficientEstimate, Dataset, NoiseEstimate
from .errors import ConfigurationError, ConvergenceError, DegenerateFitError

log = logging.getLogger(__name__)

GAP_TOL = 1e-7
MAX_SWEEPS = 100_000
DEFAULT_GRID_SIZE = 100
DEFAULT_GRID_RATIO = 1e-4
DEFAULT_FOLDS = 10


def lambda_max(data: Dataset) -> float:
    _, c, _ = data.gram()
    return float(np.max(np.abs(c)))


def lambda_grid(lam_max, grid_size=DEFAULT_GRID_SIZE, grid_ratio=DEFAULT_GRID_RATIO):
    """Log-spaced decreasing grid from ``lam_max`` to ``lam_max * grid_ratio``."""
    if lam_max <= 0:
        return np.zeros(1)
    return np.exp(np.linspace(np.log(lam_max), np.log(lam_max * grid_ratio), grid_size))


def kkt_violation(G, c, lam, beta, skip=-1):
    """Largest violation of the Lasso optimality conditions at ``beta``.

    Off the active set the condition is ``|grad_k| ≤ λ``; on it,
    ``grad_k = λ sign(β_k)``.
    """
    grad = c - G @ beta
    mask = np.ones(beta.shape[0], dtype=bool)
    if skip >= 0:
        mask[skip] = False
    active = (beta != 0) & mask
    inactive = (~active) & mask
    v_in = np.max(np.abs(grad[inactive]) - lam, initial=0.0)
    v_act = np.max(np.abs(grad[active] - lam * np.sign(beta[active])), initial=0.0)
    return float(max(v_in, v_act, 0.0))


def gap_tolerance(yy, n, tol=GAP_TOL):
    """Absolute duality-gap target ``tol·‖y‖²`` expressed through ``yy = ‖y‖²/n``."""
    return tol * n * max(yy, 1e-300)


def kkt_tolerance(yy, n=1, tol=GAP_TOL):
    # a gap of ε bounds the coordinate-wise KKT residual by √(2ε) (unit-scale columns)
    return 2.0 * np.sqrt(2.0 * gap_tolerance(yy, n, tol)) + 1e-10


def solve_gram(G, c, yy, lam, beta0=None, skip=-1, tol=GAP_TOL, max_sweeps=MAX_SWEEPS,
               check_kkt=True, n=1):
    """Lasso on Gram quantities; returns ``(beta, sweeps, gap)``.

    ``n`` is the sample size behind ``(G, c, yy)``; the gap target is
    ``tol·‖y‖² = tol·n·yy``.  At ``lam = 0`` the gap only closes at
    interpolation, so the KKT residual is driven to ``tol·√yy·1e-3`` instead.
    """
    p = G.shape[0]
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    if skip >= 0:
        beta[skip] = 0.0
    grad = c - G @ beta
    tol_abs = gap_tolerance(yy, n, tol) if lam > 0 else tol * np.sqrt(max(yy, 1e-300)) * 1e-3
    sweeps, gap, ok = _cd.cd_solve(G, c, yy, float(lam), beta, grad, skip, tol_abs, max_sweeps)
    if not ok:
        raise ConvergenceError(
            f"coordinate descent did not converge in {max_sweeps} sweeps (gap {gap:.3g})",
            gap=gap, iterations=sweeps)
    if check_kkt and lam > 0:
        viol = kkt_violation(G, c, lam, beta, skip)
        if viol > kkt_tolerance(yy, n, tol):
            raise ConvergenceError(f"KKT check failed: violation {viol:.3g}", gap=gap,
                                   iterations=sweeps)
    return beta, sweeps, gap


def lasso_coordinate_descent(data: Dataset, lam: float, warm_start=None, *, tol=GAP_TOL,
                             max_sweeps=MAX_SWEEPS) -> CoefficientEstimate:
    """Lasso fit at a single ``lam`` by covariance-update coordinate descent.

    The KKT conditions are verified on the returned coefficients.
    """
    if not data.standardized:
        raise ConfigurationError("lasso_coordinate_descent expects a standardized Dataset")
    if not np.isfinite(lam) or lam < 0:
        raise ConfigurationError(f"lambda must be finite and nonnegative, got {lam}")
    G, c, yy = data.gram()
    beta0 = None if warm_start is None else warm_start.beta
    beta, sweeps, gap = solve_gram(G, c, yy, lam, beta0, tol=tol, max_sweeps=max_sweeps,
                                   n=data.n)
    _, intercept = data.to_original(beta)
    return CoefficientEstimate(beta, intercept, float(lam), iterations=sweeps, gap=gap)


@dataclass
class LassoPath:
    lambdas: np.ndarray
    betas: np.ndarray  # (n_fit, p), standardized scale
    n_fit: int


def path_gram(G, c, yy, lams, skip=-1, tol=GAP_TOL, early_stop=True, max_active=None, n=1,
              truncate=True):
    p = G.shape[0]
    if max_active is None:
        max_active = p
    betas, n_fit, gaps, ok = _cd.cd_path(G, c, yy, np.asarray(lams, dtype=float), skip,
                                         gap_tolerance(yy, n, tol), MAX_SWEEPS, early_stop,
                                         max_active)
    if not ok:
        if not truncate or n_fit < 2:
            raise ConvergenceError("coordinate descent did not converge along the path",
                                   gap=float(gaps[n_fit - 1]))
        # the saturated tail of a path can stall; keep the converged prefix
        log.warning("path stopped at grid point %d: gap %.3g above target", n_fit - 1,
                    gaps[n_fit - 1])
        n_fit -= 1
    return betas[:n_fit], n_fit


def lasso_path(data: Dataset, lambdas=None, grid_size=DEFAULT_GRID_SIZE,
               grid_ratio=DEFAULT_GRID_RATIO, early_stop=True) -> LassoPath:
    G, c, yy = data.gram()
    if lambdas is None:
        lambdas = lambda_grid(lambda_max(data), grid_size, grid_ratio)
    betas, n_fit = path_gram(G, c, yy, lambdas, early_stop=early_stop,
                             max_active=data.n - 1, n=data.n)
    return LassoPath(np.asarray(lambdas)[:n_fit], betas, n_fit)


def make_folds(n, n_folds, seed):
    """Fold label per sample; raises if any fold has fewer than two samples."""
    if not 3 <= n_folds <= n:
        raise ConfigurationError(f"n_folds must lie in [3, {n}], got {n_folds}")
    rng = np.random.default_rng(seed)
    labels = np.empty(n, dtype=int)
    labels[rng.permutation(n)] = np.arange(n) % n_folds
    if np.min(np.bincount(labels, minlength=n_folds)) < 2:
        raise ConfigurationError(
            f"{n_folds} folds on {n} samples leaves a fold with fewer than 2 samples")
    return labels


def fold_gram(x, y, train):
    """Training-fold centering and Gram quantities for rows ``train``."""
    xt = x[train]
    mx = xt.mean(axis=0)
    xt = xt - mx
    m = xt.shape[0]
    G = xt.T @ xt / m
    if y is None:
        return G, mx
    yt = y[train]
    my = yt.mean()
    yt = yt - my
    return G, mx, xt.T @ yt / m, float(yt @ yt / m), my


class PathRunner:
    """Resumable warm-started Lasso path on Gram quantities.

    ``advance(lams)`` continues the path over the next grid points; the
    runner becomes ``done`` when the path saturates (early-stop rules of the
    kernel) or, for a stalled tail, keeps only its converged prefix.
    """

    def __init__(self, G, c, yy, skip=-1, tol=GAP_TOL, max_active=None, n=1, early_stop=True):
        self.G, self.c, self.yy, self.skip = G, np.asarray(c, dtype=float), float(yy), int(skip)
        self.tol_abs = gap_tolerance(yy, n, tol)
        self.max_active = G.shape[0] if max_active is None else int(max_active)
        self.early_stop = early_stop
        self.beta = np.zeros(G.shape[0])
        self.grad = self.c.copy()
        if skip >= 0:
            self.grad[skip] = 0.0
        self.prev_dev = 0.0
        self.done = False
        self._blocks = []
        self.length = 0

    def advance(self, lams):
        if self.done or len(lams) == 0:
            return 0
        betas, n_fit, gaps, ok, stopped, self.prev_dev = _cd.cd_path_resume(
            self.G, self.c, self.yy, np.asarray(lams, dtype=float), self.skip, self.tol_abs,
            MAX_SWEEPS, self.early_stop, self.max_active, self.beta, self.grad, self.prev_dev)
        if not ok:
            if self.length + n_fit < 2:
                raise ConvergenceError("coordinate descent did not converge along the path",
                                       gap=float(gaps[n_fit - 1]))
            # the saturated tail of a path can stall; keep the converged prefix
            log.warning("path stopped at grid point %d: gap %.3g above target",
                        self.length + n_fit - 1, gaps[n_fit - 1])
            n_fit -= 1
            self.done = True
        self.done = self.done or stopped
        self._blocks.append(betas[:n_fit])
        self.length += n_fit
        return n_fit

    @property
    def betas(self):
        if not self._blocks:
            return np.zeros((0, self.G.shape[0]))
        if len(self._blocks) > 1:
            self._blocks = [np.vstack(self._blocks)]
        return self._blocks[0]


CV_PATIENCE = 25
CV_CHUNK = 10


def lockstep_cv(runners, tests, lams, patience=CV_PATIENCE, chunk=CV_CHUNK):
    """Cross-validation errors of several fold paths advanced in lockstep.

    ``runners[k]`` is a PathRunner on the training part of fold k (or None
    for a constant response, predicted by its mean) and ``tests[k]`` the
    training-centered ``(x_test, y_test)``.  Paths advance chunk by chunk; with
    ``patience`` set, the search stops once the mean-error minimum lies
    ``patience`` grid points behind the last evaluated one.  Returns the
    ``(n_folds, length)`` error matrix.
    """
    length = len(lams)
    errs = [[] for _ in runners]
    pos = 0
    while pos < length:
        stop = min(pos + chunk, length)
        for k, (run, (tx, ty)) in enumerate(zip(runners, tests)):
            if run is None:
                errs[k].append(np.full(stop - pos, np.mean(ty ** 2)))
                continue
            before = run.length
            run.advance(lams[pos:stop])
            b = run.betas[before:run.length]
            errs[k].append(np.mean((ty[:, None] - tx @ b.T) ** 2, axis=0))
            if run.length < stop:
                length = min(length, run.length)
        pos = stop
        cur = min(pos, length)
        mean = np.mean([np.concatenate(e)[:cur] for e in errs], axis=0)
        if patience is not None and cur - 1 - int(np.argmin(mean)) >= patience:
            length = cur
            break
    return np.array([np.concatenate(e)[:length] for e in errs])


@dataclass
class CVResult:
    lambdas: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    index: int
    fit: CoefficientEstimate

    @property
    def lambda_cv(self):
        return float(self.lambdas[self.index])


def cv_lasso(data: Dataset, n_folds=DEFAULT_FOLDS, grid_size=DEFAULT_GRID_SIZE,
             grid_ratio=DEFAULT_GRID_RATIO, seed=0, patience=CV_PATIENCE) -> CVResult:
    """K-fold cross-validated Lasso on a shared log grid.

    Fold paths stop early once the model saturates and, with ``patience``
    set, once the CV minimum is ``patience`` grid points behind (pass
    ``patience=None`` to evaluate the whole grid).
    """
    x, y, n = data.x, data.y, data.n
    labels = make_folds(n, n_folds, seed)
    lams = lambda_grid(lambda_max(data), grid_size, grid_ratio)
    runners, tests = [], []
    for k in range(n_folds):
        train = labels != k
        G, mx, c, yy, my = fold_gram(x, y, train)
        m = int(train.sum())
        runners.append(PathRunner(G, c, yy, max_active=m - 1, n=m) if yy > 0 else None)
        tests.append((x[~train] - mx, y[~train] - my))
    err = lockstep_cv(runners, tests, lams, patience)
    G, c, yy = data.gram()
    full = PathRunner(G, c, yy, max_active=n - 1, n=n)
    full.advance(lams[:err.shape[1]])
    length = min(err.shape[1], full.length)
    err = err[:, :length]
    cv_mean = err.mean(axis=0)
    cv_se = err.std(axis=0, ddof=1) / np.sqrt(n_folds)
    idx = int(np.argmin(cv_mean))
    beta = full.betas[idx].copy()
    _, intercept = data.to_original(beta)
    fit = CoefficientEstimate(beta, intercept, float(lams[idx]))
    return CVResult(lams[:length], cv_mean, cv_se, idx, fit)


def lasso_path_cv(data: Dataset, n_folds=DEFAULT_FOLDS, grid_size=DEFAULT_GRID_SIZE,
                  grid_ratio=DEFAULT_GRID_RATIO, seed=0, patience=CV_PATIENCE):
    """Return ``(fit, lambda_cv)`` at the λ minimizing mean CV squared error."""
    res = cv_lasso(data, n_folds, grid_size, grid_ratio, seed, patience)
    return res.fit, res.lambda_cv


def scaled_lasso_sigma(data: Dataset, lam0=None, tol=1e-6, max_iter=200):
    """Joint estimate of coefficients and noise level (scaled Lasso).

    Alternates a Lasso fit at penalty ``σ̂·λ₀`` with ``σ̂² = ‖y − Xβ̂‖²/n``
    starting from ``σ̂ = ‖y‖/√n``.  ``λ₀`` defaults to ``√(2 log p / n)``.
    """
    G, c, yy = data.gram()
    n, p = data.n, data.p
    if lam0 is None:
        lam0 = np.sqrt(2.0 * np.log(max(p, 2)) / n)
    sigma = np.sqrt(yy)
    if sigma < 1e-10:
        raise DegenerateFitError("response is constant; noise level collapses to zero")
    beta = np.zeros(p)
    for it in range(max_iter):
        beta, _, _ = solve_gram(G, c, yy, sigma * lam0, beta, n=n)
        r2 = yy - 2 * c @ beta + beta @ G @ beta
        new = np.sqrt(max(r2, 0.0))
        if new < 1e-10:
            raise DegenerateFitError("scaled Lasso interpolates the data (sigma -> 0)")
        done = abs(new - sigma) < tol * sigma
        sigma = new
        if done:
            break
    _, intercept = data.to_original(beta)
    fit = CoefficientEstimate(beta, intercept, float(sigma * lam0), iterations=it + 1)
    return fit, NoiseEstimate(float(sigma), "scaled-lasso")


def cv_residual_sigma(data: Dataset, seed=0, fit: CoefficientEstimate | None = None):
    """Noise level from the residual sum of squares of the CV-Lasso fit."""
    if fit is None:
        fit, _ = lasso_path_cv(data, seed=seed)
    resid = data.y - data.x @ fit.beta
    dof = data.n - len(fit.support) - (1 if data.intercept else 0)
    if dof <= 0:
        raise DegenerateFitError("CV-Lasso leaves no residual degrees of freedom")
    sigma = np.sqrt(resid @ resid / dof)
    if sigma < 1e-10:
        raise DegenerateFitError("CV-Lasso interpolates the data (sigma -> 0)")
    return NoiseEstimate(float(sigma), "cv-lasso-residual")


def estimate_noise(data: Dataset, method="scaled-lasso", seed=0, fit=None) -> NoiseEstimate:
    if method == "scaled-lasso":
        return scaled_lasso_sigma(data)[1]
    if method == "cv-lasso-residual":
        return cv_residual_sigma(data, seed, fit)
    raise ConfigurationError(f"unknown noise estimator {method!r}")
