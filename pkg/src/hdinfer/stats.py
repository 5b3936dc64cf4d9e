"""Classical least-squares inference, multiplicity corrections and diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .data import Dataset
from .errors import ConfigurationError, RankError

PVALUE_FLOOR = 1e-300
ADJUST_METHODS = ("bonferroni", "holm", "benjamini-yekutieli", "none")


def normal_pvalue(z):
    """Two-sided p-value ``2(1 − Φ(|z|))``, computed via the survival function."""
    return 2.0 * stats.norm.sf(np.abs(z))


@dataclass
class OlsResult:
    estimate: np.ndarray
    se: np.ndarray
    tstat: np.ndarray
    pvalue: np.ndarray
    dof: int
    sigma: float

    def pvalue_at(self, c):
        """Two-sided p-values for ``H₀: βⱼ = c`` (``c`` broadcast over variables)."""
        t = (self.estimate - c) / self.se
        return np.maximum(2.0 * stats.t.sf(np.abs(t), self.dof), PVALUE_FLOOR)


def ols_low_dim_inference(x_sub, y, intercept=True) -> OlsResult:
    """OLS t-tests for each column of ``x_sub`` (intercept fitted, not reported).

    Degrees of freedom are ``n − k − 1`` with an intercept.  Exact fits give
    p-values at the floor ``PVALUE_FLOOR``.
    """
    x_sub = np.asarray(x_sub, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if x_sub.ndim == 1:
        x_sub = x_sub[:, None]
    n, k = x_sub.shape
    if intercept:
        xs = x_sub - x_sub.mean(axis=0)
        yc = y - y.mean()
    else:
        xs, yc = x_sub, y
    dof = n - k - (1 if intercept else 0)
    if dof < 1:
        raise RankError(f"{k} columns on {n} rows leave no residual degrees of freedom",
                        list(range(k)))
    if k == 0:
        return OlsResult(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), dof,
                         float(np.sqrt(yc @ yc / dof)))
    q, r, piv = linalg.qr(xs, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(n, k) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > max(tol, 1e-10 * (diag[0] if diag.size else 0.0))))
    if rank < k:
        bad = sorted(int(j) for j in piv[rank:])
        raise RankError(f"design is rank deficient; collinear columns {bad}", bad)
    rinv = linalg.solve_triangular(r, np.eye(k))
    coef_p = rinv @ (q.T @ yc)
    beta = np.empty(k)
    beta[piv] = coef_p
    resid = yc - xs @ beta
    sigma = float(np.sqrt(resid @ resid / dof))
    cov_diag = np.empty(k)
    cov_diag[piv] = np.sum(rinv ** 2, axis=1)
    se = sigma * np.sqrt(cov_diag)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / np.where(se > 0, se, 1.0), np.inf * np.sign(beta))
    pval = np.maximum(2.0 * stats.t.sf(np.abs(t), dof), PVALUE_FLOOR)
    pval = np.where(np.isnan(pval), 1.0, pval)
    return OlsResult(beta, se, t, pval, dof, sigma)


def adjust_pvalues(p, method="holm"):
    """Multiplicity-adjusted p-values, clipped to [0, 1].

    ``holm`` controls the FWER by the step-down Bonferroni procedure;
    ``benjamini-yekutieli`` controls the FDR under arbitrary dependence.
    """
    p = np.asarray(p, dtype=float)
    if p.size and (np.any(p < 0) or np.any(p > 1) or np.any(np.isnan(p))):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0 or method == "none":
        return p.copy()
    if method == "bonferroni":
        return np.minimum(p * m, 1.0)
    order = np.argsort(p, kind="mergesort")
    ps = p[order]
    ranks = np.arange(1, m + 1)
    if method == "holm":
        adj = np.maximum.accumulate(ps * (m - ranks + 1))
    elif method == "benjamini-yekutieli":
        harmonic = np.sum(1.0 / ranks)
        adj = np.minimum.accumulate((ps * m * harmonic / ranks)[::-1])[::-1]
    else:
        raise ConfigurationError(f"unknown adjustment method {method!r}")
    out = np.empty(m)
    out[order] = np.minimum(adj, 1.0)
    return out


@dataclass
class CompatibilityDiagnostic:
    value: float
    n_draws: int
    label: str = ("random-search estimate of the compatibility constant phi0^2; "
                  "biased upward (true constant is an infimum)")


def compatibility_diagnostic(data: Dataset, support, n_draws=1000, seed=0,
                             batch=2000) -> CompatibilityDiagnostic:
    """Smallest ``βᵀΣ̂β·s₀/‖β_S‖₁²`` over random β in the cone ``‖β_Sᶜ‖₁ ≤ 3‖β_S‖₁``.

    Half of the draws put mass only on the support; the rest spread a random
    fraction of the allowed ℓ1 budget over the complement.
    """
    support = np.unique(np.asarray(support, dtype=int))
    if support.size == 0:
        raise ConfigurationError("support must be nonempty")
    if n_draws < 100:
        raise ConfigurationError("n_draws must be at least 100")
    x, n, p = data.x, data.n, data.p
    s0 = support.size
    comp = np.setdiff1d(np.arange(p), support)
    rng = np.random.default_rng(seed)
    best = np.inf
    done = 0
    while done < n_draws:
        m = min(batch, n_draws - done)
        b = np.zeros((m, p))
        bs = rng.standard_normal((m, s0))
        b[:, support] = bs
        l1s = np.abs(bs).sum(axis=1)
        if comp.size:
            bc = rng.laplace(size=(m, comp.size)) * (rng.random((m, comp.size)) < 0.2)
            l1c = np.abs(bc).sum(axis=1)
            frac = rng.random(m) * (np.arange(m) % 2 == 1)
            scale = np.where(l1c > 0, 3.0 * l1s * frac / np.where(l1c > 0, l1c, 1.0), 0.0)
            b[:, comp] = bc * scale[:, None]
        fitted = b @ x.T
        quad = np.sum(fitted ** 2, axis=1) / n
        best = min(best, float(np.min(quad * s0 / l1s ** 2)))
        done += m
    return CompatibilityDiagnostic(best, n_draws)


@dataclass
class GroupTestResult:
    pvalue: float
    statistic: float
    n_mc: int
    covariance_repaired: bool = False
    min_eigenvalue: float = 0.0


def repair_covariance(cov, rel_tol=1e-8):
    """Symmetrize and clip negative eigenvalues at zero.

    Returns ``(factor, repaired, min_eig)`` with ``factor @ factor.T`` the
    repaired matrix; ``repaired`` is True when an eigenvalue below
    ``-rel_tol·max_eig`` had to be clipped.
    """
    cov = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
    w, v = np.linalg.eigh(cov)
    top = max(float(w[-1]), 0.0)
    min_eig = float(w[0])
    repaired = min_eig < -rel_tol * max(top, 1e-300)
    return v * np.sqrt(np.clip(w, 0.0, None)), repaired, min_eig


def max_statistic_pvalue(observed, cov, weights=None, offsets=None, n_mc=10_000, seed=0,
                         chunk=2_000):
    """Monte-Carlo p-value of ``observed`` against ``max_j (a_j |W_j| + d_j)``.

    ``W ~ N(0, cov)``.  Draws are generated in chunks, each from its own
    counter-based stream ``(seed, chunk index)``, and the p-value uses the
    ``(1 + #exceed)/(n_mc + 1)`` finite-sample form.
    """
    cov = np.atleast_2d(cov)
    g = cov.shape[0]
    if g == 0:
        raise ConfigurationError("group must be nonempty")
    if n_mc < 1:
        raise ConfigurationError("n_mc must be positive")
    a = np.ones(g) if weights is None else np.asarray(weights, dtype=float)
    d = np.zeros(g) if offsets is None else np.asarray(offsets, dtype=float)
    factor, repaired, min_eig = repair_covariance(cov)
    exceed = 0
    done = 0
    for k in range(-(-n_mc // chunk)):
        m = min(chunk, n_mc - done)
        z = np.random.default_rng([seed, k]).standard_normal((m, g))
        null = np.max(np.abs(z @ factor.T) * a + d, axis=1)
        exceed += int(np.sum(null >= observed))
        done += m
    return GroupTestResult((1.0 + exceed) / (n_mc + 1.0), float(observed), n_mc, repaired, min_eig)
