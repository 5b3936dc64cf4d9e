"""Single and multi sample-splitting p-values with quantile aggregation.

Each split selects variables on one half of the sample and runs classical
OLS t-tests on the other half.  Per-split Bonferroni-corrected p-values are
aggregated over B splits by a searched empirical quantile, which yields
FWER-adjusted p-values; confidence intervals are obtained by inverting the
aggregated test.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import Dataset
from .errors import ConfigurationError, HdiError, MethodFailure, RankError
from .lasso import lasso_path_cv
from .parallel import parallel_map
from .result import InferenceResult
from .stats import PVALUE_FLOOR, ols_low_dim_inference

log = logging.getLogger(__name__)

MAX_RETRIES = 5
MAX_FAILED_FRACTION = 0.2


@dataclass
class AggregationConfig:
    n_splits: int = 50
    gamma_min: float = 0.05
    fixed_gamma: float | None = None

    def __post_init__(self):
        if self.n_splits < 1:
            raise ConfigurationError("n_splits must be at least 1")
        if not 0 < self.gamma_min < 1:
            raise ConfigurationError("gamma_min must lie in (0, 1)")
        if self.fixed_gamma is not None and not 0 < self.fixed_gamma <= 1:
            raise ConfigurationError("fixed_gamma must lie in (0, 1]")

    @property
    def penalty(self):
        """Price ``1 − log γ_min`` paid for searching over γ."""
        return 1.0 - math.log(self.gamma_min)


@dataclass
class SplitRecord:
    i1: np.ndarray
    i2: np.ndarray
    selected: np.ndarray
    p_raw: np.ndarray
    p_corr: np.ndarray
    estimate: np.ndarray = field(default_factory=lambda: np.zeros(0))
    se: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dof: int = 0
    truncated: bool = False
    failed: bool = False
    attempts: int = 1
    message: str = ""

    def pcorr_at(self, j, c):
        """Bonferroni-corrected p-value for ``H₀: βⱼ = c`` (standardized scale)."""
        hit = np.flatnonzero(self.selected == j)
        if self.failed or hit.size == 0:
            return 1.0
        k = hit[0]
        if self.se[k] > 0:
            t = (self.estimate[k] - c) / self.se[k]
            praw = max(2.0 * stats.t.sf(abs(t), self.dof), PVALUE_FLOOR)
        else:
            praw = 1.0 if self.estimate[k] == c else PVALUE_FLOOR
        return min(praw * self.selected.size, 1.0)


def cv_lasso_screener(data: Dataset, seed) -> np.ndarray:
    """Default screener: coefficients of the 10-fold CV Lasso."""
    fit, _ = lasso_path_cv(data, seed=seed)
    return fit.beta


def split_indices(n, rng):
    perm = rng.permutation(n)
    half = n // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def _run_split(data: Dataset, screener, rng) -> SplitRecord:
    n, p = data.n, data.p
    i1, i2 = split_indices(n, rng)
    coef = np.asarray(screener(data.subset(i1), int(rng.integers(2 ** 31))), dtype=float)
    if coef.shape != (p,):
        raise ConfigurationError(f"screener returned shape {coef.shape}, expected ({p},)")
    selected = np.flatnonzero(coef)
    # |Ŝ| ≤ ⌊n/2⌋ and at least one residual degree of freedom on I₂
    cap = max(0, min(n // 2, i2.size - 2))
    truncated = selected.size > cap
    if truncated:
        keep = np.argsort(-np.abs(coef[selected]), kind="mergesort")[:cap]
        selected = np.sort(selected[keep])
    p_raw = np.ones(p)
    if selected.size == 0:
        return SplitRecord(i1, i2, selected, p_raw, p_raw.copy(), truncated=truncated,
                           dof=i2.size - 1)
    ols = ols_low_dim_inference(data.x[np.ix_(i2, selected)], data.y[i2],
                                intercept=data.intercept)
    p_raw[selected] = ols.pvalue
    p_corr = np.minimum(p_raw * selected.size, 1.0)
    return SplitRecord(i1, i2, selected, p_raw, p_corr, ols.estimate, ols.se, ols.dof,
                       truncated)


def single_split(data: Dataset, screener=None, seed=0, max_retries=MAX_RETRIES) -> SplitRecord:
    """One sample split; rank-deficient splits are redrawn up to ``max_retries`` times."""
    screener = screener or cv_lasso_screener
    return _split_with_retries(data, screener, seed, 0, max_retries)


def _split_with_retries(data, screener, seed, b, max_retries):
    message = ""
    for attempt in range(max_retries + 1):
        rng = np.random.default_rng([seed, b, attempt])
        try:
            rec = _run_split(data, screener, rng)
            rec.attempts = attempt + 1
            if rec.truncated:
                warnings.warn(f"split {b}: screener selected more than the allowed "
                              f"{rec.selected.size} variables; kept the largest", stacklevel=3)
            return rec
        except RankError as exc:
            message = f"(A2) violated: {exc}"
            log.debug("split %d attempt %d failed: %s", b, attempt, exc)
    n, p = data.n, data.p
    empty = np.zeros(0, dtype=int)
    return SplitRecord(empty, empty, empty, np.ones(p), np.ones(p), failed=True,
                       attempts=max_retries + 1, message=message)


def _gamma_grid(cfg: AggregationConfig, n_rows: int):
    # the infimum runs over the open interval (γ_min, 1); breakpoints k/B make it exact
    steps = np.round(np.arange(cfg.gamma_min + 0.01, 1.0 + 1e-9, 0.01), 10)
    brk = np.arange(1, n_rows + 1) / n_rows
    grid = np.union1d(steps[steps > cfg.gamma_min], brk[brk > cfg.gamma_min + 1e-12])
    return grid[grid <= 1.0]


def quantile_table(p_matrix, gammas):
    """``Q(γ) = min(P_(⌈γB⌉)/γ, 1)`` for each γ (rows) and column (variables)."""
    p_matrix = np.atleast_2d(np.asarray(p_matrix, dtype=float))
    B = p_matrix.shape[0]
    srt = np.sort(p_matrix, axis=0)
    k = np.ceil(np.asarray(gammas) * B - 1e-9).astype(int)
    k = np.clip(k, 1, B)
    return np.minimum(srt[k - 1] / np.asarray(gammas)[:, None], 1.0)


def aggregate(p_corr_matrix, cfg: AggregationConfig | None = None):
    """Aggregate a B×p matrix of corrected p-values into one p-value per column."""
    cfg = cfg or AggregationConfig()
    P = np.atleast_2d(np.asarray(p_corr_matrix, dtype=float))
    if np.any(P < 0) or np.any(P > 1) or np.any(np.isnan(P)):
        raise ValueError("p-values must lie in [0, 1]")
    if cfg.fixed_gamma is not None:
        return quantile_table(P, [cfg.fixed_gamma])[0]
    gammas = _gamma_grid(cfg, P.shape[0])
    Q = quantile_table(P, gammas)
    return np.minimum(cfg.penalty * Q.min(axis=0), 1.0)


@dataclass
class MultiSplitResult:
    p_aggregated: np.ndarray
    gammas: np.ndarray
    q_gamma: np.ndarray
    splits: list
    cfg: AggregationConfig
    column_scales: np.ndarray
    ci_level: float | None = None
    ci_lower: np.ndarray | None = None
    ci_upper: np.ndarray | None = None
    ci_defined: np.ndarray | None = None

    @property
    def good_splits(self):
        return [s for s in self.splits if not s.failed]

    @property
    def n_failed(self):
        return sum(s.failed for s in self.splits)

    def selection_counts(self):
        counts = np.zeros(self.p_aggregated.size, dtype=int)
        for s in self.good_splits:
            counts[s.selected] += 1
        return counts

    def pvalue_at(self, j, c_std):
        """Aggregated p-value for ``H₀: βⱼ = c`` with ``c`` on the standardized scale."""
        col = _pcorr_column(_split_table(self, j), c_std)
        cfg = AggregationConfig(len(col), self.cfg.gamma_min, self.cfg.fixed_gamma)
        return float(aggregate(col[:, None], cfg)[0])

    def confint(self, level=0.95):
        p = self.p_aggregated.size
        lo, hi, ok = np.full(p, np.nan), np.full(p, np.nan), np.zeros(p, dtype=bool)
        for j in range(p):
            ci = multi_split_ci(self, level, j)
            if ci is not None:
                lo[j], hi[j] = ci
                ok[j] = True
        self.ci_level, self.ci_lower, self.ci_upper, self.ci_defined = level, lo, hi, ok
        return lo, hi, ok


def multi_split_inference(data: Dataset, cfg: AggregationConfig | None = None, screener=None,
                          seed=0, max_retries=MAX_RETRIES, n_jobs=1) -> MultiSplitResult:
    """Multi sample-splitting: B splits from counter-based sub-seeds, then aggregation."""
    cfg = cfg or AggregationConfig()
    screener = screener or cv_lasso_screener
    splits = parallel_map(
        lambda b: _split_with_retries(data, screener, seed, b, max_retries),
        range(cfg.n_splits), n_jobs)
    failed = sum(s.failed for s in splits)
    if failed > MAX_FAILED_FRACTION * cfg.n_splits:
        raise MethodFailure(
            f"{failed} of {cfg.n_splits} sample splits failed: the selected design on the "
            "second half is rank deficient (assumption (A2) violated)")
    good = [s for s in splits if not s.failed]
    P = np.array([s.p_corr for s in good])
    agg_cfg = AggregationConfig(len(good), cfg.gamma_min, cfg.fixed_gamma)
    gammas = _gamma_grid(agg_cfg, len(good))
    return MultiSplitResult(aggregate(P, agg_cfg), gammas, quantile_table(P, gammas), splits,
                            cfg, data.column_scales.copy())


def _split_table(result: MultiSplitResult, j):
    """Per retained split: (selected?, estimate, se, dof, |Ŝ|) for variable j."""
    good = result.good_splits
    sel = np.zeros(len(good), dtype=bool)
    est, se = np.zeros(len(good)), np.ones(len(good))
    dof, size = np.ones(len(good)), np.ones(len(good))
    for b, s in enumerate(good):
        hit = np.flatnonzero(s.selected == j)
        if hit.size:
            sel[b] = True
            est[b], se[b] = s.estimate[hit[0]], s.se[hit[0]]
            dof[b], size[b] = s.dof, s.selected.size
    return sel, est, se, dof, size


def _pcorr_column(table, c):
    sel, est, se, dof, size = table
    out = np.ones(sel.size)
    if not sel.any():
        return out
    e, s = est[sel], se[sel]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.abs(e - c) / s
    praw = np.maximum(2.0 * stats.t.sf(t, dof[sel]), PVALUE_FLOOR)
    praw = np.where(s > 0, praw, np.where(e == c, 1.0, PVALUE_FLOOR))
    out[sel] = np.minimum(praw * size[sel], 1.0)
    return out


def _covered(pc, cfg: AggregationConfig, alpha):
    B = pc.size
    if cfg.fixed_gamma is not None:
        k = max(1, int(math.ceil(cfg.fixed_gamma * B - 1e-9)))
        return bool(np.sort(pc)[k - 1] / cfg.fixed_gamma >= alpha)
    order = np.argsort(pc, kind="mergesort")
    gamma_b = np.empty(B)
    gamma_b[order] = np.arange(1, B + 1) / B
    binding = gamma_b > cfg.gamma_min + 1e-12
    need = alpha * gamma_b / cfg.penalty
    return bool(np.all(pc[binding] >= need[binding]))


def in_multi_split_ci(result: MultiSplitResult, alpha, j, c_std):
    """Membership of ``c`` in the (1 − α) interval, split by split.

    ``c`` is covered iff every split whose rank fraction ``γ^[b]`` exceeds
    ``γ_min`` covers it at level ``1 − α γ^[b] / ((1 − log γ_min)|Ŝ^[b]|)``,
    i.e. iff its corrected p-value at ``c`` is at least ``α γ^[b] / (1 − log γ_min)``.
    ``c`` is on the standardized scale.
    """
    return _covered(_pcorr_column(_split_table(result, j), c_std), result.cfg, alpha)


def multi_split_ci(result: MultiSplitResult, level, j, rel_tol=1e-6):
    """(1 − α) confidence interval for βⱼ on the original scale, or None if undefined.

    Undefined when j is selected in too few splits for any split to rank above
    ``γ_min`` (the interval would be the whole line).
    """
    if not 0 < level < 1:
        raise ConfigurationError("level must lie in (0, 1)")
    alpha = 1.0 - level
    table = _split_table(result, j)
    sel, est_all, se_all = table[0], table[1], table[2]
    B = sel.size
    if sel.sum() == 0 or sel.sum() <= result.cfg.gamma_min * B + 1e-12:
        return None
    est, se = est_all[sel], se_all[sel]
    scale = float(np.max(se)) if np.max(se) > 0 else max(1.0, float(np.max(np.abs(est))))

    def covered(c):
        return _covered(_pcorr_column(table, c), result.cfg, alpha)

    center = float(np.median(est))
    if not covered(center):
        inside = [e for e in est if covered(e)]
        if not inside:
            return None
        center = float(np.median(inside))
    tol = rel_tol * scale

    def endpoint(direction):
        inner = center
        step = 10.0 * scale
        outer = center + direction * step
        for _ in range(200):
            if not covered(outer):
                break
            inner = outer
            step *= 2.0
            outer = center + direction * step
        else:
            return direction * np.inf
        while abs(outer - inner) > tol:
            mid = 0.5 * (inner + outer)
            if covered(mid):
                inner = mid
            else:
                outer = mid
        return 0.5 * (inner + outer)

    lo, hi = endpoint(-1.0), endpoint(1.0)
    s = result.column_scales[j]
    return lo / s, hi / s


def screener_guard(screener):
    """Wrap a user screener so that its failures surface as method failures."""
    def wrapped(data, seed):
        try:
            return screener(data, seed)
        except HdiError:
            raise
        except Exception as exc:  # noqa: BLE001 - user code
            raise MethodFailure(f"screener failed: {exc}") from exc
    return wrapped


def multi_split_result(result: MultiSplitResult, data: Dataset, level=0.95,
                       with_ci=True) -> InferenceResult:
    """Common result view: aggregated p-values are already FWER-adjusted.

    The point estimate is the median OLS estimate over splits that selected
    the variable (NaN if never selected); no standard error is reported.
    """
    p = result.p_aggregated.size
    est = np.full(p, np.nan)
    for j in range(p):
        sel, e, *_ = _split_table(result, j)
        if sel.any():
            est[j] = float(np.median(e[sel])) / result.column_scales[j]
    if with_ci:
        lo, hi, ok = result.confint(level)
    else:
        lo, hi, ok = np.full(p, np.nan), np.full(p, np.nan), np.zeros(p, dtype=bool)
    return InferenceResult(
        method="multi-split", estimate=est, se=np.full(p, np.nan),
        p_raw=result.p_aggregated.copy(), p_adjusted=result.p_aggregated.copy(), ci_lower=lo,
        ci_upper=hi, level=level, sigma=float("nan"), defined=ok, adjust="multi-split",
        family=data.family, names=list(data.names),
        extras={"n_splits": result.cfg.n_splits, "gamma_min": result.cfg.gamma_min,
                "n_failed": result.n_failed})
