"""Stability selection with a bound on the expected number of false selections.

Each of ``n_subsamples`` half-samples records the first ``q`` variables to
enter the Lasso path; variables selected in at least a fraction ``pi_thr`` of
the half-samples form the stable set.  Choosing

    q = ⌊√(E[V]_target · (2 π_thr − 1) · p)⌋

makes the classical bound ``E[V] ≤ q² / ((2 π_thr − 1) p)`` equal to the target
(under exchangeability of the noise variables and a selector better than
random guessing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigurationError
from .lasso import DEFAULT_GRID_RATIO, DEFAULT_GRID_SIZE, PathRunner, lambda_grid, lambda_max
from .parallel import parallel_map

PATH_CHUNK = 10


@dataclass
class StabilityResult:
    select: np.ndarray
    freq: np.ndarray
    q: int
    pi_thr: float
    ev_target: float
    n_subsamples: int

    @property
    def ev_bound(self):
        """``q² / ((2 π_thr − 1) p)``, the guaranteed bound on E[V]."""
        return self.q ** 2 / ((2.0 * self.pi_thr - 1.0) * self.freq.size)

    def at_threshold(self, pi_thr):
        return np.flatnonzero(self.freq >= pi_thr)


def selection_size(ev_target, pi_thr, p):
    return int(math.floor(math.sqrt(ev_target * (2.0 * pi_thr - 1.0) * p) + 1e-12))


def lasso_entry_selector(data: Dataset, q, grid_size=DEFAULT_GRID_SIZE,
                         grid_ratio=DEFAULT_GRID_RATIO):
    """First ``q`` variables entering the Lasso path, in order of entry.

    Variables entering at the same grid point are ordered by the size of
    their coefficient there, then by index.  Returns fewer than ``q`` indices
    when the path saturates first.
    """
    G, c, yy = data.gram()
    p = data.p
    lams = lambda_grid(lambda_max(data), grid_size, grid_ratio) if yy > 0 else np.zeros(0)
    runner = PathRunner(G, c, yy, max_active=data.n - 1, n=data.n)
    order, seen = [], np.zeros(p, dtype=bool)
    start = 0
    while len(order) < q and start < len(lams) and not runner.done:
        done_before = runner.length
        runner.advance(lams[start:start + PATH_CHUNK])
        start += PATH_CHUNK
        for b in runner.betas[done_before:]:
            new = np.flatnonzero((b != 0) & ~seen)
            if new.size:
                new = new[np.lexsort((new, -np.abs(b[new])))]
                order.extend(new.tolist())
                seen[new] = True
    return np.array(order[:q], dtype=int)


def _check_selection(sel, q, p):
    sel = np.asarray(sel)
    if sel.ndim != 1 or (sel.size and not np.issubdtype(sel.dtype, np.integer)):
        raise ConfigurationError("selector must return a 1-d array of integer indices")
    if sel.size > q:
        raise ConfigurationError(f"selector returned {sel.size} indices, more than q = {q}")
    if sel.size and (sel.min() < 0 or sel.max() >= p):
        raise ConfigurationError("selector returned an out-of-range index")
    if np.unique(sel).size != sel.size:
        raise ConfigurationError("selector returned duplicate indices")
    return sel


def stability_select(data: Dataset, ev_target=1.0, pi_thr=0.75, n_subsamples=100,
                     selector=None, seed=0, n_jobs=1) -> StabilityResult:
    """Stable set controlling ``E[V] ≤ ev_target``.

    ``selector(subsample, q)`` returns at most ``q`` distinct indices; the
    default takes the first ``q`` Lasso-path entrants.  Half-sample ``b`` is
    drawn from ``default_rng([seed, b])``.
    """
    if not ev_target > 0:
        raise ConfigurationError("ev_target must be positive")
    if not 0.5 < pi_thr <= 1.0:
        raise ConfigurationError("pi_thr must lie in (0.5, 1]")
    if n_subsamples < 1:
        raise ConfigurationError("n_subsamples must be positive")
    n, p = data.n, data.p
    q = selection_size(ev_target, pi_thr, p)
    if q == 0:
        raise ConfigurationError(f"ev_target too small for p = {p}: no variable can be selected")
    if q >= p:
        freq = np.ones(p)
        return StabilityResult(np.arange(p), freq, p, pi_thr, ev_target, n_subsamples)
    selector = selector or lasso_entry_selector

    def one(b):
        rng = np.random.default_rng([seed, b])
        rows = np.sort(rng.choice(n, n // 2, replace=False))
        return _check_selection(selector(data.subset(rows), q), q, p)

    counts = np.zeros(p)
    for sel in parallel_map(one, range(n_subsamples), n_jobs):
        counts[sel] += 1
    freq = counts / n_subsamples
    return StabilityResult(np.flatnonzero(freq >= pi_thr), freq, q, pi_thr, ev_target,
                           n_subsamples)
