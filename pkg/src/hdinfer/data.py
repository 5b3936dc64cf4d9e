"""Core data containers: the regression dataset and fitted coefficients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

NOISE_METHODS = ("scaled-lasso", "cv-lasso-residual", "fixed")


class Dataset:
    """Design matrix and response, stored column-standardized.

    With ``intercept=True`` (the default) every column of ``x`` is centered
    and scaled to mean square one and ``y`` is centered, so an unpenalized
    intercept is handled implicitly.  With ``intercept=False`` columns are
    only scaled; this is used for weighted problems whose intercept direction
    has already been projected out.

    ``strict=False`` tolerates constant columns (they are left at zero after
    centering); it exists for internal subsamples, never for user input.
    """

    def __init__(self, x, y, *, standardize=True, intercept=True, names=None,
                 family="gaussian", strict=True):
        x = np.array(x, dtype=float, copy=True)
        y = np.array(y, dtype=float, copy=True).ravel()
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise DataError(f"x must be two-dimensional, got shape {x.shape}")
        n, p = x.shape
        if n < 3:
            raise DataError(f"need at least 3 samples, got {n}")
        if p < 1:
            raise DataError("need at least one variable")
        if y.shape[0] != n:
            raise DataError(f"x has {n} rows but y has length {y.shape[0]}")
        if not np.all(np.isfinite(x)):
            bad = np.where(~np.all(np.isfinite(x), axis=0))[0]
            raise DataError(f"non-finite entries in columns {self._label(bad, names)}", bad)
        if not np.all(np.isfinite(y)):
            raise DataError("non-finite entries in the response")

        self.names = list(names) if names is not None else [f"x{j}" for j in range(p)]
        if len(self.names) != p:
            raise DataError("length of names does not match number of columns")
        self.family = family
        self.intercept = bool(intercept)
        self.standardized = bool(standardize)
        self.raw_x = x
        self.raw_y = y

        means = x.mean(axis=0) if intercept else np.zeros(p)
        xc = x - means
        if standardize:
            scales = np.sqrt(np.mean(xc ** 2, axis=0))
            ref = np.maximum(np.abs(means), np.max(np.abs(x), axis=0))
            const = scales <= 1e-12 * np.maximum(ref, 1.0)
            if np.any(const):
                if strict:
                    bad = np.where(const)[0]
                    raise DataError(
                        f"zero-variance columns {self._label(bad, names)}", bad)
                scales = np.where(const, 1.0, scales)
                xc[:, const] = 0.0
        else:
            scales = np.ones(p)
        self.x = xc / scales
        self.column_means = means
        self.column_scales = scales
        self.y_mean = float(y.mean()) if intercept else 0.0
        self.y = y - self.y_mean
        self._gram = None

    @staticmethod
    def _label(idx, names):
        if names is None:
            return ", ".join(str(int(i)) for i in idx)
        return ", ".join(str(names[int(i)]) for i in idx)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def gram(self):
        """Return ``(G, c, yy)`` = ``(XᵀX/n, Xᵀy/n, yᵀy/n)`` on the standardized scale."""
        if self._gram is None:
            n = self.n
            self._gram = (self.x.T @ self.x / n, self.x.T @ self.y / n,
                          float(self.y @ self.y / n))
        return self._gram

    def with_response(self, y) -> "Dataset":
        """Same design, new response; reuses the standardized design."""
        new = object.__new__(Dataset)
        new.__dict__.update(self.__dict__)
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != self.n or not np.all(np.isfinite(y)):
            raise DataError("replacement response has wrong length or non-finite values")
        new.raw_y = y
        new.y_mean = float(y.mean()) if self.intercept else 0.0
        new.y = y - new.y_mean
        if self._gram is not None:
            G, _, _ = self._gram
            new._gram = (G, self.x.T @ new.y / self.n, float(new.y @ new.y / self.n))
        return new

    def subset(self, rows) -> "Dataset":
        """Rows of the standardized design, re-standardized within the subset."""
        rows = np.asarray(rows)
        return Dataset(self.x[rows], self.y[rows], standardize=True,
                       intercept=self.intercept, names=self.names,
                       family=self.family, strict=False)

    def to_original(self, beta_std):
        """Map standardized-scale coefficients to ``(beta, intercept)`` on the raw scale."""
        beta = np.asarray(beta_std, dtype=float) / self.column_scales
        intercept = self.y_mean - float(self.column_means @ beta)
        return beta, intercept

    def to_standardized(self, beta):
        return np.asarray(beta, dtype=float) * self.column_scales


@dataclass
class CoefficientEstimate:
    """Coefficient vector on the standardized scale plus its support."""

    beta: np.ndarray
    intercept: float = 0.0
    lam: float = 0.0
    support: np.ndarray = field(default=None)
    iterations: int = 0
    gap: float = 0.0

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.support is None:
            self.support = np.flatnonzero(self.beta)
        else:
            self.support = np.sort(np.asarray(self.support, dtype=int))

    @property
    def p(self):
        return self.beta.shape[0]


@dataclass
class NoiseEstimate:
    sigma: float
    method: str = "fixed"

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"noise level must be positive and finite, got {self.sigma}")
        if self.method not in NOISE_METHODS:
            raise ValueError(f"unknown noise estimation method {self.method!r}")
