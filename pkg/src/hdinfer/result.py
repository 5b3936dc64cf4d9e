"""Per-variable inference results shared by all methods."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


@dataclass
class InferenceResult:
    """Estimates, p-values and confidence intervals on the original scale.

    ``defined[j]`` is False for variables where the method cannot produce
    inference (degenerate projections, never-selected variables); their
    p-values are reported as 1 and intervals as NaN.
    """

    method: str
    estimate: np.ndarray
    se: np.ndarray
    p_raw: np.ndarray
    p_adjusted: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    level: float
    sigma: float
    defined: np.ndarray
    adjust: str = "holm"
    family: str = "gaussian"
    names: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def p(self):
        return self.p_raw.size

    def significant(self, threshold=0.05):
        return np.flatnonzero(self.p_adjusted <= threshold)

    def to_dict(self):
        return _jsonable(asdict(self))

    def to_json(self, path=None, indent=2):
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        arrays = ("estimate", "se", "p_raw", "p_adjusted", "ci_lower", "ci_upper")
        kw = dict(d)
        for k in arrays:
            kw[k] = np.array([np.nan if v is None else v for v in d[k]], dtype=float)
        kw["defined"] = np.array(d["defined"], dtype=bool)
        kw["sigma"] = float("nan") if d["sigma"] is None else d["sigma"]
        return cls(**kw)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
