"""Simulation harness: designs, coefficient schemes and error-rate metrics.

An outer replicate draws a design X and a coefficient vector β⁰; inner
replicates draw fresh responses ``Y = Xβ⁰ + ε`` with ``ε ~ N(0, 1)``.  All
randomness comes from counter-based seeds ``[seed, outer, stream, ...]``, so
results do not depend on the number of worker threads.

Per method the harness reports the familywise error rate (fraction of
responses with at least one false rejection), power (mean fraction of S₀
rejected), AVG(V) (mean number of false rejections), confidence-interval
coverage split into active and inactive coefficients, and rejection rates
of configured group hypotheses.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import logging
import re
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .desparsified import desparsified_inference, despars_group_test, nodewise_lasso_tunings
from .errors import ConfigurationError, DataError, HdiError
from .lasso import lasso_path_cv, scaled_lasso_sigma
from .methods import MethodOptions, canonical_method, run_method
from .parallel import parallel_map
from .result import _jsonable
from .ridge import ridge_components, ridge_group_test, ridge_inference

log = logging.getLogger(__name__)

DESIGNS = ("toeplitz", "exp-decay", "equi-corr", "block-equi-corr", "real-x")
COEFFICIENTS = ("U(0,1)", "U(0,2)", "U(0,4)", "U(0,8)", "U(-2,2)", "fixed(1)", "fixed(2)",
                "fixed(10)")
POSITIONS = ("random", "first-s0", "one-block", "separate-blocks")
GROUPS = ("all", "active", "inactive", "active-blocks")
TUNED = re.compile(r"^lasso-proj(?::(zz|cv))?$")


def parse_method(label: str):
    """``(engine, tuning)`` from labels such as ``ridge-proj`` or ``lasso-proj:cv``."""
    if label == "oracle":
        return "oracle", None
    m = TUNED.match(label)
    if m:
        return "lasso-proj", m.group(1) or "zz"
    engine = canonical_method(label)
    if engine == "lasso-proj":
        return engine, "zz"
    return engine, None


@dataclass
class ScenarioConfig:
    """One simulation scenario; serializable to and from JSON."""

    name: str = "scenario"
    design: str = "toeplitz"
    n: int = 100
    p: int = 200
    s0: int = 3
    coefficients: str = "fixed(2)"
    positions: str = "random"
    rho: float = 0.8  # block-equi-corr correlation
    block_size: int = 20
    real_x_path: str | None = None
    n_y_replicates: int = 100
    n_outer_replicates: int = 50
    alpha: float = 0.05
    level: float = 0.95
    methods: list = field(default_factory=lambda: ["ridge-proj", "lasso-proj", "multi-split"])
    seed: int = 0
    ci: bool = True
    multi_split_ci: bool = False
    n_splits: int = 50
    group_tests: list = field(default_factory=list)
    n_mc: int = 10_000

    def validate(self):
        def bad(name, msg):
            raise ConfigurationError(f"invalid scenario field {name!r}: {msg}")
        if self.design not in DESIGNS:
            bad("design", f"{self.design!r} not in {DESIGNS}")
        if self.coefficients not in COEFFICIENTS:
            bad("coefficients", f"{self.coefficients!r} not in {COEFFICIENTS}")
        if self.positions not in POSITIONS:
            bad("positions", f"{self.positions!r} not in {POSITIONS}")
        for k in ("n", "p", "n_y_replicates", "n_outer_replicates", "block_size", "n_splits"):
            v = getattr(self, k)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                bad(k, "must be a positive integer")
        if self.n < 3:
            bad("n", "need at least 3 samples")
        if not isinstance(self.s0, (int, np.integer)) or not 0 <= self.s0 <= self.p:
            bad("s0", f"must lie in [0, p = {self.p}]")
        if not 0 <= self.alpha <= 1:
            bad("alpha", "must lie in [0, 1]")
        if not 0 < self.level < 1:
            bad("level", "must lie in (0, 1)")
        if self.design == "block-equi-corr" and not -1.0 / (self.block_size - 1) < self.rho < 1:
            bad("rho", "block correlation outside the positive-definite range")
        if self.design == "real-x" and not self.real_x_path:
            bad("real_x_path", "required for the real-x design")
        if self.positions in ("one-block", "separate-blocks") and self.design != "block-equi-corr":
            bad("positions", "block positions need the block-equi-corr design")
        if self.positions == "one-block" and self.s0 > self.block_size:
            bad("positions", "s0 exceeds the block size")
        if self.positions == "separate-blocks" and self.s0 > self.p // self.block_size:
            bad("positions", "more active variables than blocks")
        if not self.methods:
            bad("methods", "empty method list")
        for m in self.methods:
            try:
                parse_method(m)
            except ConfigurationError as exc:
                bad("methods", str(exc))
        for g in self.group_tests:
            if g not in GROUPS:
                bad("group_tests", f"{g!r} not in {GROUPS}")
        if self.group_tests and self.n_mc < 10_000:
            bad("n_mc", "must be at least 10^4")
        return self

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw).validate()

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"invalid scenario field {sorted(unknown)[0]!r}: unknown")
        return cls(**d).validate()

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"scenario file is not valid JSON: {exc}") from exc
        return cls.from_dict(d)


# ---------------------------------------------------------------- designs

def design_covariance(cfg: ScenarioConfig) -> np.ndarray:
    p = cfg.p
    lag = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    if cfg.design == "toeplitz":
        return 0.9 ** lag
    if cfg.design == "exp-decay":
        # only the precision matrix is specified; invert it exactly
        return np.linalg.inv(0.4 ** (lag / 5.0))
    if cfg.design == "equi-corr":
        return np.where(lag == 0, 1.0, 0.8)
    if cfg.design == "block-equi-corr":
        block = np.arange(p) // cfg.block_size
        same = block[:, None] == block[None, :]
        return np.where(lag == 0, 1.0, np.where(same, cfg.rho, 0.0))
    raise ConfigurationError(f"design {cfg.design!r} has no covariance matrix")


@functools.lru_cache(maxsize=16)
def _cholesky(design, p, rho, block_size):
    cfg = ScenarioConfig(design=design, p=p, rho=rho, block_size=block_size)
    sigma = design_covariance(cfg)
    try:
        return np.linalg.cholesky(0.5 * (sigma + sigma.T))
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError(f"covariance of design {design!r} is not positive "
                                 "definite") from exc


def load_real_x(path, p):
    """Columns of a headed CSV with the ``p`` largest empirical variances."""
    try:
        x = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read real design {path}: {exc}") from exc
    if x.shape[1] < p:
        raise DataError(f"real design has {x.shape[1]} columns, need {p}")
    keep = np.sort(np.argsort(-x.var(axis=0), kind="mergesort")[:p])
    return x[:, keep]


def generate_design(cfg: ScenarioConfig, seed) -> np.ndarray:
    """Rows i.i.d. ``N_p(0, Σ)``; for ``real-x``, ``n`` rows drawn from the file."""
    rng = np.random.default_rng(seed)
    if cfg.design == "real-x":
        x = load_real_x(cfg.real_x_path, cfg.p)
        if x.shape[0] < cfg.n:
            raise DataError(f"real design has {x.shape[0]} rows, need n = {cfg.n}")
        rows = np.sort(rng.choice(x.shape[0], cfg.n, replace=False))
        return x[rows]
    L = _cholesky(cfg.design, cfg.p, float(cfg.rho), cfg.block_size)
    return rng.standard_normal((cfg.n, cfg.p)) @ L.T


@dataclass
class TrueCoefficients:
    beta: np.ndarray
    support: np.ndarray


def _positions(cfg, rng):
    p, s0, bs = cfg.p, cfg.s0, cfg.block_size
    if cfg.positions == "first-s0":
        return np.arange(s0)
    if cfg.positions == "random":
        return np.sort(rng.choice(p, s0, replace=False))
    n_blocks = p // bs
    if cfg.positions == "one-block":
        b = rng.integers(n_blocks)
        return np.sort(b * bs + rng.choice(bs, s0, replace=False))
    blocks = rng.choice(n_blocks, s0, replace=False)
    return np.sort(blocks * bs + rng.integers(bs, size=s0))


def generate_coefficients(cfg: ScenarioConfig, seed) -> TrueCoefficients:
    rng = np.random.default_rng(seed)
    support = _positions(cfg, rng)
    beta = np.zeros(cfg.p)
    lo_hi = re.match(r"^U\((-?\d+),(-?\d+)\)$", cfg.coefficients)
    if lo_hi:
        beta[support] = rng.uniform(float(lo_hi.group(1)), float(lo_hi.group(2)), support.size)
    else:
        beta[support] = float(cfg.coefficients[6:-1])
    return TrueCoefficients(beta, support)


def group_indices(cfg: ScenarioConfig, truth: TrueCoefficients, name):
    p = cfg.p
    if name == "all":
        return np.arange(p)
    if name == "active":
        return truth.support
    if name == "inactive":
        return np.setdiff1d(np.arange(p), truth.support)
    blocks = np.unique(truth.support // cfg.block_size)
    return np.flatnonzero(np.isin(np.arange(p) // cfg.block_size, blocks))


# ---------------------------------------------------------------- running

def _seed(*counters):
    return int(np.random.SeedSequence(list(counters)).generate_state(1)[0])


class _DesignContext:
    """Design-level quantities shared by all responses of one outer replicate."""

    def __init__(self, cfg: ScenarioConfig, outer: int):
        self.cfg = cfg
        self.outer = outer
        self.x = generate_design(cfg, [cfg.seed, outer, 0])
        self.truth = generate_coefficients(cfg, [cfg.seed, outer, 1])
        self.base = Dataset(self.x, np.zeros(cfg.n))
        parsed = [parse_method(m) for m in cfg.methods]
        tunings = sorted({t for e, t in parsed if e == "lasso-proj"})
        self.nodewise = (nodewise_lasso_tunings(self.base, tunings, seed=_seed(cfg.seed, outer, 3))
                         if tunings else {})
        self.ridge = (ridge_components(self.base)
                      if any(e == "ridge-proj" for e, _ in parsed) else None)
        self.groups = {g: group_indices(cfg, self.truth, g) for g in cfg.group_tests}

    def response(self, inner):
        rng = np.random.default_rng([self.cfg.seed, self.outer, 2, inner])
        y = self.x @ self.truth.beta + rng.standard_normal(self.cfg.n)
        return self.base.with_response(y)


def _run_one(ctx: _DesignContext, data: Dataset, label: str, shared: dict, seed: int):
    """One method on one response: returns (result-like, group p-values)."""
    cfg = ctx.cfg
    engine, tuning = parse_method(label)
    if engine == "oracle":
        p = np.ones(cfg.p)
        p[ctx.truth.support] = 0.0
        return p, None, None, {}
    if engine == "multi-split":
        opts = MethodOptions(level=cfg.level, n_splits=cfg.n_splits, with_ci=cfg.multi_split_ci)
        res = run_method(data, engine, opts, seed).result
        return res.p_adjusted, res.ci_lower, res.ci_upper, {}
    if "fit" not in shared:
        shared["fit"] = lasso_path_cv(data, seed=seed)[0]
        shared["sigma"] = scaled_lasso_sigma(data)[1]
    fit, sigma = shared["fit"], shared["sigma"]
    if engine == "lasso-proj":
        comps = ctx.nodewise[tuning]
        res = desparsified_inference(data, comps, sigma, fit, cfg.level)
        gtest = lambda g, s: despars_group_test(res, comps, g, cfg.n_mc, s)  # noqa: E731
    else:
        res = ridge_inference(data, ctx.ridge, sigma, fit, cfg.level)
        gtest = lambda g, s: ridge_group_test(ctx.ridge, res, g, cfg.n_mc, s)  # noqa: E731
    groups = {}
    for k, (name, g) in enumerate(ctx.groups.items()):
        groups[name] = gtest(g, _seed(seed, 7, k)).pvalue if g.size else 1.0
    return res.p_adjusted, res.ci_lower, res.ci_upper, groups


def rejections(p_adjusted, alpha):
    """Indices with ``p ≤ α``; a level-zero test rejects nothing."""
    if alpha <= 0:
        return np.zeros(0, dtype=int)
    return np.flatnonzero(np.asarray(p_adjusted) <= alpha)


def _record(ctx, inner, label, out, seconds):
    cfg, truth = ctx.cfg, ctx.truth
    p_adj, lo, hi, groups = out
    rej = rejections(p_adj, cfg.alpha)
    active = np.zeros(cfg.p, dtype=bool)
    active[truth.support] = True
    rec = {"outer": ctx.outer, "inner": inner, "method": label, "failed": False,
           "message": "", "seconds": seconds, "rejected": rej.tolist(),
           "v": int(np.sum(~active[rej])), "tp": int(np.sum(active[rej])),
           "active_rejected": [int(j in set(rej.tolist())) for j in truth.support],
           "groups": {k: float(v) for k, v in groups.items()}}
    if cfg.ci and lo is not None:
        defined = np.isfinite(lo) & np.isfinite(hi)
        cover = defined & (lo <= truth.beta) & (truth.beta <= hi)
        rec["ci"] = {
            "active_covered": int(cover[active].sum()),
            "active_defined": int(defined[active].sum()),
            "inactive_covered": int(cover[~active].sum()),
            "inactive_defined": int(defined[~active].sum()),
            "undefined": int((~defined).sum()),
        }
    return rec


def _outer_replicate(cfg: ScenarioConfig, outer: int, progress=None):
    t0 = time.perf_counter()
    ctx = _DesignContext(cfg, outer)
    records = []
    for inner in range(cfg.n_y_replicates):
        data = ctx.response(inner)
        shared = {}
        seed = _seed(cfg.seed, outer, 4, inner)
        for label in cfg.methods:
            t = time.perf_counter()
            try:
                out = _run_one(ctx, data, label, shared, seed)
                records.append(_record(ctx, inner, label, out, time.perf_counter() - t))
            except HdiError as exc:
                log.warning("outer %d inner %d %s failed: %s", outer, inner, label, exc)
                records.append({"outer": outer, "inner": inner, "method": label, "failed": True,
                                "message": f"{type(exc).__name__}: {exc}",
                                "seconds": time.perf_counter() - t})
    if progress is not None:
        progress(outer, time.perf_counter() - t0)
    return {"outer": outer, "support": ctx.truth.support.tolist(),
            "beta_support": ctx.truth.beta[ctx.truth.support].tolist(), "records": records}


def _mean(values):
    return float(np.mean(values)) if len(values) else float("nan")


def summarize(cfg: ScenarioConfig, outers) -> dict:
    """Per-method error rates, power, coverage and group rejection rates."""
    summary = {}
    for label in cfg.methods:
        recs = [r for o in outers for r in o["records"] if r["method"] == label]
        ok = [r for r in recs if not r["failed"]]
        n_ok = len(ok)
        fwer = _mean([r["v"] > 0 for r in ok])
        s = {"n_replicates": n_ok, "failures": len(recs) - n_ok,
             "fwer": fwer, "fwer_se": float(np.sqrt(fwer * (1 - fwer) / n_ok)) if n_ok else
             float("nan"),
             "power": _mean([r["tp"] / cfg.s0 for r in ok]) if cfg.s0 else float("nan"),
             "avg_v": _mean([r["v"] for r in ok]),
             "runtime": float(sum(r["seconds"] for r in recs))}
        cis = [r["ci"] for r in ok if "ci" in r]
        if cis:
            tot = {k: sum(c[k] for c in cis) for k in cis[0]}
            s["ci_coverage_active"] = (tot["active_covered"] / tot["active_defined"]
                                       if tot["active_defined"] else float("nan"))
            s["ci_coverage_inactive"] = (tot["inactive_covered"] / tot["inactive_defined"]
                                         if tot["inactive_defined"] else float("nan"))
            s["ci_undefined"] = tot["undefined"] / (len(cis) * cfg.p)
        for g in cfg.group_tests:
            vals = [r["groups"][g] for r in ok if g in r.get("groups", {})]
            if vals:
                s[f"group_reject:{g}"] = _mean([v <= cfg.alpha and cfg.alpha > 0 for v in vals])
        summary[label] = s
    return summary


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    summary: dict
    outers: list
    runtime: float

    def tidy_rows(self):
        """Long format: one row per (method, metric, outer replicate) plus ``all``."""
        cfg = self.config
        rows = []
        for o in self.outers:
            part = summarize(cfg, [o])
            for m, s in part.items():
                for k, v in s.items():
                    if k not in ("runtime", "n_replicates", "failures", "fwer_se"):
                        rows.append((cfg.name, m, k, v, o["outer"]))
        for m, s in self.summary.items():
            for k, v in s.items():
                rows.append((cfg.name, m, k, v, "all"))
        return rows

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "method", "metric", "value", "replicate"])
            for row in self.tidy_rows():
                w.writerow(row)

    def to_dict(self):
        return _jsonable({"config": self.config.to_dict(), "summary": self.summary,
                          "runtime": self.runtime, "outers": self.outers})

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        return cls(ScenarioConfig.from_dict(d["config"]), d["summary"], d["outers"],
                   d["runtime"])

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def run_scenario(cfg: ScenarioConfig, n_jobs=1, progress=None) -> ScenarioResult:
    """Outer replicates run in parallel; records are merged in replicate order."""
    cfg.validate()
    t0 = time.perf_counter()
    outers = parallel_map(lambda r: _outer_replicate(cfg, r, progress),
                          range(cfg.n_outer_replicates), n_jobs)
    return ScenarioResult(cfg, summarize(cfg, outers), outers, time.perf_counter() - t0)


@dataclass
class CoverageResult:
    """Per-coefficient interval coverage counts on one fixed (X, β⁰)."""

    support: np.ndarray
    beta: np.ndarray
    n_replicates: int
    covered: dict  # method -> (p,) counts
    undefined: dict  # method -> (p,) counts

    def active_counts(self, method):
        return self.covered[method][self.support]

    def inactive_coverage(self, method):
        """Average coverage over S₀ᶜ among defined intervals."""
        mask = np.ones(self.beta.size, dtype=bool)
        mask[self.support] = False
        defined = self.n_replicates - self.undefined[method][mask]
        tot = defined.sum()
        return float(self.covered[method][mask].sum() / tot) if tot else float("nan")


def ci_coverage_protocol(cfg: ScenarioConfig, n_replicates=100, outer=0) -> CoverageResult:
    """Interval coverage over ``n_replicates`` responses on one design.

    Undefined intervals (multi-split variables selected too rarely) are
    counted separately, never as misses.
    """
    cfg = cfg.replace(ci=True, multi_split_ci=True, group_tests=[])
    ctx = _DesignContext(cfg, outer)
    covered = {m: np.zeros(cfg.p, dtype=int) for m in cfg.methods}
    undefined = {m: np.zeros(cfg.p, dtype=int) for m in cfg.methods}
    for inner in range(n_replicates):
        data = ctx.response(inner)
        shared = {}
        seed = _seed(cfg.seed, outer, 4, inner)
        for label in cfg.methods:
            _, lo, hi, _ = _run_one(ctx, data, label, shared, seed)
            if lo is None:
                undefined[label] += 1
                continue
            defined = np.isfinite(lo) & np.isfinite(hi)
            b = ctx.truth.beta
            covered[label] += defined & (lo <= b) & (b <= hi)
            undefined[label] += ~defined
    return CoverageResult(ctx.truth.support, ctx.truth.beta, n_replicates, covered, undefined)
