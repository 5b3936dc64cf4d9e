"""Command line: ``hdinfer fit | simulate | report``.

Exit codes: 0 success, 2 input/parse error, 3 dimension or rank error,
4 method failure, 5 invalid scenario.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .data import Dataset
from .errors import (ConfigurationError, ConvergenceError, DataError, DegenerateFitError,
                     HdiError, MethodFailure, RankError)
from .glm import FAMILIES, check_response, glm_inference
from .hierarchy import build_hierarchy, hierarchical_test, simultaneous_group_pvalue
from .methods import METHODS, MethodOptions, group_test
from .parallel import default_threads
from .report import load_results, text_summary, write_report
from .simulation import ScenarioConfig, run_scenario

EXIT_PARSE, EXIT_DIMENSION, EXIT_METHOD, EXIT_SCENARIO = 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def resolve_seed(seed):
    if seed is not None:
        return seed
    env = os.environ.get("HDINFER_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise CliError(f"HDINFER_SEED must be an integer, got {env!r}", EXIT_PARSE) from None


def read_csv(path, response):
    """Header row required; every non-response cell must be numeric."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_PARSE) from exc
    if not rows:
        raise CliError(f"{path} is empty", EXIT_PARSE)
    header = [h.strip() for h in rows[0]]
    if response not in header:
        raise CliError(f"response column {response!r} not found in {path}", EXIT_PARSE)
    body = [r for r in rows[1:] if r]
    values = np.empty((len(body), len(header)))
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise CliError(f"row {i + 2} has {len(r)} fields, expected {len(header)}",
                           EXIT_PARSE)
        for j, cell in enumerate(r):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise CliError(f"non-numeric value {cell!r} in column {header[j]!r} "
                               f"(row {i + 2})", EXIT_PARSE) from None
    k = header.index(response)
    names = [h for j, h in enumerate(header) if j != k]
    return np.delete(values, k, axis=1), values[:, k], names


def parse_groups(spec, names):
    """``"0,1,2"`` (one group) or a JSON list of groups; entries are indices or names."""
    if spec is None:
        return []
    spec = spec.strip()
    try:
        groups = json.loads(spec) if spec.startswith("[") else [spec.split(",")]
    except json.JSONDecodeError as exc:
        raise CliError(f"cannot parse group spec: {exc}", EXIT_PARSE) from exc
    if groups and not isinstance(groups[0], list):
        groups = [groups]
    out = []
    for g in groups:
        idx = []
        for item in g:
            item = str(item).strip()
            if item in names:
                idx.append(names.index(item))
            else:
                try:
                    j = int(item)
                except ValueError:
                    raise CliError(f"unknown variable {item!r} in group spec", EXIT_PARSE) from None
                if not 0 <= j < len(names):
                    raise CliError(f"group index {j} out of range [0, {len(names)})", EXIT_PARSE)
                idx.append(j)
        out.append(sorted(set(idx)))
    return out


def _fmt(v, width=11):
    return f"{'':>{width}}" if not np.isfinite(v) else f"{v:>{width}.4g}"


def summary_table(result, threshold=None):
    rows = np.arange(result.p)
    if threshold is not None:
        rows = np.flatnonzero(result.p_adjusted <= threshold)
    pct = f"{100 * result.level:g}%"
    head = (f"{'variable':<14}{'estimate':>11}{'se':>11}{'p_raw':>11}{'p_adjusted':>11}"
            f"{'ci_lo ' + pct:>13}{'ci_hi ' + pct:>13}")
    lines = [head]
    for j in rows:
        lines.append(f"{result.names[j]:<14}{_fmt(result.estimate[j])}{_fmt(result.se[j])}"
                     f"{_fmt(result.p_raw[j])}{_fmt(result.p_adjusted[j])}"
                     f"{_fmt(result.ci_lower[j], 13)}{_fmt(result.ci_upper[j], 13)}")
    if threshold is not None and rows.size == 0:
        lines.append(f"(no variable with adjusted p-value <= {threshold:g})")
    return "\n".join(lines)


def cmd_fit(args):
    seed = resolve_seed(args.seed)
    x, y, names = read_csv(args.data, args.response)
    try:
        data = Dataset(x, y, names=names, family=args.family)
    except DataError as exc:
        code = EXIT_PARSE if "non-finite" in str(exc) else EXIT_DIMENSION
        raise CliError(str(exc), code) from exc
    try:
        check_response(y, args.family)
    except DataError as exc:
        raise CliError(f"response column {args.response!r}: {exc}", EXIT_PARSE) from exc
    opts = MethodOptions(level=args.level, adjust=args.adjust, noise_method=args.noise,
                         tuning=args.tuning, lambda_ridge=args.lambda_ridge,
                         n_splits=args.n_splits, n_jobs=args.threads)
    run = glm_inference(data, args.family, args.method, opts, seed=seed)
    res = run.result
    print(f"method {res.method}  family {res.family}  n={data.n} p={data.p}  "
          f"sigma={res.sigma:.4g}  adjustment {res.adjust}")
    print(summary_table(res, args.pval_corr_threshold))
    out = {"result": res.to_dict()}
    groups = parse_groups(args.groups, names)
    if groups:
        out["groups"] = []
        for k, g in enumerate(groups):
            gt = group_test(run, g, args.n_mc, seed=seed + k)
            print(f"group {[names[j] for j in g]}: p = {gt.pvalue:.4g}")
            out["groups"].append({"members": g, "pvalue": gt.pvalue, "statistic": gt.statistic,
                                  "n_mc": gt.n_mc})
    if args.cluster_groups:
        tree = hierarchical_test(build_hierarchy(data),
                                 lambda g: simultaneous_group_pvalue(res, g), args.alpha,
                                 n_jobs=args.threads)
        path = args.tree_out or os.path.splitext(args.out or "result.json")[0] + "_tree.json"
        tree.to_json(path)
        rejected = [nd for nd in tree.rejected_nodes() if len(nd.members) < data.p]
        print(f"cluster tree: {len(tree.tested_nodes())} clusters tested, "
              f"{len(tree.rejected_nodes())} rejected; written to {path}")
        for nd in sorted(rejected, key=lambda nd: len(nd.members))[:20]:
            print(f"  rejected cluster of {len(nd.members)}: p = {nd.pvalue:.3g}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(out, fh, indent=2)
    return 0


def cmd_simulate(args):
    try:
        cfg = ScenarioConfig.from_json(args.scenario)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.methods:
            overrides["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
        if overrides:
            cfg = cfg.replace(**overrides)
    except OSError as exc:
        raise CliError(f"cannot read scenario: {exc}", EXIT_PARSE) from exc
    except (ConfigurationError, TypeError, ValueError) as exc:
        raise CliError(str(exc), EXIT_SCENARIO) from exc
    os.makedirs(args.out, exist_ok=True)

    def progress(outer, seconds):
        print(f"[{cfg.name}] outer replicate {outer + 1}/{cfg.n_outer_replicates} "
              f"done in {seconds:.1f}s", file=sys.stderr, flush=True)

    result = run_scenario(cfg, n_jobs=args.threads, progress=progress)
    base = os.path.join(args.out, cfg.name)
    result.to_csv(base + ".csv")
    result.to_json(base + ".json")
    print(text_summary([result]))
    print(f"wrote {base}.csv and {base}.json")
    return 0


def cmd_report(args):
    if not os.path.isdir(args.results):
        raise CliError(f"results directory {args.results!r} does not exist", EXIT_PARSE)
    results = load_results(args.results)
    if not results:
        raise CliError(f"no scenario results found in {args.results!r}", EXIT_PARSE)
    out = args.out or args.results
    write_report(results, out)
    print(text_summary(results))
    print(f"wrote summary.csv, summary.txt, fwer.svg and power.svg to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="hdinfer",
                                     description="Inference for high-dimensional regression")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="p-values and confidence intervals for one dataset")
    f.add_argument("--data", required=True, help="CSV file with a header row")
    f.add_argument("--response", required=True, help="name of the response column")
    f.add_argument("--method", choices=METHODS, default="ridge-proj")
    f.add_argument("--family", choices=FAMILIES, default="gaussian")
    f.add_argument("--alpha", type=float, default=0.05, help="level for cluster testing")
    f.add_argument("--level", type=float, default=0.95, help="confidence level")
    f.add_argument("--adjust", default="holm",
                   choices=("holm", "bonferroni", "benjamini-yekutieli", "none"))
    f.add_argument("--noise", default="scaled-lasso", choices=("scaled-lasso", "cv-lasso-residual"))
    f.add_argument("--tuning", default="zz", choices=("zz", "cv"), help="nodewise tuning")
    f.add_argument("--lambda-ridge", type=float, default=None)
    f.add_argument("--n-splits", type=int, default=50)
    f.add_argument("--groups", default=None,
                   help="'0,1,2' or a JSON list of groups (indices or column names)")
    f.add_argument("--n-mc", type=int, default=10_000)
    f.add_argument("--cluster-groups", action="store_true",
                   help="test the variable cluster hierarchy top-down")
    f.add_argument("--tree-out", default=None)
    f.add_argument("--pval-corr-threshold", type=float, default=None,
                   help="print only rows with adjusted p-value at or below this")
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--threads", type=int, default=default_threads())
    f.add_argument("--out", default=None, help="write the full result as JSON")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="run a simulation scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=default_threads())
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--methods", default=None, help="comma-separated method list")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="aggregate simulation results")
    r.add_argument("--results", required=True)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (RankError, DegenerateFitError) as exc:
        cols = getattr(exc, "columns", [])
        print(f"error: {exc}" + (f" (columns {cols})" if cols else ""), file=sys.stderr)
        return EXIT_DIMENSION
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (MethodFailure, ConvergenceError, HdiError) as exc:
        print(f"error: method failed: {exc}", file=sys.stderr)
        return EXIT_METHOD


if __name__ == "__main__":
    sys.exit(main())
