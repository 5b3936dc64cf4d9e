"""Aggregate simulation results into a tidy CSV, a text table and SVG panels."""

from __future__ import annotations

import csv
import json
import math
import os
from html import escape

from .simulation import ScenarioResult

PANEL_W, PANEL_H = 260, 220
MARGIN = dict(left=48, right=12, top=28, bottom=70)


def load_results(directory):
    """All scenario results (``*.json`` with ``config`` and ``summary``) in a directory."""
    out = []
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".json"):
            continue
        path = os.path.join(directory, name)
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError):
            continue
        if isinstance(d, dict) and {"config", "summary", "outers"} <= set(d):
            out.append(ScenarioResult.from_dict(d))
    return out


def merged_rows(results):
    rows = []
    for r in results:
        rows.extend(r.tidy_rows())
    return rows


def write_merged_csv(results, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "method", "metric", "value", "replicate"])
        w.writerows(merged_rows(results))


def _fmt(v):
    return "  nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:5.3f}"


def text_summary(results):
    lines = []
    for r in results:
        cfg = r.config
        lines.append(f"scenario {cfg.name}: design={cfg.design} n={cfg.n} p={cfg.p} "
                     f"s0={cfg.s0} coef={cfg.coefficients} "
                     f"replicates={cfg.n_outer_replicates}x{cfg.n_y_replicates} "
                     f"alpha={cfg.alpha}")
        lines.append(f"  {'method':<16}{'FWER':>8}{'power':>8}{'AVG(V)':>8}{'fail':>6}")
        for m, s in r.summary.items():
            lines.append(f"  {m:<16}{_fmt(s['fwer']):>8}{_fmt(s['power']):>8}"
                         f"{_fmt(s['avg_v']):>8}{s['failures']:>6}")
        lines.append("")
    return "\n".join(lines)


def _per_outer(result, metric):
    """method -> list of per-outer-replicate values of ``metric``."""
    vals = {}
    for scen, method, key, value, rep in result.tidy_rows():
        if key == metric and rep != "all" and value == value:
            vals.setdefault(method, []).append(float(value))
    return vals


def svg_panels(results, metric, title, reference=None):
    """One panel per scenario: per-replicate values as dots, the mean as a bar.

    ``reference`` draws a dashed horizontal line (e.g. the nominal FWER level).
    """
    n = max(len(results), 1)
    width, height = PANEL_W * n, PANEL_H + 30
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="11">',
             f'<text x="{width / 2}" y="16" text-anchor="middle" font-size="13">'
             f'{escape(title)}</text>']
    for k, r in enumerate(results):
        x0 = k * PANEL_W + MARGIN["left"]
        y0 = 30 + MARGIN["top"]
        w = PANEL_W - MARGIN["left"] - MARGIN["right"]
        h = PANEL_H - MARGIN["top"] - MARGIN["bottom"]
        vals = _per_outer(r, metric)
        methods = list(r.summary)

        def ypos(v):
            return y0 + h * (1.0 - min(max(v, 0.0), 1.0))

        parts.append(f'<text x="{x0 + w / 2}" y="{y0 - 8}" text-anchor="middle">'
                     f'{escape(r.config.name)}</text>')
        parts.append(f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" '
                     'stroke="black"/>')
        for t in (0.0, 0.25, 0.5, 0.75, 1.0):
            parts.append(f'<text x="{x0 - 4}" y="{ypos(t) + 4}" text-anchor="end">{t:g}</text>')
        if reference is not None:
            parts.append(f'<line class="reference" x1="{x0}" x2="{x0 + w}" y1="{ypos(reference)}"'
                         f' y2="{ypos(reference)}" stroke="red" stroke-dasharray="4,3"/>')
        step = w / max(len(methods), 1)
        for i, m in enumerate(methods):
            cx = x0 + step * (i + 0.5)
            for v in vals.get(m, []):
                parts.append(f'<circle cx="{cx}" cy="{ypos(v)}" r="2" fill="steelblue" '
                             'fill-opacity="0.6"/>')
            mean = r.summary[m].get(metric)
            if mean is not None and mean == mean:
                parts.append(f'<line x1="{cx - step / 3}" x2="{cx + step / 3}" y1="{ypos(mean)}"'
                             f' y2="{ypos(mean)}" stroke="black" stroke-width="2"/>')
            parts.append(f'<text x="{cx}" y="{y0 + h + 12}" text-anchor="end" '
                         f'transform="rotate(-40 {cx} {y0 + h + 12})">{escape(m)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_report(results, out_dir):
    """Write ``summary.csv``, ``summary.txt``, ``fwer.svg`` and ``power.svg``."""
    os.makedirs(out_dir, exist_ok=True)
    write_merged_csv(results, os.path.join(out_dir, "summary.csv"))
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(text_summary(results))
    alpha = results[0].config.alpha if results else 0.05
    with open(os.path.join(out_dir, "fwer.svg"), "w") as fh:
        fh.write(svg_panels(results, "fwer", "Familywise error rate", reference=alpha))
    with open(os.path.join(out_dir, "power.svg"), "w") as fh:
        fh.write(svg_panels(results, "power", "Power"))
