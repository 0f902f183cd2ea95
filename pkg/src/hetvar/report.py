"""Dataset analysis reports and appendix-style SVG panel figures."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence
from xml.etree import ElementTree as ET

from . import estimators as est_mod
from . import intervals as int_mod
from .effects import AdjustmentPolicy, Study2x2
from .qstat import MetaSample, WeightScheme, q_statistic, weights
from .simulation import MIN_STUDIES, MetricsRow

METRICS = ("bias", "median_bias", "coverage", "miss_left", "miss_right")
DEFAULT_ESTIMATORS = ("dl", "reml", "mp", "ssc", "ssu", "smc", "smu")
DEFAULT_INTERVALS = ("fpc", "fpu", "qp", "pl")
MODE_METHODS = ("ssu", "smu", "fpu")


class InputError(ValueError):
    """Malformed or unusable input dataset."""


@dataclass
class InputDataset:
    ids: list[str]
    tables: list[Study2x2]
    discarded: list[tuple[str, str]] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.tables)


def read_dataset(path: str | os.PathLike) -> InputDataset:
    """Read ``study_id,x_t,n_t,x_c,n_c`` rows; double-zero and double-n rows are set aside."""
    cols = ("study_id", "x_t", "n_t", "x_c", "n_c")
    ids, tables, discarded = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(cols):
            raise InputError(f"{path}:1: expected header {','.join(cols)}")
        for rec in reader:
            lineno = reader.line_num
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(cols):
                raise InputError(f"{path}:{lineno}: expected {len(cols)} fields, got {len(rec)}")
            sid = rec[0].strip()
            try:
                x_t, n_t, x_c, n_c = (int(c.strip()) for c in rec[1:])
            except ValueError:
                raise InputError(f"{path}:{lineno}: counts must be integers") from None
            try:
                table = Study2x2(x_t, n_t, x_c, n_c)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            if table.is_double_zero:
                discarded.append((sid, "double-zero"))
            elif table.is_double_n:
                discarded.append((sid, "double-n"))
            else:
                ids.append(sid)
                tables.append(table)
    return InputDataset(ids, tables, discarded)


def _resolve(name: str, mode: str) -> str:
    return f"{name}-{mode}" if name in MODE_METHODS else name


def _num(x: float) -> str:
    return f"{x:.10g}"


def analyze(data: InputDataset, estimators: Sequence[str] = DEFAULT_ESTIMATORS,
            intervals: Sequence[str] = DEFAULT_INTERVALS, policy: str = "only", mode: str = "model",
            level: float = 0.95, source: str = "") -> str:
    """Plain-text report of every requested estimate and interval for one dataset."""
    policy = AdjustmentPolicy.parse(policy)
    if data.k < MIN_STUDIES:
        raise InputError(f"only {data.k} usable studies after discarding; at least {MIN_STUDIES} are required")
    est_names = [_resolve(n, mode) for n in estimators]
    int_names = [_resolve(n, mode) for n in intervals]
    for n in est_names:
        est_mod.get_estimator(n)
    for n in int_names:
        int_mod.get_interval(n)

    sample = MetaSample.from_tables(data.tables, policy)
    always = sample if policy is AdjustmentPolicy.ALWAYS else MetaSample.from_tables(data.tables, "always")
    w_ess = weights(sample, WeightScheme.ESS)

    lines = ["hetvar analysis"]
    if source:
        lines.append(f"input: {source}")
    lines += [f"policy: {policy.value}", f"mode: {mode}", f"level: {_num(level)}",
              f"studies read: {data.k + len(data.discarded)}"]
    for sid, why in data.discarded:
        lines.append(f"discarded: {sid} ({why})")
    lines += [f"K: {sample.k}",
              f"Q_IV: {_num(q_statistic(sample, weights(sample, WeightScheme.IV)))}",
              f"Q_F: {_num(q_statistic(sample, w_ess))}",
              "ESS weights: " + ", ".join(f"{sid}={_num(w)}" for sid, w in zip(data.ids, w_ess))]

    if est_names:
        lines += ["", "point estimates", f"{'method':<22}{'tau2':>18}  flags"]
        for name in est_names:
            res = est_mod.get_estimator(name)(sample)
            flags = [f for f, on in (("truncated", res.truncated), ("not-converged", not res.converged)) if on]
            lines.append(f"{res.method_tag:<22}{_num(res.tau2_hat):>18}  {' '.join(flags)}".rstrip())

    if int_names:
        lines += ["", f"confidence intervals ({_num(100 * level)}%)",
                  f"{'method':<22}{'lower':>18}{'upper':>18}  flags"]
        for name in int_names:
            fixed = name.startswith("fpu") and policy is not AdjustmentPolicy.ALWAYS
            ci = int_mod.get_interval(name)(always if name.startswith("fpu") else sample, level)
            flags = [f for f, on in (("degenerate", ci.degenerate), ("capped", ci.capped),
                                     ("not-converged", not ci.converged),
                                     ("always-adjusted", fixed)) if on]
            lines.append(f"{ci.method_tag:<22}{_num(ci.lower):>18}{_num(ci.upper):>18}  {' '.join(flags)}".rstrip())
    if any(n.startswith("fpu") for n in int_names):
        lines += ["", "note: fpu intervals always use always-adjusted counts"]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# SVG panels

PANEL_W, PANEL_H = 260, 200
MARGIN = 40
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#17becf", "#7f7f7f", "#bcbd22")


def _sort_key(label: str):
    return (label.startswith("nbar"), int(label.lstrip("nbar")) if label.lstrip("nbar").isdigit() else label)


def line_style(method: str, policy: str, has_variants: bool) -> str:
    """Dash pattern: solid for "only"/model-based, dashed for "always"/naive."""
    if method.endswith("-naive"):
        return "6,4"
    if method.endswith("-model"):
        return ""
    return "6,4" if (policy == "always" and has_variants) else ""


def plot_metric(rows: Iterable[MetricsRow], metric: str, out_dir: str | os.PathLike,
                level: float = 0.95, facet: tuple[str, str] = ("sizes_label", "k")) -> list[Path]:
    """One SVG per (p_c, theta); panels over ``facet`` (rows, columns); x axis tau2."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {', '.join(METRICS)}")
    for name in facet:
        if name not in ("sizes_label", "k"):
            raise ValueError(f"cannot facet on {name!r}; use sizes_label and/or k")
    rows = [r for r in rows if not math.isnan(getattr(r, metric))]
    if not rows:
        raise ValueError(f"no rows carry metric {metric!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    by_fig: dict[tuple, list[MetricsRow]] = {}
    for r in rows:
        by_fig.setdefault((r.p_c, r.theta), []).append(r)
    written = []
    for (p_c, theta), fig_rows in sorted(by_fig.items()):
        path = out_dir / f"{metric}_pc{p_c:g}_theta{theta:g}.svg"
        ET.ElementTree(_figure(fig_rows, metric, level, facet, p_c, theta)).write(
            path, encoding="utf-8", xml_declaration=True)
        written.append(path)
    return written


def _figure(rows, metric, level, facet, p_c, theta):
    row_key, col_key = facet
    row_vals = sorted({getattr(r, row_key) for r in rows}, key=lambda v: _sort_key(str(v)) if row_key == "sizes_label" else v)
    col_vals = sorted({getattr(r, col_key) for r in rows}, key=lambda v: _sort_key(str(v)) if col_key == "sizes_label" else v)
    series = sorted({(r.method, r.policy) for r in rows})
    base_methods = sorted({m for m, _ in series})
    policies_per = {m: {p for mm, p in series if mm == m} for m in base_methods}
    colors = {m: PALETTE[i % len(PALETTE)] for i, m in enumerate(base_methods)}

    ys = [getattr(r, metric) for r in rows]
    ref = {"coverage": level, "miss_left": (1 - level) / 2, "miss_right": (1 - level) / 2,
           "bias": 0.0, "median_bias": 0.0}[metric]
    y_lo, y_hi = min(ys + [ref]), max(ys + [ref])
    if y_hi - y_lo < 1e-9:
        y_lo, y_hi = y_lo - 0.05, y_hi + 0.05
    xs = [r.tau2 for r in rows]
    x_lo, x_hi = min(xs), max(xs)
    if x_hi - x_lo < 1e-12:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5

    legend_h = 18 * len(series) + 20
    width = MARGIN + len(col_vals) * (PANEL_W + MARGIN)
    height = 40 + len(row_vals) * (PANEL_H + MARGIN) + legend_h
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(height),
                     viewBox=f"0 0 {width} {height}")
    title = ET.SubElement(svg, "text", x=str(MARGIN), y="24", attrib={"font-size": "14"})
    title.text = f"{metric} vs tau2, p_C = {p_c:g}, theta = {theta:g}"

    for i, rv in enumerate(row_vals):
        for j, cv in enumerate(col_vals):
            x0 = MARGIN + j * (PANEL_W + MARGIN)
            y0 = 40 + i * (PANEL_H + MARGIN)
            g = ET.SubElement(svg, "g", attrib={"class": "panel", "data-row": str(rv), "data-col": str(cv)})
            ET.SubElement(g, "rect", x=str(x0), y=str(y0), width=str(PANEL_W), height=str(PANEL_H),
                          fill="none", stroke="#444")
            label = ET.SubElement(g, "text", x=str(x0 + 4), y=str(y0 + 14), attrib={"font-size": "11"})
            label.text = f"{row_key}={rv}, {col_key}={cv}"

            def px(x, y):
                return (x0 + (x - x_lo) / (x_hi - x_lo) * PANEL_W,
                        y0 + PANEL_H - (y - y_lo) / (y_hi - y_lo) * PANEL_H)

            a, b = px(x_lo, ref), px(x_hi, ref)
            ET.SubElement(g, "line", x1=f"{a[0]:.2f}", y1=f"{a[1]:.2f}", x2=f"{b[0]:.2f}", y2=f"{b[1]:.2f}",
                          stroke="#999", attrib={"class": "reference", "stroke-dasharray": "2,2",
                                                 "data-value": repr(float(ref))})
            for axis_text, (tx, ty) in ((f"{x_lo:g}", (x0, y0 + PANEL_H + 14)),
                                        (f"{x_hi:g}", (x0 + PANEL_W - 16, y0 + PANEL_H + 14)),
                                        (f"{y_lo:.3g}", (x0 - 36, y0 + PANEL_H)),
                                        (f"{y_hi:.3g}", (x0 - 36, y0 + 10))):
                t = ET.SubElement(g, "text", x=f"{tx:.1f}", y=f"{ty:.1f}", attrib={"font-size": "9"})
                t.text = axis_text

            cell = [r for r in rows if getattr(r, row_key) == rv and getattr(r, col_key) == cv]
            for method, policy in series:
                pts = sorted((r.tau2, getattr(r, metric)) for r in cell if (r.method, r.policy) == (method, policy))
                if not pts:
                    continue
                coords = " ".join(f"{px(x, y)[0]:.2f},{px(x, y)[1]:.2f}" for x, y in pts)
                attrib = {"class": "series", "data-method": f"{method}-{policy}",
                          "stroke-width": "1.5"}
                dash = line_style(method, policy, len(policies_per[method]) > 1)
                if dash:
                    attrib["stroke-dasharray"] = dash
                ET.SubElement(g, "polyline", points=coords, fill="none", stroke=colors[method], attrib=attrib)

    ly = 40 + len(row_vals) * (PANEL_H + MARGIN)
    for n, (method, policy) in enumerate(series):
        y = ly + 18 * n
        attrib = {"stroke-width": "1.5"}
        dash = line_style(method, policy, len(policies_per[method]) > 1)
        if dash:
            attrib["stroke-dasharray"] = dash
        ET.SubElement(svg, "line", x1=str(MARGIN), y1=str(y), x2=str(MARGIN + 30), y2=str(y),
                      stroke=colors[method], attrib=attrib)
        t = ET.SubElement(svg, "text", x=str(MARGIN + 36), y=str(y + 4), attrib={"font-size": "11"})
        t.text = f"{method} {policy}"
    return svg
