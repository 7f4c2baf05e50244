"""Markdown verification report with traceability links and inline SVG plots.

Everything here is a pure function of the persisted logs and the suite, so a
report regenerated from disk is byte-identical to the one written after a run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .execution import VerificationResult, _atomic_write, log_name, read_log, summarise
from .kpis import moving_average
from .scoring import ScoreTable, score_matrix

log = logging.getLogger(__name__)

COMPONENTS = {
    "C1": "Perception: animal detection from camera objects",
    "C2": "Planning: AEB trigger and velocity profile",
    "C3": "Control: velocity estimation and longitudinal tracking",
    "C4": "Integrated stack: collision avoidance",
}

PANEL_W, PANEL_H = 520, 110
MARGIN_L, MARGIN_T, GAP = 56, 22, 34
MAX_POINTS = 300
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


@dataclass
class ReportBundle:
    markdown: str
    scores: ScoreTable
    results: list
    warnings: list = field(default_factory=list)


def _fmt(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _downsample(n: int) -> np.ndarray:
    if n <= MAX_POINTS:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, MAX_POINTS).round().astype(int))


def _panel(title: str, t: np.ndarray, series, y0: float) -> list[str]:
    """One subplot: axes box, labels and a polyline per series."""
    parts = [f'<g transform="translate({MARGIN_L},{_fmt(y0)})">',
             f'<rect x="0" y="0" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#888"/>',
             f'<text x="0" y="-6" font-size="11">{title}</text>']
    ys = [np.asarray(y, dtype=float) for _, y in series]
    finite = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.zeros(0)
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 1.0
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    t_lo = float(t[0]) if len(t) else 0.0
    t_hi = float(t[-1]) if len(t) and t[-1] > t[0] else t_lo + 1.0
    parts.append(f'<text x="-4" y="10" font-size="9" text-anchor="end">{_fmt(hi)}</text>')
    parts.append(f'<text x="-4" y="{PANEL_H}" font-size="9" text-anchor="end">{_fmt(lo)}</text>')
    idx = _downsample(len(t))
    for k, ((label, _), y) in enumerate(zip(series, ys)):
        px = (t[idx] - t_lo) / (t_hi - t_lo) * PANEL_W
        py = PANEL_H - (np.clip(y[idx], lo, hi) - lo) / (hi - lo) * PANEL_H
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px, py))
        color = COLORS[k % len(COLORS)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        parts.append(f'<text x="{PANEL_W - 4 - 70 * k}" y="-6" font-size="9" text-anchor="end" '
                     f'fill="{color}">{label}</text>')
    parts.append("</g>")
    return parts


def case_svg(records) -> str:
    """Stacked time-series panels for one case."""
    t = np.array([r["t"] for r in records], dtype=float)
    col = lambda key: np.array([r.get(key, 0.0) for r in records], dtype=float)  # noqa: E731
    accel = col("accel")
    jerk = np.zeros_like(t)
    if len(t) > 1:
        jerk[1:] = np.diff(moving_average(accel)) / np.diff(t)
    dtc = np.minimum(col("dtc"), 200.0)
    panels = [
        ("velocity [m/s]", [("v_ref", col("v_ref")), ("v_est", col("v_est")), ("v_true", col("v_true"))]),
        ("acceleration [m/s^2]", [("accel", accel)]),
        ("jerk [m/s^3]", [("jerk", jerk)]),
        ("actuation [-]", [("throttle", col("throttle")), ("brake", col("brake")), ("aeb", col("aeb"))]),
        ("distance to collision [m]", [("dtc", dtc)]),
        ("counts [-]", [("n_det", col("n_det")), ("n_col", col("n_col"))]),
    ]
    height = MARGIN_T + len(panels) * (PANEL_H + GAP)
    width = MARGIN_L + PANEL_W + 16
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif">']
    for k, (title, series) in enumerate(panels):
        out.extend(_panel(title, t, series, MARGIN_T + k * (PANEL_H + GAP)))
    out.append(f'<text x="{MARGIN_L + PANEL_W}" y="{height - 8}" font-size="9" text-anchor="end">time [s]</text>')
    out.append("</svg>")
    return "\n".join(out)


def _anchor(name: str) -> str:
    return f'<a id="{name.lower()}"></a>'


def _trace_section(requirements) -> list[str]:
    lines = ["## Traceability", "",
             "| Requirement | Statement | Implemented by | Verified by | Predicate |", "|---|---|---|---|---|"]
    for r in requirements:
        lines.append(f"| {_anchor(r.id)}[{r.id}](#{r.id.lower()}) {r.summary} | {r.description} "
                     f"| [{r.implemented_by}](#{r.implemented_by.lower()}) "
                     f"| [{r.verified_by}](#{r.verified_by.lower()}) "
                     f"| `{r.metric.value} {r.comparator} {r.threshold:g}` |")
    lines += ["", "### Components", ""]
    for r in requirements:
        desc = COMPONENTS.get(r.implemented_by, r.implemented_by)
        lines.append(f"- {_anchor(r.implemented_by)}**{r.implemented_by}**: {desc}; satisfies [{r.id}](#{r.id.lower()})")
    lines += ["", "### Verifications", ""]
    for r in requirements:
        lines.append(f"- {_anchor(r.verified_by)}**{r.verified_by}**: checks `{r.metric.value} {r.comparator} "
                     f"{r.threshold:g}` on every case; verifies [{r.id}](#{r.id.lower()})")
    return lines


def _kpi_table(res: VerificationResult) -> list[str]:
    if res.kpis is None:
        return ["No KPIs: the case produced no ticks."]
    k = res.kpis
    rows = [
        ("detections", f"{k.n_det_total}"),
        ("collisions", f"{k.n_col_total}"),
        ("peak velocity [m/s]", f"{k.peak_velocity:.3f}"),
        ("peak acceleration [m/s^2]", f"{k.peak_accel:.3f}"),
        ("peak deceleration [m/s^2]", f"{k.peak_decel:.3f}"),
        ("peak jerk [m/s^3]", f"{k.peak_jerk:.3f}"),
        ("mean velocity error [m/s]", f"{k.mean_velocity_error:.3f}"),
        ("final distance to collision [m]", f"{k.final_dtc:.3f}"),
        ("stopped", "yes" if k.stop_achieved else "no"),
        ("duration [s]", f"{k.duration:.2f}"),
    ]
    return ["| KPI | Value |", "|---|---|", *(f"| {a} | {b} |" for a, b in rows)]


def generate_report(results, suite, records_by_case: dict | None = None, unscored: dict | None = None,
                    logs_rel: str = "logs") -> ReportBundle:
    """Assemble the report text and score table.

    Args:
        results: VerificationResult objects to score.
        suite: The suite the results belong to.
        records_by_case: Optional tick records per case id, used for plots.
        unscored: Case id to reason for cases whose logs could not be scored.
        logs_rel: Path to the log directory relative to the report file.
    """
    results = sorted(results, key=lambda r: r.case_id)
    records_by_case = records_by_case or {}
    unscored = dict(sorted((unscored or {}).items()))
    ver_ids = tuple(r.verified_by for r in suite.requirements)
    scores = score_matrix(results, suite.matrix.axes, ver_ids, expected_total=suite.matrix.size)
    warnings = list(scores.warnings)
    warnings += [f"case {cid:04d} unscored: {why}" for cid, why in unscored.items()]
    if not results:
        warnings.append("coverage: no results to score")

    lines = [f"# Verification report: {suite.name}", ""]
    lines.append(f"Cases scored: {len(results)} of {suite.matrix.size}. Time step {suite.dt:g} s, "
                 f"cap {suite.matrix.max_duration:g} s, base seed {suite.matrix.base_seed}.")
    lines.append("")
    if warnings:
        lines += ["## Warnings", "", *(f"- {w}" for w in warnings), ""]
    lines += ["## Scores", "", scores.to_markdown(), ""]
    lines += _trace_section(suite.requirements)
    lines += ["", "## Cases", ""]
    for res in results:
        cid = res.case_id
        labels = ", ".join(f"{k}={res.values[k]}" for k in sorted(res.values))
        lines += [f"### Case {cid:04d}", "", f"Configuration: {labels}. Status: {res.status}"
                  + (f" ({res.diagnostics})" if res.diagnostics else "") + ".",
                  f"Tick log: [{log_name(cid)}]({logs_rel}/{log_name(cid)})", ""]
        verdicts = " ".join(f"[{v}](#{v.lower()}): {'pass' if ok else 'FAIL'}" for v, ok in sorted(res.verdicts.items()))
        lines += [f"Verdicts: {verdicts}", ""]
        lines += _kpi_table(res)
        if records_by_case.get(cid):
            lines += ["", case_svg(records_by_case[cid])]
        lines.append("")
    for cid, why in unscored.items():
        lines += [f"### Case {cid:04d}", "", f"Unscored: {why}", ""]
    return ReportBundle("\n".join(lines).rstrip("\n") + "\n", scores, results, warnings)


def load_results(out_dir: str | Path, suite):
    """Rebuild results from tick logs alone; bad logs become unscored entries."""
    logs = Path(out_dir) / "logs"
    results, records_by_case, unscored = [], {}, {}
    for path in sorted(logs.glob("case_*.jsonl")) if logs.is_dir() else []:
        try:
            case, records, status, diagnostics = read_log(path)
            res = summarise(case, records, status, diagnostics, suite)
        except (ValueError, KeyError, TypeError) as exc:
            stem = path.stem.split("_")[-1]
            cid = int(stem) if stem.isdigit() else -1
            unscored[cid] = f"{path.name}: {exc}"
            log.warning("unscored log %s: %s", path.name, exc)
            continue
        results.append(res)
        records_by_case[res.case_id] = records
    return results, records_by_case, unscored


def write_report(out_dir: str | Path, suite) -> ReportBundle:
    """Regenerate ``report.md`` and ``scores.csv`` under ``out_dir`` from its logs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results, records, unscored = load_results(out, suite)
    bundle = generate_report(results, suite, records, unscored)
    _atomic_write(out / "scores.csv", bundle.scores.to_csv())
    _atomic_write(out / "report.md", bundle.markdown)
    return bundle
