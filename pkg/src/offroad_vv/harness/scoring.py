"""Normalised verification scores per variant value, parameter value and overall."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

ALL_ROW = "All"


@dataclass
class ScoreTable:
    rows: list  # verification ids then "All"
    columns: list  # axis values then "Total"
    cells: dict  # (row, column) -> fraction or None
    counts: dict  # column -> number of cases contributing
    warnings: list = field(default_factory=list)

    def value(self, row: str, column: str):
        return self.cells[(row, column)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["Verification", *self.columns])
        for row in self.rows:
            writer.writerow([row, *(_fmt(self.cells[(row, c)]) for c in self.columns)])
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = ["| Verification | " + " | ".join(self.columns) + " |",
                 "|---|" + "---|" * len(self.columns)]
        for row in self.rows:
            lines.append(f"| {row} | " + " | ".join(_fmt(self.cells[(row, c)]) for c in self.columns) + " |")
        return "\n".join(lines)


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def score_matrix(results, axes: dict, verification_ids=("V1", "V2", "V3", "V4"), expected_total: int | None = None,
                 axis_order=("C1", "C2", "C3", "P1", "P2")) -> ScoreTable:
    """Fraction of passing cases among the cases holding each axis value."""
    results = list(results)
    columns = [v for a in axis_order if a in axes for v in axes[a]] + ["Total"]
    rows = [*verification_ids, ALL_ROW]
    members = {c: [] for c in columns}
    for r in results:
        for a in axis_order:
            if a in r.values:
                members[r.values[a]].append(r)
        members["Total"].append(r)
    cells = {}
    for row in rows:
        for col in columns:
            group = members[col]
            if not group:
                cells[(row, col)] = None
                continue
            passed = sum(1 for r in group if (r.all_pass if row == ALL_ROW else r.verdicts[row]))
            cells[(row, col)] = passed / len(group)
    warnings = []
    if expected_total is not None and len(results) < expected_total:
        warnings.append(f"coverage: {len(results)} of {expected_total} cases scored")
    return ScoreTable(rows, columns, cells, {c: len(m) for c, m in members.items()}, warnings)
