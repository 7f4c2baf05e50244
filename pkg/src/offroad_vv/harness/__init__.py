"""Verification and validation workflow: matrix, execution, KPIs, scoring, reports."""
