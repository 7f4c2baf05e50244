"""KPI extraction from per-tick logs."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

SMOOTHING_WINDOW = 5


@dataclass(frozen=True)
class KPISummary:
    n_det_total: int
    n_col_total: int
    peak_velocity: float
    peak_accel: float
    peak_decel: float
    peak_jerk: float
    mean_velocity_error: float
    final_dtc: float
    stop_achieved: bool
    duration: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KPISummary":
        return cls(**d)


def moving_average(x: np.ndarray, window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Centered moving average; the window shrinks at the ends."""
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return x
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(len(x))
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, len(x))
    return (csum[hi] - csum[lo]) / (hi - lo)


def _derivative(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Central differences with one-sided ends; exactly zero on constant input."""
    if len(x) < 2:
        return np.zeros(len(x))
    d = np.empty(len(x))
    d[1:-1] = (x[2:] - x[:-2]) / (t[2:] - t[:-2])
    d[0] = (x[1] - x[0]) / (t[1] - t[0])
    d[-1] = (x[-1] - x[-2]) / (t[-1] - t[-2])
    return d


def compute_kpis(tick_log, stop_speed: float = 0.05) -> KPISummary:
    """Summarise a tick log (sequence of dict records ordered by time)."""
    if len(tick_log) == 0:
        raise ValueError("tick log is empty")
    t = np.array([r["t"] for r in tick_log], dtype=float)
    v_est = np.array([r["v_est"] for r in tick_log], dtype=float)
    v_ref = np.array([r["v_ref"] for r in tick_log], dtype=float)
    v_true = np.array([r.get("v_true", r["v_est"]) for r in tick_log], dtype=float)
    if all("accel" in r for r in tick_log):
        accel = np.array([r["accel"] for r in tick_log], dtype=float)
    else:
        accel = _derivative(v_est, t)
    if len(t) > 1:
        jerk = np.diff(moving_average(accel)) / np.diff(t)
        peak_jerk = float(np.max(np.abs(jerk)))
    else:
        peak_jerk = 0.0
    last = tick_log[-1]
    return KPISummary(
        n_det_total=int(max(r.get("n_det", 0) for r in tick_log)),
        n_col_total=int(max(r.get("n_col", 0) for r in tick_log)),
        peak_velocity=float(np.max(np.abs(v_true))),
        peak_accel=float(max(0.0, np.max(accel))),
        peak_decel=float(max(0.0, -np.min(accel))),
        peak_jerk=peak_jerk,
        mean_velocity_error=float(np.mean(v_ref - v_est)),
        final_dtc=float(last.get("dtc", float("inf"))),
        stop_achieved=bool(abs(v_true[-1]) < stop_speed),
        duration=float(t[-1]),
    )
