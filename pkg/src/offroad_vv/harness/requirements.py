"""Requirements registry, traceability links and verdict evaluation."""

from __future__ import annotations

import operator
from dataclasses import dataclass
from enum import Enum


class Metric(str, Enum):
    DETECTION_COUNT = "detection_count"
    PEAK_JERK = "peak_jerk"
    MEAN_VELOCITY_ERROR = "mean_velocity_error"
    COLLISION_COUNT = "collision_count"


KPI_FIELD = {
    Metric.DETECTION_COUNT: "n_det_total",
    Metric.PEAK_JERK: "peak_jerk",
    Metric.MEAN_VELOCITY_ERROR: "mean_velocity_error",
    Metric.COLLISION_COUNT: "n_col_total",
}

COMPARATORS = {
    ">": operator.gt,
    "<": operator.lt,
    ">=": operator.ge,
    "<=": operator.le,
    "==": operator.eq,
    "abs<=": lambda v, t: abs(v) <= t,
}


@dataclass(frozen=True)
class Requirement:
    id: str
    summary: str
    description: str
    metric: Metric
    comparator: str
    threshold: float
    implemented_by: str
    verified_by: str

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        if self.comparator not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.comparator!r}")

    def check(self, kpis) -> bool:
        return bool(COMPARATORS[self.comparator](getattr(kpis, KPI_FIELD[self.metric]), self.threshold))


DEFAULT_REQUIREMENTS = (
    Requirement("R1", "Detect animals", "Run-total animal detections exceed one.",
                Metric.DETECTION_COUNT, ">", 1, "C1", "V1"),
    Requirement("R2", "Ride comfort", "Peak absolute jerk stays below 6 m/s^3.",
                Metric.PEAK_JERK, "<", 6.0, "C2", "V2"),
    Requirement("R3", "Velocity estimation", "Mean of v_ref minus v_est lies in [-1, 1] m/s.",
                Metric.MEAN_VELOCITY_ERROR, "abs<=", 1.0, "C3", "V3"),
    Requirement("R4", "Collision avoidance", "No footprint contact with any obstacle.",
                Metric.COLLISION_COUNT, "==", 0, "C4", "V4"),
)


def requirements_from_list(items) -> tuple[Requirement, ...]:
    reqs = tuple(Requirement(**item) for item in items)
    ids = [r.id for r in reqs]
    if len(set(ids)) != len(ids):
        raise ValueError("requirement ids must be unique")
    return reqs


def verify(kpis, requirements=DEFAULT_REQUIREMENTS, status: str = "completed") -> dict:
    """Verdict per verification id; aborted or timed-out runs fail every verdict."""
    ok = status == "completed"
    return {r.verified_by: ok and r.check(kpis) for r in requirements}
