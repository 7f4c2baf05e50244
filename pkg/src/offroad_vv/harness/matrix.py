"""Test-matrix generation: cross product of variant and parameter axes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..autonomy import VariantConfig

VARIANT_AXES = ("C1", "C2", "C3")
PARAM_AXES = ("P1", "P2")
# slowest-varying first; reproduces case 15 = {C1.2, C2.1, C3.2, P1.1, P2.2}
DEFAULT_ORDER = ("P1", "P2", "C1", "C3", "C2")

DEFAULT_AXES = {
    "C1": ("C1.1", "C1.2"),
    "C2": ("C2.1", "C2.2"),
    "C3": ("C3.1", "C3.2"),
    "P1": ("P1.1", "P1.2", "P1.3", "P1.4"),
    "P2": ("P2.1", "P2.2", "P2.3", "P2.4"),
}
DEFAULT_TOD = {"P1.1": 10.0, "P1.2": 13.0, "P1.3": 16.0, "P1.4": 0.0}
DEFAULT_WEATHER = {"P2.1": "clear", "P2.2": "fog", "P2.3": "rain", "P2.4": "snow"}


@dataclass(frozen=True)
class TestCase:
    case_id: int
    values: dict  # axis name -> value label
    tod: float
    weather: str
    seed: int
    max_duration: float = 90.0
    scenario_ref: str = "dirt_road_herd.toml"

    __test__ = False  # not a pytest class

    @property
    def variant(self) -> VariantConfig:
        return VariantConfig(self.values["C1"], self.values["C2"], self.values["C3"])

    @property
    def tod_preset(self) -> str:
        return self.values["P1"]

    @property
    def weather_preset(self) -> str:
        return self.values["P2"]

    def labels(self) -> tuple[str, ...]:
        return tuple(self.values[a] for a in (*VARIANT_AXES, *PARAM_AXES) if a in self.values)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "values": dict(self.values),
            "tod": self.tod,
            "weather": self.weather,
            "seed": self.seed,
            "max_duration": self.max_duration,
            "scenario_ref": self.scenario_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TestCase":
        return cls(d["case_id"], dict(d["values"]), d["tod"], d["weather"], d["seed"], d["max_duration"],
                   d["scenario_ref"])


@dataclass(frozen=True)
class MatrixSpec:
    axes: dict = field(default_factory=lambda: dict(DEFAULT_AXES))
    order: tuple = DEFAULT_ORDER
    tod: dict = field(default_factory=lambda: dict(DEFAULT_TOD))
    weather: dict = field(default_factory=lambda: dict(DEFAULT_WEATHER))
    base_seed: int = 2024
    max_duration: float = 90.0
    scenario_ref: str = "dirt_road_herd.toml"

    def __post_init__(self):
        if set(self.order) != set(self.axes):
            raise ValueError(f"ordering {self.order} must name exactly the axes {sorted(self.axes)}")
        for name, vals in self.axes.items():
            if len(vals) == 0:
                raise ValueError(f"axis {name} is empty")

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.axes.values())


def case_seed(base_seed: int, case_id: int) -> int:
    return int(np.random.SeedSequence([base_seed, case_id]).generate_state(1, np.uint64)[0])


def decode_case_id(case_id: int, spec: MatrixSpec) -> dict:
    """Axis values of a 1-based case id (mixed radix, last axis in ``order`` fastest)."""
    if not 1 <= case_id <= spec.size:
        raise ValueError(f"case id {case_id} outside 1..{spec.size}")
    rem = case_id - 1
    values = {}
    for name in reversed(spec.order):
        vals = spec.axes[name]
        rem, idx = divmod(rem, len(vals))
        values[name] = vals[idx]
    return values


def encode_case(values: dict, spec: MatrixSpec) -> int:
    idx = 0
    for name in spec.order:
        vals = tuple(spec.axes[name])
        idx = idx * len(vals) + vals.index(values[name])
    return idx + 1


def make_case(case_id: int, spec: MatrixSpec) -> TestCase:
    values = decode_case_id(case_id, spec)
    return TestCase(
        case_id,
        values,
        float(spec.tod[values["P1"]]),
        str(spec.weather[values["P2"]]),
        case_seed(spec.base_seed, case_id),
        spec.max_duration,
        spec.scenario_ref,
    )


def generate_matrix(spec: MatrixSpec = MatrixSpec()) -> list[TestCase]:
    return [make_case(i, spec) for i in range(1, spec.size + 1)]


def parse_filter(expr: str | None):
    """Predicate from ``"C3=C3.2,P1=P1.1|P1.2"`` or a plain id list ``"1,5,15"``."""
    if not expr:
        return lambda case: True
    parts = [p.strip() for p in expr.split(",") if p.strip()]
    if all(p.isdigit() for p in parts):
        ids = {int(p) for p in parts}
        return lambda case: case.case_id in ids
    conds = {}
    for p in parts:
        if "=" not in p:
            raise ValueError(f"bad filter term {p!r}; expected AXIS=VALUE")
        axis, vals = p.split("=", 1)
        conds[axis.strip()] = {v.strip() for v in vals.split("|")}
    return lambda case: all(case.values.get(a) in vs for a, vs in conds.items())
