"""Test-suite definition: axes, presets, termination, requirements, component configs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..autonomy import SutParams
from ..config import load_toml, resolve
from ..dynamics import VehicleConfig
from ..environment import Scenario, load_scenario
from ..errors import ConfigurationError
from ..geometry import Pose
from ..sensors import CameraIntrinsics, LidarParams
from ..twin import CameraRig
from .matrix import MatrixSpec
from .requirements import DEFAULT_REQUIREMENTS, requirements_from_list


@dataclass(frozen=True)
class Termination:
    stop_speed: float = 0.05
    stop_hold: float = 3.0
    stop_on_collision: bool = True


@dataclass(frozen=True)
class Suite:
    name: str
    matrix: MatrixSpec
    vehicle: VehicleConfig
    scenario: Scenario
    requirements: tuple
    termination: Termination = Termination()
    sut: SutParams = SutParams()
    camera: CameraRig = field(default_factory=CameraRig)
    lidar: LidarParams | None = field(default_factory=LidarParams)
    dt: float = 0.02
    source: str = ""

    def with_seed(self, base_seed: int) -> "Suite":
        return replace(self, matrix=replace(self.matrix, base_seed=int(base_seed)))


def _deg(table: dict, key: str, default: float) -> float:
    return math.radians(float(table[key])) if key in table else default


def _lidar(table: dict) -> LidarParams | None:
    if not table.get("enabled", True):
        return None
    base = LidarParams()
    mount = table.get("mount", [0.0, 0.0, 1.9])
    return LidarParams(
        r_min=float(table.get("r_min", base.r_min)),
        r_max=float(table.get("r_max", base.r_max)),
        theta_min=_deg(table, "theta_min_deg", base.theta_min),
        theta_max=_deg(table, "theta_max_deg", base.theta_max),
        theta_res=_deg(table, "theta_res_deg", base.theta_res),
        phi_min=_deg(table, "phi_min_deg", base.phi_min),
        phi_max=_deg(table, "phi_max_deg", base.phi_max),
        phi_res=_deg(table, "phi_res_deg", base.phi_res),
        mount_transform=Pose.from_euler(*mount),
        update_rate=float(table.get("update_rate", base.update_rate)),
    )


def _camera(table: dict) -> CameraRig:
    mount = table.get("mount", [1.2, 0.0, 1.5])
    pitch = math.radians(float(table.get("pitch_deg", 0.0)))
    near = float(table.get("near", 0.3))
    hfov = math.radians(float(table.get("hfov_deg", 60.0)))
    w, h = int(table.get("width", 1280)), int(table.get("height", 720))
    half_w = near * math.tan(hfov / 2)
    half_h = half_w * h / w
    intr = CameraIntrinsics(near, float(table.get("far", 300.0)), -half_w, half_w, -half_h, half_h, w, h)
    return CameraRig(Pose.from_euler(*mount, pitch=pitch), intr, float(table.get("rate", 10.0)))


def suite_from_dict(data: dict, base: Path | None = None, source: str = "") -> Suite:
    try:
        meta = data["suite"]
        axes = {k: tuple(v) for k, v in data["axes"].items()}
        for k, v in axes.items():
            if not v:
                raise ConfigurationError(f"axis {k} is empty")
        presets = data.get("presets", {})
        order = tuple(meta.get("order", ("P1", "P2", "C1", "C3", "C2")))
        spec = MatrixSpec(
            axes=axes,
            order=order,
            tod={k: float(v) for k, v in presets.get("P1", {}).items()},
            weather=dict(presets.get("P2", {})),
            base_seed=int(meta.get("base_seed", 2024)),
            max_duration=float(meta.get("max_duration", 90.0)),
            scenario_ref=str(meta["scenario"]),
        )
        vehicle = VehicleConfig.from_dict(load_toml(resolve(meta["vehicle"], base)))
        scenario = load_scenario(resolve(meta["scenario"], base))
    except KeyError as exc:
        raise ConfigurationError(f"suite missing key {exc}") from None
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    for label in axes.get("P1", ()):
        if label not in spec.tod:
            raise ConfigurationError(f"no time-of-day preset for {label}")
    for label in axes.get("P2", ()):
        if label not in spec.weather:
            raise ConfigurationError(f"no weather preset for {label}")
    reqs = requirements_from_list(data["requirements"]) if "requirements" in data else DEFAULT_REQUIREMENTS
    term = Termination(**data.get("termination", {}))
    sensors = data.get("sensors", {})
    return Suite(
        name=str(meta.get("name", "suite")),
        matrix=spec,
        vehicle=vehicle,
        scenario=scenario,
        requirements=reqs,
        termination=term,
        sut=SutParams.from_dict(data.get("sut", {})),
        camera=_camera(sensors.get("camera", {})),
        lidar=_lidar(sensors.get("lidar", {})),
        dt=float(meta.get("dt", 0.02)),
        source=source,
    )


def load_suite(path: str | Path) -> Suite:
    p = resolve(path)
    return suite_from_dict(load_toml(p), p.parent, str(p))
