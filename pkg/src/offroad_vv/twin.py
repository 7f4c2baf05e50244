"""Simulator endpoint: vehicle dynamics, sensors and world composed per tick."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .dynamics import Commands, VehicleConfig, VehicleState, step
from .environment import (
    CollisionCounter,
    EnvironmentState,
    Footprint,
    Scenario,
    dtc_from_arclength,
    set_conditions,
)
from .geometry import Pose
from .sensors import CameraIntrinsics, LidarParams, SensorFrame, encoder_ticks, ins_read, lidar_scan, project_objects


@dataclass(frozen=True)
class CameraRig:
    mount: Pose = field(default_factory=lambda: Pose.from_euler(1.2, 0.0, 1.5))
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    rate: float = 10.0


def _every(rate: float, dt: float) -> int:
    return max(1, int(round(1.0 / (rate * dt)))) if rate > 0 else 0


class DigitalTwin:
    def __init__(self, vehicle: VehicleConfig, scenario: Scenario, dt: float = 0.02,
                 camera: CameraRig = CameraRig(), lidar: LidarParams | None = LidarParams(),
                 env: EnvironmentState | None = None):
        self.vehicle = vehicle
        self.scenario = scenario
        self.dt = dt
        self.camera = camera
        self.lidar = lidar
        self.env = env or set_conditions(13.0, "clear")
        self.footprint = Footprint.from_vehicle(vehicle)
        spawn = scenario.spawn_pose
        self.state = VehicleState.at_rest(
            vehicle, float(spawn.position[0]), float(spawn.position[1]), spawn.yaw, scenario.terrain
        )
        self.prev_state: VehicleState | None = None
        self.collisions = CollisionCounter(scenario, self.footprint)
        self.tick = 0
        self._camera_every = _every(camera.rate, dt)
        self._lidar_every = _every(lidar.update_rate, dt) if lidar is not None else 0
        self._hint: int | None = None
        self.last_lidar_count = 0
        self.truth = self._ground_truth()

    def set_environment(self, tod: float, weather) -> None:
        self.env = set_conditions(tod, weather)

    def _pose(self) -> Pose:
        return self.state.pose

    def _ground_truth(self) -> dict:
        st = self.state
        x, y = st.position[0], st.position[1]
        s, lateral = self.scenario.project(x, y, self._hint)
        self._hint = self.scenario.segment_index(s)
        reach = self.footprint.front
        bx, by = x + reach * math.cos(st.heading), y + reach * math.sin(st.heading)
        s_b, _ = self.scenario.project(bx, by, self._hint)
        return {"s": s, "lateral": lateral, "dtc": dtc_from_arclength(s_b, self.scenario)}

    def frame(self) -> SensorFrame:
        st = self.state
        pose = self._pose()
        fresh = self._camera_every and self.tick % self._camera_every == 0
        objects = project_objects(self.scenario, pose.compose(self.camera.mount), self.camera.intrinsics) if fresh else []
        pcd = []
        if self._lidar_every and self.tick % self._lidar_every == 0:
            pcd = lidar_scan(self.scenario, pose, self.lidar)
            self.last_lidar_count = len(pcd)
        return SensorFrame(
            dbw_feedback={"throttle": st.throttle, "steering": st.steering, "brake": st.brake, "handbrake": st.handbrake},
            encoder_ticks=[encoder_ticks(n, self.vehicle) for n in st.cumulative_wheel_revs],
            ins=ins_read(st, self.prev_state, self.dt),
            camera_objects=objects,
            lidar_pcd=pcd,
            dtc=self.truth["dtc"],
            n_col=self.collisions.count,
            sim_time=st.sim_time,
            camera_fresh=bool(fresh),
        )

    def apply(self, commands: dict) -> None:
        cmd = Commands(
            throttle=float(commands.get("throttle", 0.0)),
            steering=float(commands.get("steering", 0.0)),
            brake=float(commands.get("brake", 0.0)),
            handbrake=float(commands.get("handbrake", 0.0)),
            reverse=bool(commands.get("reverse", False)),
        )
        self.prev_state = self.state
        self.state = step(self.state, cmd, self.env, self.vehicle, self.dt, self.scenario.terrain)
        self.collisions.update(self.state.pose)
        self.truth = self._ground_truth()
        self.tick += 1
