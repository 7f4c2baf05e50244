"""System under test: perception oracle, AEB planning, velocity control, HAC, ALC."""

from __future__ import annotations

import copy
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .dynamics import GRAVITY, VehicleConfig
from .environment import EnvironmentState, Weather

ANIMAL_LABELS = frozenset({"bird", "cat", "dog", "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe"})
MIN_SIZE = 2500.0
MIN_CONFIDENCE = 0.5
DOWNSAMPLE_AREA = 0.25  # 1280x720 -> 640x360
ENCODER_RATE_CLAMP = 30.0


class Perception(str, Enum):
    C1_1 = "C1.1"
    C1_2 = "C1.2"


class Planning(str, Enum):
    C2_1 = "C2.1"
    C2_2 = "C2.2"


class Control(str, Enum):
    C3_1 = "C3.1"
    C3_2 = "C3.2"


class Direction(str, Enum):
    FORWARD = "forward"
    HOLD = "hold"
    REVERSE = "reverse"


@dataclass(frozen=True)
class VariantConfig:
    perception: Perception
    planning: Planning
    control: Control

    def __post_init__(self):
        object.__setattr__(self, "perception", Perception(self.perception))
        object.__setattr__(self, "planning", Planning(self.planning))
        object.__setattr__(self, "control", Control(self.control))

    def labels(self) -> tuple[str, str, str]:
        return self.perception.value, self.planning.value, self.control.value


@dataclass(frozen=True)
class Detection:
    class_label: str
    size: float
    confidence: float

    def to_dict(self) -> dict:
        return {"class_label": self.class_label, "size": self.size, "confidence": self.confidence}


@dataclass(frozen=True)
class DetectorCalibration:
    p_base: float
    range_falloff: float
    min_illumination: float
    confidence_sigma: float = 0.1


@dataclass(frozen=True)
class SutParams:
    detectors: dict = field(default_factory=lambda: {
        Perception.C1_1: DetectorCalibration(0.75, 40.0, 0.15),
        Perception.C1_2: DetectorCalibration(0.95, 60.0, 0.02),
    })
    headlight_gain: float = 0.08
    headlight_reach: float = 15.0
    kp: float = 0.25
    ki: float = 0.05
    kd: float = 0.01
    brake_gain: float = 0.1
    brake_deadband: float = 0.05
    max_brake: float = 0.4
    bang_level: float = 0.4
    throttle_limit: float = 0.5
    standstill_speed: float = 0.03
    fusion_encoder_weight: float = 0.02
    encoder_window: float = 0.25
    aeb_hold_time: float = 1.0
    hold_threshold: float = 10.0
    lookahead: float = 8.0
    headlight_threshold: float = 0.3

    @classmethod
    def from_dict(cls, data: dict) -> "SutParams":
        kwargs = {k: v for k, v in data.items() if k != "detectors"}
        if "detectors" in data:
            dets = dict(cls().detectors)
            for key, cal in data["detectors"].items():
                dets[Perception(key.replace("_", "."))] = DetectorCalibration(**cal)
            kwargs["detectors"] = dets
        return cls(**kwargs)


@dataclass
class AutonomyState:
    n_det: int = 0
    aeb: float = 0.0
    v_ref: float = 0.0
    v_est: float = 0.0
    prev_encoder_ticks: list = field(default_factory=lambda: [0, 0, 0, 0])
    prev_accel: float = 0.0
    pid_integral: float = 0.0
    pid_prev_error: float = 0.0
    lights: dict = field(default_factory=lambda: {"headlights": False, "drl": True})
    time: float = 0.0
    detections: list = field(default_factory=list)
    aeb_hold_until: float = -math.inf
    aeb_latched: float = 0.0
    hill_hold: bool = False
    tick_history: deque = field(default_factory=lambda: deque(maxlen=64))
    road_hint: int | None = None
    fault: str | None = None
    started: bool = False


# ----------------------------------------------------------------------------
# C1 perception


def illumination_gain(effective: float, cal: DetectorCalibration) -> float:
    return min(1.0, max(0.0, (effective - cal.min_illumination) / (1.0 - cal.min_illumination)))


def detection_probability(rng_m: float, env: EnvironmentState, cal: DetectorCalibration,
                          headlights: bool = False, params: SutParams = SutParams()) -> float:
    """Per-frame detection probability of one visible object.

    Each unit of ``strength`` is an independent look with success ``p_base``;
    strength scales with lighting and with the squared ratio of the
    visibility-shortened reference range to the object range.
    """
    if rng_m <= 0:
        return 1.0
    light = env.illumination
    if headlights:
        light += params.headlight_gain * min(1.0, (params.headlight_reach / rng_m) ** 2)
    strength = illumination_gain(light, cal) * (cal.range_falloff * env.visibility / rng_m) ** 2
    if strength <= 0:
        return 0.0
    return 1.0 - (1.0 - cal.p_base) ** strength


def perceive(objects, env: EnvironmentState, variant, rng: np.random.Generator,
             params: SutParams = SutParams(), headlights: bool = False) -> list[Detection]:
    cal = params.detectors[Perception(variant)]
    out = []
    for ob in objects:
        p = detection_probability(ob.range, env, cal, headlights, params)
        draw = rng.random()
        noise = rng.normal(0.0, cal.confidence_sigma)
        if draw < p:
            conf = min(1.0, max(0.0, p + noise))
            out.append(Detection(ob.class_label, ob.bbox_area * DOWNSAMPLE_AREA, conf))
    return out


# ----------------------------------------------------------------------------
# C2 planning


def filter_detections(dets) -> list[Detection]:
    return [d for d in dets if d.class_label in ANIMAL_LABELS and d.size >= MIN_SIZE and d.confidence >= MIN_CONFIDENCE]


def aeb_trigger(filtered, variant) -> float:
    if not filtered:
        return 0.0
    if Planning(variant) is Planning.C2_1:
        return 1.0
    return max(0.0, min(1.0, 1e-4 * max(d.size for d in filtered)))


def velocity_profile(aeb: float) -> float:
    if aeb >= 0.9:
        return 0.0
    return 0.3 / (aeb + 0.1)


# ----------------------------------------------------------------------------
# C3 control


def imu_velocity(prev_velocity: float, accel: float, prev_accel: float, dt: float) -> float:
    return prev_velocity + (accel + prev_accel) / 2 * dt


def encoder_rate(ticks, prev_ticks, dt: float) -> float:
    """Mean per-wheel tick rate [ticks/s]."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return sum(t - p for t, p in zip(ticks, prev_ticks)) / len(ticks) / dt


def encoder_velocity(ticks, prev_ticks, dt: float, config: VehicleConfig) -> float:
    rate = max(-ENCODER_RATE_CLAMP, min(ENCODER_RATE_CLAMP, encoder_rate(ticks, prev_ticks, dt)))
    return rate * 2 * math.pi * config.tire_radius / (config.encoder_ppr * config.cumulative_gear_ratio)


def fuse_velocity(prev_estimate: float, accel: float, prev_accel: float, encoder_v: float, dt: float,
                  encoder_weight: float = 0.02) -> float:
    """Complementary filter: IMU-propagated estimate corrected towards the encoder."""
    predicted = imu_velocity(prev_estimate, accel, prev_accel, dt)
    return (1 - encoder_weight) * predicted + encoder_weight * encoder_v


def estimate_velocity(imu_accel: float, encoder_ticks, prev_state: AutonomyState, dt: float,
                      config: VehicleConfig, params: SutParams = SutParams()) -> float:
    """Fused forward speed estimate.

    The encoder term uses the tick delta over the most recent ``encoder_window``
    seconds of ``prev_state.tick_history`` so its rate stays below the clamp.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    hist = prev_state.tick_history
    t_now = prev_state.time + dt
    ref_t, ref_ticks = t_now - dt, prev_state.prev_encoder_ticks
    for t_h, ticks_h in reversed(hist):
        if t_now - t_h <= params.encoder_window + 1e-9:
            ref_t, ref_ticks = t_h, ticks_h
            break
    enc_v = encoder_velocity(encoder_ticks, ref_ticks, t_now - ref_t, config)
    return fuse_velocity(prev_state.v_est, imu_accel, prev_state.prev_accel, enc_v, dt, params.fusion_encoder_weight)


def control(v_ref: float, v_est: float, variant, state: AutonomyState, dt: float,
            params: SutParams = SutParams()) -> tuple[tuple[float, float], AutonomyState]:
    """Throttle/brake command and updated controller memory."""
    err = v_ref - v_est
    new = copy.copy(state)
    if Control(variant) is Control.C3_1:
        cmd = (params.bang_level, 0.0) if err > 0 else (0.0, params.bang_level)
        new.pid_prev_error = err
        return cmd, new
    deriv = (err - state.pid_prev_error) / dt if state.started else 0.0
    integral = state.pid_integral + err * dt
    raw = params.kp * err + params.ki * integral + params.kd * deriv
    saturated_high = raw > params.throttle_limit and err > 0
    saturated_low = raw < 0 and err < 0
    if not (saturated_high or saturated_low):
        new.pid_integral = integral
    throttle = max(0.0, min(params.throttle_limit, raw))
    brake = 0.0
    if err < -params.brake_deadband:
        brake = min(params.max_brake, params.brake_gain * -err)
        throttle = 0.0
    if v_ref == 0.0:
        new.pid_integral = 0.0
        throttle = 0.0
        if abs(v_est) < params.standstill_speed:
            brake = params.max_brake
    new.pid_prev_error = err
    return (throttle, brake), new


def hill_hold(encoder_ticks, prev_ticks, dt: float, commanded_direction, threshold: float = 10.0) -> float:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if Direction(commanded_direction) is Direction.REVERSE:
        return 0.0
    return 1.0 if encoder_rate(encoder_ticks, prev_ticks, dt) < -threshold else 0.0


def adaptive_lights(env: EnvironmentState, threshold: float = 0.3) -> dict:
    on = env.illumination < threshold or env.weather is not Weather.CLEAR
    return {"headlights": on, "drl": not on}


def pure_pursuit(x: float, y: float, yaw: float, road, lookahead: float, wheelbase: float,
                 max_steer: float, hint: int | None = None) -> tuple[float, int]:
    """Steering angle (positive turns right) towards a centerline point ``lookahead`` ahead."""
    from .environment import road_query

    s, _ = road.project(x, y, hint)
    target = road_query(s + lookahead, road).center
    dx, dy = target[0] - x, target[1] - y
    alpha = math.atan2(dy, dx) - yaw
    dist = max(math.hypot(dx, dy), 1e-6)
    left_turn = math.atan2(2 * wheelbase * math.sin(alpha), dist)
    return max(-max_steer, min(max_steer, -left_turn)), road.segment_index(s)


# ----------------------------------------------------------------------------
# composed tick


@dataclass
class AutonomyContext:
    variant: VariantConfig
    vehicle: VehicleConfig
    road: object
    rng: np.random.Generator
    params: SutParams = field(default_factory=SutParams)


def autonomy_tick(frame, env_view: EnvironmentState, variant: VariantConfig, state: AutonomyState, dt: float,
                  context: AutonomyContext) -> tuple[dict, AutonomyState]:
    """One perceive-plan-control cycle. Any stage fault yields a safe stop."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    new = copy.copy(state)
    new.tick_history = copy.copy(state.tick_history)
    try:
        cmd = _pipeline(frame, env_view, variant, state, new, dt, context)
    except Exception as exc:  # noqa: BLE001 - any stage failure must stop the vehicle
        new.fault = f"{type(exc).__name__}: {exc}"
        cmd = {"throttle": 0.0, "steering": 0.0, "brake": 1.0, "handbrake": 0.0, "reverse": False,
               **state.lights, "fault": True}
    new.time = state.time + dt
    new.started = True
    return cmd, new


def _pipeline(frame, env_view, variant, prev, new, dt, ctx):
    p = ctx.params
    lights = adaptive_lights(env_view, p.headlight_threshold)
    new.lights = lights

    if frame.camera_fresh:
        raw = perceive(frame.camera_objects, env_view, variant.perception, ctx.rng, p, lights["headlights"])
        new.n_det = prev.n_det + len(raw)
        new.detections = raw
    aeb_now = aeb_trigger(filter_detections(new.detections), variant.planning)
    now = prev.time + dt
    # a missed or weaker frame cannot lower the trigger until the hold expires
    if aeb_now >= prev.aeb_latched or now >= prev.aeb_hold_until:
        new.aeb_latched = aeb_now
        new.aeb_hold_until = now + p.aeb_hold_time
    new.aeb = new.aeb_latched
    new.v_ref = velocity_profile(new.aeb)

    ins = frame.ins
    accel = ins.ax - GRAVITY * math.sin(ins.pitch)
    ticks = list(frame.encoder_ticks)
    new.v_est = estimate_velocity(accel, ticks, prev, dt, ctx.vehicle, p) if prev.started else 0.0
    (throttle, brake), ctrl = control(new.v_ref, new.v_est, variant.control, prev, dt, p)
    new.pid_integral, new.pid_prev_error = ctrl.pid_integral, ctrl.pid_prev_error

    direction = Direction.FORWARD if new.v_ref > 0 else Direction.HOLD
    if prev.started and hill_hold(ticks, prev.prev_encoder_ticks, dt, direction, p.hold_threshold) > 0:
        new.hill_hold = True
    if throttle > 0:
        new.hill_hold = False
    if new.hill_hold:
        brake, throttle = 1.0, 0.0

    steering, new.road_hint = pure_pursuit(ins.x, ins.y, ins.yaw, ctx.road, p.lookahead, ctx.vehicle.wheelbase,
                                           ctx.vehicle.max_steer, prev.road_hint)
    new.prev_accel = accel
    new.prev_encoder_ticks = ticks
    new.tick_history.appendleft((prev.time + dt, ticks))
    return {"throttle": throttle, "steering": steering, "brake": brake, "handbrake": 0.0, "reverse": False,
            **lights, "fault": False}
