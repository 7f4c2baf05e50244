"""Fixed-timestep vehicle dynamics.

Corner/wheel index order is FL, FR, RL, RR. The vehicle frame has x forward,
y left, z up with its origin midway between the axles at ground level.

Steering follows the Ackermann relation's native sign: a positive steering
angle turns the vehicle to the right (clockwise seen from above), which makes
the right wheel the inner wheel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError, SimulationFault
from .geometry import Pose, quat_from_euler
from .tire import FrictionSpline

GRAVITY = 9.81
MPH_60 = 26.8224  # m/s
FRONT = (0, 1)
REAR = (2, 3)
LEFT = (0, 2)


class DriveConfig(str, Enum):
    FWD = "FWD"
    RWD = "RWD"
    AWD = "AWD"


@dataclass(frozen=True)
class VehicleConfig:
    corner_sprung_mass: tuple[float, float, float, float] = (250.0, 250.0, 267.0, 267.0)
    wheel_mass: float = 25.0
    natural_frequency: tuple[float, float, float, float] = (9.4, 9.4, 9.4, 9.4)
    damping_ratio: tuple[float, float, float, float] = (0.45, 0.45, 0.45, 0.45)
    wheelbase: float = 2.96
    track_width: float = 1.58
    tire_radius: float = 0.406
    final_drive_ratio: float = 3.5
    gear_ratios: dict = field(default_factory=lambda: {-1: 3.0, 1: 3.0, 2: 2.0, 3: 1.4, 4: 1.0, 5: 0.8})
    engine_torque_map: tuple[tuple[float, float], ...] = (
        (0.0, 100.0),
        (1000.0, 120.0),
        (3000.0, 200.0),
        (5000.0, 200.0),
        (7000.0, 150.0),
        (7500.0, 0.0),
    )
    idle_rpm: float = 1000.0
    throttle_smoothing_time: float = 0.25
    diff_torque_drop: float = 0.6
    brake_disk_radius: float = 0.2
    braking_distance_60mph: float = 22.0
    drive_config: DriveConfig = DriveConfig.AWD
    steer_sensitivity: float = 0.8
    steer_speed_factor: float = -0.3
    max_steer: float = 0.6
    v_max: float = 25.0
    v_rev: float = 8.0
    drag_max: float = 6000.0
    drag_idle: float = 150.0
    drag_rev: float = 3000.0
    encoder_ppr: float = 16.0
    cumulative_gear_ratio: float = 1.0
    # parameters the reference model leaves open
    tire: FrictionSpline = field(default_factory=FrictionSpline)
    cg_height: float = 0.6
    ride_height: float = 0.45
    front_overhang: float = 0.7
    rear_overhang: float = 0.6
    body_width: float = 1.85
    shift_up_rpm: float = 4500.0
    shift_down_rpm: float = 1500.0
    rpm_smoothing_time: float = 0.15
    brake_slew_rate: float = 0.5
    throttle_slew_rate: float = 1.0
    min_steer_rate: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "drive_config", DriveConfig(self.drive_config))
        gears = {int(k): float(v) for k, v in dict(self.gear_ratios).items()}
        object.__setattr__(self, "gear_ratios", gears)
        for name in ("corner_sprung_mass", "natural_frequency", "damping_ratio"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != 4:
                raise ConfigurationError(f"{name} needs 4 entries")
            object.__setattr__(self, name, vals)
        tmap = tuple((float(r), float(t)) for r, t in self.engine_torque_map)
        object.__setattr__(self, "engine_torque_map", tmap)
        self.validate()

    def validate(self) -> None:
        positive = [
            "wheel_mass", "wheelbase", "track_width", "tire_radius", "final_drive_ratio",
            "brake_disk_radius", "braking_distance_60mph", "v_max", "v_rev", "encoder_ppr",
            "cumulative_gear_ratio", "throttle_smoothing_time", "idle_rpm",
        ]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be strictly positive")
        if any(m <= 0 for m in self.corner_sprung_mass) or any(w <= 0 for w in self.natural_frequency):
            raise ConfigurationError("corner masses and natural frequencies must be strictly positive")
        if any(not (0 < z <= 2) for z in self.damping_ratio):
            raise ConfigurationError("damping ratios must lie in (0, 2]")
        if -1 not in self.gear_ratios or not any(g >= 1 for g in self.gear_ratios):
            raise ConfigurationError("gear_ratios needs a reverse gear (-1) and a forward gear")
        if not self.v_rev < self.v_max:
            raise ConfigurationError("v_rev must be below v_max")
        if not 0 < self.max_steer < math.pi / 2:
            raise ConfigurationError("max_steer must lie in (0, pi/2)")
        rpms = [r for r, _ in self.engine_torque_map]
        if len(rpms) < 2 or any(b <= a for a, b in zip(rpms, rpms[1:])):
            raise ConfigurationError("engine_torque_map rpm breakpoints must be strictly increasing")

    @property
    def total_sprung_mass(self) -> float:
        return sum(self.corner_sprung_mass)

    @property
    def total_mass(self) -> float:
        return self.total_sprung_mass + 4 * self.wheel_mass

    @property
    def wheel_inertia(self) -> float:
        return 0.5 * self.wheel_mass * self.tire_radius**2

    @property
    def forward_gears(self) -> list[int]:
        return sorted(g for g in self.gear_ratios if g >= 1)

    def corner_positions(self) -> np.ndarray:
        hl, hw = self.wheelbase / 2, self.track_width / 2
        return np.array([[hl, hw, 0.0], [hl, -hw, 0.0], [-hl, hw, 0.0], [-hl, -hw, 0.0]])

    def stiffness(self, corner: int) -> float:
        return self.corner_sprung_mass[corner] * self.natural_frequency[corner] ** 2

    def damping(self, corner: int) -> float:
        k = self.stiffness(corner)
        return 2 * self.damping_ratio[corner] * math.sqrt(k * self.corner_sprung_mass[corner])

    @classmethod
    def from_dict(cls, data: dict) -> "VehicleConfig":
        """Build from a (possibly nested) mapping; nested tables are flattened by key name."""
        flat: dict = {}

        def walk(d):
            for key, val in d.items():
                leaf = key in ("gear_ratios", "engine_torque_map") or (key == "tire" and "extremum" in val)
                if isinstance(val, dict) and not leaf:
                    walk(val)
                else:
                    if key in flat:
                        raise ConfigurationError(f"duplicate vehicle key {key!r}")
                    flat[key] = val

        walk(data)
        known = {f.name for f in fields(cls)}
        unknown = set(flat) - known
        if unknown:
            raise ConfigurationError(f"unknown vehicle config keys: {sorted(unknown)}")
        if "tire" in flat and isinstance(flat["tire"], dict):
            t = flat["tire"]
            flat["tire"] = FrictionSpline(
                origin=tuple(t.get("origin", (0.0, 0.0))),
                extremum=tuple(t["extremum"]),
                asymptote=tuple(t["asymptote"]),
                initial_slope=t.get("initial_slope"),
            )
        if "gear_ratios" in flat:
            flat["gear_ratios"] = {int(k): v for k, v in flat["gear_ratios"].items()}
        if "engine_torque_map" in flat:
            tm = flat["engine_torque_map"]
            if isinstance(tm, dict):
                flat["engine_torque_map"] = tuple(zip(tm["rpm"], tm["torque"]))
        return cls(**flat)

    @classmethod
    def from_file(cls, path: str | Path) -> "VehicleConfig":
        from .config import load_toml

        return cls.from_dict(load_toml(path))


@dataclass
class Commands:
    throttle: float = 0.0
    steering: float = 0.0
    brake: float = 0.0
    handbrake: float = 0.0
    reverse: bool = False


@dataclass
class VehicleState:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    linear_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    angular_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    wheel_rpm: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    suspension_deflection: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    suspension_rate: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    engine_rpm: float = 1000.0
    gear: int = 1
    throttle: float = 0.0
    steering: float = 0.0
    brake: float = 0.0
    handbrake: float = 0.0
    cumulative_wheel_revs: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    sim_time: float = 0.0
    # integrator memory
    speed: float = 0.0
    heading: float = 0.0
    smoothed_throttle: float = 0.0
    longitudinal_accel: float = 0.0
    terrain_heights: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    terrain_rates: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    @property
    def pose(self) -> Pose:
        return Pose(np.array(self.position, dtype=float), np.array(self.orientation, dtype=float))

    @property
    def mean_wheel_rpm(self) -> float:
        return sum(self.wheel_rpm) / 4.0

    @classmethod
    def at_rest(cls, config: VehicleConfig, x=0.0, y=0.0, heading=0.0, terrain=None) -> "VehicleState":
        terrain = terrain or flat_terrain
        heights = _corner_ground_heights(x, y, heading, config, terrain)
        z, roll, pitch = _body_attitude(heights, (0.0,) * 4, config)
        return cls(
            position=(x, y, z),
            orientation=tuple(quat_from_euler(roll, pitch, heading)),
            engine_rpm=config.idle_rpm,
            heading=heading,
            terrain_heights=heights,
        )


def flat_terrain(x: float, y: float) -> float:
    return 0.0


# ----------------------------------------------------------------------------
# component models


def compute_inertial_aggregates(config: VehicleConfig, corner_positions=None, masses=None):
    """Total sprung mass, centre of mass and point-mass inertia about the COM.

    The inertia is returned as the diagonal ``(Ixx, Iyy, Izz)`` of the
    point-mass tensor, evaluated per axis about COM-centred axes.
    """
    pos = np.asarray(config.corner_positions() if corner_positions is None else corner_positions, dtype=float)
    if pos.shape != (4, 3):
        raise ConfigurationError("corner_positions must hold 4 xyz points")
    masses = np.asarray(config.corner_sprung_mass if masses is None else masses, dtype=float)
    if masses.shape != (4,) or (masses < 0).any():
        raise ConfigurationError("masses must hold 4 non-negative values")
    total = masses.sum()
    if total <= 0:
        raise ConfigurationError("total sprung mass must be positive")
    com = (masses[:, None] * pos).sum(axis=0) / total
    rel = pos - com
    sq = rel**2
    moi = np.array(
        [
            (masses * (sq[:, 1] + sq[:, 2])).sum(),
            (masses * (sq[:, 0] + sq[:, 2])).sum(),
            (masses * (sq[:, 0] + sq[:, 1])).sum(),
        ]
    )
    return float(total), com, moi


def suspension_force(corner: int, deflection: float, rate: float, config: VehicleConfig) -> float:
    if corner not in range(4):
        raise IndexError(f"corner index {corner} out of range")
    return config.damping(corner) * rate + config.stiffness(corner) * deflection


def engine_torque(rpm: float, config: VehicleConfig) -> float:
    tmap = config.engine_torque_map
    if rpm <= tmap[0][0]:
        return tmap[0][1]
    for (r0, t0), (r1, t1) in zip(tmap, tmap[1:]):
        if rpm <= r1:
            return t0 + (t1 - t0) * (rpm - r0) / (r1 - r0)
    return tmap[-1][1]


class ThrottleSmoother:
    """First-order lag applied to the throttle pedal before it reaches the engine."""

    def __init__(self, time_constant: float, dt: float, value: float = 0.0):
        self.alpha = 1.0 - math.exp(-dt / time_constant)
        self.value = value

    def update(self, throttle: float) -> float:
        target = min(1.0, max(0.0, throttle))
        self.value = min(1.0, max(0.0, self.value + (target - self.value) * self.alpha))
        return self.value


def gear_ratio(gear: int, config: VehicleConfig) -> float:
    try:
        return config.gear_ratios[gear]
    except KeyError:
        raise ConfigurationError(f"unknown gear {gear}") from None


def powertrain_torque(throttle: float, engine_rpm: float, gear: int, config: VehicleConfig,
                      smoother: ThrottleSmoother | None = None) -> float:
    """Total driveline torque [N m]; negative in reverse.

    Without a ``smoother`` the throttle is taken as already settled.
    """
    ratio = gear_ratio(gear, config)
    effective = smoother.update(throttle) if smoother is not None else min(1.0, max(0.0, throttle))
    torque = engine_torque(engine_rpm, config) * ratio * config.final_drive_ratio * effective
    return -torque if gear == -1 else torque


def engine_rpm_target(mean_wheel_rpm: float, gear: int, config: VehicleConfig) -> float:
    return config.idle_rpm + abs(mean_wheel_rpm) * config.final_drive_ratio * gear_ratio(gear, config)


def transmission_rpm(v_mph: float, tire_radius_in: float, final_drive: float, ratio: float) -> float:
    """Engine speed from road speed in imperial units (no idle offset)."""
    return v_mph * 5280 * 12 / (60 * 2 * math.pi * tire_radius_in) * final_drive * ratio


def update_engine_rpm(state: VehicleState, config: VehicleConfig, dt: float) -> float:
    if dt <= 0:
        raise ValueError("dt must be positive")
    target = engine_rpm_target(state.mean_wheel_rpm, state.gear, config)
    alpha = 1.0 - math.exp(-dt / config.rpm_smoothing_time)
    rpm = state.engine_rpm + (target - state.engine_rpm) * alpha
    return max(config.idle_rpm, rpm)


def select_gear(state: VehicleState, config: VehicleConfig, reverse: bool = False) -> int:
    if reverse:
        return -1
    gears = config.forward_gears
    gear = state.gear if state.gear in gears else gears[0]
    wheel = abs(state.mean_wheel_rpm)

    def predicted(g):
        return wheel * config.final_drive_ratio * config.gear_ratios[g]

    idx = gears.index(gear)
    while idx + 1 < len(gears) and predicted(gears[idx]) > config.shift_up_rpm:
        idx += 1
    while idx > 0 and predicted(gears[idx]) < config.shift_down_rpm and predicted(gears[idx - 1]) < config.shift_up_rpm:
        idx -= 1
    return gears[idx]


def split_torque(total: float, config: VehicleConfig) -> tuple[float, float, float, float]:
    if config.drive_config is DriveConfig.AWD:
        q = total / 4
        return (q, q, q, q)
    half = total / 2
    if config.drive_config is DriveConfig.FWD:
        return (half, half, 0.0, 0.0)
    return (0.0, 0.0, half, half)


def differential_torque(tau_out: float, steering: float, config: VehicleConfig) -> tuple[float, float]:
    neg, pos = min(steering, 0.0), max(steering, 0.0)
    left_drop = min(0.9, max(0.0, config.diff_torque_drop * abs(neg)))
    right_drop = min(0.9, max(0.0, config.diff_torque_drop * abs(pos)))
    return tau_out * (1 - left_drop), tau_out * (1 - right_drop)


def brake_torque(corner_mass: float, speed: float, config: VehicleConfig, brake_input: float) -> float:
    """Brake torque [N m] at one corner.

    Capacity is calibrated from the 60 mph stopping distance, so it does not
    depend on the current ``speed``.
    """
    if speed < 0:
        raise ValueError("speed must be non-negative")
    capacity = corner_mass * MPH_60**2 / (2 * config.braking_distance_60mph) * config.brake_disk_radius
    return capacity * min(1.0, max(0.0, brake_input))


def ackermann_angles(steering: float, config: VehicleConfig) -> tuple[float, float]:
    if abs(steering) >= math.pi / 2:
        raise DomainError("steering must lie strictly inside (-pi/2, pi/2)")
    l, w = config.wheelbase, config.track_width
    t = math.tan(steering)
    den_l = 2 * l + w * t
    den_r = 2 * l - w * t
    if den_l <= 0 or den_r <= 0:
        raise DomainError(f"steering {steering} rad is geometrically impossible for this track/wheelbase")
    return math.atan(2 * l * t / den_l), math.atan(2 * l * t / den_r)


def steering_rate(speed: float, config: VehicleConfig) -> float:
    if speed < 0:
        raise ValueError("speed must be non-negative")
    return config.steer_sensitivity + config.steer_speed_factor * speed / config.v_max


class DragCase(int, Enum):
    MAX = 1
    IDLE_COAST = 2
    REVERSE = 3
    IDLE = 4


def aero_drag_case(speed: float, tau_out: float, gear: int, mean_wheel_rpm: float, config: VehicleConfig) -> DragCase:
    if speed >= config.v_max:
        return DragCase.MAX
    if tau_out == 0:
        return DragCase.IDLE_COAST
    if speed >= config.v_rev and gear == -1 and mean_wheel_rpm < 0:
        return DragCase.REVERSE
    return DragCase.IDLE


def _drag_magnitude(case: DragCase, config: VehicleConfig) -> float:
    return {
        DragCase.MAX: config.drag_max,
        DragCase.IDLE_COAST: config.drag_idle,
        DragCase.REVERSE: config.drag_rev,
        DragCase.IDLE: config.drag_idle,
    }[case]


def aero_drag(state: VehicleState, tau_out: float, config: VehicleConfig) -> float:
    """Signed longitudinal drag force [N], opposing the direction of travel."""
    case = aero_drag_case(abs(state.speed), tau_out, state.gear, state.mean_wheel_rpm, config)
    magnitude = _drag_magnitude(case, config)
    if state.speed > 0:
        return -magnitude
    if state.speed < 0:
        return magnitude
    return 0.0


# ----------------------------------------------------------------------------
# integrator


def _corner_ground_heights(x, y, heading, config, terrain):
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = config.wheelbase / 2, config.track_width / 2
    out = []
    for lx, ly in ((hl, hw), (hl, -hw), (-hl, hw), (-hl, -hw)):
        out.append(terrain(x + c * lx - s * ly, y + s * lx + c * ly))
    return tuple(out)


def _body_attitude(ground, deflection, config):
    """Origin height, roll and pitch from the four sprung-corner heights."""
    h = [g + config.ride_height + d for g, d in zip(ground, deflection)]
    front = (h[0] + h[1]) / 2
    rear = (h[2] + h[3]) / 2
    left = (h[0] + h[2]) / 2
    right = (h[1] + h[3]) / 2
    pitch = math.atan2(rear - front, config.wheelbase)
    roll = math.atan2(left - right, config.track_width)
    z = sum(g + d for g, d in zip(ground, deflection)) / 4
    return z, roll, pitch


def _slew(current: float, target: float, max_delta: float) -> float:
    if target > current + max_delta:
        return current + max_delta
    if target < current - max_delta:
        return current - max_delta
    return target


def _sign(x: float) -> float:
    return (x > 0) - (x < 0)


def _solve_longitudinal(v, omegas, drive, brakes, loads, offsets, cosines, ext_force, mass, config, mu_scale, dt):
    """Active-set update of body speed and wheel spin.

    A rolling wheel is tied to the ground speed and transmits whatever force
    keeps it rolling, up to peak friction. Past that it slides and the tire
    curve sets the force. Brakes act as friction elements: they hold the
    vehicle at standstill, and a wheel whose brake absorbs the net torque
    locks at zero spin instead of reversing.
    """
    radius = config.tire_radius
    inertia = config.wheel_inertia
    spline = config.tire
    normal = [loads[i] * mu_scale for i in range(4)]
    peak = spline.extremum[1]

    # static hold: everything stopped and the brakes can absorb the residual force
    if any(b > 0 for b in brakes):
        need = mass * v / dt + ext_force
        need += sum(cosines[i] * (drive[i] + inertia * omegas[i] / dt) / radius for i in range(4))
        capacity = sum(cosines[i] * brakes[i] / radius for i in range(4))
        if abs(need) <= capacity:
            return -v, [0.0] * 4

    direction = _sign(v) or _sign(sum(drive) / radius + ext_force)
    mode = []
    for i in range(4):
        if brakes[i] > 0 and omegas[i] == 0.0 and v != 0.0:
            mode.append("lock")
        elif abs(omegas[i] * radius - (v + offsets[i])) > 0.5:
            mode.append("slide")
        else:
            mode.append("roll")

    def slide_force(i, omega):
        vi = v + offsets[i]
        slip = (omega * radius - vi) / max(abs(vi), 0.1)
        return spline.evaluate(slip)[0] * normal[i]

    for _ in range(8):
        force = [0.0] * 4
        torque = [0.0] * 4
        denom = mass / dt
        rhs = mass * v / dt + ext_force
        for i in range(4):
            if mode[i] == "roll":
                torque[i] = drive[i] - direction * brakes[i]
                denom += cosines[i] * inertia / (radius * radius * dt)
                rhs += cosines[i] * (torque[i] + inertia * omegas[i] / dt - inertia * offsets[i] / (radius * dt)) / radius
            else:
                omega = 0.0 if mode[i] == "lock" else omegas[i]
                force[i] = slide_force(i, omega)
                torque[i] = drive[i] - _sign(omegas[i] or direction) * brakes[i]
                rhs += cosines[i] * force[i]
        v_new = rhs / denom
        new_omegas = [0.0] * 4
        changed = False
        for i in range(4):
            if mode[i] == "roll":
                w = (v_new + offsets[i]) / radius
                f = (torque[i] - inertia * (w - omegas[i]) / dt) / radius
                if abs(f) > peak * normal[i] + 1e-9:
                    mode[i], changed = "slide", True
                new_omegas[i] = w
            elif mode[i] == "slide":
                w = omegas[i] + dt * (torque[i] - radius * force[i]) / inertia
                before = omegas[i] * radius - (v + offsets[i])
                after = w * radius - (v_new + offsets[i])
                if brakes[i] > 0 and w * omegas[i] < 0:
                    mode[i], changed, w = "lock", True, 0.0
                elif before * after < 0:
                    mode[i], changed = "roll", True
                new_omegas[i] = w
            elif brakes[i] < abs(drive[i] - radius * force[i]):
                mode[i], changed = "slide", True
        if not changed:
            break
    if v != 0.0 and v_new * v < 0 and any(b > 0 for b in brakes):
        v_new = 0.0
        new_omegas = [0.0 if m != "roll" else offsets[i] / radius for i, m in enumerate(mode)]
    return v_new - v, new_omegas


def step(state: VehicleState, commands: Commands, env, config: VehicleConfig, dt: float, terrain=None) -> VehicleState:
    """Advance the vehicle by one fixed step of ``dt`` seconds."""
    if not 0 < dt <= 0.05:
        raise ValueError(f"dt must lie in (0, 0.05], got {dt}")
    terrain = terrain or flat_terrain
    _check_finite(state)
    mu_scale = getattr(env, "surface_friction", 1.0) if env is not None else 1.0

    # actuators
    throttle_target = min(1.0, max(0.0, commands.throttle))
    throttle = _slew(state.throttle, throttle_target, config.throttle_slew_rate * dt)
    handbrake = min(1.0, max(0.0, commands.handbrake))
    brake_target = min(1.0, max(0.0, commands.brake))
    brake = _slew(state.brake, brake_target, config.brake_slew_rate * dt)
    steer_target = min(config.max_steer, max(-config.max_steer, commands.steering))
    rate = max(config.min_steer_rate, steering_rate(abs(state.speed), config))
    steering = _slew(state.steering, steer_target, rate * dt)
    smoother = ThrottleSmoother(config.throttle_smoothing_time, dt, state.smoothed_throttle)

    # powertrain
    gear = select_gear(state, config, commands.reverse)
    state_g = replace(state, gear=gear)
    engine_rpm = update_engine_rpm(state_g, config, dt)
    total = powertrain_torque(throttle, engine_rpm, gear, config, smoother)
    per_wheel = split_torque(total, config)
    fl, fr = differential_torque(per_wheel[0], steering, config)
    rl, rr = differential_torque(per_wheel[2], steering, config)
    drive = (fl, fr, rl, rr)
    tau_out = per_wheel[0] if config.drive_config is not DriveConfig.RWD else per_wheel[2]

    # loads and brakes
    masses = config.corner_sprung_mass
    _, _, pitch_prev = _body_attitude(state.terrain_heights, state.suspension_deflection, config)
    cos_tilt = math.cos(pitch_prev)
    loads = []
    for i in range(4):
        static = (masses[i] + config.wheel_mass) * GRAVITY * cos_tilt
        f_s = suspension_force(i, state.suspension_deflection[i], state.suspension_rate[i], config)
        loads.append(max(0.0, static - f_s))
    speed_abs = abs(state.speed)
    brakes = []
    for i in range(4):
        tq = brake_torque(masses[i], speed_abs, config, brake)
        if i in REAR and handbrake > 0:
            tq += brake_torque(masses[i], speed_abs, config, handbrake)
        brakes.append(tq)

    # steering geometry (ISO sign internally: left turn positive)
    left_angle, right_angle = ackermann_angles(steering, config)
    cosines = (math.cos(left_angle), math.cos(right_angle), 1.0, 1.0)
    delta_iso = -steering
    beta = math.atan(0.5 * math.tan(delta_iso))
    yaw_rate = state.speed * math.cos(beta) * math.tan(delta_iso) / config.wheelbase
    hw = config.track_width / 2
    offsets = (-yaw_rate * hw, yaw_rate * hw, -yaw_rate * hw, yaw_rate * hw)

    mass = config.total_mass
    drag = aero_drag(state, tau_out, config)
    ext = drag + mass * GRAVITY * math.sin(pitch_prev)
    omegas = [r * 2 * math.pi / 60 for r in state.wheel_rpm]
    dv, new_omegas = _solve_longitudinal(
        state.speed, omegas, drive, brakes, loads, offsets, cosines, ext, mass, config, mu_scale, dt
    )
    speed = state.speed + dv
    if state.speed != 0.0 and speed * state.speed < 0 and abs(drag) > 0:
        speed = 0.0
    elif state.speed == 0.0 and speed != 0.0:
        # from standstill drag resists like static friction and cannot push backwards
        case = aero_drag_case(0.0, tau_out, gear, state.mean_wheel_rpm, config)
        sign = math.copysign(1.0, speed)
        cut = min(abs(speed), _drag_magnitude(case, config) * dt / mass)
        speed -= sign * cut
        new_omegas = [w - sign * cut / config.tire_radius if w != 0.0 else 0.0 for w in new_omegas]
    accel = (speed - state.speed) / dt

    # planar kinematics
    yaw_rate = speed * math.cos(beta) * math.tan(delta_iso) / config.wheelbase
    heading = state.heading + yaw_rate * dt
    course = heading + beta
    x = state.position[0] + speed * math.cos(course) * dt
    y = state.position[1] + speed * math.sin(course) * dt
    if not (math.isfinite(x) and math.isfinite(y)):
        raise SimulationFault(f"non-finite position at t={state.sim_time + dt:.3f}s: ({x}, {y})")

    # suspension (backward Euler per corner, terrain and load transfer as inputs)
    ground = _corner_ground_heights(x, y, heading, config, terrain)
    ground_rates = tuple((g - g0) / dt for g, g0 in zip(ground, state.terrain_heights))
    lat_accel = speed * yaw_rate
    long_term = config.total_sprung_mass * accel * config.cg_height / (2 * config.wheelbase)
    lat_term = config.total_sprung_mass * lat_accel * config.cg_height / (2 * config.track_width)
    ext_corner = (long_term + lat_term, long_term - lat_term, -long_term + lat_term, -long_term - lat_term)
    deflection, rates = [], []
    for i in range(4):
        m_i = masses[i]
        k_i = config.stiffness(i)
        c_i = config.damping(i)
        z = state.terrain_heights[i] + state.suspension_deflection[i]
        zdot = state.suspension_rate[i] + state.terrain_rates[i]
        zdot_new = (m_i * zdot - dt * k_i * (z - ground[i]) + dt * c_i * ground_rates[i] + dt * ext_corner[i]) / (
            m_i + dt * c_i + dt * dt * k_i
        )
        z_new = z + dt * zdot_new
        deflection.append(z_new - ground[i])
        rates.append(zdot_new - ground_rates[i])

    z_body, roll, pitch = _body_attitude(ground, deflection, config)
    q = quat_from_euler(roll, pitch, heading)
    roll0, pitch0 = _body_attitude(state.terrain_heights, state.suspension_deflection, config)[1:]
    vz = (z_body - state.position[2]) / dt

    wheel_rpm = tuple(w * 60 / (2 * math.pi) for w in new_omegas)
    revs = tuple(n + w * dt / (2 * math.pi) for n, w in zip(state.cumulative_wheel_revs, new_omegas))

    new = VehicleState(
        position=(x, y, z_body),
        orientation=(float(q[0]), float(q[1]), float(q[2]), float(q[3])),
        linear_velocity=(speed * math.cos(course), speed * math.sin(course), vz),
        angular_velocity=((roll - roll0) / dt, (pitch - pitch0) / dt, yaw_rate),
        wheel_rpm=wheel_rpm,
        suspension_deflection=tuple(deflection),
        suspension_rate=tuple(rates),
        engine_rpm=engine_rpm,
        gear=gear,
        throttle=throttle,
        steering=steering,
        brake=brake,
        handbrake=handbrake,
        cumulative_wheel_revs=revs,
        sim_time=state.sim_time + dt,
        speed=speed,
        heading=heading,
        smoothed_throttle=smoother.value,
        longitudinal_accel=accel,
        terrain_heights=ground,
        terrain_rates=ground_rates,
    )
    _check_finite(new)
    return new


def _check_finite(state: VehicleState) -> None:
    for f in fields(state):
        val = getattr(state, f.name)
        vals = val if isinstance(val, tuple) else (val,)
        for v in vals:
            if isinstance(v, float) and not math.isfinite(v):
                raise SimulationFault(f"non-finite {f.name} at t={state.sim_time:.3f}s: {val}")
