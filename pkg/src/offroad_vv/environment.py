"""Scenario world: road, terrain, obstacle herd, lighting/weather, collisions."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .geometry import Pose

DTC_SENTINEL = 1e6
SUNRISE, SUNSET = 7.0, 19.0
MOONLIGHT = 0.05


class Weather(str, Enum):
    CLEAR = "clear"
    FOG = "fog"
    RAIN = "rain"
    SNOW = "snow"


VISIBILITY = {Weather.CLEAR: 1.0, Weather.FOG: 0.35, Weather.RAIN: 0.6, Weather.SNOW: 0.5}
SURFACE_FRICTION = {Weather.CLEAR: 1.0, Weather.FOG: 1.0, Weather.RAIN: 0.8, Weather.SNOW: 0.65}


@dataclass(frozen=True)
class EnvironmentState:
    time_of_day: float
    weather: Weather
    illumination: float
    visibility: float
    surface_friction: float = 1.0

    def to_dict(self) -> dict:
        return {
            "time_of_day": self.time_of_day,
            "weather": self.weather.value,
            "illumination": self.illumination,
            "visibility": self.visibility,
            "surface_friction": self.surface_friction,
        }


def illumination(tod: float) -> float:
    """Daylight factor: half-sine between sunrise and sunset over a moonlight floor."""
    tod = tod % 24.0
    sun = math.sin(math.pi * (tod - SUNRISE) / (SUNSET - SUNRISE))
    return MOONLIGHT + (1.0 - MOONLIGHT) * max(0.0, sun)


def parse_weather(weather) -> Weather:
    try:
        return Weather(weather.value if isinstance(weather, Weather) else str(weather).lower())
    except ValueError:
        raise ConfigurationError(f"unknown weather preset {weather!r}") from None


def set_conditions(tod: float, weather) -> EnvironmentState:
    if not 0.0 <= tod < 24.0:
        raise ValueError(f"time of day must lie in [0, 24), got {tod}")
    w = parse_weather(weather)
    return EnvironmentState(float(tod), w, illumination(tod), VISIBILITY[w], SURFACE_FRICTION[w])


# ----------------------------------------------------------------------------
# terrain


@dataclass(frozen=True)
class Heightfield:
    """Regular grid of heights with bilinear interpolation; clamps outside the grid."""

    origin: tuple[float, float]
    spacing: float
    heights: np.ndarray  # shape (nx, ny), heights[i, j] at origin + (i, j) * spacing

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        if h.ndim != 2 or min(h.shape) < 2:
            raise ConfigurationError("heightfield needs at least a 2x2 grid")
        if self.spacing <= 0:
            raise ConfigurationError("heightfield spacing must be positive")
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "_rows", h.tolist())
        object.__setattr__(self, "z_min", float(h.min()))
        object.__setattr__(self, "z_max", float(h.max()))

    @property
    def is_flat(self) -> bool:
        return self.z_min == self.z_max

    def __call__(self, x: float, y: float) -> float:
        nx, ny = self.heights.shape
        fx = (x - self.origin[0]) / self.spacing
        fy = (y - self.origin[1]) / self.spacing
        fx = min(max(fx, 0.0), nx - 1.0)
        fy = min(max(fy, 0.0), ny - 1.0)
        i = min(int(fx), nx - 2)
        j = min(int(fy), ny - 2)
        tx, ty = fx - i, fy - j
        r0, r1 = self._rows[i], self._rows[i + 1]
        return (r0[j] * (1 - tx) + r1[j] * tx) * (1 - ty) + (r0[j + 1] * (1 - tx) + r1[j + 1] * tx) * ty

    def sample(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Vectorised bilinear lookup."""
        nx, ny = self.heights.shape
        fx = np.clip((np.asarray(x) - self.origin[0]) / self.spacing, 0.0, nx - 1.0)
        fy = np.clip((np.asarray(y) - self.origin[1]) / self.spacing, 0.0, ny - 1.0)
        i = np.minimum(fx.astype(int), nx - 2)
        j = np.minimum(fy.astype(int), ny - 2)
        tx, ty = fx - i, fy - j
        h = self.heights
        low = h[i, j] * (1 - tx) + h[i + 1, j] * tx
        high = h[i, j + 1] * (1 - tx) + h[i + 1, j + 1] * tx
        return low * (1 - ty) + high * ty

    def translated(self, dx: float, dy: float, dz: float = 0.0) -> "Heightfield":
        return Heightfield((self.origin[0] + dx, self.origin[1] + dy), self.spacing, self.heights + dz)

    @classmethod
    def flat(cls, z: float = 0.0, extent: float = 1e4) -> "Heightfield":
        return cls((-extent, -extent), extent, np.full((3, 3), float(z)))


# ----------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class Obstacle:
    id: str
    class_label: str
    footprint_radius: float
    height: float
    position: tuple[float, float, float]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "class_label": self.class_label,
            "footprint_radius": self.footprint_radius,
            "height": self.height,
            "position": list(self.position),
        }


@dataclass(frozen=True)
class RoadPoint:
    center: tuple[float, float, float]
    heading: float
    grade: float
    clamped: bool = False


@dataclass(frozen=True)
class Footprint:
    """Vehicle footprint rectangle about the pose origin (front/rear reach, half width)."""

    front: float = 2.18
    rear: float = 2.08
    half_width: float = 0.925

    @classmethod
    def from_vehicle(cls, config) -> "Footprint":
        return cls(
            config.wheelbase / 2 + config.front_overhang,
            config.wheelbase / 2 + config.rear_overhang,
            config.body_width / 2,
        )


@dataclass(frozen=True)
class Scenario:
    name: str
    road_centerline: np.ndarray
    road_width: float
    terrain: Heightfield
    obstacles: tuple[Obstacle, ...]
    spawn_pose: Pose
    herd_arclength: float
    arclength: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.road_centerline, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
            raise ConfigurationError("road centerline needs at least two xyz vertices")
        seg = np.linalg.norm(np.diff(pts[:, :2], axis=0), axis=1)
        if np.any(seg <= 0):
            raise ConfigurationError("road centerline arclength must be strictly increasing")
        if self.road_width <= 0:
            raise ConfigurationError("road_width must be positive")
        object.__setattr__(self, "road_centerline", pts)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        object.__setattr__(self, "arclength", s)
        object.__setattr__(self, "_s_list", s.tolist())
        object.__setattr__(self, "_pts", pts.tolist())
        obstacle_s = []
        for ob in self.obstacles:
            s_o, d_o = self.project(ob.position[0], ob.position[1])
            obstacle_s.append(s_o)
        object.__setattr__(self, "_obstacle_s", tuple(obstacle_s))

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    def obstacle_arclengths(self) -> tuple[float, ...]:
        return self._obstacle_s

    def project(self, x: float, y: float, hint: int | None = None) -> tuple[float, float]:
        """Arclength of the closest centerline point and signed lateral offset (left positive)."""
        pts = self._pts
        n = len(pts)
        lo, hi = (0, n - 1) if hint is None else (max(0, hint - 20), min(n - 1, hint + 20))
        best = (math.inf, 0.0, 0.0)
        for k in range(lo, hi):
            x0, y0 = pts[k][0], pts[k][1]
            ex, ey = pts[k + 1][0] - x0, pts[k + 1][1] - y0
            seg2 = ex * ex + ey * ey
            t = ((x - x0) * ex + (y - y0) * ey) / seg2
            t = min(1.0, max(0.0, t))
            px, py = x - (x0 + t * ex), y - (y0 + t * ey)
            d2 = px * px + py * py
            if d2 < best[0]:
                cross = ex * py - ey * px
                seg = math.sqrt(seg2)
                best = (d2, self._s_list[k] + t * seg, math.copysign(math.sqrt(d2), cross))
        return best[1], best[2]

    def segment_index(self, s: float) -> int:
        return min(max(bisect.bisect_right(self._s_list, s) - 1, 0), len(self._pts) - 2)


def road_query(s: float, scenario: Scenario) -> RoadPoint:
    clamped = not 0.0 <= s <= scenario.length
    s = min(max(s, 0.0), scenario.length)
    k = scenario.segment_index(s)
    p0 = scenario._pts[k]
    p1 = scenario._pts[k + 1]
    s0, s1 = scenario._s_list[k], scenario._s_list[k + 1]
    t = (s - s0) / (s1 - s0)
    center = tuple(a + t * (b - a) for a, b in zip(p0, p1))
    heading = math.atan2(p1[1] - p0[1], p1[0] - p0[0])
    grade = math.atan2(p1[2] - p0[2], s1 - s0)
    return RoadPoint(center, heading, grade, clamped)


def road_point_at(s: float, lateral: float, scenario: Scenario) -> tuple[float, float]:
    rp = road_query(s, scenario)
    return (rp.center[0] - lateral * math.sin(rp.heading), rp.center[1] + lateral * math.cos(rp.heading))


def _bumper(pose: Pose, reach: float) -> tuple[float, float]:
    yaw = pose.yaw
    return pose.position[0] + reach * math.cos(yaw), pose.position[1] + reach * math.sin(yaw)


def distance_to_collision(vehicle_pose: Pose, scenario: Scenario, footprint: Footprint = Footprint()) -> float:
    bx, by = _bumper(vehicle_pose, footprint.front)
    s_b, _ = scenario.project(bx, by)
    return dtc_from_arclength(s_b, scenario)


def dtc_from_arclength(bumper_s: float, scenario: Scenario) -> float:
    best = DTC_SENTINEL
    for ob, s_o in zip(scenario.obstacles, scenario.obstacle_arclengths()):
        if s_o + ob.footprint_radius < bumper_s:
            continue
        best = min(best, max(0.0, s_o - bumper_s - ob.footprint_radius))
    return best


def footprint_contacts(vehicle_pose: Pose, scenario: Scenario, footprint: Footprint = Footprint()) -> frozenset:
    """Ids of obstacles whose footprint circle touches or overlaps the vehicle rectangle."""
    yaw = vehicle_pose.yaw
    c, s = math.cos(yaw), math.sin(yaw)
    px, py = vehicle_pose.position[0], vehicle_pose.position[1]
    hits = set()
    for ob in scenario.obstacles:
        dx, dy = ob.position[0] - px, ob.position[1] - py
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        qx = min(max(lx, -footprint.rear), footprint.front)
        qy = min(max(ly, -footprint.half_width), footprint.half_width)
        if (lx - qx) ** 2 + (ly - qy) ** 2 <= ob.footprint_radius**2:
            hits.add(ob.id)
    return frozenset(hits)


def collision_check(vehicle_pose: Pose, scenario: Scenario, prior_count: int,
                    in_contact: frozenset = frozenset(), footprint: Footprint = Footprint()):
    """Episode-counted collisions.

    Returns ``(count, in_contact)``. A new contact with an obstacle increments
    the count once; it re-arms only after that obstacle separates.
    """
    now = footprint_contacts(vehicle_pose, scenario, footprint)
    return prior_count + len(now - in_contact), now


class CollisionCounter:
    def __init__(self, scenario: Scenario, footprint: Footprint = Footprint()):
        self.scenario = scenario
        self.footprint = footprint
        self.count = 0
        self.in_contact: frozenset = frozenset()

    def update(self, pose: Pose) -> int:
        self.count, self.in_contact = collision_check(pose, self.scenario, self.count, self.in_contact, self.footprint)
        return self.count


# ----------------------------------------------------------------------------
# scenario construction


def build_centerline(start: tuple[float, float], heading: float, segments, step: float = 1.0) -> np.ndarray:
    """Integrate piecewise-constant curvature ``(length, curvature)`` segments into xy vertices."""
    x, y, psi = float(start[0]), float(start[1]), float(heading)
    pts = [(x, y)]
    for length, kappa in segments:
        n = max(1, int(math.ceil(length / step)))
        ds = length / n
        for _ in range(n):
            if kappa == 0:
                x += ds * math.cos(psi)
                y += ds * math.sin(psi)
            else:
                new_psi = psi + kappa * ds
                x += (math.sin(new_psi) - math.sin(psi)) / kappa
                y -= (math.cos(new_psi) - math.cos(psi)) / kappa
                psi = new_psi
            pts.append((x, y))
    return np.array(pts)


def rolling_terrain(xy: np.ndarray, amplitude: float, wavelength: float, flat_from: float, taper: float,
                    spacing: float = 1.0, margin: float = 30.0) -> Heightfield:
    """Rolling profile along x that fades to flat ground beyond ``flat_from``."""
    x0, y0 = xy.min(axis=0) - margin
    x1, y1 = xy.max(axis=0) + margin
    xs = np.arange(x0, x1 + spacing, spacing)
    ys = np.arange(y0, y1 + spacing, spacing)
    fade = np.clip((flat_from - xs) / taper, 0.0, 1.0) if taper > 0 else (xs < flat_from).astype(float)
    profile = amplitude * np.sin(2 * math.pi * (xs - xy[0, 0]) / wavelength) * fade
    heights = np.repeat(profile[:, None], len(ys), axis=1)
    return Heightfield((float(x0), float(y0)), spacing, heights)


def scenario_from_dict(data: dict) -> Scenario:
    try:
        meta = data["scenario"]
        road = data["road"]
        name = meta["name"]
        width = float(road["width"])
        if "vertices" in road:
            xy = np.asarray(road["vertices"], dtype=float)[:, :2]
        else:
            xy = build_centerline(tuple(road.get("start", (0.0, 0.0))), float(road.get("heading", 0.0)),
                                  road["segments"], float(road.get("step", 1.0)))
        terr = data.get("terrain", {})
        if terr.get("kind", "rolling") == "flat":
            terrain = Heightfield.flat(float(terr.get("height", 0.0)))
        else:
            terrain = rolling_terrain(
                xy, float(terr["amplitude"]), float(terr["wavelength"]), float(terr["flat_from_x"]),
                float(terr.get("taper", 10.0)), float(terr.get("spacing", 1.0)), float(terr.get("margin", 30.0)),
            )
        centerline = np.column_stack([xy, [terrain(x, y) for x, y in xy]])
        skeleton = Scenario(name, centerline, width, terrain, (), Pose(), 0.0)
        herd_s = float(meta["herd_arclength"])
        obstacles = []
        for i, ob in enumerate(data.get("obstacles", [])):
            s_o = herd_s + float(ob.get("ds", 0.0)) if "s" not in ob else float(ob["s"])
            lat = float(ob.get("lateral", 0.0))
            x, y = road_point_at(s_o, lat, skeleton)
            obstacles.append(Obstacle(
                str(ob.get("id", f"obj{i}")), str(ob["label"]), float(ob["radius"]), float(ob["height"]),
                (x, y, terrain(x, y)),
            ))
        spawn_s = float(meta.get("spawn_arclength", 0.0))
        rp = road_query(spawn_s, skeleton)
        spawn = Pose.from_euler(rp.center[0], rp.center[1], rp.center[2], yaw=rp.heading)
    except KeyError as exc:
        raise ConfigurationError(f"scenario missing key {exc}") from None
    scenario = Scenario(name, centerline, width, terrain, tuple(obstacles), spawn, herd_s)
    for ob in scenario.obstacles:
        _, lat = scenario.project(ob.position[0], ob.position[1])
        if abs(lat) > width / 2:
            raise ConfigurationError(f"obstacle {ob.id} lies off the drivable area")
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    from .config import load_toml

    return scenario_from_dict(load_toml(path))


def translate_scenario(scenario: Scenario, dx: float, dy: float, dz: float = 0.0) -> Scenario:
    """Rigidly shift a scenario; used for frame-invariance checks."""
    shift = np.array([dx, dy, dz])
    obstacles = tuple(
        Obstacle(o.id, o.class_label, o.footprint_radius, o.height, tuple(np.add(o.position, shift).tolist()))
        for o in scenario.obstacles
    )
    spawn = Pose(scenario.spawn_pose.position + shift, scenario.spawn_pose.orientation)
    return Scenario(scenario.name, scenario.road_centerline + shift, scenario.road_width,
                    scenario.terrain.translated(dx, dy, dz), obstacles, spawn, scenario.herd_arclength)
