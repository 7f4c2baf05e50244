"""Sensor models: DBW feedback, encoders, INS, camera projection and LiDAR."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import GRAVITY, VehicleConfig, VehicleState
from .environment import Scenario
from .errors import DomainError
from .geometry import Pose, quat_to_matrix

# OpenGL camera axes (x right, y up, looking down -z) expressed in a vehicle-style
# frame (x forward, y left, z up)
_GL_TO_BODY = np.array([[0.0, 0.0, -1.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


# ----------------------------------------------------------------------------
# encoders and INS


def encoder_ticks(cumulative_revs: float, config: VehicleConfig) -> int:
    return math.floor(config.encoder_ppr * config.cumulative_gear_ratio * cumulative_revs)


@dataclass
class InsReading:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0
    ax: float = 0.0
    ay: float = 0.0
    az: float = 0.0
    roll_rate: float = 0.0
    pitch_rate: float = 0.0
    yaw_rate: float = 0.0


def ins_read(state: VehicleState, prev_state: VehicleState | None = None, dt: float | None = None,
             rng: np.random.Generator | None = None, noise_std: float = 0.0) -> InsReading:
    """Pose, body-frame specific acceleration and body rates.

    Acceleration is the finite difference of world velocity between
    ``prev_state`` and ``state`` rotated into the body frame, plus the body-frame
    projection of ``(0, 0, -g)``; at rest on level ground ``az`` reads ``-g``.
    """
    rot = quat_to_matrix(state.orientation)
    if prev_state is not None and dt:
        acc_w = (np.asarray(state.linear_velocity) - np.asarray(prev_state.linear_velocity)) / dt
    else:
        acc_w = np.zeros(3)
    acc_b = rot.T @ (acc_w + np.array([0.0, 0.0, -GRAVITY]))
    pitch = math.asin(max(-1.0, min(1.0, -rot[2, 0])))
    roll = math.atan2(rot[2, 1], rot[2, 2])
    yaw = math.atan2(rot[1, 0], rot[0, 0])
    vals = [*state.position, roll, pitch, yaw, *acc_b, *state.angular_velocity]
    if rng is not None and noise_std > 0:
        vals = list(np.asarray(vals) + rng.normal(0.0, noise_std, len(vals)))
    return InsReading(*(float(v) for v in vals))


# ----------------------------------------------------------------------------
# camera


@dataclass(frozen=True)
class CameraIntrinsics:
    near: float = 0.3
    far: float = 300.0
    left: float = -0.3 * math.tan(math.radians(30))
    right: float = 0.3 * math.tan(math.radians(30))
    bottom: float = -0.3 * math.tan(math.radians(30)) * 9 / 16
    top: float = 0.3 * math.tan(math.radians(30)) * 9 / 16
    image_width: int = 1280
    image_height: int = 720

    def __post_init__(self):
        if not (0 < self.near < self.far) or not self.left < self.right or not self.bottom < self.top:
            raise DomainError("degenerate camera frustum")


def projection_matrix(intr: CameraIntrinsics) -> np.ndarray:
    n, f = intr.near, intr.far
    l, r, b, t = intr.left, intr.right, intr.bottom, intr.top
    if not (0 < n < f) or not l < r or not b < t:
        raise DomainError("degenerate camera frustum")
    return np.array(
        [
            [2 * n / (r - l), 0.0, (r + l) / (r - l), 0.0],
            [0.0, 2 * n / (t - b), (t + b) / (t - b), 0.0],
            [0.0, 0.0, -(f + n) / (f - n), -2 * f * n / (f - n)],
            [0.0, 0.0, -1.0, 0.0],
        ]
    )


def view_matrix(camera_pose: Pose) -> np.ndarray:
    """World-to-eye transform for a camera whose pose uses the vehicle axis convention."""
    cam_world = camera_pose.matrix()
    gl = np.eye(4)
    gl[:3, :3] = _GL_TO_BODY
    return np.linalg.inv(cam_world @ gl)


@dataclass(frozen=True)
class ProjectedObject:
    object_id: str
    class_label: str
    bbox_area: float
    center: tuple[float, float]
    range: float
    occluded: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectedObject":
        return cls(d["object_id"], d["class_label"], d["bbox_area"], tuple(d["center"]), d["range"], d["occluded"])


def _segment_hits_cylinder(p0, p1, ob) -> bool:
    cx, cy, cz = ob.position
    d = p1 - p0
    dx, dy = d[0], d[1]
    fx, fy = p0[0] - cx, p0[1] - cy
    a = dx * dx + dy * dy
    if a == 0:
        return False
    b = 2 * (fx * dx + fy * dy)
    c = fx * fx + fy * fy - ob.footprint_radius**2
    disc = b * b - 4 * a * c
    if disc < 0:
        return False
    sq = math.sqrt(disc)
    for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
        if 0 < t < 1:
            z = p0[2] + t * d[2]
            if cz <= z <= cz + ob.height:
                return True
    return False


def project_objects(scene: Scenario, camera_pose: Pose, intr: CameraIntrinsics = CameraIntrinsics()):
    """Visible scene objects as image-space bounding boxes at the native resolution."""
    proj = projection_matrix(intr)
    view = view_matrix(camera_pose)
    cam_origin = camera_pose.position
    w_px, h_px = intr.image_width, intr.image_height
    out = []
    for ob in scene.obstacles:
        cx, cy, cz = ob.position
        center = np.array([cx, cy, cz + ob.height / 2, 1.0])
        eye = view @ center
        depth = -eye[2]
        if depth < intr.near or depth > intr.far:
            continue
        clip = proj @ eye
        ndc = clip[:3] / clip[3]
        if abs(ndc[0]) > 1 or abs(ndc[1]) > 1:
            continue
        r = ob.footprint_radius
        corners = np.array(
            [[cx + sx * r, cy + sy * r, cz + hz, 1.0] for sx in (-1, 1) for sy in (-1, 1) for hz in (0.0, ob.height)]
        )
        eye_c = corners @ view.T
        # keep corners in front of the near plane so the divide stays well defined
        eye_c[:, 2] = np.minimum(eye_c[:, 2], -intr.near)
        clip_c = eye_c @ proj.T
        ndc_c = clip_c[:, :2] / clip_c[:, 3:4]
        u = np.clip((ndc_c[:, 0] + 1) / 2 * w_px, 0, w_px)
        v = np.clip((1 - ndc_c[:, 1]) / 2 * h_px, 0, h_px)
        area = float((u.max() - u.min()) * (v.max() - v.min()))
        centre_px = ((ndc[0] + 1) / 2 * w_px, (1 - ndc[1]) / 2 * h_px)
        occluded = any(
            _segment_hits_cylinder(cam_origin, center[:3], other) for other in scene.obstacles if other.id != ob.id
        )
        if occluded:
            continue
        rng_m = float(np.linalg.norm(center[:3] - cam_origin))
        out.append(ProjectedObject(ob.id, ob.class_label, area, (float(centre_px[0]), float(centre_px[1])), rng_m))
    return out


# ----------------------------------------------------------------------------
# LiDAR


@dataclass(frozen=True)
class LidarParams:
    r_min: float = 0.5
    r_max: float = 60.0
    theta_min: float = -math.pi / 3
    theta_max: float = math.pi / 3
    theta_res: float = math.radians(2.0)
    phi_min: float = -math.radians(10.0)
    phi_max: float = math.radians(15.0)
    phi_res: float = math.radians(2.5)
    mount_transform: Pose = field(default_factory=lambda: Pose.from_euler(0.0, 0.0, 1.9))
    update_rate: float = 1.0

    def __post_init__(self):
        if not (self.theta_min < self.theta_max and self.phi_min < self.phi_max):
            raise DomainError("LiDAR angular limits must be increasing")
        if self.theta_res <= 0 or self.phi_res <= 0 or not 0 <= self.r_min < self.r_max:
            raise DomainError("LiDAR resolutions and range limits must be positive and ordered")

    def angles(self) -> tuple[np.ndarray, np.ndarray]:
        n_t = int(math.floor((self.theta_max - self.theta_min) / self.theta_res + 1e-9)) + 1
        n_p = int(math.floor((self.phi_max - self.phi_min) / self.phi_res + 1e-9)) + 1
        return self.theta_min + self.theta_res * np.arange(n_t), self.phi_min + self.phi_res * np.arange(n_p)


def ray_directions(params: LidarParams) -> np.ndarray:
    """Unit ray directions in the sensor frame, ordered phi-major then theta."""
    thetas, phis = params.angles()
    phi, theta = np.meshgrid(phis, thetas, indexing="ij")
    dirs = np.stack([np.cos(theta) * np.cos(phi), np.sin(theta) * np.cos(phi), -np.sin(phi)], axis=-1)
    return dirs.reshape(-1, 3)


def _terrain_hits(origin, dirs, terrain, t_max, samples=64):
    n = len(dirs)
    t_hit = np.full(n, np.inf)
    dz = dirs[:, 2]
    if terrain.is_flat:
        down = dz < 0
        t = (terrain.z_min - origin[2]) / np.where(down, dz, -1.0)
        ok = down & (t >= 0)
        t_hit[ok] = t[ok]
        return t_hit
    # only the slab between the highest and lowest terrain can contain a crossing
    with np.errstate(divide="ignore", invalid="ignore"):
        t_a = (terrain.z_max - origin[2]) / dz
        t_b = (terrain.z_min - origin[2]) / dz
    lo = np.where(dz != 0, np.minimum(t_a, t_b), 0.0)
    hi = np.where(dz != 0, np.maximum(t_a, t_b), t_max)
    if origin[2] <= terrain.z_max and origin[2] >= terrain.z_min:
        lo = np.zeros(n)
    lo = np.clip(np.nan_to_num(lo, nan=0.0), 0.0, t_max)
    hi = np.clip(np.nan_to_num(hi, nan=t_max), 0.0, t_max)
    ts = lo[:, None] + (hi - lo)[:, None] * np.linspace(0.0, 1.0, samples)[None, :]
    px = origin[0] + ts * dirs[:, 0:1]
    py = origin[1] + ts * dirs[:, 1:2]
    pz = origin[2] + ts * dirs[:, 2:3]
    gap = pz - terrain.sample(px, py)
    below = gap <= 0
    first = np.argmax(below, axis=1)
    has = below[np.arange(n), first]
    idx = np.nonzero(has)[0]
    if idx.size == 0:
        return t_hit
    k = first[idx]
    t1 = ts[idx, k]
    t0 = np.where(k > 0, ts[idx, np.maximum(k - 1, 0)], t1)
    d = dirs[idx]
    for _ in range(30):
        mid = 0.5 * (t0 + t1)
        g = origin[2] + mid * d[:, 2] - terrain.sample(origin[0] + mid * d[:, 0], origin[1] + mid * d[:, 1])
        under = g <= 0
        t1 = np.where(under, mid, t1)
        t0 = np.where(under, t0, mid)
    t_hit[idx] = t1
    return t_hit


def _cylinder_hits(origin, dirs, obstacles):
    t_hit = np.full(len(dirs), np.inf)
    for ob in obstacles:
        cx, cy, cz = ob.position
        r = ob.footprint_radius
        ox, oy = origin[0] - cx, origin[1] - cy
        a = dirs[:, 0] ** 2 + dirs[:, 1] ** 2
        b = 2 * (ox * dirs[:, 0] + oy * dirs[:, 1])
        c = ox * ox + oy * oy - r * r
        disc = b * b - 4 * a * c
        ok = (disc >= 0) & (a > 0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        safe_a = np.where(a > 0, a, 1.0)
        for t in ((-b - sq) / (2 * safe_a), (-b + sq) / (2 * safe_a)):
            z = origin[2] + t * dirs[:, 2]
            good = ok & (t > 0) & (z >= cz) & (z <= cz + ob.height)
            t_hit = np.where(good & (t < t_hit), t, t_hit)
        # top cap
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (cz + ob.height - origin[2]) / dirs[:, 2]
            px = ox + t * dirs[:, 0]
            py = oy + t * dirs[:, 1]
        good = (dirs[:, 2] != 0) & (t > 0) & (px * px + py * py <= r * r)
        t_hit = np.where(good & (t < t_hit), t, t_hit)
    return t_hit


def lidar_scan(scene: Scenario, vehicle_pose: Pose, params: LidarParams = LidarParams()) -> np.ndarray:
    """World-frame hit points ``(N, 3)`` for rays whose nearest hit lies in ``[r_min, r_max]``."""
    sensor = vehicle_pose.compose(params.mount_transform)
    dirs = ray_directions(params) @ sensor.rotation.T
    origin = sensor.position
    t_terrain = _terrain_hits(origin, dirs, scene.terrain, params.r_max)
    t_obj = _cylinder_hits(origin, dirs, scene.obstacles)
    t = np.minimum(t_terrain, t_obj)
    keep = (t >= params.r_min) & (t <= params.r_max)
    return origin + t[keep, None] * dirs[keep]


# ----------------------------------------------------------------------------
# frame


@dataclass
class SensorFrame:
    dbw_feedback: dict
    encoder_ticks: list
    ins: InsReading
    camera_objects: list
    lidar_pcd: np.ndarray | list
    dtc: float
    n_col: int
    sim_time: float
    camera_fresh: bool = True

    def to_dict(self) -> dict:
        pcd = self.lidar_pcd
        return {
            "dbw_feedback": dict(self.dbw_feedback),
            "encoder_ticks": [int(t) for t in self.encoder_ticks],
            "ins": asdict(self.ins),
            "camera_objects": [o.to_dict() for o in self.camera_objects],
            "lidar_pcd": pcd.tolist() if isinstance(pcd, np.ndarray) else [list(p) for p in pcd],
            "dtc": self.dtc,
            "n_col": self.n_col,
            "sim_time": self.sim_time,
            "camera_fresh": self.camera_fresh,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorFrame":
        return cls(
            dict(d["dbw_feedback"]),
            list(d["encoder_ticks"]),
            InsReading(**d["ins"]),
            [ProjectedObject.from_dict(o) for o in d["camera_objects"]],
            d["lidar_pcd"],
            d["dtc"],
            d["n_col"],
            d["sim_time"],
            d.get("camera_fresh", True),
        )
