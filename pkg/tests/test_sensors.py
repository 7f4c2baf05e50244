import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offroad_vv.autonomy import encoder_velocity
from offroad_vv.dynamics import GRAVITY, Commands, VehicleConfig, VehicleState, step
from offroad_vv.environment import Heightfield, Obstacle, Scenario, load_scenario, translate_scenario
from offroad_vv.errors import DomainError
from offroad_vv.geometry import Pose
from offroad_vv.sensors import (
    CameraIntrinsics,
    LidarParams,
    SensorFrame,
    encoder_ticks,
    ins_read,
    lidar_scan,
    project_objects,
    projection_matrix,
    ray_directions,
)

CFG = VehicleConfig()


def _scene(obstacles=()):
    line = np.array([[-100.0, 0.0, 0.0], [200.0, 0.0, 0.0]])
    return Scenario("flat", line, 40.0, Heightfield.flat(), tuple(obstacles), Pose(), 0.0)


def _cylinder(x, y=0.0, radius=0.5, height=1.6, oid="ob"):
    return Obstacle(oid, "cow", radius, height, (x, y, 0.0))


def test_encoder_tick_examples():
    assert encoder_ticks(0.0, CFG) == 0
    assert encoder_ticks(2.5, replace(CFG, encoder_ppr=16, cumulative_gear_ratio=1)) == 40
    assert encoder_ticks(1.0, replace(CFG, encoder_ppr=16, cumulative_gear_ratio=4)) == 64
    assert encoder_ticks(0.99, replace(CFG, encoder_ppr=16, cumulative_gear_ratio=4)) == 63


def test_ins_identity_at_rest():
    r = ins_read(VehicleState())
    assert (r.x, r.y, r.z) == (0.0, 0.0, 0.0)
    assert (r.roll, r.pitch, r.yaw) == (0.0, 0.0, 0.0)
    assert (r.ax, r.ay) == (0.0, 0.0)
    assert r.az == pytest.approx(-GRAVITY, rel=1e-12)


def test_ins_pure_yaw():
    pose = Pose.from_euler(yaw=math.pi / 2)
    r = ins_read(VehicleState(orientation=tuple(pose.orientation)))
    assert r.yaw == pytest.approx(math.pi / 2, abs=1e-12)
    assert abs(r.roll) < 1e-12 and abs(r.pitch) < 1e-12


def test_ins_constant_forward_acceleration():
    dt = 0.02
    states = [VehicleState(linear_velocity=(k * dt * 1.0, 0.0, 0.0), sim_time=k * dt) for k in range(101)]
    for prev, cur in zip(states, states[1:]):
        assert ins_read(cur, prev, dt).ax == pytest.approx(1.0, abs=1e-3)


def test_ins_noise_is_seeded():
    st_ = VehicleState(position=(1.0, 2.0, 0.0))
    a = ins_read(st_, rng=np.random.default_rng(3), noise_std=0.1)
    b = ins_read(st_, rng=np.random.default_rng(3), noise_std=0.1)
    assert a == b
    assert a != ins_read(st_)


def test_projection_hand_values():
    intr = CameraIntrinsics(near=0.3, far=300.0, left=-0.3, right=0.3, bottom=-0.16875, top=0.16875)
    p = projection_matrix(intr)
    assert p[0, 0] == pytest.approx(1.0, rel=1e-12)
    assert p[2, 2] == pytest.approx(-300.3 / 299.7, rel=1e-12)
    assert p[2, 3] == pytest.approx(-2 * 300 * 0.3 / 299.7, rel=1e-12)
    assert p[0, 2] == 0.0 and p[1, 2] == 0.0
    assert p[3, 2] == -1.0


def test_near_and_far_plane_map_to_canonical_depth():
    intr = CameraIntrinsics(near=0.3, far=300.0, left=-0.3, right=0.3, bottom=-0.16875, top=0.16875)
    p = projection_matrix(intr)
    near = p @ np.array([0.0, 0.0, -0.3, 1.0])
    far = p @ np.array([0.0, 0.0, -300.0, 1.0])
    assert near[2] == pytest.approx(-0.3 * p[2, 2] + p[2, 3], rel=1e-12)
    assert near[2] / near[3] == pytest.approx(-1.0, abs=1e-12)
    assert far[2] / far[3] == pytest.approx(1.0, abs=1e-12)


def test_degenerate_frustum_rejected():
    with pytest.raises(DomainError):
        CameraIntrinsics(near=1.0, far=1.0)
    with pytest.raises(DomainError):
        CameraIntrinsics(left=0.1, right=-0.1)


def test_object_behind_camera_omitted():
    assert project_objects(_scene([_cylinder(-10.0)]), Pose.from_euler(0, 0, 0.8)) == []


def test_object_outside_frustum_omitted():
    assert project_objects(_scene([_cylinder(5.0, y=20.0)]), Pose.from_euler(0, 0, 0.8)) == []


def test_area_quarters_when_range_doubles():
    cam = Pose.from_euler(0.0, 0.0, 0.8)
    near = project_objects(_scene([_cylinder(10.0)]), cam)[0]
    far = project_objects(_scene([_cylinder(20.0)]), cam)[0]
    assert near.bbox_area / far.bbox_area == pytest.approx(4.0, rel=0.10)


def test_area_matches_pinhole_formula():
    intr = CameraIntrinsics()
    cam = Pose.from_euler(0.0, 0.0, 0.8)
    d, r, h = 15.0, 0.5, 1.6
    obj = project_objects(_scene([_cylinder(d, radius=r, height=h)]), cam, intr)[0]
    fx = intr.image_width / 2 * 2 * intr.near / (intr.right - intr.left)
    fy = intr.image_height / 2 * 2 * intr.near / (intr.top - intr.bottom)
    # the face nearest the camera bounds the enclosing rectangle
    expected = (2 * r * fx / (d - r)) * (h * fy / (d - r))
    assert obj.bbox_area == pytest.approx(expected, rel=0.05)
    assert obj.center[0] == pytest.approx(intr.image_width / 2, abs=1e-6)
    assert obj.range == pytest.approx(d, rel=1e-12)


def test_occluded_object_omitted():
    scene = _scene([_cylinder(10.0, radius=1.0, height=2.0, oid="front"), _cylinder(20.0, oid="back")])
    ids = [o.object_id for o in project_objects(scene, Pose.from_euler(0, 0, 0.8))]
    assert ids == ["front"]


def _random_frustum():
    return st.tuples(
        st.floats(0.01, 5.0), st.floats(1.5, 100.0),
        st.floats(-2.0, 1.0), st.floats(0.01, 2.0),
        st.floats(-2.0, 1.0), st.floats(0.01, 2.0),
    )


@settings(max_examples=20)
@given(_random_frustum())
def test_projection_entries_random_frusta(raw):
    n, scale, l, width, b, height = raw
    f = n * scale
    r, t = l + width, b + height
    p = projection_matrix(CameraIntrinsics(near=n, far=f, left=l, right=r, bottom=b, top=t))
    oracle = np.zeros((4, 4))
    oracle[0, 0] = n / ((r - l) / 2)
    oracle[1, 1] = n / ((t - b) / 2)
    oracle[0, 2] = (r + l) / (r - l)
    oracle[1, 2] = (t + b) / (t - b)
    oracle[2, 2] = (n + f) / (n - f)
    oracle[2, 3] = 2 * f * n / (n - f)
    oracle[3, 2] = -1.0
    assert np.allclose(p, oracle, rtol=1e-12, atol=1e-12)


def _params(h, **kw):
    base = dict(mount_transform=Pose.from_euler(0.0, 0.0, h))
    base.update(kw)
    return LidarParams(**base)


def test_lidar_thirty_degree_ray_hits_at_3p6():
    res = math.radians(1.0)
    params = _params(1.8, theta_min=-res, theta_max=res, theta_res=res,
                     phi_min=math.radians(29.0), phi_max=math.radians(31.0), phi_res=res)
    pts = lidar_scan(_scene(), Pose(), params)
    origin = np.array([0.0, 0.0, 1.8])
    # phi-major ordering puts (phi=30, theta=0) at index 4
    assert np.linalg.norm(pts[4] - origin) == pytest.approx(3.6, rel=1e-9)
    assert pts[4][1] == pytest.approx(0.0, abs=1e-12)


def test_lidar_full_sweep_matches_plane_oracle():
    h = 1.8
    params = _params(h, phi_min=math.radians(-10), phi_max=math.radians(40), phi_res=math.radians(2.5))
    pts = lidar_scan(_scene(), Pose(), params)
    thetas, phis = params.angles()
    expected = []
    for phi in phis:
        for theta in thetas:
            if phi <= 0:
                continue
            rng = h / math.sin(phi)
            if params.r_min <= rng <= params.r_max:
                d = np.array([math.cos(theta) * math.cos(phi), math.sin(theta) * math.cos(phi), -math.sin(phi)])
                expected.append(np.array([0.0, 0.0, h]) + rng * d)
    assert len(pts) == len(expected)
    assert np.allclose(pts, expected, rtol=0, atol=1e-6)
    ranges = np.linalg.norm(pts - [0.0, 0.0, h], axis=1)
    assert np.all((ranges >= params.r_min) & (ranges <= params.r_max))


def test_lidar_sky_rays_miss():
    params = _params(1.8, phi_min=math.radians(-40), phi_max=math.radians(-5))
    assert lidar_scan(_scene(), Pose(), params).shape == (0, 3)


def test_lidar_cylinder_range():
    res = math.radians(1.0)
    params = _params(1.0, theta_min=-res, theta_max=res, theta_res=res, phi_min=-res, phi_max=res, phi_res=res)
    pts = lidar_scan(_scene([_cylinder(10.0, radius=0.5, height=3.0)]), Pose(), params)
    centre = [p for p in pts if abs(p[1]) < 1e-12 and abs(p[2] - 1.0) < 1e-12]
    assert len(centre) == 1
    assert centre[0][0] == pytest.approx(9.5, rel=1e-12)


def test_ray_directions_unit_norm_and_scan_bound():
    params = LidarParams()
    dirs = ray_directions(params)
    assert np.max(np.abs(np.linalg.norm(dirs, axis=1) - 1.0)) <= 1e-12
    # default sweep: 120 deg at 2 deg and 25 deg at 2.5 deg, counted in exact degrees
    n_t, n_p = 120 // 2 + 1, int(25 / 2.5) + 1
    assert len(dirs) == n_t * n_p
    pts = lidar_scan(load_scenario("dirt_road_herd.toml"), Pose.from_euler(60.0, 0.0, 0.0), params)
    assert len(pts) <= n_t * n_p


def test_lidar_params_validation():
    with pytest.raises(DomainError):
        LidarParams(theta_min=1.0, theta_max=0.0)
    with pytest.raises(DomainError):
        LidarParams(r_min=5.0, r_max=1.0)


def test_lidar_frame_invariance():
    scene = load_scenario("dirt_road_herd.toml")
    pose = Pose.from_euler(70.0, 2.0, 0.3, yaw=0.2)
    shift = np.array([1000.0, -500.0, 20.0])
    moved_scene = translate_scenario(scene, *shift)
    moved_pose = Pose(pose.position + shift, pose.orientation)
    params = LidarParams()

    def sensor_frame(scn, p):
        sensor = p.compose(params.mount_transform)
        pts = lidar_scan(scn, p, params)
        return (pts - sensor.position) @ sensor.rotation

    a, b = sensor_frame(scene, pose), sensor_frame(moved_scene, moved_pose)
    assert a.shape == b.shape and len(a) > 0
    assert np.allclose(a, b, rtol=0, atol=1e-9)


def test_encoder_distance_on_straight_run():
    # hold roughly 3 m/s with a proportional throttle, then integrate encoder speed
    dt, window = 0.02, 0.25
    state = VehicleState.at_rest(CFG)
    hist = [(0.0, [0] * 4, 0.0)]
    travelled = 0.0
    while travelled < 60.0:
        throttle = min(1.0, max(0.0, 0.3 * (3.0 - state.speed)))
        brake = min(1.0, max(0.0, 0.3 * (state.speed - 3.0)))
        prev = state
        state = step(state, Commands(throttle, 0.0, brake), None, CFG, dt)
        travelled += math.dist(prev.position[:2], state.position[:2])
        hist.append((state.sim_time, [encoder_ticks(n, CFG) for n in state.cumulative_wheel_revs], travelled))
    stride = round(window / dt)
    estimate = 0.0
    for k in range(stride, len(hist), stride):
        (_, ticks0, _), (_, ticks1, _) = hist[k - stride], hist[k]
        estimate += encoder_velocity(ticks1, ticks0, window, CFG) * window
    covered = hist[(len(hist) - 1) // stride * stride][2]
    assert estimate == pytest.approx(covered, rel=0.01)
    ticks = [h[1] for h in hist]
    assert all(b >= a for t0, t1 in zip(ticks, ticks[1:]) for a, b in zip(t0, t1))


def test_sensor_frame_round_trip():
    frame = SensorFrame({"tau": 1.0}, [1, 2, 3, 4], ins_read(VehicleState()), [],
                        np.array([[1.0, 2.0, 3.0]]), 12.5, 0, 1.25)
    again = SensorFrame.from_dict(frame.to_dict())
    assert again.to_dict() == frame.to_dict()
