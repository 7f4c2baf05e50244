"""Acceptance suite: one test per criterion, reported as a pass/fail line each.

The full-matrix fixture simulates all 128 cases once and is shared by the
criteria that need run artifacts.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from offroad_vv.autonomy import (
    ANIMAL_LABELS,
    AutonomyState,
    Control,
    Detection,
    control,
    encoder_velocity,
    filter_detections,
    velocity_profile,
)
from offroad_vv.dynamics import (
    Commands,
    DragCase,
    DriveConfig,
    VehicleConfig,
    VehicleState,
    ackermann_angles,
    aero_drag_case,
    brake_torque,
    differential_torque,
    engine_rpm_target,
    powertrain_torque,
    split_torque,
    steering_rate,
    step,
)
from offroad_vv.environment import Heightfield, Scenario
from offroad_vv.geometry import Pose
from offroad_vv.harness.execution import (
    ABORTED,
    COMPLETED,
    TIMEOUT,
    TestManager,
    execute_test,
    log_name,
    run_case,
    summarise,
)
from offroad_vv.harness.kpis import KPISummary
from offroad_vv.harness.matrix import MatrixSpec, decode_case_id, encode_case, generate_matrix, make_case
from offroad_vv.harness.requirements import verify
from offroad_vv.harness.scoring import score_matrix
from offroad_vv.sensors import CameraIntrinsics, LidarParams, encoder_ticks, lidar_scan, projection_matrix
from offroad_vv.tire import FrictionSpline

CFG = VehicleConfig()
VERIFICATIONS = ("V1", "V2", "V3", "V4")


def _close(got, want, rel=1e-9):
    return got == want or math.isclose(got, want, rel_tol=rel, abs_tol=0.0)


@pytest.fixture(scope="module")
def full_run(suite, tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    start = time.perf_counter()
    results = TestManager(suite, out, jobs=8).run(generate_matrix(suite.matrix))
    return out, results, time.perf_counter() - start


# ---------------------------------------------------------------- 1


def test_criterion_01_formula_suite():
    start = time.perf_counter()

    # powertrain torque: interpolated engine map x gear x final drive x throttle
    rpm_pts, tq_pts = zip(*CFG.engine_torque_map)
    for throttle, rpm, gear in [(1.0, 1000.0, 1), (0.5, 2000.0, 2), (0.3, 4000.0, 3), (0.8, 6000.0, 4),
                                (1.0, 7250.0, 5), (0.6, 2500.0, -1)]:
        want = np.interp(rpm, rpm_pts, tq_pts) * CFG.gear_ratios[gear] * 3.5 * throttle * (-1 if gear == -1 else 1)
        assert _close(powertrain_torque(throttle, rpm, gear, CFG), want)

    # engine rpm target: idle + |wheel rpm| x final drive x gear ratio
    for wheel, gear, want in [(0.0, 1, 1000.0), (100.0, 1, 2050.0), (-100.0, 2, 1700.0), (250.0, 4, 1875.0),
                              (300.0, 5, 1840.0)]:
        assert _close(engine_rpm_target(wheel, gear, CFG), want)

    # torque split
    for total in (0.0, 400.0, -120.0, 1234.5, 7.0):
        assert split_torque(total, CFG) == (total / 4,) * 4
        rwd = replace(CFG, drive_config=DriveConfig.RWD)
        fwd = replace(CFG, drive_config=DriveConfig.FWD)
        assert split_torque(total, rwd) == (0.0, 0.0, total / 2, total / 2)
        assert split_torque(total, fwd) == (total / 2, total / 2, 0.0, 0.0)

    # differential: drop = clamp(0.6 |steer|, 0, 0.9) on the inside wheel only
    for tau, steer, want in [(100.0, 0.0, (100.0, 100.0)), (100.0, 0.5, (100.0, 70.0)), (100.0, -0.5, (70.0, 100.0)),
                             (200.0, 1.4, (200.0, 200.0 * 0.16)), (200.0, 3.0, (200.0, 20.0))]:
        left, right = differential_torque(tau, steer, CFG)
        assert _close(left, want[0]) and _close(right, want[1])

    # brake capacity: m v60^2 / (2 d60) x disk radius x input
    for mass, chi in [(250.0, 1.0), (267.0, 0.5), (300.0, 0.25), (100.0, 0.0), (420.0, 0.75)]:
        want = mass * 26.8224**2 / (2 * 22.0) * 0.2 * chi
        assert _close(brake_torque(mass, 3.0, CFG, chi), want)

    # Ackermann pair: cot(inner/outer) = cot(steer) -+ W / (2L)
    for steer in (0.05, 0.2, -0.3, 0.45, -0.6):
        left, right = ackermann_angles(steer, CFG)
        k = CFG.track_width / (2 * CFG.wheelbase)
        assert _close(left, math.atan(1 / (1 / math.tan(steer) + k)))
        assert _close(right, math.atan(1 / (1 / math.tan(steer) - k)))

    # steering rate: 0.8 - 0.3 v / 25
    for v, want in [(0.0, 0.8), (5.0, 0.74), (12.5, 0.65), (20.0, 0.56), (25.0, 0.5)]:
        assert _close(steering_rate(v, CFG), want)

    # drag case selector
    for args, want in [((25.0, 10.0, 3, 100.0), DragCase.MAX), ((30.0, 0.0, -1, -50.0), DragCase.MAX),
                       ((5.0, 0.0, 2, 10.0), DragCase.IDLE_COAST), ((9.0, -50.0, -1, -40.0), DragCase.REVERSE),
                       ((7.0, -50.0, -1, -40.0), DragCase.IDLE), ((9.0, 50.0, 2, 40.0), DragCase.IDLE)]:
        assert aero_drag_case(*args, CFG) is want

    # encoder ticks: floor(PPR x CGR x revolutions)
    for revs, want in [(0.0, 0), (2.5, 40), (4.0, 64), (3.99, 63), (0.0624, 0), (10.3125, 165)]:
        assert encoder_ticks(revs, CFG) == want

    # velocity profile: 0 when aeb >= 0.9 else 0.3 / (aeb + 0.1)
    for aeb, want in [(0.0, 3.0), (0.1, 1.5), (0.5, 0.5), (0.8, 1 / 3), (0.9, 0.0), (1.0, 0.0)]:
        assert _close(velocity_profile(aeb), want)

    # encoder velocity with the tick rate clamped to +-30 per second
    per_tick = 2 * math.pi * 0.406 / 16
    for delta, dt, rate in [(5, 0.25, 20.0), (10, 0.25, 30.0), (-20, 0.5, -30.0), (0, 0.02, 0.0), (3, 0.2, 15.0)]:
        got = encoder_velocity([delta] * 4, [0] * 4, dt, CFG)
        assert _close(got, rate * per_tick)

    assert time.perf_counter() - start < 1.0


# ---------------------------------------------------------------- 2


def test_criterion_02_friction_spline():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    for _ in range(100):
        s0 = rng.uniform(0.0, 0.05)
        se = s0 + rng.uniform(0.01, 0.5)
        sa = se + rng.uniform(0.05, 2.0)
        f0 = rng.uniform(0.0, 0.1)
        fe = rng.uniform(0.5, 1.5)
        fa = fe * rng.uniform(0.3, 1.0)
        sp = FrictionSpline((s0, f0), (se, fe), (sa, fa))
        assert sp.segment(0, s0) == f0
        assert sp.segment(0, se) == fe
        assert sp.segment(1, se) == fe
        assert sp.segment(1, sa) == fa
        assert abs(sp.segment(0, se) - sp.segment(1, se)) <= 1e-9
        assert abs(sp.segment_derivative(0, se) - sp.segment_derivative(1, se)) <= 1e-9
        # the expanded monomial form agrees with the anchors as well
        for k, (s, f) in ((0, (s0, f0)), (0, (se, fe)), (1, (se, fe)), (1, (sa, fa))):
            a, b, c, d = sp.segment_coeffs[k]
            assert abs(a * s**3 + b * s**2 + c * s + d - f) <= 1e-9 * max(1.0, abs(f))
    assert time.perf_counter() - start < 1.0


# ---------------------------------------------------------------- 3


def test_criterion_03_matrix_generation():
    spec = MatrixSpec()
    cases = generate_matrix(spec)
    assert len(cases) == 128
    assert decode_case_id(15, spec) == {"C1": "C1.2", "C2": "C2.1", "C3": "C3.2", "P1": "P1.1", "P2": "P2.2"}
    seen = set()
    for case in cases:
        assert encode_case(case.values, spec) == case.case_id
        seen.add(tuple(sorted(case.values.items())))
    assert len(seen) == 128


# ---------------------------------------------------------------- 4


def test_criterion_04_requirement_verification():
    reference = KPISummary(130, 0, 3.0, 1.0, 2.0, 4.94, -0.11, 13.0, True, 40.0)
    assert verify(reference) == dict.fromkeys(VERIFICATIONS, True)
    flips = [({"n_det_total": 1}, "V1"), ({"peak_jerk": 6.0}, "V2"),
             ({"mean_velocity_error": 1.0 + 1e-9}, "V3"), ({"n_col_total": 1}, "V4")]
    for change, flipped in flips:
        verdicts = verify(replace(reference, **change))
        assert {v for v, ok in verdicts.items() if not ok} == {flipped}


# ---------------------------------------------------------------- 5


def test_criterion_05_nominal_scenario(suite):
    case = make_case(7, suite.matrix)
    assert case.values == {"C1": "C1.2", "C2": "C2.1", "C3": "C3.2", "P1": "P1.1", "P2": "P2.1"}
    start = time.perf_counter()
    res = execute_test(case, suite)
    elapsed = time.perf_counter() - start
    k = res.kpis
    print(f"nominal: {elapsed:.2f} s, final_dtc {k.final_dtc:.2f} m, jerk {k.peak_jerk:.2f}, "
          f"error {k.mean_velocity_error:+.3f}, stopped after {k.duration:.1f} s")
    assert res.status == COMPLETED and k.stop_achieved
    assert k.final_dtc > 5.0
    assert k.n_col_total == 0
    assert k.peak_jerk < 6.0
    assert abs(k.mean_velocity_error) <= 1.0
    assert k.duration <= 90.0
    assert elapsed < 10.0


# ---------------------------------------------------------------- 6


def test_criterion_06_full_matrix(full_run, suite):
    _, results, elapsed = full_run
    print(f"full matrix: {len(results)} cases in {elapsed:.1f} s")
    assert len(results) == 128
    assert {r.status for r in results} <= {COMPLETED, TIMEOUT}
    assert not [r for r in results if r.status == ABORTED]
    assert elapsed < 600.0
    table = score_matrix(results, suite.matrix.axes, expected_total=128)
    assert table.rows == [*VERIFICATIONS, "All"]
    assert len(table.columns) == 15 and table.columns[-1] == "Total"
    for col in table.columns:
        assert table.value("All", col) <= min(table.value(v, col) for v in VERIFICATIONS)
    for row in table.rows:
        for values in suite.matrix.axes.values():
            weighted = sum(table.value(row, v) * table.counts[v] for v in values) / table.counts["Total"]
            assert abs(weighted - table.value(row, "Total")) <= 1e-12


# ---------------------------------------------------------------- 7


def test_criterion_07_qualitative_ordering(full_run, suite):
    _, results, _ = full_run
    table = score_matrix(results, suite.matrix.axes)
    v1 = {c: table.value("V1", c) for c in ("C1.1", "C1.2", "P1.1", "P1.2", "P1.4")}
    print("V1 scores: " + ", ".join(f"{c} {s:.4f}" for c, s in v1.items()))
    assert v1["C1.2"] > v1["C1.1"]
    assert v1["P1.1"] >= v1["P1.4"]
    assert v1["P1.2"] >= v1["P1.4"]


# ---------------------------------------------------------------- 8


def test_criterion_08_determinism_and_transport(full_run, suite, tmp_path):
    out, results, _ = full_run
    by_id = {r.case_id: r for r in results}
    for cid in (15, 100):
        execute_test(make_case(cid, suite.matrix), suite, tmp_path)
        assert (tmp_path / "logs" / log_name(cid)).read_bytes() == (out / "logs" / log_name(cid)).read_bytes()
    for cid in (int(c) for c in np.random.default_rng(8).choice(np.arange(1, 129), 3, replace=False)):
        case = make_case(cid, suite.matrix)
        records, status, diagnostics = run_case(case, suite, "socket")
        assert summarise(case, records, status, diagnostics, suite).kpis == by_id[cid].kpis


# ---------------------------------------------------------------- 9


def test_criterion_09_sensor_geometry():
    # LiDAR over flat ground: every downward ray lands at h / sin(phi)
    h = 1.9
    line = np.array([[-100.0, 0.0, 0.0], [200.0, 0.0, 0.0]])
    flat = Scenario("flat", line, 40.0, Heightfield.flat(), (), Pose(), 0.0)
    params = LidarParams(mount_transform=Pose.from_euler(0.0, 0.0, h), phi_min=math.radians(-10.0),
                         phi_max=math.radians(45.0), phi_res=math.radians(2.5))
    pts = lidar_scan(flat, Pose(), params)
    thetas, phis = params.angles()
    want = sorted(h / math.sin(p) for p in phis for _ in thetas if p > 0 and h / math.sin(p) <= params.r_max)
    got = sorted(np.linalg.norm(pts - [0.0, 0.0, h], axis=1))
    assert len(got) == len(want) > 0
    assert all(abs(g - w) <= 1e-6 * w for g, w in zip(got, want))

    # projection matrix entries on 20 random frusta
    rng = np.random.default_rng(9)
    for _ in range(20):
        n = rng.uniform(0.01, 5.0)
        f = n * rng.uniform(1.5, 100.0)
        l, b = rng.uniform(-2.0, 1.0, 2)
        r, t = l + rng.uniform(0.01, 2.0), b + rng.uniform(0.01, 2.0)
        p = projection_matrix(CameraIntrinsics(near=n, far=f, left=l, right=r, bottom=b, top=t))
        oracle = np.array([
            [2 * n / (r - l), 0.0, (r + l) / (r - l), 0.0],
            [0.0, 2 * n / (t - b), (t + b) / (t - b), 0.0],
            [0.0, 0.0, -(f + n) / (f - n), -2 * f * n / (f - n)],
            [0.0, 0.0, -1.0, 0.0],
        ])
        assert np.allclose(p, oracle, rtol=1e-12, atol=1e-12)

    # encoder-integrated distance over a 60 m straight run at about 3 m/s
    dt, window = 0.02, 0.25
    stride = round(window / dt)
    state = VehicleState.at_rest(CFG)
    ticks, travelled = [[0] * 4], [0.0]
    while travelled[-1] < 60.0:
        throttle = min(1.0, max(0.0, 0.3 * (3.0 - state.speed)))
        brake = min(1.0, max(0.0, 0.3 * (state.speed - 3.0)))
        prev, state = state, step(state, Commands(throttle, 0.0, brake), None, CFG, dt)
        travelled.append(travelled[-1] + math.dist(prev.position[:2], state.position[:2]))
        ticks.append([encoder_ticks(n, CFG) for n in state.cumulative_wheel_revs])
    last = (len(ticks) - 1) // stride * stride
    estimate = sum(encoder_velocity(ticks[k], ticks[k - stride], window, CFG) * window
                   for k in range(stride, last + 1, stride))
    assert abs(estimate - travelled[last]) <= 0.01 * travelled[last]


# ---------------------------------------------------------------- 10


def test_criterion_10_controller_properties():
    rng = np.random.default_rng(10)
    n = 10_000

    for v_ref, v_est in rng.uniform(-50.0, 50.0, (n, 2)):
        throttle, brake = control(v_ref, v_est, Control.C3_1, AutonomyState(), 0.02)[0]
        assert (throttle > 0) != (brake > 0)

    state = AutonomyState()
    for k, (v_ref, v_est) in enumerate(zip(rng.uniform(0.0, 3.0, n), rng.uniform(-50.0, 50.0, n))):
        if k % 50 == 0:
            state = AutonomyState()
        (throttle, _), state = control(float(v_ref), float(v_est), Control.C3_2, state, 0.02)
        state.started = True
        assert 0.0 <= throttle <= 0.5

    for a, b in rng.uniform(0.0, 1.0, (n, 2)):
        lo, hi = min(a, b), max(a, b)
        assert velocity_profile(hi) <= velocity_profile(lo)

    labels = sorted(ANIMAL_LABELS) + ["car", "person", "truck"]
    for _ in range(n):
        m = int(rng.integers(0, 8))
        dets = [Detection(labels[int(rng.integers(len(labels)))], float(rng.uniform(0, 10_000)), float(rng.uniform()))
                for _ in range(m)]
        kept = filter_detections(dets)
        assert all(d in dets for d in kept)
        assert kept == [d for d in dets if d.class_label in ANIMAL_LABELS and d.size >= 2500 and d.confidence >= 0.5]
