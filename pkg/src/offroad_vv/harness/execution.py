"""Closed-loop execution of test cases and the parallel test manager."""

from __future__ import annotations

import json
import logging
import os
import threading
import traceback
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path

from ..bridge import BridgeError, LockstepSession, SutEndpoint, make_transport
from ..environment import set_conditions
from ..errors import SimulationFault
from ..twin import DigitalTwin
from .kpis import KPISummary, compute_kpis
from .matrix import TestCase
from .requirements import verify

log = logging.getLogger(__name__)

COMPLETED, ABORTED, TIMEOUT = "completed", "aborted", "timeout"

_live_lock = threading.Lock()
_live_instances = 0


def live_instances() -> int:
    return _live_instances


def _track(delta: int) -> None:
    global _live_instances
    with _live_lock:
        _live_instances += delta


@dataclass
class VerificationResult:
    case_id: int
    values: dict
    verdicts: dict
    all_pass: bool
    kpis: KPISummary | None
    status: str
    diagnostics: str = ""

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "values": dict(self.values),
            "verdicts": dict(self.verdicts),
            "all_pass": self.all_pass,
            "kpis": self.kpis.to_dict() if self.kpis else None,
            "status": self.status,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VerificationResult":
        kpis = KPISummary.from_dict(d["kpis"]) if d.get("kpis") else None
        return cls(d["case_id"], d["values"], d["verdicts"], d["all_pass"], kpis, d["status"], d.get("diagnostics", ""))


def log_name(case_id: int) -> str:
    return f"case_{case_id:04d}.jsonl"


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True, allow_nan=False)


def default_registry() -> dict:
    return {"twin": DigitalTwin, "sut": SutEndpoint}


def _tick_record(twin, cmd: dict, lidar_count: int) -> dict:
    st = twin.state
    tel = cmd.get("telemetry", {})
    return {
        "t": round(st.sim_time, 9),
        "x": st.position[0],
        "y": st.position[1],
        "s": twin.truth["s"],
        "v_true": st.speed,
        "v_est": tel.get("v_est", 0.0),
        "v_ref": tel.get("v_ref", 0.0),
        "accel": st.longitudinal_accel,
        "throttle": st.throttle,
        "brake": st.brake,
        "steer": st.steering,
        "aeb": tel.get("aeb", 0.0),
        "n_det": tel.get("n_det", 0),
        "n_col": twin.collisions.count,
        "dtc": min(twin.truth["dtc"], 1e6),
        "gear": st.gear,
        "engine_rpm": st.engine_rpm,
        "lidar_points": lidar_count,
        "headlights": bool(cmd.get("headlights", False)),
        "sut_fault": bool(cmd.get("fault", False)),
    }


def run_case(case: TestCase, suite, transport: str = "loopback", registry: dict | None = None):
    """Simulate one case; returns ``(records, status, diagnostics)``."""
    reg = {**default_registry(), **(registry or {})}
    env = set_conditions(case.tod, case.weather)
    twin = reg["twin"](suite.vehicle, suite.scenario, suite.dt, suite.camera, suite.lidar, env)
    _track(+1)
    records: list[dict] = []
    status, diagnostics = TIMEOUT, ""
    session = None
    try:
        endpoint = reg["sut"](case.variant, suite.vehicle, suite.scenario, case.seed, case.tod, case.weather,
                              suite.sut)
        session = LockstepSession(twin, make_transport(transport, endpoint), f"case-{case.case_id:04d}",
                                  suite.scenario.name)
        session.handshake()
        term = suite.termination
        n_ticks = int(round(case.max_duration / suite.dt))
        stopped_for = 0.0
        for _ in range(n_ticks):
            frame = twin.frame()
            lidar_count = len(frame.lidar_pcd) if len(frame.lidar_pcd) else twin.last_lidar_count
            cmd = session.exchange(frame)
            twin.apply(cmd)
            session.apply_pending_env()
            records.append(_tick_record(twin, cmd, lidar_count))
            rec = records[-1]
            if term.stop_on_collision and rec["n_col"] > 0:
                status, diagnostics = COMPLETED, "collision"
                break
            if abs(rec["v_true"]) < term.stop_speed and rec["aeb"] >= 0.9:
                stopped_for += suite.dt
            else:
                stopped_for = 0.0
            if stopped_for >= term.stop_hold - 1e-9:
                status, diagnostics = COMPLETED, "stopped"
                break
    except (SimulationFault, BridgeError, ValueError, ArithmeticError) as exc:
        status = ABORTED
        diagnostics = f"{type(exc).__name__}: {exc}"
        log.warning("case %d aborted: %s", case.case_id, diagnostics)
        log.debug("%s", traceback.format_exc())
    finally:
        if session is not None:
            session.close()
        _track(-1)
    return records, status, diagnostics


def summarise(case: TestCase, records, status: str, diagnostics: str, suite) -> VerificationResult:
    kpis = compute_kpis(records, suite.termination.stop_speed) if records else None
    if kpis is None:
        verdicts = {r.verified_by: False for r in suite.requirements}
    else:
        verdicts = verify(kpis, suite.requirements, status)
    return VerificationResult(case.case_id, dict(case.values), verdicts, all(verdicts.values()), kpis, status,
                              diagnostics)


def write_log(path: Path, case: TestCase, records, status: str, diagnostics: str) -> None:
    lines = [_dumps({"_case": case.to_dict()})]
    lines.extend(_dumps(r) for r in records)
    lines.append(_dumps({"_end": {"status": status, "diagnostics": diagnostics}}))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_log(path: Path):
    """Parse a tick log into ``(case, records, status, diagnostics)``."""
    case, records, end = None, [], None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path.name}:{lineno}: {exc.msg}") from None
            if "_case" in obj:
                case = TestCase.from_dict(obj["_case"])
            elif "_end" in obj:
                end = obj["_end"]
            else:
                records.append(obj)
    if case is None or end is None:
        raise ValueError(f"{path.name}: missing header or footer record")
    return case, records, end["status"], end["diagnostics"]


def execute_test(case: TestCase, suite, out_dir: str | Path | None = None, transport: str = "loopback",
                 registry: dict | None = None) -> VerificationResult:
    """Run a case to termination, persist its tick log and result, return verdicts."""
    records, status, diagnostics = run_case(case, suite, transport, registry)
    result = summarise(case, records, status, diagnostics, suite)
    if out_dir is not None:
        out = Path(out_dir)
        (out / "logs").mkdir(parents=True, exist_ok=True)
        (out / "results").mkdir(parents=True, exist_ok=True)
        write_log(out / "logs" / log_name(case.case_id), case, records, status, diagnostics)
        _atomic_write(out / "results" / f"case_{case.case_id:04d}.json", _dumps(result.to_dict()) + "\n")
    return result


# ----------------------------------------------------------------------------
# scheduling


def _worker(args):
    case, suite, out_dir, transport = args
    return execute_test(case, suite, out_dir, transport)


class TestManager:
    """Schedules cases over a process pool and tracks pending/running/completed."""

    __test__ = False

    def __init__(self, suite, out_dir=None, jobs: int | None = None, transport: str = "loopback", progress=None):
        self.suite = suite
        self.out_dir = out_dir
        self.jobs = max(1, jobs or os.cpu_count() or 1)
        self.transport = transport
        self.progress = progress
        self.pending = 0
        self.running = 0
        self.completed = 0
        self.total = 0

    def counts(self) -> tuple[int, int, int]:
        return self.running, self.pending, self.completed

    def _report(self, case_id=None, result=None):
        assert self.running + self.pending + self.completed == self.total
        if self.progress:
            self.progress(self, case_id, result)

    def run(self, cases) -> list[VerificationResult]:
        cases = list(cases)
        self.total, self.pending, self.running, self.completed = len(cases), len(cases), 0, 0
        results: dict[int, VerificationResult] = {}
        if self.jobs == 1:
            for case in cases:
                self.pending -= 1
                self.running += 1
                self._report()
                res = execute_test(case, self.suite, self.out_dir, self.transport)
                self.running -= 1
                self.completed += 1
                results[case.case_id] = res
                self._report(case.case_id, res)
            return [results[c.case_id] for c in cases]
        queue = list(cases)
        with ProcessPoolExecutor(max_workers=self.jobs) as pool:
            inflight = {}
            while queue or inflight:
                while queue and len(inflight) < self.jobs:
                    case = queue.pop(0)
                    fut = pool.submit(_worker, (case, self.suite, self.out_dir, self.transport))
                    inflight[fut] = case
                    self.pending -= 1
                    self.running += 1
                    self._report()
                done, _ = wait(inflight, return_when=FIRST_COMPLETED)
                for fut in done:
                    case = inflight.pop(fut)
                    try:
                        res = fut.result()
                    except Exception as exc:  # noqa: BLE001 - a crashed worker still yields a verdict
                        res = VerificationResult(case.case_id, dict(case.values),
                                                 {r.verified_by: False for r in self.suite.requirements},
                                                 False, None, ABORTED, f"worker failure: {exc}")
                    self.running -= 1
                    self.completed += 1
                    results[case.case_id] = res
                    self._report(case.case_id, res)
        return [results[c.case_id] for c in cases]

