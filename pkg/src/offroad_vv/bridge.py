"""Lockstep co-simulation bridge between the simulator and the system under test.

Wire format (version 1): each frame is a 4-byte big-endian unsigned length
followed by that many bytes of UTF-8 JSON::

    {"v": 1, "type": <msg_type>, "session": <str>, "tick": <int>, "payload": {...}}

The field-level schema ships as ``data/bridge_schema.json``.
"""

from __future__ import annotations

import json
import os
import socket
import struct
import threading
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .autonomy import AutonomyContext, AutonomyState, SutParams, VariantConfig, autonomy_tick
from .dynamics import VehicleConfig
from .environment import Scenario, set_conditions
from .sensors import SensorFrame

PROTOCOL_VERSION = 1
MAX_FRAME = 16 * 1024 * 1024
HEADER = struct.Struct(">I")
PORT_ENV = "OFFROAD_VV_BRIDGE_PORT"
TIMEOUT_ENV = "OFFROAD_VV_BRIDGE_TIMEOUT"
DEFAULT_PORT = 0  # 0 asks the OS for a free port
DEFAULT_TIMEOUT = 5.0


class MessageType(str, Enum):
    SENSOR_FRAME = "sensor_frame"
    VEHICLE_COMMAND = "vehicle_command"
    ENV_COMMAND = "env_command"
    HANDSHAKE = "handshake"
    ACK = "ack"
    FAULT = "fault"


TERMINAL = (MessageType.VEHICLE_COMMAND, MessageType.ACK, MessageType.FAULT)


class BridgeError(Exception):
    pass


class EncodeError(BridgeError):
    pass


class DecodeError(BridgeError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BridgeTimeout(BridgeError):
    pass


class HandshakeRefused(BridgeError):
    pass


class SessionFault(BridgeError):
    pass


@dataclass(frozen=True)
class BridgeMessage:
    msg_type: MessageType
    session_id: str
    tick_index: int
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "msg_type", MessageType(self.msg_type))


def bridge_port() -> int:
    return int(os.environ.get(PORT_ENV, DEFAULT_PORT))


def bridge_timeout() -> float:
    return float(os.environ.get(TIMEOUT_ENV, DEFAULT_TIMEOUT))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Enum):
        return obj.value
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def encode(msg: BridgeMessage) -> bytes:
    body = {"v": PROTOCOL_VERSION, "type": msg.msg_type.value, "session": msg.session_id,
            "tick": int(msg.tick_index), "payload": msg.payload}
    try:
        data = json.dumps(body, default=_jsonable, separators=(",", ":"), allow_nan=False).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise EncodeError(str(exc)) from None
    if len(data) > MAX_FRAME:
        raise EncodeError(f"payload of {len(data)} bytes exceeds the {MAX_FRAME} byte limit")
    return HEADER.pack(len(data)) + data


def _parse_body(data: bytes, offset: int) -> BridgeMessage:
    try:
        obj = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise DecodeError(f"invalid UTF-8: {exc.reason}", offset + exc.start) from None
    except json.JSONDecodeError as exc:
        raise DecodeError(f"malformed JSON: {exc.msg}", offset + exc.pos) from None
    if not isinstance(obj, dict):
        raise DecodeError("frame body is not an object", offset)
    for key in ("v", "type", "session", "tick", "payload"):
        if key not in obj:
            raise DecodeError(f"missing field {key!r}", offset)
    try:
        return BridgeMessage(obj["type"], obj["session"], obj["tick"], obj["payload"])
    except ValueError:
        raise DecodeError(f"unknown message type {obj['type']!r}", offset) from None


def decode(frame: bytes) -> BridgeMessage:
    if len(frame) < HEADER.size:
        raise DecodeError("truncated length prefix", len(frame))
    (n,) = HEADER.unpack_from(frame)
    if n > MAX_FRAME:
        raise DecodeError(f"declared length {n} exceeds limit", 0)
    if len(frame) - HEADER.size != n:
        raise DecodeError(f"declared length {n} but {len(frame) - HEADER.size} body bytes", HEADER.size)
    return _parse_body(frame[HEADER.size:], HEADER.size)


class FrameSplitter:
    """Reassembles messages from arbitrarily chunked stream data."""

    def __init__(self):
        self._buf = bytearray()
        self._consumed = 0

    def feed(self, data: bytes) -> list[BridgeMessage]:
        self._buf.extend(data)
        out = []
        while len(self._buf) >= HEADER.size:
            (n,) = HEADER.unpack_from(self._buf)
            if n > MAX_FRAME:
                raise DecodeError(f"declared length {n} exceeds limit", self._consumed)
            end = HEADER.size + n
            if len(self._buf) < end:
                break
            out.append(_parse_body(bytes(self._buf[HEADER.size:end]), self._consumed + HEADER.size))
            del self._buf[:end]
            self._consumed += end
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


# ----------------------------------------------------------------------------
# SUT endpoint


class SutEndpoint:
    """Hosts the autonomy stack and the test driver's environment requests."""

    def __init__(self, variant: VariantConfig, vehicle: VehicleConfig, scenario: Scenario, seed: int,
                 tod: float, weather: str, params: SutParams = SutParams(), env_schedule: dict | None = None):
        self.context = AutonomyContext(variant, vehicle, scenario, np.random.default_rng(seed), params)
        self.state = AutonomyState()
        self.env_view = set_conditions(tod, weather)
        self.env_schedule = dict(env_schedule or {})
        self.session_id = ""
        self.dt = 0.02
        self._tick = 0

    def _reply(self, msg_type, payload) -> BridgeMessage:
        self._tick += 1
        return BridgeMessage(msg_type, self.session_id, self._tick, payload)

    def _env_command(self, tod, weather) -> BridgeMessage:
        self.env_view = set_conditions(tod, weather)
        return self._reply(MessageType.ENV_COMMAND, {"time_of_day": tod, "weather": self.env_view.weather.value})

    def handle(self, msg: BridgeMessage) -> list[BridgeMessage]:
        if msg.msg_type is MessageType.HANDSHAKE:
            self.session_id = msg.session_id
            if msg.payload.get("version") != PROTOCOL_VERSION:
                return [self._reply(MessageType.FAULT, {"reason": f"version mismatch: {msg.payload.get('version')}"})]
            self.dt = float(msg.payload["dt"])
            env = self.env_view
            return [self._env_command(env.time_of_day, env.weather.value),
                    self._reply(MessageType.ACK, {"version": PROTOCOL_VERSION})]
        if msg.msg_type is MessageType.SENSOR_FRAME:
            frame = SensorFrame.from_dict(msg.payload)
            cmd, self.state = autonomy_tick(frame, self.env_view, self.context.variant, self.state, self.dt,
                                            self.context)
            st = self.state
            cmd["telemetry"] = {"v_est": st.v_est, "v_ref": st.v_ref, "aeb": st.aeb, "n_det": st.n_det,
                                "hill_hold": st.hill_hold, "fault": st.fault}
            out = []
            if msg.tick_index in self.env_schedule:
                out.append(self._env_command(*self.env_schedule[msg.tick_index]))
            out.append(self._reply(MessageType.VEHICLE_COMMAND, cmd))
            return out
        return [self._reply(MessageType.FAULT, {"reason": f"unexpected {msg.msg_type.value}"})]


# ----------------------------------------------------------------------------
# transports


class LoopbackTransport:
    """In-process transport; still serialises every message through the wire format."""

    def __init__(self, endpoint: SutEndpoint):
        self.endpoint = endpoint

    def request(self, msg: BridgeMessage) -> list[BridgeMessage]:
        inbound = decode(encode(msg))
        return [decode(encode(r)) for r in self.endpoint.handle(inbound)]

    def close(self) -> None:
        pass


def serve_connection(conn: socket.socket, endpoint: SutEndpoint) -> None:
    splitter = FrameSplitter()
    with conn:
        while True:
            data = conn.recv(65536)
            if not data:
                return
            for msg in splitter.feed(data):
                conn.sendall(b"".join(encode(r) for r in endpoint.handle(msg)))


class SocketTransport:
    """TCP transport; the SUT endpoint is served from a background thread."""

    def __init__(self, endpoint: SutEndpoint, host: str = "127.0.0.1", port: int | None = None,
                 timeout: float | None = None):
        self.timeout = bridge_timeout() if timeout is None else timeout
        self._server = socket.create_server((host, bridge_port() if port is None else port))
        self._thread = threading.Thread(target=self._serve, args=(endpoint,), daemon=True)
        self._thread.start()
        self._sock = socket.create_connection(self._server.getsockname()[:2], timeout=self.timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._splitter = FrameSplitter()
        self._queue: list[BridgeMessage] = []

    def _serve(self, endpoint):
        try:
            conn, _ = self._server.accept()
        except OSError:
            return
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            serve_connection(conn, endpoint)
        except OSError:
            pass

    def request(self, msg: BridgeMessage) -> list[BridgeMessage]:
        self._sock.sendall(encode(msg))
        out = []
        while True:
            while self._queue:
                reply = self._queue.pop(0)
                out.append(reply)
                if reply.msg_type in TERMINAL:
                    return out
            try:
                data = self._sock.recv(65536)
            except socket.timeout:
                raise BridgeTimeout(f"no reply to tick {msg.tick_index} within {self.timeout} s") from None
            if not data:
                raise SessionFault("peer closed the connection")
            self._queue.extend(self._splitter.feed(data))

    def close(self) -> None:
        for s in (self._sock, self._server):
            try:
                s.close()
            except OSError:
                pass
        self._thread.join(timeout=1.0)


def make_transport(kind: str, endpoint: SutEndpoint):
    if kind == "loopback":
        return LoopbackTransport(endpoint)
    if kind == "socket":
        return SocketTransport(endpoint)
    raise ValueError(f"unknown transport {kind!r}")


# ----------------------------------------------------------------------------
# session


class LockstepSession:
    """Simulator-side driver of the frame -> command exchange."""

    def __init__(self, twin, transport, session_id: str, scenario_id: str, record: bool = False):
        self.twin = twin
        self.transport = transport
        self.session_id = session_id
        self.scenario_id = scenario_id
        self.tick_index = 0
        self.transcript: list[BridgeMessage] = [] if record else None

    def _send(self, msg_type, payload) -> list[BridgeMessage]:
        self.tick_index += 1
        msg = BridgeMessage(msg_type, self.session_id, self.tick_index, payload)
        replies = self.transport.request(msg)
        if self.transcript is not None:
            self.transcript.append(msg)
            self.transcript.extend(replies)
        return replies

    def _apply_env(self, replies):
        for r in replies:
            if r.msg_type is MessageType.ENV_COMMAND:
                self.twin.set_environment(r.payload["time_of_day"], r.payload["weather"])

    def handshake(self, version: int = PROTOCOL_VERSION) -> None:
        replies = self._send(MessageType.HANDSHAKE,
                             {"version": version, "dt": self.twin.dt, "scenario": self.scenario_id})
        if not replies or replies[-1].msg_type is not MessageType.ACK:
            reason = replies[-1].payload.get("reason", "") if replies else "no reply"
            raise HandshakeRefused(reason)
        self._apply_env(replies)

    def exchange(self, frame: SensorFrame) -> dict:
        """Send one frame, apply any env commands after this tick, return the vehicle command."""
        replies = self._send(MessageType.SENSOR_FRAME, frame.to_dict())
        commands = [r for r in replies if r.msg_type is MessageType.VEHICLE_COMMAND]
        faults = [r for r in replies if r.msg_type is MessageType.FAULT]
        if faults:
            raise SessionFault(faults[0].payload.get("reason", "fault"))
        if len(commands) != 1 or replies[-1].msg_type is not MessageType.VEHICLE_COMMAND:
            raise SessionFault("each sensor frame must be answered by exactly one trailing vehicle_command")
        self._pending_env = replies
        return commands[0].payload

    def apply_pending_env(self) -> None:
        self._apply_env(getattr(self, "_pending_env", []))
        self._pending_env = []

    def close(self) -> None:
        self.transport.close()


def run_session(twin, transport, n_ticks: int, session_id: str = "s0", scenario_id: str = "") -> list[BridgeMessage]:
    """Drive ``n_ticks`` lockstep exchanges and return the message transcript."""
    session = LockstepSession(twin, transport, session_id, scenario_id, record=True)
    try:
        session.handshake()
        for _ in range(n_ticks):
            cmd = session.exchange(twin.frame())
            twin.apply(cmd)
            session.apply_pending_env()
    finally:
        session.close()
    return session.transcript

