"""Ground-station control-link plumbing: bit-exact wire format, RC pulse
encoding, and the 20 Hz closed loop with mode arbitration and the
frame-quality safety monitor.

Wire layout (little-endian throughout):

    magic   4 bytes  "FWNG"
    version u8       1
    type    u8       0 Frame | 1 Control | 2 Mode | 3 Safety | 4 Ack
    seq     u32
    timestamp_us u64
    payload_len  u32
    payload      payload_len bytes
    crc32   u32      IEEE polynomial over version..payload inclusive

Payloads: Frame = width u16, height u16, pixfmt u8 (0 = RGB8), raw pixels;
Control = 4 x f32 normalized values + 4 x u16 PPM microseconds;
Mode = u8 (0 Manual, 1 Autonomous); Safety = u8 flag + f32 ssim; Ack = empty.

PPM channels (throttle, aileron, elevator, rudder) use the standard RC
1000-2000 us convention; the rudder channel carries the heading command as
a wrapped heading-error-style value mapped over [-pi, pi), mirroring a
physical stick with a fixed symmetric range.
"""

from __future__ import annotations

import enum
import json
import math
import socket
import struct
import time
import zlib
from dataclasses import dataclass

import numpy as np

from . import estimation as est
from . import percept
from .dynamics import Control
from .geom import wrap_angle
from .seeding import stream_seed

MAGIC = b"FWNG"
VERSION = 1
_HEADER = struct.Struct("<4sBBIQI")  # magic, version, type, seq, timestamp, payload_len
_CRC = struct.Struct("<I")

PPM_MIN = 1000
PPM_MAX = 2000
AILERON_FULL_SCALE = 1.0
ELEVATOR_FULL_SCALE = 0.5  # rad

DEFAULT_UDP_PORT = 47801


class LinkError(ValueError):
    pass


class BadMagic(LinkError):
    pass


class BadCrc(LinkError):
    pass


class Truncated(LinkError):
    pass


class UnknownType(LinkError):
    pass


class OutOfRange(LinkError):
    pass


class TransportClosed(RuntimeError):
    pass


class Mode(enum.Enum):
    MANUAL = 0
    AUTONOMOUS = 1


@dataclass(frozen=True)
class PpmFrame:
    """Channel pulse widths in microseconds: throttle, aileron, elevator,
    rudder; each within [1000, 2000]."""

    throttle_us: int
    aileron_us: int
    elevator_us: int
    rudder_us: int

    def as_tuple(self) -> tuple:
        return (self.throttle_us, self.aileron_us, self.elevator_us, self.rudder_us)

    def validate(self) -> "PpmFrame":
        for name, w in zip(("throttle", "aileron", "elevator", "rudder"), self.as_tuple()):
            if not PPM_MIN <= w <= PPM_MAX:
                raise OutOfRange(f"{name} pulse width {w} us outside [1000, 2000]")
        return self


def encode_ppm(control: Control) -> PpmFrame:
    """Affine map from the normalized command box to pulse widths."""
    c = control.clamped()
    return PpmFrame(
        throttle_us=int(round(PPM_MIN + 1000.0 * c.throttle)),
        aileron_us=int(round(1500.0 + 500.0 * c.aileron / AILERON_FULL_SCALE)),
        elevator_us=int(round(1500.0 + 500.0 * c.pitch_cmd / ELEVATOR_FULL_SCALE)),
        rudder_us=int(
            round(1500.0 + 500.0 * float(wrap_angle(c.yaw_cmd)) / math.pi)
        ),
    )


def decode_ppm(frame: PpmFrame) -> Control:
    """Inverse of encode_ppm's affine maps."""
    frame.validate()
    return Control(
        throttle=(frame.throttle_us - PPM_MIN) / 1000.0,
        aileron=(frame.aileron_us - 1500.0) / 500.0 * AILERON_FULL_SCALE,
        pitch_cmd=(frame.elevator_us - 1500.0) / 500.0 * ELEVATOR_FULL_SCALE,
        yaw_cmd=float(wrap_angle((frame.rudder_us - 1500.0) / 500.0 * math.pi)),
    )


@dataclass(frozen=True)
class FrameMsg:
    width: int
    height: int
    pixfmt: int
    pixels: bytes

    @classmethod
    def from_frame(cls, frame: percept.Frame) -> "FrameMsg":
        return cls(frame.width, frame.height, 0, frame.pixels.tobytes())

    def to_frame(self) -> percept.Frame:
        arr = np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, 3)
        return percept.Frame(arr.copy())


@dataclass(frozen=True)
class ControlMsg:
    values: tuple  # 4 normalized command values (f32-representable)
    ppm: PpmFrame

    def __post_init__(self):
        # The wire carries 32-bit floats; hold the values the wire can.
        object.__setattr__(
            self, "values", tuple(float(np.float32(v)) for v in self.values)
        )

    @classmethod
    def from_control(cls, control: Control) -> "ControlMsg":
        return cls(tuple(float(v) for v in control.as_array()), encode_ppm(control))

    def to_control(self) -> Control:
        return Control(*self.values)


@dataclass(frozen=True)
class ModeMsg:
    mode: Mode


@dataclass(frozen=True)
class SafetyMsg:
    flag: bool
    last_ssim: float

    def __post_init__(self):
        object.__setattr__(self, "last_ssim", float(np.float32(self.last_ssim)))


@dataclass(frozen=True)
class AckMsg:
    pass


_TYPE_CODES = {FrameMsg: 0, ControlMsg: 1, ModeMsg: 2, SafetyMsg: 3, AckMsg: 4}


def _encode_payload(msg) -> bytes:
    if isinstance(msg, FrameMsg):
        head = struct.pack("<HHB", msg.width, msg.height, msg.pixfmt)
        return head + msg.pixels
    if isinstance(msg, ControlMsg):
        return struct.pack("<4f4H", *msg.values, *msg.ppm.validate().as_tuple())
    if isinstance(msg, ModeMsg):
        return struct.pack("<B", msg.mode.value)
    if isinstance(msg, SafetyMsg):
        return struct.pack("<Bf", int(msg.flag), msg.last_ssim)
    if isinstance(msg, AckMsg):
        return b""
    raise TypeError(f"not a link message: {type(msg).__name__}")


def _decode_payload(type_code: int, payload: bytes):
    try:
        if type_code == 0:
            w, h, fmt = struct.unpack_from("<HHB", payload)
            pixels = payload[5:]
            if fmt == 0 and len(pixels) != w * h * 3:
                raise Truncated(f"frame payload holds {len(pixels)} pixel bytes, want {w * h * 3}")
            return FrameMsg(w, h, fmt, pixels)
        if type_code == 1:
            vals = struct.unpack("<4f4H", payload)
            return ControlMsg(tuple(vals[:4]), PpmFrame(*vals[4:]).validate())
        if type_code == 2:
            return ModeMsg(Mode(struct.unpack("<B", payload)[0]))
        if type_code == 3:
            flag, ssim_val = struct.unpack("<Bf", payload)
            return SafetyMsg(bool(flag), ssim_val)
        if type_code == 4:
            if payload:
                raise Truncated("ack payload must be empty")
            return AckMsg()
    except struct.error as exc:
        raise Truncated(f"payload too short for type {type_code}: {exc}") from exc
    raise UnknownType(f"unknown message type {type_code}")


def serialize(msg, seq: int, timestamp_us: int) -> bytes:
    payload = _encode_payload(msg)
    header = _HEADER.pack(
        MAGIC, VERSION, _TYPE_CODES[type(msg)], seq & 0xFFFFFFFF,
        timestamp_us & 0xFFFFFFFFFFFFFFFF, len(payload),
    )
    crc = zlib.crc32(header[4:] + payload) & 0xFFFFFFFF
    return header + payload + _CRC.pack(crc)


def deserialize(data: bytes):
    """Inverse of serialize; returns (message, seq, timestamp_us)."""
    if len(data) >= 4 and data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise Truncated(f"buffer of {len(data)} bytes is shorter than the header")
    magic, version, type_code, seq, timestamp_us, payload_len = _HEADER.unpack_from(data)
    total = _HEADER.size + payload_len + _CRC.size
    if len(data) < total:
        raise Truncated(f"buffer of {len(data)} bytes, message needs {total}")
    payload = data[_HEADER.size : _HEADER.size + payload_len]
    (crc_stored,) = _CRC.unpack_from(data, _HEADER.size + payload_len)
    crc = zlib.crc32(data[4 : _HEADER.size + payload_len]) & 0xFFFFFFFF
    if crc != crc_stored:
        raise BadCrc(f"crc 0x{crc:08x} != stored 0x{crc_stored:08x}")
    if version != VERSION:
        raise UnknownType(f"unsupported version {version}")
    return _decode_payload(type_code, payload), seq, timestamp_us


@dataclass(frozen=True)
class LinkConfig:
    tick_rate: float = 20.0
    drop_probability: float = 0.0
    latency_ticks: int = 0
    seed: int = 0


class MemoryTransport:
    """Deterministic in-process byte transport with two directed queues."""

    def __init__(self):
        self.downlink = []  # aircraft -> ground station (frames)
        self.uplink = []  # ground station -> aircraft (controls, acks)
        self.closed = False

    def send_down(self, data: bytes) -> None:
        if self.closed:
            raise TransportClosed("transport closed")
        self.downlink.append(bytes(data))

    def send_up(self, data: bytes) -> None:
        if self.closed:
            raise TransportClosed("transport closed")
        self.uplink.append(bytes(data))

    def drain_down(self) -> list:
        out, self.downlink = self.downlink, []
        return out

    def drain_up(self) -> list:
        out, self.uplink = self.uplink, []
        return out

    def close(self) -> None:
        self.closed = True


class UdpTransport:
    """Datagram loopback speaking the exact wire format on localhost."""

    def __init__(self, port: int = DEFAULT_UDP_PORT, host: str = "127.0.0.1"):
        self.down_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.down_sock.bind((host, 0))
        self.up_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.up_sock.bind((host, port))
        self.down_addr = self.down_sock.getsockname()
        self.up_addr = self.up_sock.getsockname()
        for s in (self.down_sock, self.up_sock):
            s.setblocking(False)
        self.closed = False

    def send_down(self, data: bytes) -> None:
        self.up_sock.sendto(data, self.down_addr)

    def send_up(self, data: bytes) -> None:
        self.down_sock.sendto(data, self.up_addr)

    def _drain(self, sock) -> list:
        out = []
        while True:
            try:
                data, _ = sock.recvfrom(1 << 22)
            except BlockingIOError:
                return out
            out.append(data)

    def drain_down(self) -> list:
        return self._drain(self.down_sock)

    def drain_up(self) -> list:
        return self._drain(self.up_sock)

    def close(self) -> None:
        self.down_sock.close()
        self.up_sock.close()
        self.closed = True


@dataclass
class LoopResult:
    log: list  # one dict per tick
    monitor: est.QualityMonitor
    safety_events: list  # (tick, SafetyMsg)
    engine: object  # the plant after the run
    completed: bool

    def log_jsonl(self) -> str:
        return "\n".join(json.dumps(row, sort_keys=True) for row in self.log) + "\n"


def run_loop(
    engine,
    policy,
    monitor: est.QualityMonitor = est.QualityMonitor(),
    config: LinkConfig = LinkConfig(),
    transport=None,
    duration_s: float = 5.0,
    operator_schedule: dict | None = None,
) -> LoopResult:
    """Drive the vision-control loop over the link for `duration_s`.

    Per tick: render -> FrameMsg over the downlink (seeded drops and
    whole-tick latency apply to frames only) -> SSIM monitor update on the
    received stream -> policy (or the manual command when the mode switch
    is thrown) -> ControlMsg over the uplink -> plant step. The loop clock
    is the tick counter; nothing depends on wall time.

    `engine` is a TrackingEngine-compatible plant (observe/advance/render).
    `operator_schedule` maps tick -> list of LinkMessages injected on the
    uplink at that tick (mode switches, manual controls). A TransportClosed
    from the transport ends the loop cleanly with a partial log.
    """
    if transport is None:
        transport = MemoryTransport()
    dt = 1.0 / config.tick_rate
    n_ticks = int(round(duration_s * config.tick_rate))
    rng = np.random.default_rng(stream_seed(config.seed, "frame-drops"))
    operator_schedule = operator_schedule or {}

    mode = Mode.AUTONOMOUS
    manual_control = Control()
    pending = []  # (deliver_tick, seq, frame_bytes)
    exact = {}  # seq -> (Observation, Frame) carried beside the wire bytes
    last_obs = None
    prev_frame = None
    log = []
    safety_events = []
    uses_vision = bool(getattr(policy, "uses_vision", True))
    completed = True

    for tick in range(n_ticks):
        try:
            obs = engine.observe(uses_vision)
            if uses_vision and obs.frame is not None:
                fbytes = serialize(
                    FrameMsg.from_frame(obs.frame), tick, int(tick * dt * 1e6)
                )
                dropped = bool(rng.uniform() < config.drop_probability)
                if not dropped:
                    pending.append((tick + config.latency_ticks, tick, fbytes))
                    exact[tick] = obs
            else:
                dropped = False
                exact[tick] = obs

            # Ground-station side: deliver due frames, update the monitor.
            due = [p for p in pending if p[0] <= tick]
            pending = [p for p in pending if p[0] > tick]
            for _, seq, fbytes in due:
                transport.send_down(fbytes)
            ssim_value = None
            arrivals = transport.drain_down() if uses_vision else []
            if not uses_vision:
                last_obs = exact.pop(tick, last_obs)
            for data in arrivals:
                fmsg, seq, _ = deserialize(data)
                frame = fmsg.to_frame()
                if prev_frame is not None:
                    ssim_value = est.ssim(prev_frame, frame)
                    monitor, raised = est.monitor_update(monitor, ssim_value)
                    if raised:
                        smsg = SafetyMsg(True, ssim_value)
                        transport.send_up(serialize(smsg, tick, int(tick * dt * 1e6)))
                        safety_events.append((tick, smsg))
                prev_frame = frame
                last_obs = exact.pop(seq, last_obs)

            # Operator traffic (transmitter side) for this tick.
            for msg in operator_schedule.get(tick, []):
                transport.send_up(serialize(msg, tick, int(tick * dt * 1e6)))
            for data in transport.drain_up():
                msg, _, _ = deserialize(data)
                if isinstance(msg, ModeMsg):
                    mode = msg.mode
                elif isinstance(msg, ControlMsg):
                    manual_control = msg.to_control()

            if mode is Mode.MANUAL:
                control = manual_control
            else:
                control = policy.control(last_obs) if last_obs is not None else Control()
            cmsg = ControlMsg.from_control(control)
            transport.send_up(serialize(cmsg, tick, int(tick * dt * 1e6)))
            received = transport.drain_up()
            applied = control
            for data in received:
                msg, _, _ = deserialize(data)  # integrity check on the wire bytes

            engine.advance(applied)
            log.append(
                {
                    "tick": tick,
                    "mode": mode.name.lower(),
                    "ssim": None if ssim_value is None else round(ssim_value, 9),
                    "dropped": dropped,
                    "ppm": list(cmsg.ppm.as_tuple()),
                }
            )
        except TransportClosed:
            completed = False
            break
    return LoopResult(log, monitor, safety_events, engine, completed)
