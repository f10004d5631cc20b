"""Virtual multidrop servo bus: register-mapped servos with simple dynamics.

A VirtualBus owns a set of VirtualServo instances and answers decoded
instruction packets exactly as the hardware chain would: only the
addressed servo replies, broadcast pings reply in ascending id order,
sync writes are silent. `step` integrates each servo's continuous state
(angle, velocity) from its active operating mode.

Servo state is kept in SI units (rad, rad/s, N.m); the control table
holds the quantized little-endian register image the wire protocol sees.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from importlib import resources

import yaml

from .errors import BusError, ModelError
from .protocol import (
    BROADCAST_ID,
    ERR_ACCESS,
    ERR_DATA_RANGE,
    Instruction,
    InstructionPacket,
    StatusPacket,
    StreamDecoder,
    encode_status,
    le_bytes,
    le_int,
    le_uint,
    parse_sync_read,
    parse_sync_write,
)

TWO_PI = 2.0 * math.pi

# Control-table subset (XL330-class addressing).
ADDR_OPERATING_MODE = 11   # 1 byte, EEPROM area
ADDR_TORQUE_ENABLE = 64    # 1 byte
ADDR_GOAL_PWM = 100        # 2 bytes, signed, -885..885
ADDR_GOAL_CURRENT = 102    # 2 bytes, signed, mA
ADDR_GOAL_POSITION = 116   # 4 bytes, signed, ticks
ADDR_PRESENT_CURRENT = 126  # 2 bytes, signed, mA
ADDR_PRESENT_VELOCITY = 128  # 4 bytes, signed, milli-rad/s
ADDR_PRESENT_POSITION = 132  # 4 bytes, wrapped ticks

TABLE_SIZE = 147
EEPROM_END = 64  # addresses below this are EEPROM, locked while torque is on

MODE_CURRENT = 0
MODE_VELOCITY = 1
MODE_POSITION = 3
MODE_PWM = 16
_VALID_MODES = (MODE_CURRENT, MODE_VELOCITY, MODE_POSITION, MODE_PWM)

PWM_FULL_SCALE = 885
VELOCITY_LSB = 1e-3  # rad/s per register count

# PING reply: model number (2 bytes) + firmware version.
_MODEL_NUMBERS = {"xl330-m288": 1200, "xl330-m077": 1190}
_FIRMWARE_VERSION = 1


@dataclass
class _Register:
    addr: int
    width: int
    name: str
    writable: bool


_REGISTERS = {
    r.addr: r
    for r in (
        _Register(ADDR_OPERATING_MODE, 1, "operating_mode", True),
        _Register(ADDR_TORQUE_ENABLE, 1, "torque_enable", True),
        _Register(ADDR_GOAL_PWM, 2, "goal_pwm", True),
        _Register(ADDR_GOAL_CURRENT, 2, "goal_current", True),
        _Register(ADDR_GOAL_POSITION, 4, "goal_position", True),
        _Register(ADDR_PRESENT_CURRENT, 2, "present_current", False),
        _Register(ADDR_PRESENT_VELOCITY, 4, "present_velocity", False),
        _Register(ADDR_PRESENT_POSITION, 4, "present_position", False),
    )
}


@dataclass(frozen=True)
class ServoProfile:
    """Static parameters of one servo model.

    `coulomb_friction` and `torque_constant` are given at the reference
    288:1 reduction; the effective values scale with gear_ratio/288, so
    lower-ratio gearboxes drag less and trade torque per amp.
    """

    model_name: str
    gear_ratio: float
    rated_torque: float
    ticks_per_rev: int = 4096
    torque_constant: float = 1.0
    coulomb_friction: float = 0.002
    rotor_inertia_eff: float = 1e-3
    position_kp: float = 0.3
    position_kd: float = 0.035

    def __post_init__(self):
        if self.rated_torque <= 0:
            raise ModelError("rated_torque must be positive")
        if self.ticks_per_rev != 4096:
            raise ModelError("profiles model 12-bit encoders (4096 ticks/rev)")

    @property
    def effective_friction(self) -> float:
        return self.coulomb_friction * self.gear_ratio / 288.0

    @property
    def effective_kt(self) -> float:
        return self.torque_constant * self.gear_ratio / 288.0

    @property
    def rad_per_tick(self) -> float:
        return TWO_PI / self.ticks_per_rev


def profile_from_dict(doc: dict) -> ServoProfile:
    try:
        return ServoProfile(**doc)
    except TypeError as e:
        raise ModelError(f"bad servo profile document: {e}") from e


def load_profile(text: str) -> ServoProfile:
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ModelError("servo profile document must be a mapping")
    return profile_from_dict(doc)


def builtin_profile(name: str) -> ServoProfile:
    ref = resources.files("gex.data") / f"{name}.yaml"
    if not ref.is_file():
        raise ModelError(f"no builtin servo profile named '{name}'")
    return load_profile(ref.read_text(encoding="utf-8"))


class VirtualServo:
    """One register-mapped servo with continuous angle/velocity state."""

    def __init__(self, servo_id: int, profile: ServoProfile, theta: float = math.pi):
        self.id = servo_id
        self.profile = profile
        self.theta = theta  # rad, multi-turn absolute
        self.omega = 0.0  # rad/s
        self.applied_external_torque = 0.0  # N.m, e.g. operator's finger
        self.last_applied_torque = 0.0  # motor torque after the rated clamp
        self.registers = bytearray(TABLE_SIZE)
        self._reg_set(ADDR_OPERATING_MODE, MODE_POSITION)
        self._latch_goal_to_present()
        self._refresh_present()

    # ------------------------------------------------------------ registers

    def _reg_set(self, addr: int, value: int) -> None:
        reg = _REGISTERS[addr]
        self.registers[addr : addr + reg.width] = le_bytes(value, reg.width)

    def _reg_int(self, addr: int) -> int:
        reg = _REGISTERS[addr]
        return le_int(bytes(self.registers[addr : addr + reg.width]))

    def _reg_uint(self, addr: int) -> int:
        reg = _REGISTERS[addr]
        return le_uint(bytes(self.registers[addr : addr + reg.width]))

    @property
    def torque_enabled(self) -> bool:
        return self.registers[ADDR_TORQUE_ENABLE] != 0

    @property
    def operating_mode(self) -> int:
        return self.registers[ADDR_OPERATING_MODE]

    def ticks(self) -> int:
        """Present single-turn encoder reading, 0..4095."""
        return round(self.theta / self.profile.rad_per_tick) % self.profile.ticks_per_rev

    def _latch_goal_to_present(self) -> None:
        self._reg_set(ADDR_GOAL_POSITION, round(self.theta / self.profile.rad_per_tick))

    def _refresh_present(self) -> None:
        self._reg_set(ADDR_PRESENT_POSITION, self.ticks())
        counts = round(self.omega / VELOCITY_LSB)
        self._reg_set(ADDR_PRESENT_VELOCITY, _clamp_int(counts, 32))
        ma = round(self.last_applied_torque / self.profile.effective_kt * 1000.0)
        self._reg_set(ADDR_PRESENT_CURRENT, _clamp_int(ma, 16))

    # ------------------------------------------------------------ bus access

    def read(self, addr: int, length: int) -> tuple[int, bytes]:
        if length < 1 or addr < 0 or addr + length > TABLE_SIZE:
            return ERR_ACCESS, b""
        return 0, bytes(self.registers[addr : addr + length])

    def write(self, addr: int, data: bytes) -> int:
        reg = _REGISTERS.get(addr)
        if reg is None or not reg.writable or len(data) != reg.width:
            return ERR_ACCESS
        if addr < EEPROM_END and self.torque_enabled:
            return ERR_ACCESS
        value = le_int(data)
        if addr == ADDR_OPERATING_MODE:
            if value not in _VALID_MODES:
                return ERR_DATA_RANGE
        elif addr == ADDR_TORQUE_ENABLE:
            if value not in (0, 1):
                return ERR_DATA_RANGE
            if value and not self.torque_enabled:
                self._latch_goal_to_present()
        elif addr == ADDR_GOAL_PWM:
            if abs(value) > PWM_FULL_SCALE:
                return ERR_DATA_RANGE
        elif addr == ADDR_GOAL_CURRENT:
            if self.operating_mode != MODE_CURRENT:
                return ERR_ACCESS
        self.registers[addr : addr + reg.width] = data
        return 0

    # ------------------------------------------------------------ emulation

    def force_state(self, theta: float, omega: float = 0.0) -> None:
        """Teleport the joint (emulator-side hook, not reachable via the bus)."""
        self.theta = theta
        self.omega = omega
        self._refresh_present()

    def inject_present_current(self, milliamps: float) -> None:
        """Overwrite the Present Current readback (simulated load sensing)."""
        self._reg_set(ADDR_PRESENT_CURRENT, _clamp_int(round(milliamps), 16))

    def command_torque(self) -> float:
        """Motor torque for the current registers, clamped to the rating."""
        if not self.torque_enabled:
            return 0.0
        p = self.profile
        mode = self.operating_mode
        if mode == MODE_POSITION:
            goal = self._reg_int(ADDR_GOAL_POSITION) * p.rad_per_tick
            tau = p.position_kp * (goal - self.theta) - p.position_kd * self.omega
        elif mode == MODE_CURRENT:
            tau = p.effective_kt * self._reg_int(ADDR_GOAL_CURRENT) / 1000.0
        elif mode == MODE_PWM:
            tau = p.rated_torque * self._reg_int(ADDR_GOAL_PWM) / PWM_FULL_SCALE
        else:  # velocity mode has no goal register in this table subset
            tau = 0.0
        return _clamp(tau, p.rated_torque)

    def step(self, dt: float) -> None:
        p = self.profile
        tau_motor = self.command_torque()
        self.last_applied_torque = tau_motor
        accel = (tau_motor + self.applied_external_torque) / p.rotor_inertia_eff
        omega_mid = self.omega + dt * accel
        # Coulomb friction as a velocity decrement that never crosses zero.
        drop = dt * p.effective_friction / p.rotor_inertia_eff
        if abs(omega_mid) <= drop:
            self.omega = 0.0
        else:
            self.omega = omega_mid - math.copysign(drop, omega_mid)
        self.theta += dt * self.omega
        self._refresh_present()


def _clamp(value: float, limit: float) -> float:
    return max(-limit, min(limit, value))


def _clamp_int(value: int, bits: int) -> int:
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return max(lo, min(hi, value))


class VirtualBus:
    """A chain of virtual servos sharing one half-duplex bus."""

    def __init__(self):
        self.servos: dict[int, VirtualServo] = {}

    def attach(self, servo_id: int, profile: ServoProfile, theta: float = math.pi) -> VirtualServo:
        if not 0 <= servo_id <= 253:
            raise BusError(f"servo id {servo_id} outside 0..253")
        if servo_id in self.servos:
            raise BusError(f"servo id {servo_id} already attached")
        servo = VirtualServo(servo_id, profile, theta=theta)
        self.servos[servo_id] = servo
        return servo

    def servo(self, servo_id: int) -> VirtualServo:
        return self.servos[servo_id]

    def _ordered(self) -> list[VirtualServo]:
        return [self.servos[i] for i in sorted(self.servos)]

    def step(self, dt: float) -> None:
        if not 0.0 < dt <= 0.01:
            raise BusError(f"step dt {dt} outside (0, 0.01] s")
        for servo in self._ordered():
            servo.step(dt)

    def handle_packet(self, pkt: InstructionPacket) -> list[StatusPacket]:
        instr = pkt.instruction
        if instr == Instruction.SYNC_WRITE:
            addr, _, entries = parse_sync_write(pkt.params)
            for servo_id, value in entries:
                servo = self.servos.get(servo_id)
                if servo is not None:
                    servo.write(addr, value)
            return []
        if instr == Instruction.SYNC_READ:
            addr, width, ids = parse_sync_read(pkt.params)
            out = []
            for servo_id in ids:
                servo = self.servos.get(servo_id)
                if servo is None:
                    continue  # a missing servo is bus silence
                err, data = servo.read(addr, width)
                out.append(StatusPacket(servo_id, error=err, params=data))
            return out

        if pkt.id == BROADCAST_ID:
            targets = self._ordered()
        else:
            servo = self.servos.get(pkt.id)
            if servo is None:
                return []
            targets = [servo]

        out = []
        for servo in targets:
            if instr == Instruction.PING:
                model = _MODEL_NUMBERS.get(servo.profile.model_name, 0)
                params = le_bytes(model, 2) + bytes((_FIRMWARE_VERSION,))
                out.append(StatusPacket(servo.id, error=0, params=params))
            elif instr == Instruction.READ:
                if len(pkt.params) != 4:
                    out.append(StatusPacket(servo.id, error=ERR_DATA_RANGE))
                    continue
                addr, length = le_uint(pkt.params[:2]), le_uint(pkt.params[2:4])
                err, data = servo.read(addr, length)
                out.append(StatusPacket(servo.id, error=err, params=data))
            elif instr == Instruction.WRITE:
                if len(pkt.params) < 2:
                    err = ERR_DATA_RANGE
                else:
                    err = servo.write(le_uint(pkt.params[:2]), pkt.params[2:])
                if pkt.id != BROADCAST_ID:
                    out.append(StatusPacket(servo.id, error=err))
            else:
                out.append(StatusPacket(servo.id, error=ERR_ACCESS))
        return out


# --------------------------------------------------------------- transports


class MemTransport:
    """One end of an in-memory duplex byte pipe.

    Writing delivers to the peer immediately: if the peer registered an
    rx hook (the bus endpoint does) it runs synchronously, otherwise the
    bytes sit in the peer's inbox until read. Every write is also
    recorded on the shared wire log for test captures.
    """

    def __init__(self, label: str):
        self.label = label
        self.peer: "MemTransport | None" = None
        self.inbox = bytearray()
        self.rx_hook = None
        self.wire_log: list[tuple[str, bytes]] = []
        self.closed = False

    @staticmethod
    def pair(a_label: str = "host", b_label: str = "device") -> tuple["MemTransport", "MemTransport"]:
        a, b = MemTransport(a_label), MemTransport(b_label)
        a.peer, b.peer = b, a
        a.wire_log = b.wire_log
        return a, b

    def write(self, data: bytes) -> None:
        if self.closed or self.peer is None or self.peer.closed:
            raise BusError("transport closed")
        data = bytes(data)
        self.wire_log.append((self.label, data))
        if self.peer.rx_hook is not None:
            self.peer.rx_hook(data)
        else:
            self.peer.inbox.extend(data)

    def read_available(self) -> bytes:
        data = bytes(self.inbox)
        self.inbox.clear()
        return data

    def close(self) -> None:
        self.closed = True


class SerialTransport:
    """OS serial device wrapper (requires pyserial)."""

    def __init__(self, path: str, baud: int = 1_000_000, timeout: float = 0.0):
        try:
            import serial
        except ImportError as e:  # pragma: no cover - hardware path
            raise BusError("pyserial is required for serial transports") from e
        self._port = serial.Serial(path, baudrate=baud, timeout=timeout)
        self.label = path

    def write(self, data: bytes) -> None:  # pragma: no cover - hardware path
        self._port.write(data)

    def read_available(self) -> bytes:  # pragma: no cover - hardware path
        n = self._port.in_waiting
        return self._port.read(n) if n else b""

    def close(self) -> None:  # pragma: no cover - hardware path
        self._port.close()


class BusEndpoint:
    """Serves a VirtualBus over a transport: decode, handle, respond.

    Responses are written one whole frame per transport write, so status
    packets never interleave. `byte_time` models the half-duplex line
    rate; with the in-memory pipe it is charged as an accumulated busy
    time (and an optional real sleep for wall-clock rigs).
    """

    def __init__(self, bus: VirtualBus, transport, baud: int = 1_000_000,
                 wall_clock_latency: bool = False):
        self.bus = bus
        self.transport = transport
        self.decoder = StreamDecoder()
        self.byte_time = 10.0 / baud  # 8N1 framing: 10 line bits per byte
        self.wall_clock_latency = wall_clock_latency
        self.busy_s = 0.0

    def on_bytes(self, data: bytes) -> None:
        self.busy_s += len(data) * self.byte_time
        for pkt in self.decoder.feed(data):
            if not isinstance(pkt, InstructionPacket):
                continue  # status frames on the line are not for the bus
            for status in self.bus.handle_packet(pkt):
                frame = encode_status(status)
                self.busy_s += len(frame) * self.byte_time
                if self.wall_clock_latency:
                    time.sleep(len(frame) * self.byte_time)
                self.transport.write(frame)

    def poll(self) -> None:
        """Pull-style pump for transports without an rx hook."""
        data = self.transport.read_available()
        if data:
            self.on_bytes(data)


def serve_transport(bus: VirtualBus, transport, baud: int = 1_000_000,
                    wall_clock_latency: bool = False) -> BusEndpoint:
    """Attach a bus to a transport; in-memory pipes are served inline."""
    endpoint = BusEndpoint(bus, transport, baud=baud, wall_clock_latency=wall_clock_latency)
    if isinstance(transport, MemTransport):
        transport.rx_hook = endpoint.on_bytes
    return endpoint


# Named in-memory buses, addressable from the SDK as "mem:<name>".
_MEM_BUSES: dict[str, MemTransport] = {}


def serve_mem(bus: VirtualBus, name: str, baud: int = 1_000_000) -> BusEndpoint:
    """Register a bus under mem:<name> and return its endpoint."""
    if name in _MEM_BUSES:
        raise BusError(f"mem bus '{name}' already registered")
    host, device = MemTransport.pair("host", f"mem:{name}")
    endpoint = serve_transport(bus, device, baud=baud)
    _MEM_BUSES[name] = host
    return endpoint


def release_mem(name: str) -> None:
    _MEM_BUSES.pop(name, None)


def open_transport(spec: str):
    """Open a transport from a selection string: 'mem:<name>' or a device path."""
    if spec.startswith("mem:"):
        name = spec[4:]
        host = _MEM_BUSES.get(name)
        if host is None:
            raise BusError(f"no registered mem bus named '{name}'")
        return host
    return SerialTransport(spec)


class BusClock:
    """Deterministic time source: advances buses in fixed substeps.

    Used as the SDK idle hook so that blocking waits (home, timeouts)
    move simulated time instead of sleeping.
    """

    def __init__(self, buses, substep: float = 1e-3):
        self.buses = list(buses)
        self.substep = substep
        self.t = 0.0

    def advance(self, dt: float) -> None:
        steps = max(1, round(dt / self.substep))
        for _ in range(steps):
            for bus in self.buses:
                bus.step(self.substep)
            self.t += self.substep
