"""High-level device handles for the hand and glove.

Mirrors the feel of the vendor-style control library: degrees at the API
boundary, one handle per serial port, `motors[i]` proxies for per-joint
access, and per-finger forward kinematics in the palm (base_link) frame.

All bus traffic goes through sync operations where possible so a whole
hand is one frame per command. Waiting (settling, timeouts) goes through
the handle's `idle` hook: wall-clock sleep by default, or a BusClock
bound to virtual buses so simulated rigs wait in simulated time.
"""

from __future__ import annotations

import time

import numpy as np

from .errors import DeviceError
from .kinematics import HandModel, builtin_model, load_model_file
from .protocol import (
    BROADCAST_ID,
    Instruction,
    InstructionPacket,
    StatusPacket,
    StreamDecoder,
    build_sync_read,
    build_sync_write,
    encode,
    le_bytes,
    le_int,
    le_uint,
)
from .virtual_bus import (
    ADDR_GOAL_CURRENT,
    ADDR_GOAL_POSITION,
    ADDR_GOAL_PWM,
    ADDR_OPERATING_MODE,
    ADDR_PRESENT_CURRENT,
    ADDR_PRESENT_POSITION,
    ADDR_PRESENT_VELOCITY,
    ADDR_TORQUE_ENABLE,
    MODE_CURRENT,
    MODE_POSITION,
    MODE_VELOCITY,
    VELOCITY_LSB,
    open_transport,
)

TICKS_PER_REV = 4096
DEG_PER_TICK = 360.0 / TICKS_PER_REV

MODES = {"current": MODE_CURRENT, "velocity": MODE_VELOCITY, "position": MODE_POSITION}

_CACHE_MAX_AGE_S = 0.05


def deg_to_ticks(deg: float) -> int:
    return round(deg / DEG_PER_TICK)


def ticks_to_deg(ticks: int) -> float:
    return ticks * DEG_PER_TICK


class MotorProxy:
    """Single-joint view used by `device.motors[i]`."""

    def __init__(self, device: "Device", index: int):
        self._device = device
        self.index = index

    def setj(self, degrees: float) -> None:
        self._device.setj(self.index, degrees)

    def getj(self) -> float:
        return float(self._device.getj()[self.index])

    def __repr__(self):
        joint = self._device.model.joints[self.index]
        return f"<motor {self.index} joint={joint.name!r} id={joint.motor_id}>"


class Device:
    """One hand or glove on one bus."""

    def __init__(self, port: str, model: HandModel | str, transact_timeout: float = 0.2):
        self.model = model if isinstance(model, HandModel) else load_model_file(model)
        self.port = port
        self.transact_timeout = transact_timeout
        self.transport = None
        self.connected = False
        self.idle = time.sleep  # overridable wait hook (dt seconds)
        self._decoder = StreamDecoder()
        self._torque_on = np.zeros(self.model.n_joints, dtype=bool)
        self._modes = np.full(self.model.n_joints, MODE_POSITION)
        self._cache_deg: np.ndarray | None = None
        self._cache_at = -np.inf
        self.motors = [MotorProxy(self, i) for i in range(self.model.n_joints)]
        self._ids = list(self.model.motor_ids)

    # ------------------------------------------------------------ plumbing

    def _require_connected(self) -> None:
        if not self.connected:
            raise DeviceError(f"device on {self.port!r} is not connected")

    def _transact(self, pkt: InstructionPacket, expect_ids: list[int],
                  timeout: float | None = None) -> dict[int, StatusPacket]:
        """Send one frame and collect one status per expected id."""
        self.transport.write(encode(pkt))
        want = list(expect_ids)
        got: dict[int, StatusPacket] = {}
        waited, timeout = 0.0, self.transact_timeout if timeout is None else timeout
        while len(got) < len(want):
            data = self.transport.read_available()
            if data:
                for status in self._decoder.feed(data):
                    if isinstance(status, StatusPacket) and status.id in want:
                        got.setdefault(status.id, status)
                continue
            if waited >= timeout:
                break
            self.idle(0.001)
            waited += 0.001
        return got

    def _sync_write(self, addr: int, width: int, values: dict[int, int]) -> None:
        entries = [(dev_id, le_bytes(value, width)) for dev_id, value in values.items()]
        self.transport.write(encode(build_sync_write(addr, width, entries)))

    def _sync_read(self, addr: int, width: int, ids: list[int],
                   timeout: float | None = None) -> dict[int, StatusPacket]:
        return self._transact(build_sync_read(addr, width, ids), ids, timeout=timeout)

    def _joint_indices(self, ids=None) -> list[int]:
        if ids is None:
            return list(range(self.model.n_joints))
        return list(ids)

    # ------------------------------------------------------------ lifecycle

    def connect(self, goal_pwm: int | None = None, init: bool = True) -> None:
        """Open the port, verify every bound servo answers, and (unless
        init=False) set the PWM limit and torque everything on."""
        if self.transport is None:
            self.transport = open_transport(self.port)
        got = self._transact(InstructionPacket(BROADCAST_ID, Instruction.PING), self._ids)
        missing = sorted(set(self._ids) - set(got))
        if missing:
            raise DeviceError(
                f"no response from servo id(s) {missing} on {self.port!r}"
            )
        self.connected = True
        if init:
            if goal_pwm is not None:
                if not 0 <= goal_pwm <= 885:
                    raise DeviceError(f"goal_pwm {goal_pwm} outside 0..885")
                self._sync_write(ADDR_GOAL_PWM, 2, {i: goal_pwm for i in self._ids})
            self._sync_write(ADDR_TORQUE_ENABLE, 1, {i: 1 for i in self._ids})
            self._torque_on[:] = True

    def disconnect(self) -> None:
        self.connected = False

    # ------------------------------------------------------------ motion

    def torque(self, on: bool, joints: list[int] | None = None) -> None:
        """Torque-enable or free a subset of joints (one sync frame)."""
        self._require_connected()
        idx = self._joint_indices(joints)
        self._sync_write(
            ADDR_TORQUE_ENABLE, 1, {self._ids[i]: int(on) for i in idx}
        )
        self._torque_on[idx] = on

    def _goal_ticks(self, index: int, degrees: float) -> int:
        joint = self.model.joints[index]
        lo, hi = np.degrees(joint.limit_lo), np.degrees(joint.limit_hi)
        if not lo - 1e-9 <= degrees <= hi + 1e-9:
            raise DeviceError(
                f"joint {joint.name!r}: {degrees:.3f} deg outside [{lo:.3f}, {hi:.3f}]"
            )
        return joint.zero_tick + deg_to_ticks(degrees)

    def setj(self, index: int, degrees: float) -> None:
        """Command one joint in degrees (validated against its limits)."""
        self._require_connected()
        ticks = self._goal_ticks(index, degrees)
        joint = self.model.joints[index]
        got = self._transact(
            InstructionPacket(
                joint.motor_id,
                Instruction.WRITE,
                le_bytes(ADDR_GOAL_POSITION, 2) + le_bytes(ticks, 4),
            ),
            [joint.motor_id],
        )
        status = got.get(joint.motor_id)
        if status is None:
            raise DeviceError(f"no write ack from servo id {joint.motor_id}")
        if status.error:
            raise DeviceError(
                f"servo id {joint.motor_id} rejected goal write (error 0x{status.error:02x})"
            )

    def setj_all(self, degrees) -> None:
        """Command every joint in one sync frame."""
        self._require_connected()
        degrees = np.asarray(degrees, dtype=float)
        if degrees.shape != (self.model.n_joints,):
            raise DeviceError(
                f"expected {self.model.n_joints} joint values, got {degrees.shape}"
            )
        goals = {
            self._ids[i]: self._goal_ticks(i, float(degrees[i]))
            for i in range(self.model.n_joints)
        }
        self._sync_write(ADDR_GOAL_POSITION, 4, goals)

    def getj(self, timeout: float | None = None) -> np.ndarray:
        """Read all joints (degrees) in one sync read."""
        self._require_connected()
        got = self._sync_read(ADDR_PRESENT_POSITION, 4, self._ids, timeout=timeout)
        missing = sorted(set(self._ids) - set(got))
        partial = np.full(self.model.n_joints, np.nan)
        for i, joint in enumerate(self.model.joints):
            status = got.get(joint.motor_id)
            if status is None or status.error:
                continue
            raw = le_uint(status.params)
            delta = (raw - joint.zero_tick + TICKS_PER_REV // 2) % TICKS_PER_REV \
                - TICKS_PER_REV // 2
            partial[i] = ticks_to_deg(delta)
        if missing:
            err = DeviceError(f"joint read timed out for servo id(s) {missing}")
            err.partial = partial
            raise err
        self._cache_deg = partial
        self._cache_at = time.monotonic()
        return partial.copy()

    def get_velocities(self) -> np.ndarray:
        """Joint velocities in rad/s from the present-velocity registers."""
        self._require_connected()
        got = self._sync_read(ADDR_PRESENT_VELOCITY, 4, self._ids)
        out = np.zeros(self.model.n_joints)
        for i, joint in enumerate(self.model.joints):
            status = got.get(joint.motor_id)
            if status is not None and not status.error:
                out[i] = le_int(status.params) * VELOCITY_LSB
        return out

    def get_currents(self) -> np.ndarray:
        """Present currents in mA."""
        self._require_connected()
        got = self._sync_read(ADDR_PRESENT_CURRENT, 2, self._ids)
        out = np.zeros(self.model.n_joints)
        for i, joint in enumerate(self.model.joints):
            status = got.get(joint.motor_id)
            if status is not None and not status.error:
                out[i] = le_int(status.params)
        return out

    def home(self, timeout: float = 2.0, tolerance_deg: float = 1.0) -> None:
        """Drive every joint to its declared home pose and wait for arrival."""
        self._require_connected()
        if not self._torque_on.all():
            raise DeviceError("home requires torque enabled on every joint")
        home = np.array([j.home_deg for j in self.model.joints])
        self.setj_all(home)
        waited = 0.0
        while True:
            residual = np.abs(self.getj() - home)
            if np.all(residual <= tolerance_deg):
                return
            if waited >= timeout:
                detail = ", ".join(
                    f"{j.name}={r:.2f}deg"
                    for j, r in zip(self.model.joints, residual)
                    if r > tolerance_deg
                )
                raise DeviceError(f"home timed out after {timeout} s ({detail})")
            self.idle(0.01)
            waited += 0.01

    # ------------------------------------------------------------ sensing

    def _joints_deg_cached(self) -> np.ndarray:
        if (
            self._cache_deg is None
            or time.monotonic() - self._cache_at > _CACHE_MAX_AGE_S
        ):
            return self.getj()
        return self._cache_deg

    def fk_finger(self, finger_number: int) -> np.ndarray:
        """Fingertip xyz (meters) in the base_link frame; fingers count
        from 1 in declaration order (1 = thumb)."""
        self._require_connected()
        if not 1 <= finger_number <= len(self.model.fingers):
            raise DeviceError(f"finger number {finger_number} out of range")
        finger = self.model.fingers[finger_number - 1]
        q = np.radians(self._joints_deg_cached())
        return self.model.fingertip(finger.name, q[self.model.slices[finger.name]])

    def fk_finger1(self) -> np.ndarray:
        return self.fk_finger(1)

    def fk_finger2(self) -> np.ndarray:
        return self.fk_finger(2)

    def fk_finger3(self) -> np.ndarray:
        return self.fk_finger(3)

    # ------------------------------------------------------------ modes

    def set_mode(self, index: int, mode: str) -> None:
        """Switch a joint's operating mode; torque must be off first."""
        self._require_connected()
        if mode not in MODES:
            raise DeviceError(f"unknown mode {mode!r}; pick one of {sorted(MODES)}")
        if self._torque_on[index]:
            raise DeviceError("disable torque before changing the operating mode")
        joint = self.model.joints[index]
        got = self._transact(
            InstructionPacket(
                joint.motor_id,
                Instruction.WRITE,
                le_bytes(ADDR_OPERATING_MODE, 2) + bytes([MODES[mode]]),
            ),
            [joint.motor_id],
        )
        status = got.get(joint.motor_id)
        if status is None or status.error:
            code = "timeout" if status is None else f"error 0x{status.error:02x}"
            raise DeviceError(f"mode change rejected by servo id {joint.motor_id} ({code})")
        self._modes[index] = MODES[mode]

    def set_modes(self, indices: list[int], mode: str) -> None:
        """Mode switch for several joints in one sync frame (torque off)."""
        self._require_connected()
        if mode not in MODES:
            raise DeviceError(f"unknown mode {mode!r}")
        if self._torque_on[indices].any():
            raise DeviceError("disable torque before changing operating modes")
        self._sync_write(
            ADDR_OPERATING_MODE, 1, {self._ids[i]: MODES[mode] for i in indices}
        )
        self._modes[indices] = MODES[mode]

    def set_goal_current(self, index: int, milliamps: float) -> None:
        """Command one joint's goal current (mA); only legal in current mode."""
        self._require_connected()
        joint = self.model.joints[index]
        got = self._transact(
            InstructionPacket(
                joint.motor_id,
                Instruction.WRITE,
                le_bytes(ADDR_GOAL_CURRENT, 2) + le_bytes(round(milliamps), 2),
            ),
            [joint.motor_id],
        )
        status = got.get(joint.motor_id)
        if status is None:
            raise DeviceError(f"no ack from servo id {joint.motor_id}")
        if status.error:
            raise DeviceError(
                f"goal current rejected by servo id {joint.motor_id} "
                f"(error 0x{status.error:02x}; is the joint in current mode?)"
            )

    def set_goal_currents(self, values: dict[int, float]) -> None:
        """Goal currents for several joints in one sync frame."""
        self._require_connected()
        self._sync_write(
            ADDR_GOAL_CURRENT,
            2,
            {self._ids[i]: round(ma) for i, ma in values.items()},
        )


class Hand(Device):
    """GX11-style hand handle; defaults to the packaged gx11 model."""

    def __init__(self, port: str, model: HandModel | str | None = None, **kw):
        super().__init__(port, model if model is not None else builtin_model("gx11"), **kw)

    def connect(self, goal_pwm: int = 600, init: bool = True) -> None:
        super().connect(goal_pwm=goal_pwm, init=init)


class Glove(Device):
    """EX12-style glove handle; defaults to the packaged ex12 model."""

    def __init__(self, port: str, model: HandModel | str | None = None, **kw):
        super().__init__(port, model if model is not None else builtin_model("ex12"), **kw)

    def connect(self, goal_pwm: int | None = None, init: bool = True) -> None:
        super().connect(goal_pwm=goal_pwm, init=init)
