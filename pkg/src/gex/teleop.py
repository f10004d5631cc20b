"""Force-feedback teleoperation loop over a minimal contact scene.

Per cycle: read the glove, retarget onto the hand, command the hand,
step the servo bus, test fingertips against the scene, turn contact
forces into simulated motor currents, and switch each glove finger
between free motion (torque off, joints only recorded) and impedance
feedback (current mode, spring-damper about the pose latched at contact
onset).

The operator's hand is modeled as infinitely stiff: glove joints are
imposed kinematically from the commanded targets, so feedback torques
are reported and written to the glove servos but do not deflect them.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

import numpy as np
import yaml

from .errors import ModelError, SolverError
from .kinematics import HandModel
from .retarget import RetargetConfig, RetargetState, glove_keyvectors, solve_frame
from .rig import VirtualRig, build_rig
from .virtual_bus import TWO_PI

TIP_SPHERE_RADIUS = 0.008  # fingertip contact sphere, meters


class FingerMode(str, Enum):
    FREE = "free"
    ENGAGED = "engaged"


@dataclass(frozen=True)
class ContactDetector:
    """Debounced hysteresis thresholds on simulated joint currents (mA)."""

    engage_ma: float = 60.0
    release_ma: float = 30.0
    debounce: int = 3

    def __post_init__(self):
        if not self.release_ma < self.engage_ma:
            raise ModelError("release threshold must sit below engage threshold")
        if self.debounce < 1:
            raise ModelError("debounce must be >= 1 cycle")


@dataclass(frozen=True)
class ImpedanceParams:
    """Joint-space spring-damper used for force feedback."""

    kp: float = 2.0  # N.m/rad
    kd: float = 0.02  # N.m.s/rad
    torque_cap: float = 0.2  # N.m

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise ModelError("impedance gains must be >= 0")
        if self.torque_cap <= 0:
            raise ModelError("torque_cap must be positive")


@dataclass(frozen=True)
class SceneObject:
    """A fixed vertical cylinder (the paper cup stand-in)."""

    center: np.ndarray
    radius: float
    height: float
    stiffness: float
    shape: str = "cylinder"

    def __post_init__(self):
        if self.shape != "cylinder":
            raise ModelError(f"unsupported scene shape {self.shape!r}")
        if min(self.radius, self.height, self.stiffness) <= 0:
            raise ModelError("radius, height and stiffness must be positive")


def load_scene(text: str) -> SceneObject:
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ModelError("scene document must be a mapping")
    try:
        return SceneObject(
            center=np.array([float(x) for x in doc["center"]], dtype=float),
            radius=float(doc["radius"]),
            height=float(doc["height"]),
            stiffness=float(doc["stiffness"]),
            shape=str(doc.get("shape", "cylinder")),
        )
    except KeyError as e:
        raise ModelError(f"scene document missing field {e}") from e


def builtin_scene(name: str) -> SceneObject:
    ref = resources.files("gex.data") / f"{name}.yaml"
    if not ref.is_file():
        raise ModelError(f"no builtin scene named '{name}'")
    return load_scene(ref.read_text(encoding="utf-8"))


def _cylinder_distance_normal(scene: SceneObject, point: np.ndarray):
    """Signed distance from a point to the solid cylinder and the outward
    surface normal at the closest surface point."""
    p = point - scene.center
    r_xy = math.hypot(p[0], p[1])
    radial = np.array([p[0] / r_xy, p[1] / r_xy, 0.0]) if r_xy > 1e-12 \
        else np.array([1.0, 0.0, 0.0])
    d_r = r_xy - scene.radius
    d_z = abs(p[2]) - scene.height / 2.0
    cap = np.array([0.0, 0.0, math.copysign(1.0, p[2]) if p[2] != 0 else 1.0])
    if d_r > 0.0 or d_z > 0.0:
        out = radial * max(d_r, 0.0) + cap * max(d_z, 0.0)
        dist = float(np.linalg.norm(out))
        if dist > 1e-12:
            return dist, out / dist
        return 0.0, radial if d_z < d_r else cap
    # Inside: closest face wins.
    if d_r >= d_z:
        return d_r, radial
    return d_z, cap


def contact_force(scene: SceneObject | None, tip: np.ndarray):
    """(force vector, contact flag, penetration) of a fingertip sphere."""
    if scene is None:
        return np.zeros(3), False, 0.0
    dist, normal = _cylinder_distance_normal(scene, tip)
    depth = TIP_SPHERE_RADIUS - dist
    if depth > 0.0:
        return scene.stiffness * depth * normal, True, depth
    return np.zeros(3), False, 0.0


def contact_forces(scene: SceneObject | None, tips: dict[str, np.ndarray]):
    """Per-finger (force, contact) against the scene."""
    return {name: contact_force(scene, tip)[:2] for name, tip in tips.items()}


def joint_currents_ma(model: HandModel, finger_name: str, q_finger: np.ndarray,
                      force: np.ndarray, kt_eff: float) -> np.ndarray:
    """Joint currents (mA) that would produce the contact reaction: the
    torques J^T F mapped through the servo torque constant."""
    torque = model.jacobian(finger_name, q_finger).T @ np.asarray(force, dtype=float)
    return torque / kt_eff * 1000.0


def impedance_torque(params: ImpedanceParams, q_contact: np.ndarray,
                     q: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Spring-damper about the latched contact pose, clamped to the cap."""
    tau = params.kp * (np.asarray(q_contact) - np.asarray(q)) - params.kd * np.asarray(omega)
    return np.clip(tau, -params.torque_cap, params.torque_cap)


class FingerFsm:
    """Free/Engaged state with debounce and hysteresis.

    Engage after `debounce` consecutive cycles at or above the engage
    threshold; release after `debounce` consecutive cycles at or below
    the release threshold; anything in between resets both counts. The
    glove finger pose at the cycle of engagement is latched as the
    impedance anchor.
    """

    def __init__(self, detector: ContactDetector):
        self.detector = detector
        self.mode = FingerMode.FREE
        self.q_contact: np.ndarray | None = None
        self._hi = 0
        self._lo = 0

    def update(self, currents_ma: np.ndarray, q_glove_finger: np.ndarray) -> FingerMode:
        peak = float(np.max(np.abs(currents_ma))) if len(currents_ma) else 0.0
        det = self.detector
        if self.mode is FingerMode.FREE:
            self._hi = self._hi + 1 if peak >= det.engage_ma else 0
            if self._hi >= det.debounce:
                self.mode = FingerMode.ENGAGED
                self.q_contact = np.array(q_glove_finger, dtype=float)
                self._hi = self._lo = 0
        else:
            self._lo = self._lo + 1 if peak <= det.release_ma else 0
            if self._lo >= det.debounce:
                self.mode = FingerMode.FREE
                self.q_contact = None
                self._hi = self._lo = 0
        return self.mode


@dataclass(frozen=True)
class TickReport:
    """Snapshot of one teleop cycle."""

    timestamp: float
    q_glove: np.ndarray  # degrees, commanded == measured (rigid operator)
    q_hand: np.ndarray  # degrees, retargeting output sent to the hand
    q_hand_meas: np.ndarray  # degrees, measured after bus stepping
    tips_glove: dict[str, np.ndarray]
    tips_hand: dict[str, np.ndarray]
    modes: dict[str, FingerMode]
    contact_flags: dict[str, bool]
    feedback_torques: np.ndarray  # N.m per glove joint

    def to_dict(self) -> dict:
        return {
            "t": self.timestamp,
            "q_glove": self.q_glove.tolist(),
            "q_hand": self.q_hand.tolist(),
            "q_hand_meas": self.q_hand_meas.tolist(),
            "tips_glove": {k: v.tolist() for k, v in self.tips_glove.items()},
            "tips_hand": {k: v.tolist() for k, v in self.tips_hand.items()},
            "modes": {k: v.value for k, v in self.modes.items()},
            "contact_flags": dict(self.contact_flags),
            "feedback_torques": self.feedback_torques.tolist(),
        }


class TeleopSession:
    """Owns one virtual rig and runs the per-cycle control flow."""

    def __init__(self, rig: VirtualRig, scene: SceneObject | None = None,
                 retarget_config: RetargetConfig | None = None,
                 detector: ContactDetector | None = None,
                 impedance: ImpedanceParams | None = None,
                 rate_hz: float = 100.0, substeps: int = 10,
                 snapshot_capacity: int = 8):
        self.rig = rig
        self.scene = scene
        self.retarget_config = (retarget_config or RetargetConfig()).validated_for(
            rig.hand.model
        )
        self.retarget_config.validated_for(rig.glove.model)
        self.detector = detector or ContactDetector()
        self.impedance = impedance or ImpedanceParams()
        glove_rated = next(iter(rig.glove_bus.servos.values())).profile.rated_torque
        if self.impedance.torque_cap > glove_rated:
            raise ModelError(
                f"torque_cap {self.impedance.torque_cap} exceeds the glove "
                f"servo rating {glove_rated}"
            )
        if rate_hz <= 0 or substeps < 0:
            raise ModelError("rate_hz must be positive and substeps >= 0")
        self.dt = 1.0 / rate_hz
        self.substeps = substeps
        self.retarget_state = RetargetState()
        self.fsms = {f.name: FingerFsm(self.detector) for f in rig.hand.model.fingers}
        self.tick_index = 0
        self.snapshots: deque[TickReport] = deque(maxlen=snapshot_capacity)
        self._targets_deg = np.array([j.home_deg for j in rig.glove.model.joints])
        self._prev_theta: dict[int, float] = {}

    # ------------------------------------------------------------ lifecycle

    @classmethod
    def bringup(cls, rig: VirtualRig | None = None, **kw) -> "TeleopSession":
        """Connect, torque on and home the hand; glove stays passive."""
        rig = rig or build_rig()
        rig.hand.connect(goal_pwm=600)
        rig.hand.home()
        rig.glove.connect(init=False)
        return cls(rig, **kw)

    def set_glove_target(self, degrees) -> None:
        degrees = np.asarray(degrees, dtype=float)
        model = self.rig.glove.model
        if degrees.shape != (model.n_joints,):
            raise ModelError(
                f"glove target needs {model.n_joints} values, got {degrees.shape}"
            )
        lo, hi = np.degrees(model.limits_lo), np.degrees(model.limits_hi)
        self._targets_deg = np.clip(degrees, lo, hi)

    # ------------------------------------------------------------ internals

    def _impose_glove_pose(self) -> None:
        """Drive the virtual glove kinematically to the commanded target."""
        model = self.rig.glove.model
        for i, joint in enumerate(model.joints):
            servo = self.rig.glove_bus.servo(joint.motor_id)
            theta = joint.zero_tick * servo.profile.rad_per_tick \
                + math.radians(self._targets_deg[i])
            prev = self._prev_theta.get(joint.motor_id, theta)
            servo.force_state(theta, omega=(theta - prev) / self.dt)
            self._prev_theta[joint.motor_id] = theta

    def _glove_transition_writes(self, engaged_now: dict[str, bool],
                                 engaged_before: dict[str, bool],
                                 torques: dict[str, np.ndarray]) -> None:
        glove = self.rig.glove
        model = glove.model
        kt = next(iter(self.rig.glove_bus.servos.values())).profile.effective_kt

        newly_engaged = [f for f, on in engaged_now.items() if on and not engaged_before[f]]
        newly_freed = [f for f, on in engaged_before.items() if on and not engaged_now[f]]

        for fname in newly_engaged:
            idx = list(range(model.slices[fname].start, model.slices[fname].stop))
            glove.set_modes(idx, "current")

        # Goal currents for every engaged finger, one frame; written before
        # newly engaged joints are torqued on so no stale goal fires.
        goal_ma: dict[int, float] = {}
        for fname, on in engaged_now.items():
            if not on:
                continue
            sl = model.slices[fname]
            for j, tau in zip(range(sl.start, sl.stop), torques[fname]):
                goal_ma[j] = tau / kt * 1000.0
        if goal_ma:
            glove.set_goal_currents(goal_ma)

        for fname in newly_engaged:
            idx = list(range(model.slices[fname].start, model.slices[fname].stop))
            glove.torque(True, idx)
        for fname in newly_freed:
            idx = list(range(model.slices[fname].start, model.slices[fname].stop))
            glove.torque(False, idx)

    # ------------------------------------------------------------ the loop

    def tick(self) -> TickReport:
        rig = self.rig
        hand_model, glove_model = rig.hand.model, rig.glove.model

        self._impose_glove_pose()

        q_glove_deg = rig.glove.getj()
        omega_glove = rig.glove.get_velocities()
        q_glove = np.radians(q_glove_deg)

        u = glove_keyvectors(glove_model, q_glove, self.retarget_config.specs)
        try:
            q_hand = solve_frame(hand_model, u, self.retarget_state, self.retarget_config)
        except SolverError as e:
            raise SolverError(f"tick {self.tick_index}: {e}") from e
        rig.hand.setj_all(np.degrees(q_hand))

        if self.substeps:
            sub_dt = self.dt / self.substeps
            for _ in range(self.substeps):
                rig.hand_bus.step(sub_dt)

        q_hand_meas = np.radians(rig.hand.getj())
        tips_hand = {
            f.name: hand_model.fingertip(f.name, q_hand_meas[hand_model.slices[f.name]])
            for f in hand_model.fingers
        }
        tips_glove = {
            f.name: glove_model.fingertip(f.name, q_glove[glove_model.slices[f.name]])
            for f in glove_model.fingers
        }

        hand_kt = next(iter(rig.hand_bus.servos.values())).profile.effective_kt
        contact_flags: dict[str, bool] = {}
        for f in hand_model.fingers:
            force, contact, _ = contact_force(self.scene, tips_hand[f.name])
            contact_flags[f.name] = contact
            sl = hand_model.slices[f.name]
            ma = joint_currents_ma(hand_model, f.name, q_hand_meas[sl], force, hand_kt)
            for joint, value in zip(f.joints, ma):
                rig.hand_bus.servo(joint.motor_id).inject_present_current(value)

        currents = rig.hand.get_currents()

        engaged_before = {
            name: fsm.mode is FingerMode.ENGAGED for name, fsm in self.fsms.items()
        }
        modes: dict[str, FingerMode] = {}
        torques: dict[str, np.ndarray] = {}
        feedback = np.zeros(glove_model.n_joints)
        for f in hand_model.fingers:
            fsm = self.fsms[f.name]
            g_sl = glove_model.slices[f.name]
            mode = fsm.update(currents[hand_model.slices[f.name]], q_glove[g_sl])
            modes[f.name] = mode
            if mode is FingerMode.ENGAGED:
                tau = impedance_torque(
                    self.impedance, fsm.q_contact, q_glove[g_sl], omega_glove[g_sl]
                )
                torques[f.name] = tau
                feedback[g_sl] = tau
        engaged_now = {name: m is FingerMode.ENGAGED for name, m in modes.items()}
        self._glove_transition_writes(engaged_now, engaged_before, torques)

        report = TickReport(
            timestamp=self.tick_index * self.dt,
            q_glove=q_glove_deg,
            q_hand=np.degrees(q_hand),
            q_hand_meas=np.degrees(q_hand_meas),
            tips_glove=tips_glove,
            tips_hand=tips_hand,
            modes=modes,
            contact_flags=contact_flags,
            feedback_torques=feedback,
        )
        self.tick_index += 1
        self.snapshots.append(report)
        return report
