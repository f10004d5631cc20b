"""Serial-chain hand models: document parsing, forward kinematics, Jacobians.

A hand is a set of independent fingers, each a serial chain of revolute
joints hanging off a common palm frame. Angles are radians everywhere in
this module; model documents carry joint limits in degrees and are
converted on load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import numpy as np
import yaml

from .errors import DimensionError, ModelError

_UNIT_TOL = 1e-9

# Joint counts required of the two shipped device layouts, keyed by model
# name: {finger: joint count}.
_REQUIRED_LAYOUT = {
    "gx11": {"thumb": 3, "index": 4, "middle": 4},
    "ex12": {"thumb": 4, "index": 4, "middle": 4},
}


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation from fixed-axis roll/pitch/yaw (X, then Y, then Z)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def axis_rotation_batch(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rodrigues rotation for a vector of angles, shape (n, 3, 3)."""
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    k2 = k @ k
    s = np.sin(angles)[:, None, None]
    c = (1.0 - np.cos(angles))[:, None, None]
    return np.eye(3) + s * k + c * k2


@dataclass(frozen=True)
class Transform:
    """Rigid transform: orthonormal rotation plus translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    @staticmethod
    def identity() -> "Transform":
        return Transform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_rpy(translation, rpy) -> "Transform":
        return Transform(rpy_matrix(*rpy), np.asarray(translation, dtype=float))

    def compose(self, other: "Transform") -> "Transform":
        return Transform(
            self.rotation @ other.rotation,
            self.translation + self.rotation @ other.translation,
        )

    def apply(self, point: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def validate(self, what: str = "transform") -> None:
        r = self.rotation
        if r.shape != (3, 3) or self.translation.shape != (3,):
            raise ModelError(f"{what}: bad matrix/vector shape")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _UNIT_TOL:
            raise ModelError(f"{what}: rotation is not orthonormal")
        if np.linalg.det(r) < 0.0:
            raise ModelError(f"{what}: rotation is a reflection")


@dataclass(frozen=True)
class JointSpec:
    """One revolute joint: fixed origin in the parent frame, then rotation
    about `axis` by the joint angle. Limits are radians; `zero_tick` and
    `home_deg` bind the joint to its servo's absolute encoder."""

    name: str
    origin_translation: np.ndarray
    origin_rpy: np.ndarray
    axis: np.ndarray
    limit_lo: float
    limit_hi: float
    motor_id: int
    zero_tick: int = 2048
    home_deg: float = 0.0

    @cached_property
    def origin(self) -> Transform:
        return Transform.from_rpy(self.origin_translation, self.origin_rpy)


@dataclass(frozen=True)
class FingerChain:
    """Ordered joint chain with a fixed fingertip offset past the last joint."""

    name: str
    joints: tuple[JointSpec, ...]
    tip_offset: np.ndarray

    def __len__(self) -> int:
        return len(self.joints)

    def _check_q(self, q_finger: np.ndarray) -> np.ndarray:
        q = np.asarray(q_finger, dtype=float)
        if q.shape != (len(self.joints),):
            raise DimensionError(
                f"finger '{self.name}' expects {len(self.joints)} joint values, "
                f"got shape {q.shape}"
            )
        return q

    @cached_property
    def _flat(self):
        """Per-joint arrays for the allocation-light FK paths."""
        origin_r = np.stack([j.origin.rotation for j in self.joints])
        origin_t = np.stack([j.origin.translation for j in self.joints])
        axes = np.stack([j.axis for j in self.joints])
        k = np.zeros((len(self.joints), 3, 3))
        k[:, 0, 1], k[:, 0, 2] = -axes[:, 2], axes[:, 1]
        k[:, 1, 0], k[:, 1, 2] = axes[:, 2], -axes[:, 0]
        k[:, 2, 0], k[:, 2, 1] = -axes[:, 1], axes[:, 0]
        return origin_r, origin_t, axes, k, k @ k

    def frames(self, q_finger: np.ndarray, palm: Transform) -> list[Transform]:
        """World frame of every joint, after its own rotation is applied."""
        q = self._check_q(q_finger)
        out = []
        cur = palm
        for joint, angle in zip(self.joints, q):
            cur = cur.compose(joint.origin)
            cur = Transform(cur.rotation @ axis_rotation(joint.axis, angle), cur.translation)
            out.append(cur)
        return out

    def tip(self, q_finger: np.ndarray, palm: Transform) -> np.ndarray:
        q = self._check_q(q_finger)
        origin_r, origin_t, _, k, k2 = self._flat
        eye = np.eye(3)
        rot, pos = palm.rotation, palm.translation
        for j, angle in enumerate(q):
            pos = pos + rot @ origin_t[j]
            spin = eye + math.sin(angle) * k[j] + (1.0 - math.cos(angle)) * k2[j]
            rot = rot @ origin_r[j] @ spin
        return pos + rot @ self.tip_offset

    def tip_and_jacobian(self, q_finger: np.ndarray, palm: Transform):
        """Fingertip plus its positional Jacobian in one chain pass."""
        q = self._check_q(q_finger)
        origin_r, origin_t, axes, k, k2 = self._flat
        eye = np.eye(3)
        rot, pos = palm.rotation, palm.translation
        n = len(q)
        z_world = np.empty((n, 3))
        origins = np.empty((n, 3))
        for j, angle in enumerate(q):
            pos = pos + rot @ origin_t[j]
            spin = eye + math.sin(angle) * k[j] + (1.0 - math.cos(angle)) * k2[j]
            rot = rot @ origin_r[j] @ spin
            z_world[j] = rot @ axes[j]
            origins[j] = pos
        tip = pos + rot @ self.tip_offset
        return tip, np.cross(z_world, tip - origins).T

    def tip_batch(self, q_batch: np.ndarray, palm: Transform) -> np.ndarray:
        """Fingertip positions for q_batch of shape (n, k); returns (n, 3)."""
        q = np.asarray(q_batch, dtype=float)
        if q.ndim != 2 or q.shape[1] != len(self.joints):
            raise DimensionError(
                f"finger '{self.name}' expects (n, {len(self.joints)}), got {q.shape}"
            )
        n = q.shape[0]
        rot = np.broadcast_to(palm.rotation, (n, 3, 3)).copy()
        pos = np.broadcast_to(palm.translation, (n, 3)).copy()
        for j, joint in enumerate(self.joints):
            pos = pos + np.einsum("nij,j->ni", rot, joint.origin.translation)
            rot = np.einsum("nij,jk->nik", rot, joint.origin.rotation)
            rot = np.einsum("nij,njk->nik", rot, axis_rotation_batch(joint.axis, q[:, j]))
        return pos + np.einsum("nij,j->ni", rot, self.tip_offset)

    def jacobian(self, q_finger: np.ndarray, palm: Transform) -> np.ndarray:
        """Positional Jacobian of the fingertip, shape (3, k) in m/rad.

        Column i is z_i x (p_tip - p_i) with z_i the joint axis in world
        coordinates and p_i the joint origin.
        """
        return self.tip_and_jacobian(q_finger, palm)[1]


@dataclass(frozen=True)
class FKResult:
    """Forward-kinematics snapshot: fingertips and per-joint world frames."""

    tips: dict[str, np.ndarray]
    frames: dict[str, list[Transform]]


@dataclass(frozen=True)
class HandModel:
    """Validated kinematic model of one device (hand or glove)."""

    name: str
    palm: Transform
    fingers: tuple[FingerChain, ...]

    @cached_property
    def n_joints(self) -> int:
        return sum(len(f) for f in self.fingers)

    @cached_property
    def joints(self) -> tuple[JointSpec, ...]:
        return tuple(j for f in self.fingers for j in f.joints)

    @cached_property
    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for f in self.fingers:
            out[f.name] = slice(start, start + len(f))
            start += len(f)
        return out

    @cached_property
    def limits_lo(self) -> np.ndarray:
        return np.array([j.limit_lo for j in self.joints])

    @cached_property
    def limits_hi(self) -> np.ndarray:
        return np.array([j.limit_hi for j in self.joints])

    @cached_property
    def motor_ids(self) -> tuple[int, ...]:
        return tuple(j.motor_id for j in self.joints)

    def finger(self, name: str) -> FingerChain:
        for f in self.fingers:
            if f.name == name:
                return f
        raise ModelError(f"model '{self.name}' has no finger '{name}'")

    def check_q(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_joints,):
            raise DimensionError(
                f"model '{self.name}' expects {self.n_joints} joint values, "
                f"got shape {q.shape}"
            )
        return q

    def fk(self, q: np.ndarray) -> FKResult:
        q = self.check_q(q)
        tips, frames = {}, {}
        for f in self.fingers:
            fr = f.frames(q[self.slices[f.name]], self.palm)
            frames[f.name] = fr
            tips[f.name] = fr[-1].apply(f.tip_offset)
        return FKResult(tips=tips, frames=frames)

    def fingertip(self, finger_name: str, q_finger: np.ndarray) -> np.ndarray:
        return self.finger(finger_name).tip(q_finger, self.palm)

    def jacobian(self, finger_name: str, q_finger: np.ndarray) -> np.ndarray:
        return self.finger(finger_name).jacobian(q_finger, self.palm)

    def clamp(self, q: np.ndarray) -> np.ndarray:
        q = self.check_q(q)
        return np.clip(q, self.limits_lo, self.limits_hi)

    def mid_range(self) -> np.ndarray:
        return 0.5 * (self.limits_lo + self.limits_hi)

    def home_q(self) -> np.ndarray:
        return np.array([math.radians(j.home_deg) for j in self.joints])

    def sample_joints(self, finger_name: str, n: int, seed: int) -> np.ndarray:
        """Seeded uniform joint samples within limits, shape (n, k)."""
        if n < 1:
            raise ValueError("need n >= 1 samples")
        f = self.finger(finger_name)
        sl = self.slices[finger_name]
        lo, hi = self.limits_lo[sl], self.limits_hi[sl]
        rng = np.random.default_rng(seed)
        return lo + (hi - lo) * rng.random((n, len(f)))

    def sample_workspace(self, finger_name: str, n: int, seed: int) -> np.ndarray:
        """Fingertip cloud (n, 3) at seeded uniform joint samples."""
        q = self.sample_joints(finger_name, n, seed)
        return self.finger(finger_name).tip_batch(q, self.palm)


def _as_vec3(value, what: str) -> np.ndarray:
    try:
        v = np.array([float(x) for x in value], dtype=float)
    except (TypeError, ValueError) as e:
        raise ModelError(f"{what}: expected a 3-vector, got {value!r}") from e
    if v.shape != (3,):
        raise ModelError(f"{what}: expected a 3-vector, got {value!r}")
    return v


def _require(mapping: dict, key: str, what: str):
    if not isinstance(mapping, dict) or key not in mapping:
        raise ModelError(f"{what}: missing field '{key}'")
    return mapping[key]


def _parse_joint(doc: dict, finger: str, idx: int) -> JointSpec:
    what = f"finger '{finger}' joint #{idx}"
    name = str(_require(doc, "name", what))
    axis = _as_vec3(_require(doc, "axis", what), f"{what} axis")
    if abs(np.linalg.norm(axis) - 1.0) > _UNIT_TOL:
        raise ModelError(f"{what}: axis {axis.tolist()} is not unit length")
    lo = math.radians(float(_require(doc, "limit_lo_deg", what)))
    hi = math.radians(float(_require(doc, "limit_hi_deg", what)))
    if not lo < hi:
        raise ModelError(f"{what}: limit_lo_deg must be < limit_hi_deg")
    motor_id = int(_require(doc, "motor_id", what))
    if not 0 <= motor_id <= 253:
        raise ModelError(f"{what}: motor_id {motor_id} outside 0-253")
    return JointSpec(
        name=name,
        origin_translation=_as_vec3(
            _require(doc, "origin_translation", what), f"{what} origin_translation"
        ),
        origin_rpy=_as_vec3(_require(doc, "origin_rpy", what), f"{what} origin_rpy"),
        axis=axis,
        limit_lo=lo,
        limit_hi=hi,
        motor_id=motor_id,
        zero_tick=int(doc.get("zero_tick", 2048)),
        home_deg=float(doc.get("home_deg", 0.0)),
    )


def model_from_dict(doc: dict) -> HandModel:
    """Build and validate a HandModel from a parsed document."""
    name = str(_require(doc, "name", "model"))
    palm_doc = _require(doc, "palm_frame", "model")
    palm = Transform.from_rpy(
        _as_vec3(_require(palm_doc, "translation", "palm_frame"), "palm translation"),
        _as_vec3(_require(palm_doc, "rpy", "palm_frame"), "palm rpy"),
    )
    palm.validate("palm_frame")

    fingers_doc = _require(doc, "fingers", "model")
    if not isinstance(fingers_doc, list) or not fingers_doc:
        raise ModelError("model: 'fingers' must be a non-empty list")

    fingers = []
    for fdoc in fingers_doc:
        fname = str(_require(fdoc, "name", "finger"))
        joints_doc = _require(fdoc, "joints", f"finger '{fname}'")
        if not isinstance(joints_doc, list) or not joints_doc:
            raise ModelError(f"finger '{fname}': 'joints' must be a non-empty list")
        joints = tuple(
            _parse_joint(jdoc, fname, i) for i, jdoc in enumerate(joints_doc)
        )
        fingers.append(
            FingerChain(
                name=fname,
                joints=joints,
                tip_offset=_as_vec3(
                    _require(fdoc, "tip_offset", f"finger '{fname}'"),
                    f"finger '{fname}' tip_offset",
                ),
            )
        )

    model = HandModel(name=name, palm=palm, fingers=tuple(fingers))

    fnames = [f.name for f in model.fingers]
    if len(set(fnames)) != len(fnames):
        raise ModelError(f"model '{name}': duplicate finger names")
    ids = model.motor_ids
    if len(set(ids)) != len(ids):
        raise ModelError(f"model '{name}': duplicate motor_id")
    jnames = [j.name for j in model.joints]
    if len(set(jnames)) != len(jnames):
        raise ModelError(f"model '{name}': duplicate joint names")

    required = _REQUIRED_LAYOUT.get(name)
    if required is not None:
        layout = {f.name: len(f) for f in model.fingers}
        if layout != required:
            raise ModelError(
                f"model '{name}': finger layout {layout} does not match the "
                f"required {required}"
            )
    return model


def load_model(text: str) -> HandModel:
    """Parse a model document (YAML) and validate it."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ModelError(f"model document is not valid YAML: {e}") from e
    if not isinstance(doc, dict):
        raise ModelError("model document must be a mapping at top level")
    return model_from_dict(doc)


def load_model_file(path) -> HandModel:
    with open(path, "r", encoding="utf-8") as fh:
        return load_model(fh.read())


def builtin_model(name: str) -> HandModel:
    """Load a packaged nominal model document ('gx11' or 'ex12')."""
    ref = resources.files("gex.data") / f"{name}.yaml"
    if not ref.is_file():
        raise ModelError(f"no builtin model named '{name}'")
    return load_model(ref.read_text(encoding="utf-8"))
