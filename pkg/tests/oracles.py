"""Independent reference implementations used to cross-check the package.

These deliberately avoid the library's own math: rotations come from
scipy, kinematics composes explicit 4x4 homogeneous matrices, the CRC is
a bit-by-bit shift register, and Jacobians come from finite differences.
"""

import numpy as np
from scipy.spatial.transform import Rotation


def oracle_finger_frames(model, finger_name, q_finger):
    """4x4 homogeneous-matrix FK for one finger; returns (frames, tip)."""
    finger = model.finger(finger_name)
    T = np.eye(4)
    T[:3, :3] = model.palm.rotation
    T[:3, 3] = model.palm.translation
    frames = []
    for joint, angle in zip(finger.joints, q_finger):
        origin = np.eye(4)
        origin[:3, :3] = Rotation.from_euler("xyz", joint.origin_rpy).as_matrix()
        origin[:3, 3] = joint.origin_translation
        spin = np.eye(4)
        spin[:3, :3] = Rotation.from_rotvec(angle * np.asarray(joint.axis)).as_matrix()
        T = T @ origin @ spin
        frames.append(T.copy())
    tip = (T @ np.append(finger.tip_offset, 1.0))[:3]
    return frames, tip


def oracle_tip(model, finger_name, q_finger):
    return oracle_finger_frames(model, finger_name, q_finger)[1]


def fd_jacobian(model, finger_name, q_finger, h=1e-6):
    """Central-difference positional Jacobian of the fingertip."""
    q = np.asarray(q_finger, dtype=float)
    cols = []
    for i in range(len(q)):
        qp, qm = q.copy(), q.copy()
        qp[i] += h
        qm[i] -= h
        cols.append(
            (model.fingertip(finger_name, qp) - model.fingertip(finger_name, qm))
            / (2.0 * h)
        )
    return np.column_stack(cols)


def crc16_bitwise(data, crc=0):
    """Shift-register CRC-16: poly 0x8005, init 0, MSB-first, no reflection."""
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x8005) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return crc


def fd_gradient(f, x, h=1e-7):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g
