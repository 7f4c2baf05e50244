"""Rigid-transform helpers.

Quaternions are stored scalar-first ``(w, x, y, z)``. Euler angles follow the
Z-Y-X (yaw, pitch, roll) convention throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    q = np.array(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ]
    )
    return q / np.linalg.norm(q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_euler(rot: np.ndarray) -> tuple[float, float, float]:
    """Return (roll, pitch, yaw) from a rotation matrix, Z-Y-X convention."""
    pitch = math.asin(max(-1.0, min(1.0, -rot[2, 0])))
    roll = math.atan2(rot[2, 1], rot[2, 2])
    yaw = math.atan2(rot[1, 0], rot[0, 0])
    return roll, pitch, yaw


def matrix_to_quat(rot: np.ndarray) -> np.ndarray:
    tr = rot[0, 0] + rot[1, 1] + rot[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (rot[2, 1] - rot[1, 2]) / s, (rot[0, 2] - rot[2, 0]) / s, (rot[1, 0] - rot[0, 1]) / s]
    elif rot[0, 0] > rot[1, 1] and rot[0, 0] > rot[2, 2]:
        s = 2.0 * math.sqrt(1.0 + rot[0, 0] - rot[1, 1] - rot[2, 2])
        q = [(rot[2, 1] - rot[1, 2]) / s, 0.25 * s, (rot[0, 1] + rot[1, 0]) / s, (rot[0, 2] + rot[2, 0]) / s]
    elif rot[1, 1] > rot[2, 2]:
        s = 2.0 * math.sqrt(1.0 + rot[1, 1] - rot[0, 0] - rot[2, 2])
        q = [(rot[0, 2] - rot[2, 0]) / s, (rot[0, 1] + rot[1, 0]) / s, 0.25 * s, (rot[1, 2] + rot[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + rot[2, 2] - rot[0, 0] - rot[1, 1])
        q = [(rot[1, 0] - rot[0, 1]) / s, (rot[0, 2] + rot[2, 0]) / s, (rot[1, 2] + rot[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q / np.linalg.norm(q)


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """An SE(3) rigid transform: rotation (unit quaternion) plus translation."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_euler(cls, x=0.0, y=0.0, z=0.0, roll=0.0, pitch=0.0, yaw=0.0) -> "Pose":
        return cls(np.array([x, y, z], dtype=float), quat_from_euler(roll, pitch, yaw))

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "Pose":
        return cls(np.array(mat[:3, 3], dtype=float), matrix_to_quat(mat[:3, :3]))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    @property
    def euler(self) -> tuple[float, float, float]:
        return matrix_to_euler(self.rotation)

    @property
    def yaw(self) -> float:
        return self.euler[2]

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.position
        return mat

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: express ``other`` (given in this frame) in the parent frame."""
        return Pose.from_matrix(self.matrix() @ other.matrix())

    def inverse_matrix(self) -> np.ndarray:
        rot = self.rotation
        inv = np.eye(4)
        inv[:3, :3] = rot.T
        inv[:3, 3] = -rot.T @ self.position
        return inv

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return pts @ self.rotation.T + self.position

    def to_dict(self) -> dict:
        return {"position": [float(v) for v in self.position], "orientation": [float(v) for v in self.orientation]}

    @classmethod
    def from_dict(cls, data: dict) -> "Pose":
        return cls(np.array(data["position"], dtype=float), np.array(data["orientation"], dtype=float))
