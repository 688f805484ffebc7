"""Planar rigid transforms and the 6-DoF pose record."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


def rot2(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Se2:
    """Rigid planar transform; ``a @ b`` composes, ``a.apply(p)`` maps points."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def t(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def rotation(self) -> np.ndarray:
        return rot2(self.yaw)

    def __matmul__(self, other: "Se2") -> "Se2":
        t = self.rotation @ other.t + self.t
        return Se2(t[0], t[1], self.yaw + other.yaw)

    def inverse(self) -> "Se2":
        t = -(self.rotation.T @ self.t)
        return Se2(t[0], t[1], -self.yaw)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.t

    def matrix(self) -> np.ndarray:
        m = np.eye(3)
        m[:2, :2] = self.rotation
        m[:2, 2] = self.t
        return m

    @classmethod
    def from_matrix(cls, m) -> "Se2":
        m = np.asarray(m, dtype=float)
        return cls(m[0, 2], m[1, 2], np.arctan2(m[1, 0], m[0, 0]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw])

    @classmethod
    def from_array(cls, a) -> "Se2":
        return cls(a[0], a[1], a[2])


@dataclass(frozen=True)
class Pose6:
    """Timestamped robot pose; angles in radians, roll/pitch about x/y (x fwd, y left, z up)."""

    t: float
    x: float
    y: float
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    @property
    def se2(self) -> Se2:
        return Se2(self.x, self.y, self.yaw)

    def as_row(self) -> list[float]:
        return [self.t, self.x, self.y, self.z, self.roll, self.pitch, self.yaw]


def compose_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorised ``a @ b`` for (n, 3) arrays of (x, y, yaw)."""
    c, s = np.cos(a[:, 2]), np.sin(a[:, 2])
    x = a[:, 0] + c * b[:, 0] - s * b[:, 1]
    y = a[:, 1] + s * b[:, 0] + c * b[:, 1]
    return np.column_stack([x, y, wrap_angle(a[:, 2] + b[:, 2])])


def relative_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorised ``a.inverse() @ b`` for (n, 3) arrays."""
    c, s = np.cos(a[:, 2]), np.sin(a[:, 2])
    dx, dy = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    return np.column_stack([c * dx + s * dy, -s * dx + c * dy, wrap_angle(b[:, 2] - a[:, 2])])
