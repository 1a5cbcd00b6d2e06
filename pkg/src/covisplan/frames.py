"""Thrust and camera frames recovered from flat outputs.

The thrust direction follows from the acceleration, the camera's optical
axis is the yaw heading projected orthogonal to the thrust direction::

    n1 = (a - g) / |a - g|
    n3 = (n1 x ny) / |n1 x ny|,   ny = (cos psi, sin psi, 0)
    n2 = n3 x n1
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .splines import UniformBSpline, derivative, knot_points

GRAVITY = 9.81
DEGENERACY_EPS = 1e-6


class DegenerateFrameError(ValueError):
    """The thrust or camera frame is undefined (free fall or 90 degree tilt)."""


def gravity_vector(g: float = GRAVITY) -> np.ndarray:
    return np.array([0.0, 0.0, -g])


def thrust_dir(acceleration, gravity=None) -> np.ndarray:
    g = gravity_vector() if gravity is None else np.asarray(gravity, dtype=float)
    f = np.asarray(acceleration, dtype=float) - g
    norm = np.linalg.norm(f)
    if norm <= DEGENERACY_EPS:
        raise DegenerateFrameError(f"|a - g| = {norm:.3g} (free fall), thrust direction undefined")
    return f / norm


def yaw_dir(yaw: float) -> np.ndarray:
    return np.array([np.cos(yaw), np.sin(yaw), 0.0])


def camera_frame(n1, ny) -> tuple[np.ndarray, np.ndarray]:
    """Return (n2, n3): optical axis and lateral axis of the camera."""
    w = np.cross(n1, ny)
    norm = np.linalg.norm(w)
    if norm <= DEGENERACY_EPS:
        raise DegenerateFrameError("thrust direction parallel to yaw direction")
    n3 = w / norm
    n2 = np.cross(n3, n1)
    return n2, n3


@dataclass(frozen=True)
class QuadKnotState:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    yaw: float
    n1: np.ndarray
    n2: np.ndarray
    n3: np.ndarray

    @classmethod
    def from_flat(cls, position, velocity, acceleration, yaw, gravity=None) -> "QuadKnotState":
        n1 = thrust_dir(acceleration, gravity)
        n2, n3 = camera_frame(n1, yaw_dir(yaw))
        return cls(
            np.asarray(position, dtype=float),
            np.asarray(velocity, dtype=float),
            np.asarray(acceleration, dtype=float),
            float(yaw),
            n1,
            n2,
            n3,
        )

    @classmethod
    def hover(cls, position, yaw: float = 0.0) -> "QuadKnotState":
        z = np.zeros(3)
        return cls.from_flat(position, z, z, yaw)


def heading_yaw(velocity, fallback: float = 0.0) -> float:
    """Yaw of the horizontal velocity, or ``fallback`` when nearly hovering."""
    vx, vy = float(velocity[0]), float(velocity[1])
    if np.hypot(vx, vy) < 1e-9:
        return fallback
    return float(np.arctan2(vy, vx))


def knot_kinematics(position_curve: UniformBSpline) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Positions, velocities and accelerations at every knot."""
    vel = derivative(position_curve)
    acc = derivative(vel)
    return knot_points(position_curve), knot_points(vel), knot_points(acc)


def knot_states(
    position_curve: UniformBSpline,
    yaw_curve: UniformBSpline | None = None,
    gravity=None,
) -> list[QuadKnotState]:
    """Full knot states along a position curve and optional yaw curve.

    Without a yaw curve the heading of the horizontal velocity is used; the
    position-stage quantities do not depend on yaw, it only has to give a valid
    frame. At knots with zero horizontal velocity the previous heading is kept.
    """
    pos, vel, acc = knot_kinematics(position_curve)
    if yaw_curve is not None:
        if yaw_curve.num_spans != position_curve.num_spans or not np.isclose(
            yaw_curve.knot_span, position_curve.knot_span
        ):
            raise ValueError(
                "yaw and position curves must share knot span and knot count "
                f"({yaw_curve.num_spans} vs {position_curve.num_spans} spans)"
            )
        yaws = knot_points(yaw_curve)[:, 0]
    else:
        yaws = np.empty(len(pos))
        last = 0.0
        for i, v in enumerate(vel):
            last = heading_yaw(v, last)
            yaws[i] = last
    return [
        QuadKnotState.from_flat(pos[i], vel[i], acc[i], yaws[i], gravity) for i in range(len(pos))
    ]
