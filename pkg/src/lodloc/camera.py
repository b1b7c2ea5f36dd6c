"""Gravity-aligned 4-DoF camera model and pinhole projection.

Conventions: world frame is right-handed with z up. The camera frame has
+X right, +Y down, +Z forward. At yaw = pitch = roll = 0 the camera looks
horizontally along world +X; yaw turns the heading counter-clockwise about
world z, pitch tilts the optical axis up (pitch = -90 is nadir), roll spins
the image about the optical axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

NEAR_PLANE = 0.1

# world-to-camera rotation of a level camera looking along world +X
AXIS_CONVENTION = np.array(
    [
        [0.0, -1.0, 0.0],
        [0.0, 0.0, -1.0],
        [1.0, 0.0, 0.0],
    ]
)


def wrap_yaw(yaw: float) -> float:
    """Wrap an angle in degrees to [-180, 180)."""
    w = math.fmod(yaw + 180.0, 360.0)
    if w < 0.0:
        w += 360.0
    w -= 180.0
    # fmod can land exactly on +180 after rounding
    if w >= 180.0:
        w -= 360.0
    return w


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("zero-area viewport")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "Intrinsics":
        f = 0.5 * width / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class Pose4:
    """Camera position (m) and heading (deg); pitch/roll are per-query constants."""

    x: float
    y: float
    z: float
    yaw: float
    pitch: float = -90.0
    roll: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_yaw(float(self.yaw)))
        if not -90.0 <= self.pitch <= 90.0:
            raise ValueError(f"pitch {self.pitch} outside [-90, 90]")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def moved(self, dx=0.0, dy=0.0, dz=0.0, dyaw=0.0) -> "Pose4":
        return Pose4(self.x + dx, self.y + dy, self.z + dz, self.yaw + dyaw, self.pitch, self.roll)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.yaw, self.pitch, self.roll])

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "z": self.z, "yaw_deg": self.yaw,
                "pitch_deg": self.pitch, "roll_deg": self.roll}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose4":
        return cls(float(d["x"]), float(d["y"]), float(d["z"]), float(d["yaw_deg"]),
                   float(d.get("pitch_deg", -90.0)), float(d.get("roll_deg", 0.0)))

    @classmethod
    def from_array(cls, a) -> "Pose4":
        return cls(*(float(v) for v in a))


def _rotations(yaw, pitch, roll) -> np.ndarray:
    """Batched world-to-camera rotations, shape (P, 3, 3)."""
    ya, pa, ra = (np.radians(np.asarray(a, dtype=float)) for a in (yaw, pitch, roll))
    n = ya.shape[0]
    cy, sy = np.cos(ya), np.sin(ya)
    cp, sp = np.cos(pa), np.sin(pa)
    cr, sr = np.cos(ra), np.sin(ra)
    zero, one = np.zeros(n), np.ones(n)
    # transpose of the heading rotation about world z
    yaw_t = np.stack([
        np.stack([cy, sy, zero], -1),
        np.stack([-sy, cy, zero], -1),
        np.stack([zero, zero, one], -1),
    ], 1)
    pitch_m = np.stack([
        np.stack([one, zero, zero], -1),
        np.stack([zero, cp, sp], -1),
        np.stack([zero, -sp, cp], -1),
    ], 1)
    roll_m = np.stack([
        np.stack([cr, sr, zero], -1),
        np.stack([-sr, cr, zero], -1),
        np.stack([zero, zero, one], -1),
    ], 1)
    return roll_m @ pitch_m @ AXIS_CONVENTION @ yaw_t


def extrinsics_batch(poses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotations (P,3,3) and translations (P,3) for an array of (x,y,z,yaw,pitch,roll) rows."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    rot = _rotations(poses[:, 3], poses[:, 4], poses[:, 5])
    centers = poses[:, :3]
    trans = -np.einsum("pij,pj->pi", rot, centers)
    return rot, trans


def poses_to_array(poses) -> np.ndarray:
    return np.array([p.as_array() for p in poses], dtype=float).reshape(-1, 6)


def extrinsics(pose: Pose4) -> np.ndarray:
    """4x4 world-to-camera transform."""
    rot, trans = extrinsics_batch(pose.as_array()[None])
    T = np.eye(4)
    T[:3, :3] = rot[0]
    T[:3, 3] = trans[0]
    return T


def rotation_angle_deg(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Angle of the relative rotation between two rotation matrices."""
    rel = r_a @ r_b.T
    c = (np.trace(rel) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def project(intr: Intrinsics, cam_point, near: float = NEAR_PLANE):
    """Pinhole projection of a camera-frame point; None when at or behind the near plane."""
    X, Y, d = (float(c) for c in cam_point)
    if d <= near:
        return None
    return (intr.fx * X / d + intr.cx, intr.fy * Y / d + intr.cy)
