"""Closed-form kinematics of one 3-DoF leg.

Joint chain, expressed in the hip frame (x forward, y left, z up):
rotation about x (hip frontal), rotation about y (hip sagittal), femur along
-z, knee rotation about y, shank along -z. The zero pose is the straight leg
pointing down. The knee drives the shank through a parallel four-bar, so the
shank angle relative to the femur equals the knee servo angle.

The propeller motor sits at the knee with its thrust axis along the leg-local
lateral axis (+y for left legs, -y for right legs); rotating the frontal joint
by +/-pi/2 turns the leg plane horizontal and points every rotor up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

DEFAULT_FEMUR_M = 0.20
DEFAULT_TIBIA_M = 0.22
DEFAULT_EPS_M = 1e-4

LEG_NAMES = ("FL", "FR", "BR", "BL")
JOINT_NAMES = ("frontal", "sagittal", "knee")


class KinematicsError(ValueError):
    pass


class WorkspaceError(KinematicsError):
    """Target outside the reachable annulus; carries the nearest reachable distance."""

    def __init__(self, message: str, distance: float, nearest_distance: float):
        super().__init__(message)
        self.distance = distance
        self.nearest_distance = nearest_distance


class SingularityError(KinematicsError):
    pass


class ConfigurationError(KinematicsError):
    pass


class JointAngles(NamedTuple):
    q_frontal: float
    q_sagittal: float
    q_knee: float


@dataclass(frozen=True)
class LegGeometry:
    femur_m: float = DEFAULT_FEMUR_M
    tibia_m: float = DEFAULT_TIBIA_M
    hip_offset_m: tuple = (0.17, 0.09, 0.0)
    side: str = "left"
    # (min, max) per joint: frontal, sagittal, knee
    joint_limits: tuple = ((-0.6, 1.75), (-2.1, 2.1), (0.0, 2.8))
    knee_to_prop_offset_m: tuple = (0.0, 0.0, 0.0)
    knee_folded_rad: float = 2.6
    eps_m: float = DEFAULT_EPS_M

    def __post_init__(self):
        if not (self.femur_m > 0 and self.tibia_m > 0):
            raise ValueError("link lengths must be > 0")
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        object.__setattr__(self, "hip_offset_m", tuple(float(v) for v in self.hip_offset_m))
        object.__setattr__(self, "knee_to_prop_offset_m",
                           tuple(float(v) for v in self.knee_to_prop_offset_m))
        limits = tuple((float(lo), float(hi)) for lo, hi in self.joint_limits)
        if len(limits) != 3 or any(not lo < hi for lo, hi in limits):
            raise ValueError(f"joint limits must be three well-ordered pairs, got {limits}")
        object.__setattr__(self, "joint_limits", limits)

    @property
    def side_sign(self) -> float:
        return 1.0 if self.side == "left" else -1.0

    @property
    def reach_m(self) -> float:
        return self.femur_m + self.tibia_m

    def mirrored(self) -> "LegGeometry":
        """Mirror image across the body sagittal plane."""
        x, y, z = self.hip_offset_m
        px, py, pz = self.knee_to_prop_offset_m
        (f_lo, f_hi), sag, knee = self.joint_limits
        return replace(
            self,
            hip_offset_m=(x, -y, z),
            knee_to_prop_offset_m=(px, -py, pz),
            side="right" if self.side == "left" else "left",
            joint_limits=((-f_hi, -f_lo), sag, knee),
        )

    def within_limits(self, q, tol: float = 0.0) -> bool:
        return all(lo - tol <= v <= hi + tol for v, (lo, hi) in zip(q, self.joint_limits))


def default_legs(femur_m: float = DEFAULT_FEMUR_M, tibia_m: float = DEFAULT_TIBIA_M,
                 hip_x: float = 0.17, hip_y: float = 0.09) -> tuple[LegGeometry, ...]:
    """Four legs ordered FL, FR, BR, BL (circular, so indices 0/2 and 1/3 are diagonals)."""
    fl = LegGeometry(femur_m=femur_m, tibia_m=tibia_m, hip_offset_m=(hip_x, hip_y, 0.0))
    bl = replace(fl, hip_offset_m=(-hip_x, hip_y, 0.0))
    return (fl, fl.mirrored(), bl.mirrored(), bl)


def fourbar_knee_map(q_knee: float) -> float:
    """Shank angle relative to the femur for a given knee servo angle.

    The ideal parallel four-bar transmits the servo rotation 1:1.
    """
    return q_knee


def _planar(geom: LegGeometry, q_sagittal: float, q_knee: float) -> tuple[float, float]:
    shank = q_sagittal + fourbar_knee_map(q_knee)
    x = -geom.femur_m * math.sin(q_sagittal) - geom.tibia_m * math.sin(shank)
    z = -geom.femur_m * math.cos(q_sagittal) - geom.tibia_m * math.cos(shank)
    return x, z


def forward_kinematics(geom: LegGeometry, q) -> np.ndarray:
    """Foot position in the hip frame."""
    q1, q2, q3 = (float(v) for v in q)
    x, z = _planar(geom, q2, q3)
    s1, c1 = math.sin(q1), math.cos(q1)
    return np.array([x, -s1 * z, c1 * z])


def knee_position(geom: LegGeometry, q) -> np.ndarray:
    """Knee (propeller mount) position in the hip frame, including the mount offset."""
    q1, q2, _ = (float(v) for v in q)
    local = np.array([-geom.femur_m * math.sin(q2), 0.0, -geom.femur_m * math.cos(q2)])
    local = local + _rot_y(q2) @ np.asarray(geom.knee_to_prop_offset_m)
    return _rot_x(q1) @ local


def rotor_axis(geom: LegGeometry, q) -> np.ndarray:
    """Unit thrust direction of the knee propeller in the hip (= body) frame."""
    q1 = float(q[0])
    return geom.side_sign * np.array([0.0, math.cos(q1), math.sin(q1)])


def jacobian(geom: LegGeometry, q) -> np.ndarray:
    """d(foot position)/dq, 3x3, columns ordered frontal, sagittal, knee."""
    q1, q2, q3 = (float(v) for v in q)
    l1, l2 = geom.femur_m, geom.tibia_m
    shank = q2 + fourbar_knee_map(q3)
    x, z = _planar(geom, q2, q3)
    s1, c1 = math.sin(q1), math.cos(q1)
    dx2 = -l1 * math.cos(q2) - l2 * math.cos(shank)
    dz2 = l1 * math.sin(q2) + l2 * math.sin(shank)
    dx3 = -l2 * math.cos(shank)
    dz3 = l2 * math.sin(shank)
    return np.array([
        [0.0, dx2, dx3],
        [-c1 * z, -s1 * dz2, -s1 * dz3],
        [-s1 * z, c1 * dz2, c1 * dz3],
    ])


def inverse_kinematics(geom: LegGeometry, p, eps: float | None = None) -> JointAngles:
    """Knee-forward joint angles placing the foot at ``p`` (hip frame).

    Raises WorkspaceError outside the reachable annulus and SingularityError when
    the target lies on the frontal axis, where the frontal angle is undefined.
    """
    eps = geom.eps_m if eps is None else eps
    px, py, pz = (float(v) for v in p)
    if not all(math.isfinite(v) for v in (px, py, pz)):
        raise KinematicsError(f"non-finite target {p!r}")
    l1, l2 = geom.femur_m, geom.tibia_m
    d = math.sqrt(px * px + py * py + pz * pz)
    d_max = l1 + l2 - eps
    d_min = abs(l1 - l2) + eps
    if d > d_max or d < d_min:
        nearest = min(max(d, d_min), d_max)
        raise WorkspaceError(
            f"target at distance {d:.6f} m outside reachable annulus [{d_min:.6f}, {d_max:.6f}]",
            d, nearest)
    r = math.hypot(py, pz)
    if r < eps:
        raise SingularityError(f"target {p!r} lies on the hip frontal axis")

    # leg plane below the frontal axis (planar z < 0) unless that frontal angle is out of range
    lo, hi = geom.joint_limits[0]
    q1 = math.atan2(py, -pz)
    zp = -r
    if not lo <= q1 <= hi:
        alt = q1 - math.pi if q1 > 0 else q1 + math.pi
        if lo <= alt <= hi:
            q1, zp = alt, r

    c3 = (d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    c3 = min(1.0, max(-1.0, c3))
    q3 = math.atan2(math.sqrt(max(0.0, 1.0 - c3 * c3)), c3)
    u, w = -px, -zp
    q2 = math.atan2(u, w) - math.atan2(l2 * math.sin(q3), l1 + l2 * math.cos(q3))
    q2 = math.atan2(math.sin(q2), math.cos(q2))
    return JointAngles(q1, q2, q3)


def clamp_to_workspace(geom: LegGeometry, p, margin: float | None = None) -> np.ndarray:
    """Radially project ``p`` into the reachable annulus."""
    margin = 2.0 * geom.eps_m if margin is None else margin
    p = np.asarray(p, dtype=float)
    d = float(np.linalg.norm(p))
    d_max = geom.reach_m - margin
    d_min = abs(geom.femur_m - geom.tibia_m) + margin
    if d < 1e-12:
        return np.array([0.0, 0.0, -d_min])
    return p * (min(max(d, d_min), d_max) / d)


def splay_configuration(geom: LegGeometry, q_sagittal: float = 0.0,
                        q_knee: float | None = None) -> JointAngles:
    """Aerial pose: leg plane horizontal, rotor axis vertical, knee folded."""
    q_knee = geom.knee_folded_rad if q_knee is None else q_knee
    q = JointAngles(geom.side_sign * math.pi / 2.0, float(q_sagittal), float(q_knee))
    if not geom.within_limits(q):
        raise ConfigurationError(f"splay pose {q} violates joint limits {geom.joint_limits}")
    return q


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
