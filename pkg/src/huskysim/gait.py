"""Trot timing, quartic Bezier swing curves and Raibert foot placement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

DEFAULT_PERIOD_S = 0.5
DEFAULT_DUTY = 0.5
DEFAULT_APEX_M = 0.06
DEFAULT_KV = 0.03

TROT_OFFSETS = {"FL": 0.0, "BR": 0.0, "FR": 0.5, "BL": 0.5}

# C(4, i)
_BINOM4 = (1.0, 4.0, 6.0, 4.0, 1.0)


class GaitError(ValueError):
    pass


@dataclass(frozen=True)
class GaitSchedule:
    period_s: float = DEFAULT_PERIOD_S
    duty_factor: float = DEFAULT_DUTY
    phase_offsets: dict = field(default_factory=lambda: dict(TROT_OFFSETS))

    def __post_init__(self):
        if not self.period_s > 0:
            raise GaitError(f"period_s must be > 0, got {self.period_s!r}")
        if not 0.0 < self.duty_factor < 1.0:
            raise GaitError(f"duty_factor must lie in (0, 1), got {self.duty_factor!r}")
        for leg, off in self.phase_offsets.items():
            if not 0.0 <= off < 1.0:
                raise GaitError(f"phase offset for {leg} must lie in [0, 1), got {off!r}")

    @property
    def stance_s(self) -> float:
        return self.duty_factor * self.period_s

    @property
    def swing_s(self) -> float:
        return (1.0 - self.duty_factor) * self.period_s


class Phase(NamedTuple):
    s: float
    mode: str  # "stance" | "swing"
    progress: float


def phase(t: float, schedule: GaitSchedule, leg: str) -> Phase:
    if t < 0:
        raise GaitError(f"t must be >= 0, got {t!r}")
    s = t / schedule.period_s + schedule.phase_offsets[leg]
    s -= math.floor(s)
    duty = schedule.duty_factor
    if s < duty:
        return Phase(s, "stance", s / duty)
    return Phase(s, "swing", (s - duty) / (1.0 - duty))


class SwingCurve:
    """Degree-4 Bezier with doubled end control points."""

    __slots__ = ("points",)

    def __init__(self, points):
        pts = np.array(points, dtype=float)
        if pts.shape != (5, 3):
            raise GaitError(f"a swing curve needs 5 control points in 3-D, got shape {pts.shape}")
        if not (np.array_equal(pts[0], pts[1]) and np.array_equal(pts[3], pts[4])):
            raise GaitError("first two and last two control points must coincide")
        if not pts[2, 2] > max(pts[0, 2], pts[4, 2]):
            raise GaitError("apex control point must lie above both endpoints")
        pts.setflags(write=False)
        self.points = pts

    def __repr__(self):
        return f"SwingCurve({self.points.tolist()!r})"


def make_swing_curve(start, end, apex_height_m: float = DEFAULT_APEX_M) -> SwingCurve:
    if not apex_height_m > 0:
        raise GaitError(f"apex height must be > 0, got {apex_height_m!r}")
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    apex = 0.5 * (start + end)
    apex[2] += apex_height_m
    return SwingCurve([start, start, apex, end, end])


def bezier_eval(curve: SwingCurve, s: float) -> tuple[np.ndarray, np.ndarray]:
    """Position and d/ds derivative of the curve at ``s``."""
    if not 0.0 <= s <= 1.0:
        raise GaitError(f"curve parameter must lie in [0, 1], got {s!r}")
    P = curve.points
    u = 1.0 - s
    basis = np.array([_BINOM4[i] * u ** (4 - i) * s ** i for i in range(5)])
    pos = basis @ P
    # derivative is a degree-3 curve over the control-point differences
    D = 4.0 * np.diff(P, axis=0)
    dbasis = np.array([u ** 3, 3.0 * u * u * s, 3.0 * u * s * s, s ** 3])
    return pos, dbasis @ D


def raibert_foot_target(v_body, v_des, T_stance_s: float, k_v: float = DEFAULT_KV,
                        hip_ground_projection=(0.0, 0.0), reach_radius: float | None = None) -> np.ndarray:
    """Touchdown point: neutral point v*T/2 plus velocity-error correction.

    The result is clamped to ``reach_radius`` around ``hip_ground_projection``
    when a radius is given.
    """
    if not T_stance_s > 0:
        raise GaitError(f"T_stance_s must be > 0, got {T_stance_s!r}")
    if not k_v >= 0:
        raise GaitError(f"k_v must be >= 0, got {k_v!r}")
    v_body = np.asarray(v_body, dtype=float)
    v_des = np.asarray(v_des, dtype=float)
    hip = np.asarray(hip_ground_projection, dtype=float)
    offset = v_body * (T_stance_s / 2.0) + k_v * (v_body - v_des)
    if reach_radius is not None:
        offset = clamp_radius(offset, reach_radius)
    return hip + offset


def clamp_radius(offset, radius: float) -> np.ndarray:
    offset = np.asarray(offset, dtype=float)
    n = float(np.linalg.norm(offset))
    if n > radius:
        return offset * (radius / n)
    return offset
