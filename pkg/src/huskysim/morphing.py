"""Legged <-> aerial transformation sequencer.

Forward chain: Legged, Crouch, WeightTransfer, Splay, PropAlign, SpinUp,
Aerial. Reverse chain: Aerial, SpinDown, Unsplay, WeightReturn, Stand,
Legged. Each phase ramps joint setpoints (smoothstep) from where the previous
phase left them and advances only when its physical guard holds; a phase that
overstays its timeout latches a fault and the throttle gate closes.

The sequencer is a pure function of an immutable MorphState, so snapshots can
be logged or copied freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import kinematics as kin
from .control import STANDING_HEIGHT_M, standing_pose
from .sim import BodyState, Event, RobotModel, center_of_mass, rotor_positions

PHASES = ("Legged", "Crouch", "WeightTransfer", "Splay", "PropAlign", "SpinUp", "Aerial",
          "SpinDown", "Unsplay", "WeightReturn", "Stand")
FORWARD = ("Legged", "Crouch", "WeightTransfer", "Splay", "PropAlign", "SpinUp", "Aerial")
REVERSE = ("Aerial", "SpinDown", "Unsplay", "WeightReturn", "Stand", "Legged")
GATE_OPEN = frozenset({"SpinUp", "Aerial", "SpinDown"})

NOMINAL_DURATIONS_S = {
    "Crouch": 2.5, "WeightTransfer": 1.5, "Splay": 3.0, "PropAlign": 2.0, "SpinUp": 1.0,
    "SpinDown": 1.0, "Unsplay": 3.0, "WeightReturn": 1.5, "Stand": 2.5,
}


class MorphError(ValueError):
    pass


@dataclass(frozen=True)
class MorphGuards:
    perch_contact_threshold_N: float = 5.0
    weight_transfer_fraction: float = 0.95
    splay_tolerance_rad: float = 0.02
    col_com_tolerance_m: float = 0.005
    durations_s: dict = field(default_factory=lambda: dict(NOMINAL_DURATIONS_S))
    timeout_factor: float = 3.0
    filter_window_s: float = 0.02
    landing_window_s: float = 0.5
    landing_speed_mps: float = 0.05
    crouch_press_m: float = 0.004     # commanded crouch goes this far past perch touchdown
    foot_lift_m: float = 0.035
    stand_lift_m: float = 0.01        # perch clearance once the feet take the weight back
    spinup_fraction: float = 0.9      # of hover throttle

    def __post_init__(self):
        for name in ("perch_contact_threshold_N", "splay_tolerance_rad", "col_com_tolerance_m",
                     "timeout_factor", "filter_window_s", "landing_window_s", "landing_speed_mps",
                     "foot_lift_m"):
            if not getattr(self, name) > 0:
                raise MorphError(f"{name} must be > 0, got {getattr(self, name)!r}")
        for name in ("weight_transfer_fraction", "spinup_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise MorphError(f"{name} must lie in (0, 1], got {v!r}")
        missing = set(NOMINAL_DURATIONS_S) - set(self.durations_s)
        if missing:
            raise MorphError(f"missing phase durations: {sorted(missing)}")
        for phase, d in self.durations_s.items():
            if not d > 0:
                raise MorphError(f"duration of {phase} must be > 0, got {d!r}")

    def timeout_s(self, phase: str) -> float:
        return self.timeout_factor * self.durations_s[phase]


@dataclass(frozen=True)
class GuardSnapshot:
    perch_load_fraction: float = 0.0
    splay_error_rad: float = math.inf
    col_com_offset_m: float = math.inf

    def describe(self) -> str:
        return (f"perch_load_fraction={self.perch_load_fraction:.4f};"
                f"splay_error_rad={self.splay_error_rad:.4f};col_com_offset_m={self.col_com_offset_m:.5f}")


@dataclass(frozen=True)
class MorphFault:
    phase: str
    guard: str
    last_value: float
    t: float

    def __str__(self):
        return f"{self.phase} timed out at t={self.t:.3f}s: guard {self.guard} last={self.last_value:.5g}"


@dataclass(frozen=True)
class MorphState:
    phase: str = "Legged"
    phase_entry_time_s: float = 0.0
    guards: GuardSnapshot = GuardSnapshot()
    target: str | None = None                  # "aerial" | "legged" while a transition is commanded
    q_entry: np.ndarray | None = None           # setpoints when the phase began
    throttle_entry: float = 0.0
    samples: tuple = ()                         # (t, perch_load_fraction) inside the filter window
    landing_since: float | None = None
    fault: MorphFault | None = None

    def __post_init__(self):
        if self.phase not in PHASES:
            raise MorphError(f"unknown phase {self.phase!r}")

    @property
    def gate_open(self) -> bool:
        return self.fault is None and self.phase in GATE_OPEN


@dataclass(frozen=True)
class MorphCommand:
    joints: np.ndarray
    gate: bool
    throttle: float | None    # collective ramp for SpinUp/SpinDown; None hands throttle to the hover loop


# --- geometry -----------------------------------------------------------------

def col_com_offset(model: RobotModel, state_or_q) -> float:
    """Horizontal distance between the rotor centroid and the CoM.

    Measured in the body x-y plane, which is the plane normal to the rotor
    axes once the legs are splayed.
    """
    q = state_or_q.q if isinstance(state_or_q, BodyState) else np.asarray(state_or_q, dtype=float)
    d = rotor_positions(model, q).mean(axis=0) - center_of_mass(model, q)
    return float(math.hypot(d[0], d[1]))


def splay_pose(model: RobotModel, q_sagittal: float = 0.0) -> np.ndarray:
    return np.array([kin.splay_configuration(leg, q_sagittal) for leg in model.legs])


def prop_align_sagittal(model: RobotModel, bracket: float = 1.0) -> float:
    """Common sagittal angle that puts the rotor centroid over the CoM in x."""
    def dx(q2: float) -> float:
        q = splay_pose(model, q2)
        return float(rotor_positions(model, q).mean(axis=0)[0] - center_of_mass(model, q)[0])

    if abs(dx(0.0)) < 1e-12:
        return 0.0
    return float(brentq(dx, -bracket, bracket, xtol=1e-12))


def crouch_height(model: RobotModel, perch_points, guards: MorphGuards) -> float:
    """Hip-to-ground distance at which the perch is pressed into the ground."""
    lowest = -float(np.min(np.asarray(perch_points, dtype=float).reshape(-1, 3)[:, 2]))
    return lowest - guards.crouch_press_m


# --- landing ------------------------------------------------------------------

def landing_detect(times, contact_N, vertical_speed, window_s: float, threshold_N: float = 5.0,
                   speed_tol: float = 0.05) -> bool:
    """True when the last ``window_s`` of samples all show contact and near-zero sink rate."""
    t = np.asarray(times, dtype=float)
    if len(t) == 0 or t[-1] - t[0] < window_s:
        return False
    inside = t >= t[-1] - window_s
    f = np.asarray(contact_N, dtype=float)[inside]
    vz = np.asarray(vertical_speed, dtype=float)[inside]
    return bool(np.all(f > threshold_N) and np.all(np.abs(vz) < speed_tol))


def total_contact_normal(state: BodyState) -> float:
    return float(state.foot_forces[:, 2].sum() + state.perch_force[2])


# --- sequencer ----------------------------------------------------------------

def request(morph: MorphState, target: str, t: float) -> MorphState:
    """Command a transition; ignored when already there or already heading there."""
    if target not in ("aerial", "legged"):
        raise MorphError(f"target must be 'aerial' or 'legged', got {target!r}")
    return replace(morph, target=target)


def _smooth(s: float) -> float:
    s = min(max(s, 0.0), 1.0)
    return s * s * (3.0 - 2.0 * s)


class _Plan:
    """Per-model constants used by every phase; built once per model."""

    def __init__(self, model: RobotModel, perch_points, guards: MorphGuards):
        self.stand_q = standing_pose(model, STANDING_HEIGHT_M)
        self.h_crouch = crouch_height(model, perch_points, guards)
        self.h_lift = self.h_crouch - guards.foot_lift_m
        self.h_return = self.h_crouch + guards.crouch_press_m + guards.stand_lift_m
        self.lift_q = standing_pose(model, self.h_lift)
        self.q2_align = prop_align_sagittal(model)
        self.splay_q = splay_pose(model, 0.0)
        self.aligned_q = splay_pose(model, self.q2_align)
        self.model = model


_PLANS: dict = {}


def _plan(model: RobotModel, perch_points, guards: MorphGuards) -> _Plan:
    key = (id(model), tuple(map(tuple, np.asarray(perch_points, dtype=float).reshape(-1, 3))),
           guards.crouch_press_m, guards.foot_lift_m, guards.stand_lift_m)
    plan = _PLANS.get(key)
    if plan is None or plan.model is not model:
        plan = _PLANS[key] = _Plan(model, perch_points, guards)
    return plan


def _height_pose(model: RobotModel, h0: float, h1: float, s: float) -> np.ndarray:
    return standing_pose(model, h0 + (h1 - h0) * _smooth(s))


def _blend(q_path: np.ndarray, q_path0: np.ndarray, q_entry: np.ndarray, s: float) -> np.ndarray:
    # follow the path but fade out whatever offset the phase started with
    return q_path + (1.0 - _smooth(s)) * (q_entry - q_path0)


def morph_step(morph: MorphState, robot: BodyState, model: RobotModel, guards: MorphGuards,
               t: float, perch_points=None, events: list | None = None,
               hover_throttle: float | None = None) -> tuple[MorphState, MorphCommand]:
    """Advance the sequencer by one control tick.

    Returns the next MorphState and the command for this tick: joint setpoints,
    the throttle gate and, during the spin phases, the collective throttle.
    """
    from .sim import DEFAULT_PERCH_POINTS

    perch_points = DEFAULT_PERCH_POINTS if perch_points is None else perch_points
    plan = _plan(model, perch_points, guards)
    hover = model.hover_throttle if hover_throttle is None else hover_throttle
    weight = model.weight

    # filtered guard signals
    load = float(robot.perch_force[2]) / weight
    window = guards.filter_window_s
    samples = tuple(s for s in morph.samples if s[0] > t - window) + ((t, load),)
    load_f = sum(s[1] for s in samples) / len(samples)
    morph = replace(morph, samples=samples)

    phase = morph.phase
    q_entry = robot.q if morph.q_entry is None else morph.q_entry
    elapsed = t - morph.phase_entry_time_s

    def progress(name: str) -> float:
        return elapsed / guards.durations_s[name]

    throttle = None
    splay_err = math.inf
    offset = col_com_offset(model, robot.q)
    if phase in ("Splay", "PropAlign", "SpinUp", "Aerial", "SpinDown", "Unsplay"):
        splay_err = float(np.max(np.abs(robot.q[:, 0] - plan.splay_q[:, 0])))

    advance = False
    guard_name, guard_value = "", 0.0

    if morph.fault is not None:
        q_cmd = q_entry
    elif phase == "Legged":
        q_cmd = q_entry if morph.q_entry is not None else plan.stand_q
        advance = morph.target == "aerial"
    elif phase == "Crouch":
        s = progress(phase)
        path = _height_pose(model, STANDING_HEIGHT_M, plan.h_crouch, s)
        q_cmd = _blend(path, plan.stand_q, q_entry, s)
        guard_name, guard_value = "perch_contact_N", load_f * weight
        advance = guard_value >= guards.perch_contact_threshold_N
    elif phase == "WeightTransfer":
        s = progress(phase)
        h0 = plan.h_crouch
        path = _height_pose(model, h0, plan.h_lift, s)
        q_cmd = _blend(path, standing_pose(model, h0), q_entry, s)
        guard_name, guard_value = "perch_load_fraction", load_f
        advance = s >= 1.0 and load_f >= guards.weight_transfer_fraction
    elif phase == "Splay":
        s = _smooth(progress(phase))
        q_cmd = q_entry + s * (plan.splay_q - q_entry)
        err = float(np.max(np.abs(robot.q - plan.splay_q)))
        guard_name, guard_value = "splay_error_rad", err
        advance = progress(phase) >= 1.0 and err < guards.splay_tolerance_rad
    elif phase == "PropAlign":
        s = _smooth(progress(phase))
        q_cmd = q_entry + s * (plan.aligned_q - q_entry)
        guard_name, guard_value = "col_com_offset_m", offset
        advance = progress(phase) >= 1.0 and offset < guards.col_com_tolerance_m
    elif phase == "SpinUp":
        q_cmd = q_entry
        s = progress(phase)
        throttle = guards.spinup_fraction * hover * min(s, 1.0)
        guard_name, guard_value = "spinup_progress", s
        advance = s >= 1.0
    elif phase == "Aerial":
        q_cmd = q_entry
        landed = total_contact_normal(robot) > guards.perch_contact_threshold_N and \
            abs(float(robot.velocity[2])) < guards.landing_speed_mps
        since = (morph.landing_since if morph.landing_since is not None else t) if landed else None
        morph = replace(morph, landing_since=since)
        advance = (morph.target == "legged" and since is not None
                   and t - since >= guards.landing_window_s)
    elif phase == "SpinDown":
        q_cmd = q_entry
        s = progress(phase)
        throttle = morph.throttle_entry * max(0.0, 1.0 - s)
        guard_name, guard_value = "spindown_progress", s
        advance = s >= 1.0
    elif phase == "Unsplay":
        s = _smooth(progress(phase))
        q_cmd = q_entry + s * (plan.lift_q - q_entry)
        err = float(np.max(np.abs(robot.q - plan.lift_q)))
        guard_name, guard_value = "unsplay_error_rad", err
        advance = progress(phase) >= 1.0 and err < guards.splay_tolerance_rad
    elif phase == "WeightReturn":
        s = progress(phase)
        path = _height_pose(model, plan.h_lift, plan.h_return, s)
        q_cmd = _blend(path, plan.lift_q, q_entry, s)
        guard_name, guard_value = "perch_load_fraction", load_f
        advance = s >= 1.0 and load_f <= 1.0 - guards.weight_transfer_fraction
    else:  # Stand
        s = progress(phase)
        path = _height_pose(model, plan.h_return, STANDING_HEIGHT_M, s)
        q_cmd = _blend(path, standing_pose(model, plan.h_return), q_entry, s)
        err = float(np.max(np.abs(robot.q - plan.stand_q)))
        guard_name, guard_value = "stand_error_rad", err
        advance = s >= 1.0 and err < guards.splay_tolerance_rad

    snapshot = GuardSnapshot(load_f, splay_err, offset)
    morph = replace(morph, guards=snapshot)

    if morph.fault is None and phase in guards.durations_s and elapsed > guards.timeout_s(phase) \
            and not advance:
        fault = MorphFault(phase, guard_name, guard_value, t)
        morph = replace(morph, fault=fault, q_entry=q_cmd)
        if events is not None:
            events.append(Event(t, "morph", "fault", f"{fault};{snapshot.describe()}"))
    elif advance:
        nxt = _next_phase(phase)
        throttle_entry = morph.throttle_entry
        if nxt == "SpinDown":
            throttle_entry = float(np.mean(robot.thrust)) / model.max_rotor_thrust
        # a finished ramp hands its final setpoint on; ramp phases start from it
        hold = robot.q if phase == "Legged" else q_cmd
        target = morph.target
        if nxt in ("Aerial", "Legged"):
            target = None
        if events is not None:
            events.append(Event(t, "morph", "transition", f"{phase}->{nxt};{snapshot.describe()}"))
        morph = replace(morph, phase=nxt, phase_entry_time_s=t, q_entry=np.array(hold),
                        throttle_entry=throttle_entry, landing_since=None, target=target)
    elif morph.q_entry is None:
        morph = replace(morph, q_entry=np.array(q_cmd))

    gate = morph.fault is None and phase in GATE_OPEN
    if not gate:
        throttle = 0.0
    return morph, MorphCommand(np.array(q_cmd), gate, throttle)


def _next_phase(phase: str) -> str:
    if phase == "Aerial":
        return "SpinDown"
    if phase in FORWARD[:-1]:
        return FORWARD[FORWARD.index(phase) + 1]
    return REVERSE[REVERSE.index(phase) + 1]
