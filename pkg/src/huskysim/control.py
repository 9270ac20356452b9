"""Closed-loop controllers.

Legged mode: a trot where swing feet follow Bezier arcs to Raibert touchdown
points and stance feet hold body height and attitude (kinematic hold of the
desired pose plus a virtual-model correction mapped through J^T). Optional
differential thrust assists roll while trotting.

Aerial mode: position -> attitude PID cascade feeding an exact 4x4 mixer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import gait
from . import kinematics as kin
from .design import G
from .rotation import quat_to_matrix, rot_z, rpy_from_quat
from .sim import BodyState, Event, RobotModel, center_of_mass, leg_frames

STANDING_HEIGHT_M = 0.32


# --- poses --------------------------------------------------------------------

def standing_pose(model: RobotModel, height: float = STANDING_HEIGHT_M, width: float = 0.0,
                  iterations: int = 6) -> np.ndarray:
    """Joint angles with all feet at ``height`` below the hips, centred under the CoM.

    ``width`` pushes every foot outward by that many metres.
    """
    q = np.zeros((4, 3))
    com = np.zeros(3)
    for _ in range(iterations):
        for i, leg in enumerate(model.legs):
            target = (com[0], com[1] + leg.side_sign * width, -height)
            q[i] = kin.inverse_kinematics(leg, target)
        com = center_of_mass(model, q)
    return q


def neutral_feet(model: RobotModel, height: float = STANDING_HEIGHT_M, width: float = 0.0) -> np.ndarray:
    """Hip-relative ground-plane foot positions (x, y) of the standing pose."""
    q = standing_pose(model, height, width)
    foot, _, _, _ = leg_frames(model, q)
    return foot[:, :2].copy()


# --- legged mode --------------------------------------------------------------

@dataclass(frozen=True)
class StanceGains:
    # virtual force on the body per stance leg, mapped to joint offsets through J^T
    # the rate terms act through the servo lag, so they stay small
    height_kp: float = 300.0      # N/m
    height_kd: float = 5.0        # N s/m
    attitude_kp: float = 20.0     # N m/rad (total)
    attitude_kd: float = 0.5      # N m s/rad (total)
    compliance: float = 0.02      # rad per N m


@dataclass(frozen=True)
class TrotControllerConfig:
    v_des: tuple = (0.0, 0.0)
    schedule: gait.GaitSchedule = field(default_factory=gait.GaitSchedule)
    k_v: float = gait.DEFAULT_KV
    height: float = STANDING_HEIGHT_M
    stance: StanceGains = field(default_factory=StanceGains)
    apex_height: float = 0.16      # P2 offset; the foot clears 0.375 of it
    stance_width: float = 0.0
    touchdown_press: float = 0.002
    reach_fraction: float = 0.8
    max_accel: float = 0.4        # m/s^2 ramp on the commanded velocity

    def __post_init__(self):
        gains = (self.k_v, self.stance.height_kp, self.stance.height_kd, self.stance.attitude_kp,
                 self.stance.attitude_kd, self.stance.compliance)
        if any(g < 0 for g in gains):
            raise ValueError("controller gains must be >= 0")
        if not 0.0 < self.height < 0.95 * kin.DEFAULT_FEMUR_M + 0.95 * kin.DEFAULT_TIBIA_M:
            raise ValueError(f"height setpoint {self.height} outside leg reach")


def level_frame(state: BodyState):
    """Body rotation, yaw-only rotation and the residual tilt (Rz^T R)."""
    R = quat_to_matrix(state.orientation)
    yaw = math.atan2(R[1, 0], R[0, 0])
    Rz = rot_z(yaw)
    return R, Rz, Rz.T @ R


def stance_commands(model: RobotModel, state: BodyState, legs, height: float, gains: StanceGains,
                    terrain_height: float = 0.0, events: list | None = None,
                    source: str = "stance", v_des=(0.0, 0.0), anchors=None) -> dict[int, np.ndarray]:
    """Joint commands for the stance legs ``legs`` holding a level pose at ``height``.

    Each foot stays where it is in the world (or at ``anchors[i]``, a world
    point, when given); its command is the IK solution
    for the desired (level, at height) body pose, plus C * J^T(-F) with F the
    virtual-model force that leg should exert on the body. The desired pose
    leads the body by ``v_des`` times the servo ramp lag, so the stance legs
    carry the body forward at ``v_des`` (heading frame).
    """
    R, Rz, tilt = level_frame(state)
    foot, _, _, J = leg_frames(model, state.q)
    hips_b = model.hips
    foot_w = state.position + (hips_b + foot) @ R.T
    com = center_of_mass(model, state.q)
    lead = 2.0 / model.servo.bandwidth
    v_world = Rz @ np.array([v_des[0], v_des[1], 0.0])
    p_des = np.array([state.position[0] + lead * v_world[0], state.position[1] + lead * v_world[1],
                      terrain_height + height])

    legs = list(legs)
    out: dict[int, np.ndarray] = {}
    if not legs:
        return out
    roll, pitch, _ = rpy_from_quat(state.orientation)
    w = state.omega
    n = len(legs)
    f_height = (gains.height_kp * (p_des[2] - state.position[2]) - gains.height_kd * state.velocity[2]) / n
    tau = np.array([-gains.attitude_kp * roll - gains.attitude_kd * w[0],
                    -gains.attitude_kp * pitch - gains.attitude_kd * w[1]])
    arms = hips_b[legs] + foot[legs] - com
    A = np.vstack([arms[:, 1], -arms[:, 0]])
    # a diagonal pair is nearly colinear with the CoM: drop the unreachable direction
    f_att = np.linalg.lstsq(A, tau, rcond=1e-3)[0] if np.any(tau) else np.zeros(n)

    for k, i in enumerate(legs):
        leg = model.legs[i]
        anchor = foot_w[i] if anchors is None or anchors.get(i) is None else anchors[i]
        rel = Rz.T @ (anchor - p_des) - hips_b[i]
        try:
            q_nom = np.array(kin.inverse_kinematics(leg, rel))
        except kin.KinematicsError:
            q_nom = np.array(kin.inverse_kinematics(leg, kin.clamp_to_workspace(leg, rel)))
            if events is not None:
                events.append(Event(state.t, source, "ik_clamp", f"leg={kin.LEG_NAMES[i]}"))
        f_body = np.array([0.0, 0.0, f_height + f_att[k]])
        out[i] = q_nom + gains.compliance * (J[i].T @ (-f_body))
    return out


class TrotController:
    """Diagonal-pair trot: Raibert placement, Bezier swing, stance hold."""

    def __init__(self, model: RobotModel, cfg: TrotControllerConfig, terrain_height: float = 0.0):
        self.model = model
        self.cfg = cfg
        self.terrain_height = terrain_height
        self.neutral = neutral_feet(model, cfg.height, cfg.stance_width)
        self.reach = cfg.reach_fraction * min(leg.reach_m for leg in model.legs)
        # ground-plane clamp radius around the neutral point
        self.clamp = math.sqrt(max(self.reach ** 2 - cfg.height ** 2, 1e-6))
        self.swing_start: list[np.ndarray | None] = [None] * 4
        self.prev_mode: list[str | None] = [None] * 4
        self.events: list[Event] = []
        self.last_targets = np.zeros((4, 2))
        self.v_cmd = np.zeros(2)
        self._t_last: float | None = None
        self.anchors: dict[int, np.ndarray | None] = {i: None for i in range(4)}
        # the servo trails its command by about 2/bandwidth on a ramp
        self.lag_s = 2.0 / model.servo.bandwidth

    def set_velocity(self, v_des) -> None:
        self.cfg = replace(self.cfg, v_des=tuple(float(v) for v in v_des))

    def touchdown_target(self, state: BodyState, leg: int) -> np.ndarray:
        _, Rz, _ = level_frame(state)
        v_level = (Rz.T @ state.velocity)[:2]
        return gait.raibert_foot_target(v_level, self.v_cmd, self.cfg.schedule.stance_s,
                                        self.cfg.k_v, self.neutral[leg], reach_radius=self.clamp)

    def _ramp(self, t: float) -> None:
        dt = 0.0 if self._t_last is None else max(t - self._t_last, 0.0)
        self._t_last = t
        err = np.asarray(self.cfg.v_des, dtype=float) - self.v_cmd
        self.v_cmd = self.v_cmd + gait.clamp_radius(err, self.cfg.max_accel * dt)

    def update(self, state: BodyState, t: float) -> np.ndarray:
        cfg = self.cfg
        self._ramp(t)
        R, Rz, tilt = level_frame(state)
        foot, _, _, _ = leg_frames(self.model, state.q)
        hips_b = self.model.hips
        cmd = np.array(state.q, dtype=float)
        stance_legs = []
        foot_w = state.position + (hips_b + foot) @ R.T
        for i, name in enumerate(kin.LEG_NAMES):
            ph = gait.phase(t, cfg.schedule, name)
            if ph.mode == "stance":
                stance_legs.append(i)
                if self.prev_mode[i] != "stance":
                    # pin the foot on the ground where it lands
                    self.anchors[i] = np.array([foot_w[i, 0], foot_w[i, 1],
                                                self.terrain_height - cfg.touchdown_press])
                self.prev_mode[i] = "stance"
                continue
            self.anchors[i] = None
            if self.prev_mode[i] != "swing" or self.swing_start[i] is None:
                self.swing_start[i] = tilt @ foot[i]
            self.prev_mode[i] = "swing"
            target = self.touchdown_target(state, i)
            self.last_targets[i] = target
            # touchdown just below the actual ground, not the nominal height
            hip_z = state.position[2] + (tilt @ hips_b[i])[2]
            ground = max(self.terrain_height - hip_z, -cfg.height - 0.05)
            end = np.array([target[0], target[1], ground - cfg.touchdown_press])
            start = self.swing_start[i]
            apex = max(cfg.apex_height, 1e-3 + max(start[2], end[2]) - 0.5 * (start[2] + end[2]))
            curve = gait.make_swing_curve(start, end, apex)
            pos, _ = gait.bezier_eval(curve, min(1.0, ph.progress + self.lag_s / cfg.schedule.swing_s))
            cmd[i] = self._ik(i, tilt.T @ pos, state.t)
        for i, q in stance_commands(self.model, state, stance_legs, cfg.height, cfg.stance,
                                    self.terrain_height, self.events, "trot", self.v_cmd,
                                    self.anchors).items():
            cmd[i] = q
        return self._limit(cmd)

    def _ik(self, i: int, p: np.ndarray, t: float) -> np.ndarray:
        leg = self.model.legs[i]
        try:
            return np.array(kin.inverse_kinematics(leg, p))
        except kin.KinematicsError:
            self.events.append(Event(t, "trot", "ik_clamp", f"leg={kin.LEG_NAMES[i]}"))
            return np.array(kin.inverse_kinematics(leg, kin.clamp_to_workspace(leg, p)))

    def _limit(self, cmd: np.ndarray) -> np.ndarray:
        for i, leg in enumerate(self.model.legs):
            for j, (lo, hi) in enumerate(leg.joint_limits):
                cmd[i, j] = min(max(cmd[i, j], lo), hi)
        return cmd


def push_recovery_response(controller: TrotController, state: BodyState, t: float) -> np.ndarray:
    """Commands after a torso push; the Raibert velocity-error term does the work."""
    return controller.update(state, t)


class FallDetector:
    """Flags a fall once body height stays below a fraction of the setpoint."""

    def __init__(self, height_setpoint: float, fraction: float = 0.5, hold_s: float = 0.2,
                 terrain_height: float = 0.0):
        self.threshold = terrain_height + fraction * height_setpoint
        self.hold_s = hold_s
        self.below_since: float | None = None
        self.fallen = False

    def update(self, state: BodyState) -> bool:
        if state.position[2] < self.threshold:
            if self.below_since is None:
                self.below_since = state.t
            if state.t - self.below_since > self.hold_s:
                self.fallen = True
        else:
            self.below_since = None
        return self.fallen


# --- roll assist ----------------------------------------------------------------

@dataclass(frozen=True)
class RollAssistConfig:
    kp: float = 60.0              # N m per rad
    kd: float = 1.0               # N m s per rad
    cap: float = 0.3              # max |increment| as a fraction of rotor max thrust

    def __post_init__(self):
        if not 0.0 <= self.cap <= 0.5:
            raise ValueError("cap must lie in [0, 0.5]")
        if self.kp < 0 or self.kd < 0:
            raise ValueError("gains must be >= 0")

    @property
    def base_throttle(self) -> float:
        # idle level the increments ride on, so both signs stay realisable
        return self.cap


def roll_effectiveness(model: RobotModel, state: BodyState) -> float:
    """Roll moment (N m) about the support per newton of left-up/right-down thrust.

    The pivot is the centroid of the loaded feet: with the feet planted the
    lateral rotor force acting above the ground dominates the roll moment.
    """
    foot, knee, axis, _ = leg_frames(model, state.q)
    loaded = state.foot_forces[:, 2] > 1e-6
    feet = model.hips + foot
    pivot = feet[loaded].mean(axis=0) if loaded.any() else feet.mean(axis=0)
    r = model.hips + knee - pivot
    side = np.array([leg.side_sign for leg in model.legs])
    return float((side * np.cross(r, axis)[:, 0]).sum())


def roll_assist(model: RobotModel, state: BodyState, cfg: RollAssistConfig) -> np.ndarray:
    """Throttle increments: left pair +delta, right pair -delta, zero mean."""
    roll, _, _ = rpy_from_quat(state.orientation)
    eff = roll_effectiveness(model, state)
    if abs(eff) < 1e-6:
        return np.zeros(4)
    tau = -(cfg.kp * roll + cfg.kd * state.omega[0])
    delta = min(max(tau / eff / model.max_rotor_thrust, -cfg.cap), cfg.cap)
    side = np.array([leg.side_sign for leg in model.legs])
    return side * delta


# --- aerial mode ----------------------------------------------------------------

class PID:
    """PID on a measured error with a clamped integrator (anti-windup)."""

    def __init__(self, kp: float, ki: float = 0.0, kd: float = 0.0, i_limit: float = math.inf):
        self.kp, self.ki, self.kd = kp, ki, kd
        self.i_limit = i_limit
        self.integral = 0.0

    def update(self, error: float, rate: float, dt: float, freeze: bool = False) -> float:
        """``rate`` is d(error)/dt supplied by the caller (usually -measured velocity)."""
        if not freeze and self.ki:
            self.integral = min(max(self.integral + error * dt, -self.i_limit), self.i_limit)
        return self.kp * error + self.ki * self.integral + self.kd * rate

    def reset(self) -> None:
        self.integral = 0.0


@dataclass(frozen=True)
class HoverControllerConfig:
    position_gains: tuple = (1.2, 0.15, 1.8)     # kp, ki, kd (x and y)
    altitude_gains: tuple = (6.0, 1.5, 4.5)
    attitude_gains: tuple = (150.0, 20.0, 22.0)  # roll/pitch, per unit inertia
    yaw_gains: tuple = (16.0, 1.0, 8.0)
    max_tilt_rad: float = 0.3
    max_climb_accel: float = 3.0
    integral_limit: float = 0.5
    integral_zone_m: float = 0.1    # position integrators run only inside this error band
    setpoint: tuple = (0.0, 0.0, 1.0)
    yaw_setpoint: float = 0.0
    hover_throttle: float | None = None

    def __post_init__(self):
        if self.hover_throttle is not None and not 0.0 < self.hover_throttle < 1.0:
            raise ValueError("hover throttle must lie in (0, 1)")


@dataclass
class MixerResult:
    thrusts: np.ndarray
    saturated: bool


def allocation_matrix(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Map from rotor thrusts (N) to (Fz, tau_x, tau_y, tau_z) about the CoM."""
    _, knee, axis, _ = leg_frames(model, q)
    com = center_of_mass(model, q)
    r = model.hips + knee - com
    spin = np.asarray(model.spin)
    torque = np.cross(r, axis) + model.yaw_drag * spin[:, None] * axis
    return np.vstack([axis[:, 2], torque.T])


def mixer(total_thrust_N: float, torques, allocation: np.ndarray, max_thrust: float,
          events: list | None = None, t: float = 0.0) -> MixerResult:
    """Rotor thrusts realising (thrust, torques); torque is scaled back first when infeasible."""
    wrench = np.array([total_thrust_N, *np.asarray(torques, dtype=float)])
    A_inv = np.linalg.inv(allocation)
    thrusts = A_inv @ wrench
    if np.all(thrusts >= 0.0) and np.all(thrusts <= max_thrust):
        return MixerResult(thrusts, False)
    base = A_inv @ np.array([total_thrust_N, 0.0, 0.0, 0.0])
    if np.any(base < 0.0) or np.any(base > max_thrust):
        base = np.clip(base, 0.0, max_thrust)
    delta = thrusts - base
    lam = 1.0
    for b, d in zip(base, delta):
        if d > 0:
            lam = min(lam, (max_thrust - b) / d)
        elif d < 0:
            lam = min(lam, -b / d)
    lam = max(0.0, lam)
    out = np.clip(base + lam * delta, 0.0, max_thrust)
    if events is not None:
        events.append(Event(t, "mixer", "saturation", f"torque_scale={lam:.4f}"))
    return MixerResult(out, True)


class HoverController:
    """Position/altitude outer loop, attitude PID inner loop, exact mixer."""

    def __init__(self, model: RobotModel, cfg: HoverControllerConfig | None = None):
        self.model = model
        self.cfg = cfg or HoverControllerConfig()
        c = self.cfg
        self.hover_throttle = c.hover_throttle if c.hover_throttle is not None else model.hover_throttle
        if not 0.0 < self.hover_throttle < 1.0:
            raise ValueError("hover throttle must lie in (0, 1)")
        lim = c.integral_limit
        self.pid_x = PID(*c.position_gains, i_limit=lim)
        self.pid_y = PID(*c.position_gains, i_limit=lim)
        self.pid_z = PID(*c.altitude_gains, i_limit=lim)
        self.pid_roll = PID(*c.attitude_gains, i_limit=0.2)
        self.pid_pitch = PID(*c.attitude_gains, i_limit=0.2)
        self.pid_yaw = PID(*c.yaw_gains, i_limit=0.2)
        self.setpoint = np.array(c.setpoint, dtype=float)
        self.yaw_setpoint = c.yaw_setpoint
        self.events: list[Event] = []
        self._allocation = None
        self._allocation_q = None
        self.last_saturated = False

    def set_setpoint(self, position, yaw: float | None = None) -> None:
        self.setpoint = np.array(position, dtype=float)
        if yaw is not None:
            self.yaw_setpoint = yaw

    def allocation(self, q: np.ndarray) -> np.ndarray:
        if self._allocation is None or not np.array_equal(q, self._allocation_q):
            self._allocation = allocation_matrix(self.model, q)
            self._allocation_q = np.array(q)
        return self._allocation

    def update(self, state: BodyState, dt: float, q_mixer: np.ndarray | None = None) -> np.ndarray:
        c = self.cfg
        m = self.model.mass
        roll, pitch, yaw = rpy_from_quat(state.orientation)
        e = self.setpoint - state.position
        v = state.velocity
        freeze = self.last_saturated
        zone = c.integral_zone_m
        ax = self.pid_x.update(e[0], -v[0], dt, freeze or abs(e[0]) > zone)
        ay = self.pid_y.update(e[1], -v[1], dt, freeze or abs(e[1]) > zone)
        az = self.pid_z.update(e[2], -v[2], dt, freeze or abs(e[2]) > zone)
        az = min(max(az, -0.8 * G), c.max_climb_accel)
        a_max = G * math.tan(c.max_tilt_rad)
        norm = math.hypot(ax, ay)
        if norm > a_max:
            ax, ay = ax * a_max / norm, ay * a_max / norm
        cy, sy = math.cos(yaw), math.sin(yaw)
        a_fwd = cy * ax + sy * ay
        a_left = -sy * ax + cy * ay
        pitch_des = math.atan2(a_fwd, G)
        roll_des = -math.atan2(a_left, G)
        tilt = max(math.cos(roll) * math.cos(pitch), 0.5)
        thrust = m * (G + az) / tilt

        I = self.model.inertia
        w = state.omega
        yaw_err = math.atan2(math.sin(self.yaw_setpoint - yaw), math.cos(self.yaw_setpoint - yaw))
        tau = np.array([
            I[0, 0] * self.pid_roll.update(roll_des - roll, -w[0], dt, freeze),
            I[1, 1] * self.pid_pitch.update(pitch_des - pitch, -w[1], dt, freeze),
            I[2, 2] * self.pid_yaw.update(yaw_err, -w[2], dt, freeze),
        ])
        q = state.q if q_mixer is None else q_mixer
        res = mixer(thrust, tau, self.allocation(q), self.model.max_rotor_thrust, self.events, state.t)
        self.last_saturated = res.saturated
        return np.clip(res.thrusts / self.model.max_rotor_thrust, 0.0, 1.0)

    def reset(self) -> None:
        for pid in (self.pid_x, self.pid_y, self.pid_z, self.pid_roll, self.pid_pitch, self.pid_yaw):
            pid.reset()
