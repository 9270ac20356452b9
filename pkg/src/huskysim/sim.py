"""Floating-base simulator: one rigid body, four kinematic legs, point contacts.

The legs are massless for the rotational dynamics (their inertia is lumped into
the body tensor) but their segment masses set the centre of mass, about which
all contact and thruster moments are taken. Joints follow their commands
through a critically damped servo model with rate and torque limits.

Integration is a symmetric semi-implicit scheme at a fixed step: gravity is
integrated exactly (free flight conserves energy to round-off) and the stiff
contact damping and friction terms are linearised and solved implicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kinematics as kin
from .design import G, MAX_THRUST_N, MassBudget, total_mass
from .rotation import integrate_quat, quat_to_matrix

GRAVITY = np.array([0.0, 0.0, -G])
MAX_DT = 0.005

# pad under the body carrying the robot while it morphs
# wide enough in x to hold the CoM both crouched (legs forward) and splayed
DEFAULT_PERCH_POINTS = ((0.15, 0.08, -0.16), (0.15, -0.08, -0.16),
                        (-0.15, -0.08, -0.16), (-0.15, 0.08, -0.16))


class SimulationFault(RuntimeError):
    """Non-finite state; carries the last valid state and the offending term."""

    def __init__(self, message: str, last_state: "BodyState", term: str):
        super().__init__(message)
        self.last_state = last_state
        self.term = term


@dataclass
class Event:
    t: float
    source: str
    kind: str
    detail: str = ""


@dataclass(frozen=True)
class ContactParams:
    stiffness: float = 2.0e4
    damping: float = 150.0
    mu: float = 0.7
    slip_velocity: float = 0.01

    def __post_init__(self):
        if not (self.stiffness > 0 and self.damping >= 0 and self.mu >= 0 and self.slip_velocity > 0):
            raise ValueError(f"invalid contact parameters {self}")


@dataclass(frozen=True)
class ServoParams:
    bandwidth: float = 60.0          # rad/s, critically damped
    max_rate: float = 6.0            # rad/s
    stall_torque: tuple = (9.9, 9.9, 10.6)  # frontal, sagittal, knee (N m)
    reflected_inertia: float = 0.02  # kg m^2


@dataclass(frozen=True)
class Terrain:
    height: float = 0.0
    friction: float | None = None
    perch_points: tuple = DEFAULT_PERCH_POINTS

    def __post_init__(self):
        if self.friction is not None and self.friction < 0:
            raise ValueError("friction must be >= 0")


def box_inertia(mass: float, dims=(0.4, 0.3, 0.15)) -> np.ndarray:
    a, b, c = dims
    return np.diag([mass * (b * b + c * c) / 12.0,
                    mass * (a * a + c * c) / 12.0,
                    mass * (a * a + b * b) / 12.0])


@dataclass(frozen=True)
class RobotModel:
    budget: MassBudget = field(default_factory=MassBudget)
    legs: tuple = field(default_factory=kin.default_legs)
    body_dims: tuple = (0.4, 0.3, 0.15)
    body_com_offset: tuple = (0.0, 0.0, 0.0)
    inertia: np.ndarray | None = None
    contact: ContactParams = field(default_factory=ContactParams)
    servo: ServoParams = field(default_factory=ServoParams)
    total_max_thrust: float = MAX_THRUST_N
    spin: tuple = (1.0, -1.0, 1.0, -1.0)
    yaw_drag: float = 0.012

    def __post_init__(self):
        if len(self.legs) != 4:
            raise ValueError("the robot has four legs")
        if self.inertia is None:
            object.__setattr__(self, "inertia", box_inertia(self.mass, self.body_dims))
        inertia = np.array(self.inertia, dtype=float)
        if not np.allclose(inertia, inertia.T) or np.any(np.linalg.eigvalsh(inertia) <= 0):
            raise ValueError("inertia tensor must be symmetric positive definite")
        inertia.setflags(write=False)
        object.__setattr__(self, "inertia", inertia)
        inv = np.linalg.inv(inertia)
        inv.setflags(write=False)
        object.__setattr__(self, "_inertia_inv", inv)
        hips = np.array([leg.hip_offset_m for leg in self.legs])
        hips.setflags(write=False)
        object.__setattr__(self, "_hips", hips)
        # per-leg constants used every step
        body_m, segs = self.point_masses()
        cache = {
            "l1": np.array([leg.femur_m for leg in self.legs]),
            "l2": np.array([leg.tibia_m for leg in self.legs]),
            "side": np.array([leg.side_sign for leg in self.legs]),
            "lo": np.array([[lim[0] for lim in leg.joint_limits] for leg in self.legs]),
            "hi": np.array([[lim[1] for lim in leg.joint_limits] for leg in self.legs]),
            "offsets": bool(np.any([leg.knee_to_prop_offset_m for leg in self.legs])),
            "body_m": body_m,
            "seg_m": np.array([m for _, m in segs]),
        }
        object.__setattr__(self, "_cache", cache)

    @property
    def mass(self) -> float:
        return total_mass(self.budget)

    @property
    def weight(self) -> float:
        return self.mass * G

    @property
    def max_rotor_thrust(self) -> float:
        return self.total_max_thrust / 4.0

    @property
    def hover_throttle(self) -> float:
        return self.weight / self.total_max_thrust

    @property
    def hips(self) -> np.ndarray:
        return self._hips

    @property
    def inertia_inv(self) -> np.ndarray:
        return self._inertia_inv

    def point_masses(self) -> tuple[float, list[tuple[str, float]]]:
        """Body mass and per-leg point masses as (segment, kg).

        Segments: hip (hip + all but one servo), femur midpoint (upper leg),
        knee (one servo, motor, propeller), shank midpoint (lower leg),
        foot (ankle + foot).
        """
        b = self.budget
        body = b.body_kg + b.battery_kg
        leg = [
            ("hip", b.hip_kg + (b.servo_count_per_leg - 1) * b.servo_kg),
            ("femur", b.upper_leg_kg),
            ("knee", b.servo_kg + b.bldc_kg + b.prop_kg),
            ("shank", b.lower_leg_kg),
            ("foot", b.ankle_kg + b.foot_kg),
        ]
        return body, leg


@dataclass
class BodyState:
    position: np.ndarray
    orientation: np.ndarray
    velocity: np.ndarray
    omega: np.ndarray
    q: np.ndarray            # (4, 3) joint angles, legs FL FR BR BL
    qd: np.ndarray           # (4, 3)
    thrust: np.ndarray       # (4,) N
    foot_forces: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))
    perch_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def copy(self) -> "BodyState":
        return BodyState(self.position.copy(), self.orientation.copy(), self.velocity.copy(),
                         self.omega.copy(), self.q.copy(), self.qd.copy(), self.thrust.copy(),
                         self.foot_forces.copy(), self.perch_force.copy(), self.t)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (
            self.position, self.orientation, self.velocity, self.omega, self.q, self.qd, self.thrust))


def make_state(q, position=(0.0, 0.0, 0.3), orientation=(1.0, 0.0, 0.0, 0.0),
               velocity=(0.0, 0.0, 0.0), omega=(0.0, 0.0, 0.0), t: float = 0.0) -> BodyState:
    q = np.array(q, dtype=float).reshape(4, 3)
    return BodyState(np.array(position, dtype=float), np.array(orientation, dtype=float),
                     np.array(velocity, dtype=float), np.array(omega, dtype=float),
                     q, np.zeros((4, 3)), np.zeros(4), t=t)


# --- leg geometry, vectorised over the four legs ------------------------------

def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """np.cross for (..., 3) arrays without the axis bookkeeping overhead."""
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def leg_frames(model: RobotModel, q: np.ndarray):
    """Per-leg (hip frame) foot, knee, rotor axis and foot Jacobian."""
    c = model._cache
    l1, l2 = c["l1"], c["l2"]
    q1, q2, q3 = q[:, 0], q[:, 1], q[:, 2]
    shank = q2 + kin.fourbar_knee_map(q3)
    s1, c1 = np.sin(q1), np.cos(q1)
    s2, c2 = np.sin(q2), np.cos(q2)
    ss, cs = np.sin(shank), np.cos(shank)
    xk, zk = -l1 * s2, -l1 * c2
    xf, zf = xk - l2 * ss, zk - l2 * cs
    foot = np.stack([xf, -s1 * zf, c1 * zf], axis=1)
    knee = np.stack([xk, -s1 * zk, c1 * zk], axis=1)
    if c["offsets"]:
        for i, leg in enumerate(model.legs):
            knee[i] = kin.knee_position(leg, q[i])
    axis = c["side"][:, None] * np.stack([np.zeros(4), c1, s1], axis=1)
    dx2, dz2 = -l1 * c2 - l2 * cs, l1 * s2 + l2 * ss
    dx3, dz3 = -l2 * cs, l2 * ss
    J = np.empty((4, 3, 3))
    J[:, 0, 0] = 0.0
    J[:, 0, 1] = dx2
    J[:, 0, 2] = dx3
    J[:, 1, 0] = -c1 * zf
    J[:, 1, 1] = -s1 * dz2
    J[:, 1, 2] = -s1 * dz3
    J[:, 2, 0] = -s1 * zf
    J[:, 2, 1] = c1 * dz2
    J[:, 2, 2] = c1 * dz3
    return foot, knee, axis, J


def segment_points(model: RobotModel, q: np.ndarray, frames=None) -> np.ndarray:
    """Body-frame positions of the per-leg point masses, shape (4, 5, 3)."""
    foot, knee, _, _ = leg_frames(model, q) if frames is None else frames
    hips = model.hips
    knee_b = hips + knee
    foot_b = hips + foot
    return np.stack([hips, 0.5 * (hips + knee_b), knee_b, 0.5 * (knee_b + foot_b), foot_b], axis=1)


def center_of_mass(model: RobotModel, state_or_q, frames=None) -> np.ndarray:
    """Whole-robot centre of mass in the body frame."""
    q = state_or_q.q if isinstance(state_or_q, BodyState) else np.asarray(state_or_q, dtype=float)
    body_m, masses = model._cache["body_m"], model._cache["seg_m"]
    pts = segment_points(model, q, frames)
    moment = body_m * np.asarray(model.body_com_offset) + np.einsum("j,ijk->k", masses, pts)
    return moment / (body_m + 4.0 * masses.sum())


def rotor_positions(model: RobotModel, q: np.ndarray) -> np.ndarray:
    _, knee, _, _ = leg_frames(model, q)
    return model.hips + knee


# --- forces -------------------------------------------------------------------

def _contact(p, v, terrain: Terrain, params: ContactParams, with_jacobian: bool = False,
             lookahead: float = 0.0):
    # lookahead > 0 evaluates the spring at p + lookahead * v, which shows up as extra damping
    mu = params.mu if terrain.friction is None else terrain.friction
    eps = params.slip_velocity
    depth = terrain.height - p[:, 2]
    damping = params.damping + params.stiffness * lookahead
    raw = params.stiffness * depth - damping * v[:, 2]
    active = ((depth > 0.0) | (lookahead > 0.0)) & (raw > 0.0)
    normal = np.where(active, raw, 0.0)
    vt = v[:, :2]
    speed = np.sqrt(np.sum(vt * vt, axis=1))
    x = speed / eps
    th = np.tanh(x)
    # tanh(s/eps)/s, with its limit 1/eps at zero slip
    ratio = np.where(x > 1e-8, th / np.maximum(speed, 1e-300), 1.0 / eps)
    # |F_t| = mu N tanh(|v|/v_eps) < mu N
    scale = mu * normal * ratio
    out = np.empty_like(p)
    out[:, :2] = -scale[:, None] * vt
    out[:, 2] = normal
    if not with_jacobian:
        return out, None
    n = len(p)
    D = np.zeros((n, 3, 3))
    unit = np.where(speed[:, None] > 1e-12, vt / np.maximum(speed, 1e-300)[:, None], 0.0)
    outer = unit[:, :, None] * unit[:, None, :]
    sech2 = 1.0 - th * th
    eye2 = np.eye(2)[None]
    D[:, :2, :2] = -(mu * normal)[:, None, None] * (
        ratio[:, None, None] * (eye2 - outer) + (sech2 / eps)[:, None, None] * outer)
    c = np.where(active, damping, 0.0)
    D[:, 2, 2] = -c
    D[:, :2, 2] = (mu * c * ratio)[:, None] * vt
    return out, D


def contact_force(foot_world, foot_velocity, terrain: Terrain, params: ContactParams) -> np.ndarray:
    """Spring-damper normal force with smoothly regularised Coulomb friction.

    Accepts a single point (3,) or a batch (n, 3).
    """
    p = np.asarray(foot_world, dtype=float)
    v = np.asarray(foot_velocity, dtype=float)
    single = p.ndim == 1
    out, _ = _contact(np.atleast_2d(p), np.atleast_2d(v), terrain, params)
    return out[0] if single else out


def thruster_wrench(model: RobotModel, state_or_q, throttles, events: list | None = None,
                    t: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Body-frame force and torque (about the centre of mass) from the four rotors."""
    q = state_or_q.q if isinstance(state_or_q, BodyState) else np.asarray(state_or_q, dtype=float)
    thr = clamp_throttles(throttles, events, t)
    return _rotor_wrench(model, q, thr * model.max_rotor_thrust)


def _rotor_wrench(model: RobotModel, q: np.ndarray, thrusts: np.ndarray, com=None):
    _, knee, axis, _ = leg_frames(model, q)
    com = center_of_mass(model, q) if com is None else com
    forces = thrusts[:, None] * axis
    r = model.hips + knee - com
    spin = np.asarray(model.spin)
    torque = np.cross(r, forces).sum(axis=0) + model.yaw_drag * (spin[:, None] * forces).sum(axis=0)
    return forces.sum(axis=0), torque


def clamp_throttles(throttles, events: list | None = None, t: float = 0.0) -> np.ndarray:
    thr = np.asarray(throttles, dtype=float).reshape(4)
    clipped = np.clip(thr, 0.0, 1.0)
    if events is not None and np.any(clipped != thr):
        events.append(Event(t, "sim", "throttle_clamped", f"requested={np.round(thr, 6).tolist()}"))
    return clipped


# --- integration --------------------------------------------------------------

def foot_positions_world(model: RobotModel, state: BodyState) -> np.ndarray:
    R = quat_to_matrix(state.orientation)
    foot, _, _, _ = leg_frames(model, state.q)
    return state.position + (model.hips + foot) @ R.T


def perch_positions_world(model: RobotModel, state: BodyState, terrain: Terrain) -> np.ndarray:
    R = quat_to_matrix(state.orientation)
    pts = np.asarray(terrain.perch_points, dtype=float).reshape(-1, 3)
    return state.position + pts @ R.T


def com_world(model: RobotModel, state: BodyState) -> tuple[np.ndarray, np.ndarray]:
    """World position and velocity of the centre of mass."""
    R = quat_to_matrix(state.orientation)
    r = R @ center_of_mass(model, state.q)
    return state.position + r, state.velocity + np.cross(R @ state.omega, r)


def _skew(r: np.ndarray) -> np.ndarray:
    out = np.zeros(r.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -r[..., 2], r[..., 1]
    out[..., 1, 0], out[..., 1, 2] = r[..., 2], -r[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -r[..., 1], r[..., 0]
    return out


def _servo_update(model: RobotModel, state: BodyState, cmd: np.ndarray, R: np.ndarray,
                  J: np.ndarray, dt: float, events: list | None):
    """Critically damped tracking, torque-saturated against the contact load, rate-limited."""
    sp = model.servo
    lo, hi = model._cache["lo"], model._cache["hi"]
    cmd = np.clip(cmd, lo, hi)
    wn = sp.bandwidth
    acc_cmd = wn * wn * (cmd - state.q) - 2.0 * wn * state.qd
    tau_ext = np.einsum("ijk,ij->ik", J, state.foot_forces @ R)
    stall = np.asarray(sp.stall_torque)
    tau_req = sp.reflected_inertia * acc_cmd - tau_ext
    tau_act = np.clip(tau_req, -stall, stall)
    if events is not None and np.any(tau_act != tau_req):
        legs, joints = np.nonzero(tau_act != tau_req)
        events.append(Event(state.t, "sim", "servo_torque_saturated",
                            ";".join(f"{kin.LEG_NAMES[i]}.{kin.JOINT_NAMES[j]}" for i, j in zip(legs, joints))))
    acc = (tau_act + tau_ext) / sp.reflected_inertia
    qd = np.clip(state.qd + acc * dt, -sp.max_rate, sp.max_rate)
    q = np.clip(state.q + qd * dt, lo, hi)
    qd = np.where((q == lo) | (q == hi), 0.0, qd)
    return q, qd, acc


def _within_cone(F: np.ndarray, mu: float) -> np.ndarray:
    tangential = np.sqrt(F[:, 0] ** 2 + F[:, 1] ** 2)
    return (F[:, 2] >= 0.0) & (tangential <= mu * F[:, 2] * (1.0 + 1e-9) + 1e-12)


def _clip_to_cone(F: np.ndarray, mu: float) -> np.ndarray:
    out = F.copy()
    out[:, 2] = np.maximum(F[:, 2], 0.0)
    tangential = np.sqrt(F[:, 0] ** 2 + F[:, 1] ** 2)
    limit = mu * out[:, 2]
    s = np.where(tangential > limit, limit / np.maximum(tangential, 1e-300), 1.0)
    out[:, :2] *= s[:, None]
    return out


def step(model: RobotModel, state: BodyState, joint_commands, throttles, terrain: Terrain,
         dt: float, events: list | None = None) -> BodyState:
    """Advance the robot by one fixed step and return the new state.

    Drift half a step under gravity, apply the contact and rotor impulse with
    contact damping and friction treated linearly implicitly, drift the second
    half. The body is integrated about its centre of mass.
    """
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"dt must lie in (0, {MAX_DT}], got {dt!r}")
    cmd = np.asarray(joint_commands, dtype=float).reshape(4, 3)
    thr = clamp_throttles(throttles, events, state.t)
    R0 = quat_to_matrix(state.orientation)
    frames0 = leg_frames(model, state.q)
    q, qd, acc = _servo_update(model, state, cmd, R0, frames0[3], dt, events)

    h = 0.5 * dt
    com0 = R0 @ center_of_mass(model, state.q, frames0)
    x = state.position + com0
    v = state.velocity + _cross(R0 @ state.omega, com0)
    x_mid = x + v * h + 0.5 * GRAVITY * h * h
    v_mid = v + GRAVITY * h
    quat_mid = integrate_quat(state.orientation, state.omega, h)
    R = quat_to_matrix(quat_mid)
    w = R @ state.omega

    frames = leg_frames(model, q)
    foot, knee, axis, J = frames
    com_b = center_of_mass(model, q, frames)
    perch_b = np.asarray(terrain.perch_points, dtype=float).reshape(-1, 3)
    n_feet = 4
    r = np.vstack([model.hips + foot - com_b, perch_b - com_b]) @ R.T
    local_v = np.vstack([np.einsum("ijk,ik->ij", J, qd), np.zeros_like(perch_b)]) @ R.T
    pts = x_mid + r
    pts_v = v_mid + _cross(w, r) + local_v
    F, D = _contact(pts, pts_v, terrain, model.contact, with_jacobian=True, lookahead=h)

    thrusts = thr * model.max_rotor_thrust
    rotor_f = (thrusts[:, None] * axis) @ R.T
    rotor_r = (model.hips + knee - com_b) @ R.T
    spin = np.asarray(model.spin)
    I_w = R @ model.inertia @ R.T
    ext_f = rotor_f.sum(axis=0)
    ext_t = (_cross(rotor_r, rotor_f).sum(axis=0)
             + model.yaw_drag * (spin[:, None] * rotor_f).sum(axis=0)
             - _cross(w, I_w @ w))

    M = np.zeros((6, 6))
    M[:3, :3] = model.mass * np.eye(3)
    M[3:, 3:] = I_w
    Gm = np.zeros((len(r), 3, 6))
    Gm[:, :, :3] = np.eye(3)
    Gm[:, :, 3:] = -_skew(r)
    mu = model.contact.mu if terrain.friction is None else terrain.friction
    implicit = np.ones(len(r), dtype=bool)
    for _ in range(len(r) + 1):
        Dk = np.where(implicit[:, None, None], D, 0.0)
        A = M - dt * np.einsum("nai,nab,nbj->ij", Gm, Dk, Gm)
        gen = np.concatenate([F.sum(axis=0) + ext_f, _cross(r, F).sum(axis=0) + ext_t])
        dxi = np.linalg.solve(A, dt * gen)
        F_eff = F + np.einsum("nab,nbj,j->na", Dk, Gm, dxi)
        bad = implicit & ~_within_cone(F_eff, mu)
        if not bad.any():
            break
        # a contact leaving the cone is sliding: freeze it at its clipped force
        F = np.where(bad[:, None], _clip_to_cone(F_eff, mu), F)
        implicit &= ~bad
    F = F_eff

    v2 = v_mid + dxi[:3]
    w2 = w + dxi[3:]
    omega_b = R.T @ w2
    quat_new = integrate_quat(quat_mid, omega_b, h)
    R_new = quat_to_matrix(quat_new)
    x_new = x_mid + v2 * h + 0.5 * GRAVITY * h * h
    v_new = v2 + GRAVITY * h
    com1 = R_new @ com_b
    p_new = x_new - com1
    vel_new = v_new - _cross(R_new @ omega_b, com1)

    t_new = (round(state.t / dt) + 1) * dt
    new = BodyState(p_new, quat_new, vel_new, omega_b, q, qd, thrusts, F[:n_feet].copy(),
                    F[n_feet:].sum(axis=0), t_new)
    if not new.is_finite():
        terms = {"contact": F, "rotor": rotor_f, "joint_acceleration": acc, "impulse": dxi}
        bad_term = next((name for name, val in terms.items() if not np.all(np.isfinite(val))), "state")
        raise SimulationFault(f"non-finite state at t={state.t:.4f}s ({bad_term})", state, bad_term)
    return new


def mechanical_energy(model: RobotModel, state: BodyState, terrain: Terrain | None = None) -> float:
    """Kinetic + gravitational + contact-spring energy, about the centre of mass."""
    terrain = terrain or Terrain()
    x, v = com_world(model, state)
    w = state.omega
    e = 0.5 * model.mass * float(v @ v) + 0.5 * float(w @ model.inertia @ w)
    e += model.mass * G * float(x[2] - terrain.height)
    pts = np.vstack([foot_positions_world(model, state), perch_positions_world(model, state, terrain)])
    depth = np.maximum(terrain.height - pts[:, 2], 0.0)
    e += 0.5 * model.contact.stiffness * float(depth @ depth)
    return e


class Simulator:
    """Owns a model, a terrain and the evolving state."""

    def __init__(self, model: RobotModel, state: BodyState, terrain: Terrain | None = None,
                 dt: float = 0.001):
        if not 0.0 < dt <= MAX_DT:
            raise ValueError(f"dt must lie in (0, {MAX_DT}], got {dt!r}")
        self.model = model
        self.state = state
        self.terrain = terrain or Terrain()
        self.dt = dt
        self.events: list[Event] = []

    @property
    def t(self) -> float:
        return self.state.t

    def step(self, joint_commands, throttles) -> BodyState:
        self.state = step(self.model, self.state, joint_commands, throttles, self.terrain,
                          self.dt, self.events)
        return self.state

    def apply_impulse(self, delta_v) -> None:
        """Instantaneous change of body linear velocity (world frame)."""
        self.state = replace(self.state, velocity=self.state.velocity + np.asarray(delta_v, dtype=float))
