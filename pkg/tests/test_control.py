import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from huskysim import control as ctl, gait, morphing as mo, sim
from huskysim.rotation import quat_from_rpy

MODEL = sim.RobotModel()
Q_STAND = ctl.standing_pose(MODEL)
Q_AIR = mo.splay_pose(MODEL, mo.prop_align_sagittal(MODEL))
angle = st.floats(-0.6, 0.6)
rate = st.floats(-5, 5)


def _state(q, roll=0.0, pitch=0.0, yaw=0.0, pos=(0, 0, 0.32), vel=(0, 0, 0), omega=(0, 0, 0), loaded=True):
    s = sim.make_state(q, position=pos, orientation=quat_from_rpy(roll, pitch, yaw), velocity=vel, omega=omega)
    if loaded:
        s.foot_forces[:, 2] = MODEL.weight / 4
    return s


def test_standing_pose_feet_under_com():
    foot, _, _, _ = sim.leg_frames(MODEL, Q_STAND)
    feet = MODEL.hips + foot
    com = sim.center_of_mass(MODEL, Q_STAND)
    assert np.allclose(feet[:, 2], -ctl.STANDING_HEIGHT_M, atol=1e-12)
    # fixed-point iteration on the CoM; 0.1 mm is well inside the 1 % load-share test
    assert np.allclose(feet[:, 0] - MODEL.hips[:, 0], com[0], atol=1e-4)


def test_mixer_pure_yaw_is_diagonal_differential():
    A = ctl.allocation_matrix(MODEL, Q_AIR)
    total = MODEL.weight
    res = ctl.mixer(total, (0.0, 0.0, 0.05), A, MODEL.max_rotor_thrust)
    th = res.thrusts
    assert not res.saturated
    assert np.allclose(A @ th, [total, 0, 0, 0.05], atol=1e-9)
    assert th[0] == pytest.approx(th[2], abs=1e-9) and th[1] == pytest.approx(th[3], abs=1e-9)
    # spin +1 on FL/BR: positive yaw torque loads that diagonal
    assert th[0] > th[1]
    f, tau = sim._rotor_wrench(MODEL, Q_AIR, th)
    assert abs(tau[0]) < 1e-9 and abs(tau[1]) < 1e-9


@given(T=st.floats(0, 200), tx=st.floats(-20, 20), ty=st.floats(-20, 20), tz=st.floats(-5, 5))
def test_mixer_outputs_bounded(T, tx, ty, tz):
    A = ctl.allocation_matrix(MODEL, Q_AIR)
    res = ctl.mixer(T, (tx, ty, tz), A, MODEL.max_rotor_thrust)
    assert np.all(res.thrusts >= 0) and np.all(res.thrusts <= MODEL.max_rotor_thrust)


def test_mixer_saturation_logged():
    events = []
    A = ctl.allocation_matrix(MODEL, Q_AIR)
    ctl.mixer(MODEL.weight, (50.0, 0, 0), A, MODEL.max_rotor_thrust, events, 1.0)
    assert events and events[0].kind == "saturation"


@given(roll=angle, wx=rate)
def test_roll_assist_antisymmetric_zero_sum(roll, wx):
    cfg = ctl.RollAssistConfig()
    a = ctl.roll_assist(MODEL, _state(Q_STAND, roll=roll, omega=(wx, 0, 0)), cfg)
    b = ctl.roll_assist(MODEL, _state(Q_STAND, roll=-roll, omega=(-wx, 0, 0)), cfg)
    assert abs(a.sum()) < 1e-12
    assert np.allclose(a, -b, atol=1e-12)
    assert np.all(np.abs(a) <= cfg.cap + 1e-15)


def test_roll_assist_opposes_roll():
    # positive roll (left side up): the correction must produce a negative roll moment
    s = _state(Q_STAND, roll=0.05)
    d = ctl.roll_assist(MODEL, s, ctl.RollAssistConfig())
    thr = ctl.RollAssistConfig().base_throttle + d
    foot, knee, axis, _ = sim.leg_frames(MODEL, Q_STAND)
    pivot = (MODEL.hips + foot).mean(axis=0)
    r = MODEL.hips + knee - pivot
    moment = np.cross(r, thr[:, None] * MODEL.max_rotor_thrust * axis).sum(axis=0)
    assert moment[0] < 0


def test_roll_assist_config_validation():
    with pytest.raises(ValueError):
        ctl.RollAssistConfig(cap=0.8)
    with pytest.raises(ValueError):
        ctl.RollAssistConfig(kp=-1)


@given(roll=angle, pitch=angle, yaw=st.floats(-3, 3), x=st.floats(-3, 3), z=st.floats(0, 3),
       vx=rate, vz=rate, wx=rate, wy=rate)
def test_hover_throttles_bounded(roll, pitch, yaw, x, z, vx, vz, wx, wy):
    hc = ctl.HoverController(MODEL)
    s = _state(Q_AIR, roll, pitch, yaw, pos=(x, 0, z), vel=(vx, 0, vz), omega=(wx, wy, 0), loaded=False)
    for _ in range(3):
        thr = hc.update(s, 0.001)
        assert np.all((thr >= 0) & (thr <= 1))


def test_hover_at_setpoint_gives_hover_throttle():
    hc = ctl.HoverController(MODEL)
    thr = hc.update(_state(Q_AIR, pos=(0, 0, 1.0), loaded=False), 0.001)
    assert np.allclose(thr.mean(), MODEL.hover_throttle, rtol=1e-9)


def test_hover_closed_loop_recovers_tilt():
    hc = ctl.HoverController(MODEL)
    s = _state(Q_AIR, roll=0.1, pitch=-0.08, pos=(0, 0, 1.0), loaded=False)
    terrain = sim.Terrain()
    for _ in range(3000):
        s = sim.step(MODEL, s, Q_AIR, hc.update(s, 0.001), terrain, 0.001)
    assert abs(s.position[2] - 1.0) < 0.02
    assert np.linalg.norm(s.omega) < 0.05


def test_pid_integral_clamped():
    pid = ctl.PID(1.0, 1.0, 0.0, i_limit=0.5)
    for _ in range(100):
        pid.update(1.0, 0.0, 0.1)
    assert pid.integral == 0.5
    pid.reset()
    assert pid.integral == 0.0


@given(roll=st.floats(-0.3, 0.3), pitch=st.floats(-0.3, 0.3), z=st.floats(0.2, 0.4), vx=st.floats(-1, 1),
       t=st.floats(0, 10))
def test_trot_commands_within_limits(roll, pitch, z, vx, t):
    tc = ctl.TrotController(MODEL, ctl.TrotControllerConfig(v_des=(0.3, 0.0)))
    s = _state(Q_STAND, roll, pitch, pos=(0, 0, z), vel=(vx, 0, 0))
    cmd = tc.update(s, t)
    for leg, q in zip(MODEL.legs, cmd):
        assert leg.within_limits(q)


@given(roll=st.floats(-0.2, 0.2), vx=st.floats(-0.5, 0.5), t=st.floats(0, 5), k=st.integers(1, 4))
def test_trot_time_shift_by_period(roll, vx, t, k):
    cfg = ctl.TrotControllerConfig(v_des=(0.3, 0.0))
    shift = k * cfg.schedule.period_s
    a, b = ctl.TrotController(MODEL, cfg), ctl.TrotController(MODEL, cfg)
    s = _state(Q_STAND, roll, pos=(0, 0, 0.31), vel=(vx, 0, 0))
    # t and t + shift round differently, so the gait phase agrees to ~1e-15, not bit for bit
    for dt in (0.0, 0.01, 0.02):
        assert np.allclose(a.update(s, t + dt), b.update(s, t + dt + shift), atol=1e-9, rtol=0)


def test_trot_steady_state_touchdown_is_neutral_point():
    cfg = ctl.TrotControllerConfig(v_des=(0.3, 0.0), max_accel=1e9)
    tc = ctl.TrotController(MODEL, cfg)
    s = _state(Q_STAND, vel=(0.3, 0, 0))
    tc.update(s, 0.0)
    tc.update(s, 0.001)
    target = tc.touchdown_target(s, 0)
    assert np.allclose(target, tc.neutral[0] + np.array([0.3, 0.0]) * cfg.schedule.stance_s / 2)


def test_trot_short_run_stays_upright():
    cfg = ctl.TrotControllerConfig(v_des=(0.3, 0.0))
    z0 = cfg.height - MODEL.weight / (4 * MODEL.contact.stiffness)
    simu = sim.Simulator(MODEL, sim.make_state(Q_STAND, position=(0, 0, z0)), dt=0.001)
    tc = ctl.TrotController(MODEL, cfg)
    fall = ctl.FallDetector(cfg.height)
    for _ in range(2000):
        s = simu.step(tc.update(simu.state, simu.t), np.zeros(4))
        assert not fall.update(s)
    assert s.position[0] > 0.15


def test_fall_detector():
    fd = ctl.FallDetector(0.32, hold_s=0.1)
    s = _state(Q_STAND, pos=(0, 0, 0.1))
    for k in range(200):
        s.t = k * 0.001
        fd.update(s)
    assert fd.fallen


def test_config_validation():
    with pytest.raises(ValueError):
        ctl.TrotControllerConfig(k_v=-1)
    with pytest.raises(ValueError):
        ctl.TrotControllerConfig(height=0.5)
    with pytest.raises(ValueError):
        ctl.HoverControllerConfig(hover_throttle=1.2)


def test_stance_commands_hold_pose_at_rest():
    s = _state(Q_STAND, pos=(0, 0, ctl.STANDING_HEIGHT_M))
    out = ctl.stance_commands(MODEL, s, range(4), ctl.STANDING_HEIGHT_M, ctl.StanceGains())
    assert np.allclose(np.array([out[i] for i in range(4)]), Q_STAND, atol=1e-6)
