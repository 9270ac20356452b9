import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from huskysim import control as ctl, morphing as mo, sim
from huskysim.rotation import quat_from_rpy, rpy_from_quat

MODEL = sim.RobotModel()
Q_STAND = ctl.standing_pose(MODEL)
GROUND = sim.Terrain()


def _settled_stance(steps=3000):
    z0 = ctl.STANDING_HEIGHT_M - MODEL.weight / (4 * MODEL.contact.stiffness)
    s = sim.make_state(Q_STAND, position=(0, 0, z0))
    for _ in range(steps):
        s = sim.step(MODEL, s, Q_STAND, np.zeros(4), GROUND, 0.001)
    return s


def test_ballistic_energy_drift_per_step():
    s = sim.make_state(Q_STAND, position=(0, 0, 10.0), velocity=(0.5, -0.2, 1.0), omega=(1.0, -2.0, 3.0))
    e = sim.mechanical_energy(MODEL, s, GROUND)
    worst = 0.0
    for _ in range(1000):
        s = sim.step(MODEL, s, Q_STAND, np.zeros(4), GROUND, 0.001)
        e2 = sim.mechanical_energy(MODEL, s, GROUND)
        worst = max(worst, abs(e2 - e) / abs(e))
        e = e2
    assert worst < 1e-6


def test_ballistic_com_is_exact_parabola():
    v0 = np.array([0.3, 0.1, 2.0])
    s = sim.make_state(Q_STAND, position=(0, 0, 5.0), velocity=v0)
    x0, _ = sim.com_world(MODEL, s)
    for _ in range(500):
        s = sim.step(MODEL, s, Q_STAND, np.zeros(4), GROUND, 0.002)
    x1, _ = sim.com_world(MODEL, s)
    t = 1.0
    assert np.allclose(x1, x0 + v0 * t + 0.5 * sim.GRAVITY * t * t, atol=1e-9)


def test_static_stance_shares_weight_evenly():
    s = _settled_stance()
    fz = s.foot_forces[:, 2]
    assert np.all(np.abs(fz / (MODEL.weight / 4) - 1.0) < 0.01)
    assert np.linalg.norm(s.velocity) < 1e-6


def test_perch_contact_does_not_inject_energy():
    q = mo.splay_pose(MODEL)
    s = sim.make_state(q, position=(0, 0, 0.2))
    e0 = e = sim.mechanical_energy(MODEL, s, GROUND)
    for _ in range(2000):
        s = sim.step(MODEL, s, q, np.zeros(4), GROUND, 0.001)
        e2 = sim.mechanical_energy(MODEL, s, GROUND)
        assert e2 - e < 1e-6 * e0
        e = e2
    assert e < e0
    assert s.perch_force[2] == pytest.approx(MODEL.weight, rel=1e-3)
    assert np.all(s.foot_forces == 0.0)


@given(wx=st.floats(-20, 20), wy=st.floats(-20, 20), wz=st.floats(-20, 20))
def test_quaternion_stays_normalized(wx, wy, wz):
    s = sim.make_state(Q_STAND, position=(0, 0, 5.0), omega=(wx, wy, wz))
    for _ in range(50):
        s = sim.step(MODEL, s, Q_STAND, np.zeros(4), GROUND, 0.005)
    assert abs(np.linalg.norm(s.orientation) - 1.0) < 1e-12


@given(px=st.floats(-0.02, 0.0), vx=st.floats(-2, 2), vy=st.floats(-2, 2), vz=st.floats(-2, 2),
       mu=st.floats(0.0, 1.5))
def test_contact_force_inside_cone(px, vx, vy, vz, mu):
    f = sim.contact_force((0.0, 0.0, px), (vx, vy, vz), sim.Terrain(friction=mu),
                          sim.ContactParams(mu=mu))
    assert f[2] >= 0.0
    assert math.hypot(f[0], f[1]) <= mu * f[2] * (1 + 1e-9) + 1e-12


def test_contact_force_zero_above_ground():
    assert np.all(sim.contact_force((0, 0, 0.01), (0, 0, -1), GROUND, MODEL.contact) == 0.0)


@given(roll=st.floats(-0.4, 0.4), pitch=st.floats(-0.4, 0.4), vx=st.floats(-1, 1), vy=st.floats(-1, 1),
       mu=st.floats(0.05, 1.0))
def test_step_forces_respect_cone(roll, pitch, vx, vy, mu):
    terrain = sim.Terrain(friction=mu)
    s = sim.make_state(Q_STAND, position=(0, 0, 0.31), orientation=quat_from_rpy(roll, pitch, 0.0),
                       velocity=(vx, vy, -0.3))
    for _ in range(30):
        s = sim.step(MODEL, s, Q_STAND, np.zeros(4), terrain, 0.002)
        F = np.vstack([s.foot_forces, s.perch_force])
        assert np.all(sim._within_cone(F, mu))


def test_sliding_on_ice():
    s = sim.make_state(Q_STAND, position=(0, 0, 0.318), velocity=(1.0, 0, 0))
    terrain = sim.Terrain(friction=0.0)
    for _ in range(200):
        s = sim.step(MODEL, s, Q_STAND, np.zeros(4), terrain, 0.001)
    assert s.velocity[0] > 0.95
    assert np.allclose(s.foot_forces[:, :2], 0.0)


def test_determinism():
    def run():
        s = sim.make_state(Q_STAND, position=(0, 0, 0.33), velocity=(0.1, 0.05, 0.0), omega=(0.2, 0, 0))
        rng = np.random.default_rng(3)
        out = []
        for _ in range(300):
            cmd = Q_STAND + 0.05 * rng.standard_normal((4, 3))
            s = sim.step(MODEL, s, cmd, rng.uniform(0, 0.3, 4), GROUND, 0.001)
            out.append(np.concatenate([s.position, s.orientation, s.q.ravel(), s.foot_forces.ravel()]))
        return np.array(out)
    assert np.array_equal(run(), run())


def test_servo_respects_rate_and_limits():
    s = sim.make_state(Q_STAND, position=(0, 0, 5.0))
    target = np.tile([5.0, 5.0, 5.0], (4, 1))
    for _ in range(100):
        s = sim.step(MODEL, s, target, np.zeros(4), GROUND, 0.001)
        assert np.all(np.abs(s.qd) <= MODEL.servo.max_rate + 1e-12)
    for leg, q in zip(MODEL.legs, s.q):
        assert leg.within_limits(q, tol=1e-12)


def test_throttle_clamped_and_logged():
    events = []
    thr = sim.clamp_throttles([1.5, -0.1, 0.5, 0.2], events, 1.0)
    assert np.array_equal(thr, [1.0, 0.0, 0.5, 0.2])
    assert events and events[0].kind == "throttle_clamped"


def test_thruster_wrench_splayed():
    q = mo.splay_pose(MODEL)
    f, tau = sim.thruster_wrench(MODEL, q, np.full(4, 0.5))
    assert np.allclose(f, [0, 0, 0.5 * MODEL.total_max_thrust])
    assert abs(tau[2]) < 1e-12


def test_hover_thrust_balances_weight():
    q = mo.splay_pose(MODEL, mo.prop_align_sagittal(MODEL))
    s = sim.make_state(q, position=(0, 0, 2.0))
    for _ in range(200):
        s = sim.step(MODEL, s, q, np.full(4, MODEL.hover_throttle), GROUND, 0.001)
    assert np.linalg.norm(s.velocity) < 1e-3
    assert max(abs(a) for a in rpy_from_quat(s.orientation)) < 1e-3


def test_invalid_dt():
    s = sim.make_state(Q_STAND)
    with pytest.raises(ValueError):
        sim.step(MODEL, s, Q_STAND, np.zeros(4), GROUND, 0.01)
    with pytest.raises(ValueError):
        sim.Simulator(MODEL, s, dt=0.0)


def test_non_finite_state_faults():
    s = sim.make_state(Q_STAND, position=(0, 0, 1.0))
    s.velocity[0] = math.nan
    with pytest.raises(sim.SimulationFault) as exc:
        sim.step(MODEL, s, Q_STAND, np.zeros(4), GROUND, 0.001)
    assert exc.value.last_state is s


def test_simulator_impulse_and_clock():
    simu = sim.Simulator(MODEL, sim.make_state(Q_STAND, position=(0, 0, 5.0)), dt=0.001)
    simu.apply_impulse((0.0, 0.1, 0.0))
    assert simu.state.velocity[1] == pytest.approx(0.1)
    for _ in range(1000):
        simu.step(Q_STAND, np.zeros(4))
    assert simu.t == pytest.approx(1.0, abs=1e-12)


def test_model_validation():
    with pytest.raises(ValueError):
        sim.RobotModel(inertia=np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError):
        sim.ContactParams(stiffness=0.0)
    with pytest.raises(ValueError):
        sim.Terrain(friction=-1.0)


def test_model_mass_matches_budget():
    body, segs = MODEL.point_masses()
    assert body + 4 * sum(m for _, m in segs) == pytest.approx(MODEL.mass, rel=1e-12)
    assert MODEL.hover_throttle == pytest.approx(1 / 1.7127, rel=1e-3)
