import numpy as np
import pytest
from hypothesis import given, strategies as st

from huskysim import gait

coord = st.floats(-0.3, 0.3)


def _curve(start, end, h):
    return gait.make_swing_curve(start, end, h)


@given(sx=coord, sy=coord, ex=coord, ey=coord, z0=st.floats(-0.4, -0.2), dz=st.floats(-0.03, 0.03),
       h=st.floats(0.02, 0.3))
def test_end_velocities_are_exactly_zero(sx, sy, ex, ey, z0, dz, h):
    c = _curve((sx, sy, z0), (ex, ey, z0 + dz), h)
    _, d0 = gait.bezier_eval(c, 0.0)
    _, d1 = gait.bezier_eval(c, 1.0)
    assert np.all(d0 == 0.0) and np.all(d1 == 0.0)


@given(sx=coord, ex=coord, z0=st.floats(-0.4, -0.2), h=st.floats(0.01, 0.3))
def test_midpoint_apex_fraction(sx, ex, z0, h):
    c = _curve((sx, 0.0, z0), (ex, 0.0, z0), h)
    pos, _ = gait.bezier_eval(c, 0.5)
    assert abs((pos[2] - z0) - 0.375 * h) < 1e-12


def test_endpoints_interpolated():
    c = _curve((0.1, 0.0, -0.3), (-0.05, 0.02, -0.31), 0.06)
    assert np.allclose(gait.bezier_eval(c, 0.0)[0], [0.1, 0.0, -0.3])
    assert np.allclose(gait.bezier_eval(c, 1.0)[0], [-0.05, 0.02, -0.31])


def _in_hull(points, p, tol=1e-12):
    """Barycentric test against the triangle spanned by the distinct control points."""
    a, apex, b = points[0], points[2], points[4]
    M = np.column_stack([apex - a, b - a])
    lam, *_ = np.linalg.lstsq(M, p - a, rcond=None)
    resid = np.linalg.norm(M @ lam - (p - a))
    return resid < 1e-9 and lam.min() >= -tol and lam.sum() <= 1 + tol


def test_convex_hull_containment():
    rng = np.random.default_rng(5)
    for _ in range(20):
        start = np.array([*rng.uniform(-0.2, 0.2, 2), rng.uniform(-0.35, -0.25)])
        end = np.array([*rng.uniform(-0.2, 0.2, 2), rng.uniform(-0.35, -0.25)])
        c = _curve(start, end, rng.uniform(0.02, 0.2))
        for s in rng.uniform(0, 1, 500):
            assert _in_hull(c.points, gait.bezier_eval(c, s)[0])


def test_curve_validation():
    with pytest.raises(gait.GaitError):
        gait.make_swing_curve((0, 0, 0), (0.1, 0, 0), 0.0)
    with pytest.raises(gait.GaitError):
        gait.SwingCurve(np.zeros((4, 3)))
    with pytest.raises(gait.GaitError):
        gait.bezier_eval(_curve((0, 0, 0), (0.1, 0, 0), 0.05), 1.5)


def test_trot_phase_pairs():
    sched = gait.GaitSchedule()
    for t in np.linspace(0, 2, 41):
        fl, fr, br, bl = (gait.phase(t, sched, leg).mode for leg in ("FL", "FR", "BR", "BL"))
        assert fl == br and fr == bl and fl != fr


@given(t=st.floats(0, 50), k=st.integers(0, 20))
def test_phase_periodic(t, k):
    sched = gait.GaitSchedule()
    a = gait.phase(t, sched, "FL")
    b = gait.phase(t + k * sched.period_s, sched, "FL")
    assert a.mode == b.mode or min(a.s, 1 - a.s, abs(a.s - 0.5)) < 1e-9
    assert abs(a.s - b.s) < 1e-9 or abs(abs(a.s - b.s) - 1) < 1e-9


def test_schedule_validation():
    with pytest.raises(gait.GaitError):
        gait.GaitSchedule(period_s=0)
    with pytest.raises(gait.GaitError):
        gait.GaitSchedule(duty_factor=1.0)
    with pytest.raises(gait.GaitError):
        gait.phase(-1.0, gait.GaitSchedule(), "FL")


def test_raibert_neutral_point_at_target_speed():
    p = gait.raibert_foot_target((0.3, 0.0), (0.3, 0.0), 0.25, k_v=0.03)
    assert np.allclose(p, [0.3 * 0.125, 0.0])


@given(vx=st.floats(-1, 1), vy=st.floats(-1, 1), dx=st.floats(-1, 1))
def test_raibert_correction_sign(vx, vy, dx):
    base = gait.raibert_foot_target((vx, vy), (vx, vy), 0.25, 0.03)
    faster = gait.raibert_foot_target((vx + abs(dx), vy), (vx, vy), 0.25, 0.03)
    assert faster[0] >= base[0]


@given(vx=st.floats(-3, 3), vy=st.floats(-3, 3), r=st.floats(0.01, 0.3))
def test_raibert_reach_clamp(vx, vy, r):
    p = gait.raibert_foot_target((vx, vy), (0, 0), 0.25, 0.03, (0.1, 0.05), reach_radius=r)
    assert np.linalg.norm(p - [0.1, 0.05]) <= r * (1 + 1e-12)


def test_raibert_validation():
    with pytest.raises(gait.GaitError):
        gait.raibert_foot_target((0, 0), (0, 0), 0.0)
    with pytest.raises(gait.GaitError):
        gait.raibert_foot_target((0, 0), (0, 0), 0.2, k_v=-1)
